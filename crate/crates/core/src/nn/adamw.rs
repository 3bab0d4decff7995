//! Adam with decoupled weight decay.

use std::collections::HashMap;

use crate::scalar::Scalar;

use super::Net;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    state: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        AdamW { beta1, beta2, eps: 1e-8, weight_decay, t: 0, state: HashMap::new() }
    }

    /// One update with the given learning rate, consuming current grads.
    pub fn step<S: Scalar, N: Net<S> + ?Sized>(&mut self, net: &mut N, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let state = &mut self.state;
        let t_first = self.t == 1;
        net.visit_params("", &mut |name, p| {
            let n = p.len();
            let entry = state.entry(name.to_string()).or_insert_with(|| {
                (vec![0.0; n], vec![0.0; n])
            });
            debug_assert!(!t_first || entry.0.len() == n);
            let (m, v) = entry;
            let value = p.value.as_slice_mut().expect("standard layout");
            let grad = p.grad.as_slice().expect("standard layout");
            for i in 0..n {
                let g = grad[i].to_f();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let x = value[i].to_f();
                value[i] = S::from_f(x - lr * (mhat / (vhat.sqrt() + eps) + wd * x));
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::linear::Linear;
    use crate::nn::zero_grads;
    use crate::rng::{stream, RngSeed};
    use ndarray::array;

    /// AdamW on a 1-d quadratic reaches the minimum.
    #[test]
    fn minimizes_a_quadratic() {
        let mut rng = stream(RngSeed(5), "adam", &[], &[]);
        let mut lin = Linear::<f64>::new(1, 1, &mut rng);
        let mut opt = AdamW::new(0.9, 0.99, 0.0);
        let x = array![[1.0f64]];
        for _ in 0..2000 {
            zero_grads(&mut lin);
            let y = lin.forward(&x);
            // loss = (y - 3)^2
            let dy = array![[2.0 * (y[(0, 0)] - 3.0)]];
            lin.backward(&x, &dy);
            opt.step(&mut lin, 0.01);
        }
        let y = lin.forward(&x);
        assert!((y[(0, 0)] - 3.0).abs() < 1e-3, "got {}", y[(0, 0)]);
    }

    /// Decoupled decay shrinks weights even with zero gradient.
    #[test]
    fn weight_decay_is_decoupled() {
        let mut rng = stream(RngSeed(6), "adam", &[], &[]);
        let mut lin = Linear::<f64>::new(1, 1, &mut rng);
        lin.w.value.fill(1.0);
        let mut opt = AdamW::new(0.9, 0.99, 0.1);
        zero_grads(&mut lin);
        opt.step(&mut lin, 0.5);
        let w = lin.w.value.iter().next().copied().unwrap();
        assert!((w - (1.0 - 0.5 * 0.1)).abs() < 1e-12);
    }
}
