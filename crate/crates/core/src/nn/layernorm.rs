//! Layer normalization over the last axis of (n, d) inputs.

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

use super::{scoped, Net, Param};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub dim: usize,
}

pub struct LayerNormCache<S> {
    /// normalized input (n, d)
    xhat: Array2<S>,
    /// reciprocal std per row
    rstd: Array1<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        let mut gamma = Param::zeros(&[dim]);
        gamma.value.fill(S::one());
        LayerNorm { gamma, beta: Param::zeros(&[dim]), dim }
    }

    pub fn forward(&self, x: &Array2<S>) -> (Array2<S>, LayerNormCache<S>) {
        let (n, d) = x.dim();
        debug_assert_eq!(d, self.dim);
        let mut xhat = Array2::zeros((n, d));
        let mut rstd = Array1::zeros(n);
        let mut y = Array2::zeros((n, d));
        let inv_d = S::one() / S::from_us(d);
        let eps = S::from_f(LN_EPS);
        let xs = x.as_slice().expect("standard layout");
        let xhat_s = xhat.as_slice_mut().unwrap();
        let ys = y.as_slice_mut().unwrap();
        let gamma = self.gamma.value.as_slice().unwrap();
        let beta = self.beta.value.as_slice().unwrap();
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let mut mean = S::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = S::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let r = S::one() / (var + eps).sqrt();
            rstd[i] = r;
            let xh = &mut xhat_s[i * d..(i + 1) * d];
            let yr = &mut ys[i * d..(i + 1) * d];
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xh[j] = h;
                yr[j] = h * gamma[j] + beta[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<S>, dy: &Array2<S>) -> Array2<S> {
        let (n, d) = dy.dim();
        let inv_d = S::one() / S::from_us(d);
        let mut dx = Array2::zeros((n, d));
        let dys = dy.as_slice().expect("standard layout");
        let xhat_s = cache.xhat.as_slice().unwrap();
        let dxs = dx.as_slice_mut().unwrap();
        let gamma = self.gamma.value.as_slice().unwrap();
        let gg = self.gamma.grad.as_slice_mut().unwrap();
        let gb = self.beta.grad.as_slice_mut().unwrap();
        for i in 0..n {
            let dyr = &dys[i * d..(i + 1) * d];
            let xh = &xhat_s[i * d..(i + 1) * d];
            let mut sum_dxhat = S::zero();
            let mut sum_dxhat_xhat = S::zero();
            for j in 0..d {
                gg[j] += dyr[j] * xh[j];
                gb[j] += dyr[j];
                let dxhat = dyr[j] * gamma[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh[j];
            }
            let r = cache.rstd[i];
            let a = inv_d * sum_dxhat;
            let b = inv_d * sum_dxhat_xhat;
            let dxr = &mut dxs[i * d..(i + 1) * d];
            for j in 0..d {
                dxr[j] = r * (dyr[j] * gamma[j] - a - xh[j] * b);
            }
        }
        dx
    }
}

impl<S: Scalar> Net<S> for LayerNorm<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&scoped(prefix, "gamma"), &mut self.gamma);
        f(&scoped(prefix, "beta"), &mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalizes_rows() {
        let ln = LayerNorm::<f64>::new(4);
        let x = array![[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 10.0, 10.0]];
        let (y, _) = ln.forward(&x);
        let m0: f64 = y.row(0).sum() / 4.0;
        assert!(m0.abs() < 1e-12);
        // constant row normalizes to ~0
        assert!(y.row(1).iter().all(|&v| v.abs() < 1e-6));
    }
}
