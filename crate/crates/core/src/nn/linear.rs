//! Affine layer y = x W + b.

use ndarray::{Array2, Axis, Ix1, Ix2};
use rand::Rng;

use crate::scalar::Scalar;

use super::{scoped, Net, Param};

#[derive(Debug, Clone)]
pub struct Linear<S> {
    /// (in, out)
    pub w: Param<S>,
    pub b: Param<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            w: Param::uniform(&[in_dim, out_dim], bound, rng),
            b: Param::uniform(&[out_dim], bound, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    /// x: (n, in) -> (n, out)
    pub fn forward(&self, x: &Array2<S>) -> Array2<S> {
        let mut y = x.dot(&self.w.v2());
        y += &self.b.v1();
        y
    }

    /// Accumulates dW, db; returns dx.
    pub fn backward(&mut self, x: &Array2<S>, dy: &Array2<S>) -> Array2<S> {
        {
            let mut gw = self.w.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            gw += &x.t().dot(dy);
            let mut gb = self.b.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            gb += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.w.v2().t())
    }
}

impl<S: Scalar> Net<S> for Linear<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&scoped(prefix, "w"), &mut self.w);
        f(&scoped(prefix, "b"), &mut self.b);
    }
}
