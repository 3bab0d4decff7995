//! Multiheaded scaled dot-product self-attention.
//!
//! Per head: Q, K, V projections of dim d/h, row-softmax of Q K^T / sqrt(d/h),
//! weighted sum of V, heads concatenated back to dim d. No output projection
//! and no positional encoding here; callers add those where they want them.

use ndarray::{s, Array2, Array3, Ix2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::{softmax_backward_rows, softmax_rows_inplace};
use super::{scoped, Net, Param};

#[derive(Debug, Clone)]
pub struct MultiheadSelfAttention<S> {
    /// (d, d) each; head p uses columns p*dh..(p+1)*dh.
    pub wq: Param<S>,
    pub wk: Param<S>,
    pub wv: Param<S>,
    pub heads: usize,
    pub dim: usize,
}

pub struct MsaCache<S> {
    /// (b*n, d) flattened input
    x2: Array2<S>,
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    /// row-stochastic attention matrices, indexed [b * heads + h]
    pub weights: Vec<Array2<S>>,
    batch: usize,
    n: usize,
}

impl<S> MsaCache<S> {
    /// Attention matrix of head `h` for batch element `b`.
    pub fn attention(&self, b: usize, h: usize, heads: usize) -> &Array2<S> {
        &self.weights[b * heads + h]
    }
}

impl<S: Scalar> MultiheadSelfAttention<S> {
    pub fn new<R: Rng>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "token dim {dim} is not divisible by head count {heads}"
            )));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        Ok(MultiheadSelfAttention {
            wq: Param::uniform(&[dim, dim], bound, rng),
            wk: Param::uniform(&[dim, dim], bound, rng),
            wv: Param::uniform(&[dim, dim], bound, rng),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// x: (batch, n, d) -> (batch, n, d).
    pub fn forward(&self, x: &Array3<S>) -> (Array3<S>, MsaCache<S>) {
        let (batch, n, d) = x.dim();
        assert_eq!(d, self.dim);
        let dh = self.head_dim();
        let scale = S::one() / S::from_us(dh).sqrt();

        let x2 = x
            .view()
            .into_shape_with_order((batch * n, d))
            .unwrap()
            .to_owned();
        let q = x2.dot(&self.wq.v2());
        let k = x2.dot(&self.wk.v2());
        let v = x2.dot(&self.wv.v2());

        let mut y = Array3::<S>::zeros((batch, n, d));
        let mut weights = Vec::with_capacity(batch * self.heads);
        // contiguous per-head operands keep the small matmuls fast
        let mut qh = Array2::<S>::zeros((n, dh));
        let mut kh = Array2::<S>::zeros((n, dh));
        let mut vh = Array2::<S>::zeros((n, dh));
        for b in 0..batch {
            let rows = s![b * n..(b + 1) * n, ..];
            let qb = q.slice(rows);
            let kb = k.slice(rows);
            let vb = v.slice(rows);
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                qh.assign(&qb.slice(cols));
                kh.assign(&kb.slice(cols));
                vh.assign(&vb.slice(cols));
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|v| v * scale);
                softmax_rows_inplace(&mut scores);
                let out = scores.dot(&vh);
                y.slice_mut(s![b, .., h * dh..(h + 1) * dh]).assign(&out);
                weights.push(scores);
            }
        }
        (y, MsaCache { x2, q, k, v, weights, batch, n })
    }

    /// Accumulates projection gradients; returns dx (batch, n, d).
    pub fn backward(&mut self, cache: &MsaCache<S>, dy: &Array3<S>) -> Array3<S> {
        let (batch, n) = (cache.batch, cache.n);
        let d = self.dim;
        let dh = self.head_dim();
        let scale = S::one() / S::from_us(dh).sqrt();

        let mut dq = Array2::<S>::zeros((batch * n, d));
        let mut dk = Array2::<S>::zeros((batch * n, d));
        let mut dv = Array2::<S>::zeros((batch * n, d));

        let mut qh = Array2::<S>::zeros((n, dh));
        let mut kh = Array2::<S>::zeros((n, dh));
        let mut vh = Array2::<S>::zeros((n, dh));
        let mut dout = Array2::<S>::zeros((n, dh));
        for b in 0..batch {
            let rows = s![b * n..(b + 1) * n, ..];
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let w = &cache.weights[b * self.heads + h];
                dout.assign(&dy.slice(s![b, .., h * dh..(h + 1) * dh]));
                qh.assign(&cache.q.slice(rows).slice_move(cols));
                kh.assign(&cache.k.slice(rows).slice_move(cols));
                vh.assign(&cache.v.slice(rows).slice_move(cols));

                let dvh = w.t().dot(&dout);
                let dw = dout.dot(&vh.t());
                let mut dscores = softmax_backward_rows(w, &dw);
                dscores.mapv_inplace(|v| v * scale);
                let dqh = dscores.dot(&kh);
                let dkh = dscores.t().dot(&qh);

                dq.slice_mut(rows).slice_move(cols).assign(&dqh);
                dk.slice_mut(rows).slice_move(cols).assign(&dkh);
                dv.slice_mut(rows).slice_move(cols).assign(&dvh);
            }
        }

        {
            let xt = cache.x2.t();
            let mut gq = self.wq.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            gq += &xt.dot(&dq);
            let mut gk = self.wk.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            gk += &xt.dot(&dk);
            let mut gv = self.wv.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            gv += &xt.dot(&dv);
        }

        let mut dx2 = dq.dot(&self.wq.v2().t());
        dx2 += &dk.dot(&self.wk.v2().t());
        dx2 += &dv.dot(&self.wv.v2().t());
        dx2.into_shape_with_order((batch, n, d)).unwrap()
    }
}

impl<S: Scalar> Net<S> for MultiheadSelfAttention<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&scoped(prefix, "wq"), &mut self.wq);
        f(&scoped(prefix, "wk"), &mut self.wk);
        f(&scoped(prefix, "wv"), &mut self.wv);
    }
}
