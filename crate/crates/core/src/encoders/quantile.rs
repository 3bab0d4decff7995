//! Quantile pooling over the time axis of a (t, d) frame-feature matrix.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Indices and interpolation weights chosen by the forward pass, per
/// channel and quantile, so the backward pass can route gradients.
#[derive(Debug, Clone)]
pub struct QuantilePoolCache {
    /// (original_index_lo, original_index_hi, frac) per channel
    lo: Vec<(usize, usize, f64)>,
    hi: Vec<(usize, usize, f64)>,
    t: usize,
    d: usize,
}

fn pick<S: Scalar>(sorted: &[(S, usize)], q: f64) -> (S, (usize, usize, f64)) {
    let t = sorted.len();
    let pos = q * (t - 1) as f64;
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(t - 1);
    let frac = pos - i0 as f64;
    let value =
        sorted[i0].0 * S::from_f(1.0 - frac) + sorted[i1].0 * S::from_f(frac);
    (value, (sorted[i0].1, sorted[i1].1, frac))
}

/// Linear-interpolation quantiles per channel: returns a (2, d) matrix with
/// row 0 the `q_low` and row 1 the `q_high` quantile over the time axis.
pub fn quantile_pool<S: Scalar>(
    frames: &ArrayView2<'_, S>,
    q_low: f64,
    q_high: f64,
) -> Result<(Array2<S>, QuantilePoolCache)> {
    let (t, d) = frames.dim();
    if t == 0 || d == 0 {
        return Err(Error::Contract("quantile_pool requires a non-empty frame matrix".into()));
    }
    if !(0.0..=1.0).contains(&q_low) || !(0.0..=1.0).contains(&q_high) {
        return Err(Error::Contract("quantiles must lie in [0, 1]".into()));
    }

    let mut out = Array2::zeros((2, d));
    let mut cache = QuantilePoolCache {
        lo: Vec::with_capacity(d),
        hi: Vec::with_capacity(d),
        t,
        d,
    };
    let mut column: Vec<(S, usize)> = Vec::with_capacity(t);
    for c in 0..d {
        column.clear();
        column.extend((0..t).map(|i| (frames[(i, c)], i)));
        column.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let (vlo, ilo) = pick(&column, q_low);
        let (vhi, ihi) = pick(&column, q_high);
        out[(0, c)] = vlo;
        out[(1, c)] = vhi;
        cache.lo.push(ilo);
        cache.hi.push(ihi);
    }
    Ok((out, cache))
}

/// Route d(pooled) back to the frames that produced each quantile.
pub fn quantile_pool_backward<S: Scalar>(
    cache: &QuantilePoolCache,
    d_pooled: &ArrayView2<'_, S>,
) -> Array2<S> {
    let mut dx = Array2::zeros((cache.t, cache.d));
    for c in 0..cache.d {
        let (i0, i1, frac) = cache.lo[c];
        dx[(i0, c)] += d_pooled[(0, c)] * S::from_f(1.0 - frac);
        dx[(i1, c)] += d_pooled[(0, c)] * S::from_f(frac);
        let (i0, i1, frac) = cache.hi[c];
        dx[(i0, c)] += d_pooled[(1, c)] * S::from_f(1.0 - frac);
        dx[(i1, c)] += d_pooled[(1, c)] * S::from_f(frac);
    }
    dx
}
