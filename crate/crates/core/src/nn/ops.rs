//! Elementwise activations, row softmax, and the BCE loss.

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU (smooth everywhere, which keeps finite-difference
/// gradient checks clean).
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f(GELU_C);
    let a = S::from_f(GELU_A);
    let u = c * (x + a * x * x * x);
    S::from_f(0.5) * x * (S::one() + u.tanh_bulk())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f(GELU_C);
    let a = S::from_f(GELU_A);
    let half = S::from_f(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh_bulk();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c * (S::one() + S::from_f(3.0) * a * x * x)
}

pub fn gelu_map<S: Scalar>(x: &Array2<S>) -> Array2<S> {
    x.mapv(gelu)
}

/// dL/dx for y = gelu(x), given dL/dy and the pre-activation x.
pub fn gelu_backward<S: Scalar>(x: &Array2<S>, dy: &Array2<S>) -> Array2<S> {
    let mut dx = x.mapv(gelu_grad);
    dx *= dy;
    dx
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable in-place row softmax.
pub fn softmax_rows_inplace<S: Scalar>(a: &mut Array2<S>) {
    for mut row in a.rows_mut() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp_bulk();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// dL/ds for y = softmax(s) rowwise, given y and dL/dy.
pub fn softmax_backward_rows<S: Scalar>(y: &Array2<S>, dy: &Array2<S>) -> Array2<S> {
    let mut ds = Array2::zeros(y.raw_dim());
    for ((mut ds_row, y_row), dy_row) in
        ds.rows_mut().into_iter().zip(y.rows()).zip(dy.rows())
    {
        let dot: S = y_row.iter().zip(dy_row.iter()).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &dyv) in ds_row.iter_mut().zip(y_row.iter()).zip(dy_row.iter()) {
            *d = yv * (dyv - dot);
        }
    }
    ds
}

/// Mean binary cross-entropy over logits, with its gradient.
///
/// Uses the stable form max(l, 0) - l t + ln(1 + exp(-|l|)).
pub fn bce_with_logits<S: Scalar>(logits: &Array1<S>, targets: &Array1<S>) -> (S, Array1<S>) {
    assert_eq!(logits.len(), targets.len());
    let n = S::from_us(logits.len());
    let mut loss = S::zero();
    let mut grad = Array1::zeros(logits.len());
    for (i, (&l, &t)) in logits.iter().zip(targets.iter()).enumerate() {
        loss = loss + l.max(S::zero()) - l * t + (S::one() + (-l.abs()).exp()).ln();
        grad[i] = (sigmoid(l) - t) / n;
    }
    (loss / n, grad)
}
