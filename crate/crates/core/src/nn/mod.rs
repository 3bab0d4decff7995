//! Minimal neural-network plumbing with explicit forward/backward passes.
//!
//! Layers own their parameters and gradient accumulators; forward passes
//! return the caches their backward passes need, so a layer with frozen
//! weights can still be shared across threads for evaluation.

pub mod adamw;
pub mod attention;
pub mod conv1d;
pub mod gradcheck;
pub mod layernorm;
pub mod linear;
pub mod ops;

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Ix1, Ix2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One trainable tensor plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub value: ArrayD<S>,
    pub grad: ArrayD<S>,
}

impl<S: Scalar> Param<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Param { value: ArrayD::zeros(shape.to_vec()), grad: ArrayD::zeros(shape.to_vec()) }
    }

    /// U(-bound, bound) initialization.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for v in p.value.iter_mut() {
            *v = S::from_f(rng.gen_range(-bound..bound));
        }
        p
    }

    /// N(0, std) initialization.
    pub fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for v in p.value.iter_mut() {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            *v = S::from_f(z * std);
        }
        p
    }

    pub fn v1(&self) -> ArrayView1<'_, S> {
        self.value.view().into_dimensionality::<Ix1>().unwrap()
    }

    pub fn v2(&self) -> ArrayView2<'_, S> {
        self.value.view().into_dimensionality::<Ix2>().unwrap()
    }

    pub fn add_grad1(&mut self, g: &Array1<S>) {
        let mut gv = self.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
        gv += g;
    }

    pub fn add_grad2(&mut self, g: &Array2<S>) {
        let mut gv = self.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
        gv += g;
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything holding named parameters.
pub trait Net<S>: Send {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>));
}

pub fn zero_grads<S: Scalar, N: Net<S> + ?Sized>(net: &mut N) {
    net.visit_params("", &mut |_, p| p.grad.fill(S::zero()));
}

pub fn param_count<S: Scalar, N: Net<S> + ?Sized>(net: &mut N) -> usize {
    let mut n = 0;
    net.visit_params("", &mut |_, p| n += p.len());
    n
}

pub fn param_names<S: Scalar, N: Net<S> + ?Sized>(net: &mut N) -> Vec<String> {
    let mut names = Vec::new();
    net.visit_params("", &mut |name, _| names.push(name.to_string()));
    names
}

/// Snapshot all parameter values (used for best-epoch checkpoints).
pub fn save_params<S: Scalar, N: Net<S> + ?Sized>(net: &mut N) -> HashMap<String, ArrayD<S>> {
    let mut map = HashMap::new();
    net.visit_params("", &mut |name, p| {
        map.insert(name.to_string(), p.value.clone());
    });
    map
}

/// Restore parameter values from a snapshot. Errors on a missing name or a
/// shape mismatch.
pub fn load_params<S: Scalar, N: Net<S> + ?Sized>(
    net: &mut N,
    map: &HashMap<String, ArrayD<S>>,
) -> Result<()> {
    let mut missing = None;
    net.visit_params("", &mut |name, p| {
        if missing.is_some() {
            return;
        }
        match map.get(name) {
            Some(v) if v.shape() == p.value.shape() => p.value.assign(v),
            Some(v) => {
                missing = Some(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    v.shape(),
                    p.value.shape()
                ))
            }
            None => missing = Some(format!("missing parameter {name}")),
        }
    });
    match missing {
        Some(m) => Err(Error::Checkpoint(m)),
        None => Ok(()),
    }
}

/// Join a visitor prefix with a local name.
pub fn scoped(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
