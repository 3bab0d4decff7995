//! Central-finite-difference verification of analytic gradients.

use rand::Rng;

use crate::scalar::Scalar;

use super::Net;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// finite-difference step
    pub step: f64,
    /// relative error bound
    pub tolerance: f64,
    /// gradients below this magnitude are compared absolutely
    pub floor: f64,
    /// coordinates sampled per parameter tensor
    pub samples_per_param: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { step: 1e-5, tolerance: 1e-4, floor: 1e-6, samples_per_param: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

fn param_value<S: Scalar, M: Net<S> + ?Sized>(model: &mut M, name: &str, idx: usize) -> f64 {
    let mut out = 0.0;
    model.visit_params("", &mut |n, p| {
        if n == name {
            out = p.value.as_slice().unwrap()[idx].to_f();
        }
    });
    out
}

fn set_param_value<S: Scalar, M: Net<S> + ?Sized>(
    model: &mut M,
    name: &str,
    idx: usize,
    value: f64,
) {
    model.visit_params("", &mut |n, p| {
        if n == name {
            p.value.as_slice_mut().unwrap()[idx] = S::from_f(value);
        }
    });
}

/// Compare analytic parameter gradients against central finite differences.
///
/// `backward_pass` must zero the gradients, run a forward pass and fill the
/// gradients; `forward_loss` must evaluate the same loss without touching
/// gradients. Both must be deterministic for fixed parameters.
pub fn check_param_gradients<S: Scalar, M: Net<S>, R: Rng>(
    model: &mut M,
    mut forward_loss: impl FnMut(&mut M) -> f64,
    mut backward_pass: impl FnMut(&mut M),
    settings: &GradCheckSettings,
    rng: &mut R,
) -> GradCheckReport {
    backward_pass(model);

    let mut analytic: Vec<(String, usize, f64)> = Vec::new();
    model.visit_params("", &mut |name, p| {
        let grads = p.grad.as_slice().unwrap();
        let n = grads.len();
        for _ in 0..settings.samples_per_param.min(n) {
            let idx = rng.gen_range(0..n);
            analytic.push((name.to_string(), idx, grads[idx].to_f()));
        }
    });

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: String::new() };
    let h = settings.step;
    for (name, idx, a) in analytic {
        let orig = param_value(model, &name, idx);
        set_param_value(model, &name, idx, orig + h);
        let lp = forward_loss(model);
        set_param_value(model, &name, idx, orig - h);
        let lm = forward_loss(model);
        set_param_value(model, &name, idx, orig);

        let fd = (lp - lm) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(settings.floor);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = format!("{name}[{idx}]: analytic {a:.3e}, fd {fd:.3e}");
        }
    }
    report
}
