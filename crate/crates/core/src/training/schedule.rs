//! Per-step learning-rate schedule: linear warmup then cosine decay to 0.

/// Learning rate at `step` (0-based) of `total_steps`, warming up linearly
/// over the first `warmup_steps` and decaying along a cosine afterwards.
pub fn lr_at_step(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    debug_assert!(warmup_steps <= total_steps);
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let decay_steps = total_steps.saturating_sub(warmup_steps);
    if decay_steps == 0 {
        return 0.0;
    }
    let progress = (step - warmup_steps) as f64 / decay_steps as f64;
    if progress >= 1.0 {
        return 0.0;
    }
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
