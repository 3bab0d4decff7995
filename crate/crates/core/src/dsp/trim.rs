//! Leading/trailing silence removal.

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const WINDOW: usize = 2048;
const HOP: usize = 512;

/// Remove leading and trailing spans whose 2048-sample RMS sits more than
/// `threshold_db` below the clip peak. Interior content is untouched; cut
/// points are resolved at window granularity.
pub fn trim_silence<S: Scalar>(clip: &AudioClip<S>, threshold_db: f64) -> Result<AudioClip<S>> {
    if threshold_db <= 0.0 {
        return Err(Error::Domain("trim threshold must be positive dB".into()));
    }
    let n = clip.samples.len();
    if n == 0 {
        return Err(Error::EmptyAudio(format!("subject {}", clip.subject_id)));
    }

    let peak = clip
        .samples
        .iter()
        .map(|s| s.to_f().abs())
        .fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::EmptyAfterTrim);
    }
    let thr = peak * 10f64.powf(-threshold_db / 20.0);
    let thr_sq = thr * thr;

    // Centered analysis frames: frame w sits at w * HOP, covering
    // [w*HOP - WINDOW/2, w*HOP + WINDOW/2), zero-padded at the edges.
    let frames = n / HOP + 1;
    let mean_sq = |w: usize| -> f64 {
        let center = (w * HOP) as isize;
        let lo = (center - (WINDOW as isize) / 2).max(0) as usize;
        let hi = ((center + (WINDOW as isize) / 2) as usize).min(n);
        let sum: f64 = clip.samples[lo..hi].iter().map(|s| s.to_f() * s.to_f()).sum();
        sum / WINDOW as f64
    };

    let first = (0..frames).find(|&w| mean_sq(w) >= thr_sq);
    let first = match first {
        Some(w) => w,
        None => return Err(Error::EmptyAfterTrim),
    };
    let last = (first..frames).rev().find(|&w| mean_sq(w) >= thr_sq).unwrap();

    let start = first * HOP;
    let end = ((last + 1) * HOP).min(n);
    Ok(clip.with_samples(clip.samples[start..end].to_vec(), clip.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{InstanceKind, Label};

    fn clip_of(samples: Vec<f32>) -> AudioClip<f32> {
        AudioClip {
            samples,
            sample_rate: 8000,
            subject_id: "t".into(),
            instance: InstanceKind::VowelA,
            label: Label::Negative,
        }
    }

    #[test]
    fn silence_sine_silence_keeps_the_sine() {
        let rate = 8000usize;
        let mut samples = vec![0.0f32; rate];
        samples.extend((0..2 * rate).map(|i| 0.5 * (std::f32::consts::TAU * 440.0 * i as f32 / rate as f32).sin()));
        samples.extend(vec![0.0f32; rate]);
        let out = trim_silence(&clip_of(samples), 60.0).unwrap();
        let dur = out.duration_sec();
        let tol = WINDOW as f64 / rate as f64;
        assert!((dur - 2.0).abs() <= tol, "trimmed duration {dur}");
        // interior untouched: the trimmed clip still has the sine's peak
        let peak = out.samples.iter().fold(0.0f32, |a, &b| a.max(b.abs()));
        assert!(peak > 0.49);
    }

    #[test]
    fn clip_without_silence_is_unchanged() {
        let samples: Vec<f32> = (0..8000)
            .map(|i| 0.5 * (std::f32::consts::TAU * 200.0 * i as f32 / 8000.0).sin())
            .collect();
        let clip = clip_of(samples);
        let out = trim_silence(&clip, 60.0).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn all_zero_clip_is_empty_after_trim() {
        let clip = clip_of(vec![0.0; 8000]);
        assert!(matches!(trim_silence(&clip, 60.0), Err(Error::EmptyAfterTrim)));
    }

    #[test]
    fn non_positive_threshold_is_domain_error() {
        let clip = clip_of(vec![0.5; 8000]);
        assert!(matches!(trim_silence(&clip, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn quiet_tail_below_threshold_is_cut() {
        let mut samples: Vec<f32> = (0..8000)
            .map(|i| 0.9 * (std::f32::consts::TAU * 300.0 * i as f32 / 8000.0).sin())
            .collect();
        // tail at -80 dB relative to peak
        samples.extend((0..8000).map(|i| 0.00009 * (std::f32::consts::TAU * 300.0 * i as f32 / 8000.0).sin()));
        let out = trim_silence(&clip_of(samples), 60.0).unwrap();
        assert!((out.duration_sec() - 1.0).abs() <= WINDOW as f64 / 8000.0);
    }
}
