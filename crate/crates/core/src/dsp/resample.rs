//! Windowed-sinc resampling with anti-aliasing for downsampling.

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Zero crossings kept on each side of the sinc prototype.
const ZERO_CROSSINGS: f64 = 16.0;
/// Cutoff rolloff below the theoretical Nyquist limit.
const ROLLOFF: f64 = 0.945;

/// Resample a clip to `target_rate`.
///
/// Output length is round(n * target / source), so duration is preserved
/// to within one sample. Resampling to the clip's own rate is the identity.
pub fn resample<S: Scalar>(clip: &AudioClip<S>, target_rate: u32) -> Result<AudioClip<S>> {
    if target_rate == 0 {
        return Err(Error::Domain("target sample rate must be positive".into()));
    }
    if clip.samples.is_empty() {
        return Err(Error::EmptyAudio(format!("subject {}", clip.subject_id)));
    }
    let source_rate = clip.sample_rate;
    if target_rate == source_rate {
        return Ok(clip.clone());
    }

    let n_in = clip.samples.len();
    let ratio = target_rate as f64 / source_rate as f64;
    let n_out = ((n_in as f64) * ratio).round().max(1.0) as usize;

    // Lowpass cutoff in cycles per *input* sample.
    let fc = 0.5 * ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / (2.0 * fc);
    let half = half_width.ceil() as isize;

    // Output j sits at input time j * Q / P (rates reduced by their gcd),
    // so only P distinct fractional phases occur; precompute the windowed
    // sinc taps per phase, normalized to unit DC gain.
    let g = gcd(target_rate as u64, source_rate as u64);
    let phases = (target_rate as u64 / g) as usize;
    let q = (source_rate as u64 / g) as usize;

    let input: Vec<f64> = clip.samples.iter().map(|&s| s.to_f()).collect();
    let mut out = Vec::with_capacity(n_out);

    if phases <= 16384 {
        let taps_per_phase = (2 * half + 1) as usize;
        let mut taps = vec![0.0f64; phases * taps_per_phase];
        for p in 0..phases {
            let frac = (p * q % phases) as f64 / phases as f64;
            let row = &mut taps[p * taps_per_phase..(p + 1) * taps_per_phase];
            let mut norm = 0.0;
            for (m, tap) in row.iter_mut().enumerate() {
                let u = frac + (m as isize - half) as f64;
                *tap = kernel(u, fc, half_width);
                norm += *tap;
            }
            if norm != 0.0 {
                for tap in row.iter_mut() {
                    *tap /= norm;
                }
            }
        }
        for j in 0..n_out {
            let t_num = j * q;
            let n0 = (t_num / phases) as isize;
            let p = t_num % phases;
            let row = &taps[p * taps_per_phase..(p + 1) * taps_per_phase];
            let mut acc = 0.0;
            // taps[m] multiplies input[n0 + half - m]
            let base = n0 + half;
            for (m, &tap) in row.iter().enumerate() {
                let i = base - m as isize;
                if i >= 0 && (i as usize) < n_in {
                    acc += input[i as usize] * tap;
                }
            }
            out.push(S::from_f(acc));
        }
    } else {
        // irrational-ish ratios: evaluate the kernel directly
        for j in 0..n_out {
            let t = j as f64 / ratio;
            let lo = (t - half_width).ceil() as isize;
            let hi = (t + half_width).floor() as isize;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for i in lo..=hi {
                let u = t - i as f64;
                let k = kernel(u, fc, half_width);
                norm += k;
                if i >= 0 && (i as usize) < n_in {
                    acc += input[i as usize] * k;
                }
            }
            out.push(S::from_f(if norm != 0.0 { acc / norm } else { 0.0 }));
        }
    }

    Ok(clip.with_samples(out, target_rate))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Blackman-windowed sinc lowpass tap at offset `u` input samples.
fn kernel(u: f64, fc: f64, half_width: f64) -> f64 {
    if u.abs() >= half_width {
        return 0.0;
    }
    let x = 2.0 * fc * u;
    let sinc = if x.abs() < 1e-12 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
    let w = {
        let a = std::f64::consts::PI * (u / half_width + 1.0); // in [0, 2pi]
        0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
    };
    2.0 * fc * sinc * w
}
