//! Centered short-time Fourier transform with reflect padding.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;

/// Number of frames produced by centered framing: floor(n / hop) + 1.
pub fn n_frames(n_samples: usize, hop: usize) -> usize {
    n_samples / hop + 1
}

/// Reflect an out-of-range index back into [0, n) without repeating the
/// edge sample (symmetric reflection, period 2n - 2).
fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Power spectrogram of shape (fft_size / 2 + 1, n_frames).
///
/// Frame k is centered at sample k * hop; a periodic Hann window of
/// `win_size` samples is applied, zero-padded to `fft_size` if shorter.
pub fn power_spectrogram<S: Scalar>(
    samples: &[S],
    fft_size: usize,
    win_size: usize,
    hop: usize,
) -> Array2<S> {
    assert!(win_size <= fft_size, "window larger than FFT size");
    assert!(hop > 0 && !samples.is_empty());
    let n = samples.len();
    let frames = n_frames(n, hop);
    let n_bins = fft_size / 2 + 1;

    let window: Vec<f64> = (0..win_size)
        .map(|i| {
            let x = std::f64::consts::TAU * i as f64 / win_size as f64;
            0.5 * (1.0 - x.cos())
        })
        .collect();

    let mut planner = FftPlanner::<S>::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut out = Array2::<S>::zeros((n_bins, frames));
    let mut buf = vec![Complex::new(S::zero(), S::zero()); fft_size];
    let pad = (fft_size - win_size) / 2;

    for f in 0..frames {
        let center = (f * hop) as isize;
        let start = center - win_size as isize / 2;
        for b in buf.iter_mut() {
            *b = Complex::new(S::zero(), S::zero());
        }
        for (w, &wv) in window.iter().enumerate() {
            let idx = reflect_index(start + w as isize, n);
            buf[pad + w] = Complex::new(samples[idx] * S::from_f(wv), S::zero());
        }
        fft.process(&mut buf);
        for (bin, col) in buf.iter().take(n_bins).enumerate() {
            out[(bin, f)] = col.re * col.re + col.im * col.im;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_seconds_at_44100_gives_173_frames() {
        assert_eq!(n_frames(176400, 1024), 173);
    }

    #[test]
    fn zero_signal_gives_zero_power() {
        let spec = power_spectrogram(&vec![0.0f64; 5000], 2048, 2048, 1024);
        assert_eq!(spec.dim(), (1025, 5));
        assert!(spec.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_at_its_bin() {
        let sr = 44100.0;
        let f0 = 1000.0;
        let samples: Vec<f64> = (0..44100)
            .map(|i| (std::f64::consts::TAU * f0 * i as f64 / sr).sin())
            .collect();
        let spec = power_spectrogram(&samples, 2048, 2048, 1024);
        // middle frame, away from edges
        let col = spec.column(20);
        let peak = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let bin_hz = sr / 2048.0;
        assert!(((peak as f64) * bin_hz - f0).abs() < bin_hz * 1.5);
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-7, 1), 0);
        assert_eq!(reflect_index(3, 2), 1);
    }

    proptest! {
        #[test]
        fn frame_count_formula_holds(n in 1usize..60000) {
            let samples = vec![0.1f32; n];
            let spec = power_spectrogram(&samples, 512, 512, 256);
            prop_assert_eq!(spec.dim(), (257, n / 256 + 1));
        }
    }
}
