//! Mel scale, triangular filterbank, and the mel-spectrogram transform.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::stft::power_spectrogram;

/// Power floor applied before the log.
pub const LOG_EPS: f64 = 1e-10;
/// Dynamic range kept below the per-spectrogram maximum, in dB.
pub const LOG_RANGE_DB: f64 = 80.0;

/// Mel scale: m = 1127 ln(1 + f / 700). Strictly increasing in f.
pub fn hz_to_mel<S: Scalar>(f: S) -> Result<S> {
    if f < S::zero() {
        return Err(Error::Domain(format!("negative frequency {f} Hz")));
    }
    Ok(S::from_f(1127.0) * (S::one() + f / S::from_f(700.0)).ln())
}

/// Inverse of [`hz_to_mel`]: f = 700 (exp(m / 1127) - 1).
pub fn mel_to_hz<S: Scalar>(m: S) -> Result<S> {
    if m < S::zero() {
        return Err(Error::Domain(format!("negative mel value {m}")));
    }
    Ok(S::from_f(700.0) * ((m / S::from_f(1127.0)).exp() - S::one()))
}

/// STFT and filterbank parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelParams {
    pub fft_size: usize,
    pub win_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams { fft_size: 2048, win_size: 2048, hop: 1024, n_mels: 128, sample_rate: 44100 }
    }
}

/// 2-D time-frequency matrix (mel bins x frames) plus transform metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram<S = crate::Real> {
    pub values: Array2<S>,
    pub params: MelParams,
    /// Whether `values` are dB (true) or raw mel power (false).
    pub log_compressed: bool,
}

impl<S: Scalar> MelSpectrogram<S> {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// The value that represents silence in the current domain: the dB
    /// floor (max - 80 dB) after log compression, 0 before it.
    pub fn floor_value(&self) -> S {
        if self.log_compressed {
            let max = self.values.iter().cloned().fold(S::neg_infinity(), S::max);
            max - S::from_f(LOG_RANGE_DB)
        } else {
            S::zero()
        }
    }
}

/// Triangular mel filterbank, peak 1, edges uniform on the mel scale from
/// 0 Hz to Nyquist. Filter centers are exposed for tests and diagnostics.
#[derive(Debug, Clone)]
pub struct MelFilterbank<S> {
    /// (n_mels, n_bins)
    pub weights: Array2<S>,
    centers_hz: Vec<f64>,
}

impl<S: Scalar> MelFilterbank<S> {
    pub fn new(params: &MelParams) -> Self {
        let n_bins = params.fft_size / 2 + 1;
        let nyquist = params.sample_rate as f64 / 2.0;
        let max_mel = 1127.0 * (1.0 + nyquist / 700.0).ln();
        let mel_to_hz64 = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
        let edges: Vec<f64> = (0..params.n_mels + 2)
            .map(|i| mel_to_hz64(max_mel * i as f64 / (params.n_mels + 1) as f64))
            .collect();

        let mut weights = Array2::<S>::zeros((params.n_mels, n_bins));
        let bin_hz = params.sample_rate as f64 / params.fft_size as f64;
        for m in 0..params.n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f < center {
                    (f - lo) / (center - lo)
                } else if (f - center).abs() < f64::EPSILON * center.max(1.0) {
                    1.0
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    weights[(m, k)] = S::from_f(w);
                }
            }
        }
        let centers_hz = edges[1..=params.n_mels].to_vec();
        MelFilterbank { weights, centers_hz }
    }

    pub fn center_hz(&self, mel_bin: usize) -> f64 {
        self.centers_hz[mel_bin]
    }

    /// Index of the filter whose center is nearest the given frequency.
    pub fn nearest_filter(&self, hz: f64) -> usize {
        self.centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - hz).abs().partial_cmp(&(b.1 - hz).abs()).unwrap())
            .unwrap()
            .0
    }

    /// Project a power spectrogram (n_bins, frames) onto the mel bands.
    pub fn apply(&self, power: &Array2<S>) -> Array2<S> {
        self.weights.dot(power)
    }
}

/// Pre-log mel power of a sample buffer: |STFT|^2 through the filterbank.
pub fn mel_power<S: Scalar>(samples: &[S], params: &MelParams) -> Array2<S> {
    let fb = MelFilterbank::new(params);
    let spec = power_spectrogram(samples, params.fft_size, params.win_size, params.hop);
    fb.apply(&spec)
}

/// dB compression: 10 log10(max(p, 1e-10)), clamped to [max - 80, max].
pub fn log_compress<S: Scalar>(power: &Array2<S>) -> Array2<S> {
    let eps = S::from_f(LOG_EPS);
    let ten = S::from_f(10.0);
    let mut db = power.mapv(|p| ten * p.max(eps).log10());
    let max = db.iter().cloned().fold(S::neg_infinity(), S::max);
    let floor = max - S::from_f(LOG_RANGE_DB);
    db.mapv_inplace(|v| v.max(floor));
    db
}

fn check_rate<S: Scalar>(clip: &AudioClip<S>, params: &MelParams) -> Result<()> {
    if clip.sample_rate != params.sample_rate {
        return Err(Error::Contract(format!(
            "mel_spectrogram expects {} Hz, clip is {} Hz",
            params.sample_rate, clip.sample_rate
        )));
    }
    Ok(())
}

/// Log-compressed mel spectrogram of a clip at the configured sample rate.
pub fn mel_spectrogram<S: Scalar>(
    clip: &AudioClip<S>,
    params: &MelParams,
) -> Result<MelSpectrogram<S>> {
    check_rate(clip, params)?;
    let power = mel_power(&clip.samples, params);
    Ok(MelSpectrogram { values: log_compress(&power), params: *params, log_compressed: true })
}

/// Pre-log mel power spectrogram of a clip.
pub fn mel_spectrogram_power<S: Scalar>(
    clip: &AudioClip<S>,
    params: &MelParams,
) -> Result<MelSpectrogram<S>> {
    check_rate(clip, params)?;
    let power = mel_power(&clip.samples, params);
    Ok(MelSpectrogram { values: power, params: *params, log_compressed: false })
}
