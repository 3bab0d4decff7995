//! Deterministic signal transforms: resampling, silence trimming, cropping,
//! mel-spectrogram, and the two retained augmentations (amplitude gain,
//! time/frequency masking). Everything here is a pure function of
//! `(input, seed)`.

pub mod augment;
pub mod mel;
pub mod resample;
pub mod stft;
pub mod trim;

pub use augment::{amplitude_scale, crop_window, mask_time_freq, AugmentationPolicy, CropMode};
pub use mel::{
    hz_to_mel, log_compress, mel_power, mel_spectrogram, mel_spectrogram_power, mel_to_hz,
    MelFilterbank, MelParams, MelSpectrogram,
};
pub use resample::resample;
pub use stft::{n_frames, power_spectrogram};
pub use trim::trim_silence;

use serde::{Deserialize, Serialize};

/// Transform parameters carried in the experiment config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspParams {
    pub fft_size: usize,
    pub win_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub crop_sec: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    pub mask_len: usize,
    pub trim_db: f64,
    /// Target rate of the spectrogram branch.
    pub spec_rate: u32,
    /// Target rate of the waveform branch.
    pub wave_rate: u32,
}

impl Default for DspParams {
    fn default() -> Self {
        DspParams {
            fft_size: 2048,
            win_size: 2048,
            hop: 1024,
            n_mels: 128,
            crop_sec: 4.0,
            gain_min: 0.9,
            gain_max: 1.3,
            mask_len: 10,
            trim_db: 60.0,
            spec_rate: 44100,
            wave_rate: 8000,
        }
    }
}

impl DspParams {
    pub fn mel_params(&self) -> MelParams {
        MelParams {
            fft_size: self.fft_size,
            win_size: self.win_size,
            hop: self.hop,
            n_mels: self.n_mels,
            sample_rate: self.spec_rate,
        }
    }

    pub fn augmentation_policy(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            gain_min: self.gain_min,
            gain_max: self.gain_max,
            mask_len: self.mask_len,
            time_masks: 1,
            freq_masks: 1,
            enabled: true,
        }
    }
}
