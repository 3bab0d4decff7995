//! Cropping and train-time augmentations: amplitude gain and
//! time/frequency masking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::mel::MelSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub gain_min: f64,
    pub gain_max: f64,
    pub mask_len: usize,
    pub time_masks: usize,
    pub freq_masks: usize,
    pub enabled: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            gain_min: 0.9,
            gain_max: 1.3,
            mask_len: 10,
            time_masks: 1,
            freq_masks: 1,
            enabled: true,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.gain_min > self.gain_max {
            return Err(Error::Config("gain_min must not exceed gain_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Train,
    Eval,
}

/// Crop to exactly `crop_sec` seconds.
///
/// Eval mode takes the first window; train mode draws the start offset
/// uniformly from [0, min(1 s, duration - crop)], so the window always lies
/// within the first `crop + 1` seconds. Shorter clips are zero-padded at
/// the tail.
pub fn crop_window<S: Scalar, R: Rng>(
    clip: &AudioClip<S>,
    crop_sec: f64,
    mode: CropMode,
    rng: &mut R,
) -> AudioClip<S> {
    let rate = clip.sample_rate as f64;
    let target = (crop_sec * rate).round() as usize;
    let n = clip.samples.len();

    if n <= target {
        let mut samples = clip.samples.clone();
        samples.resize(target, S::zero());
        return clip.with_samples(samples, clip.sample_rate);
    }

    let max_start_sec = (clip.duration_sec() - crop_sec).min(1.0);
    let start = match mode {
        CropMode::Eval => 0,
        CropMode::Train => {
            let start_sec: f64 = if max_start_sec > 0.0 {
                rng.gen_range(0.0..max_start_sec)
            } else {
                0.0
            };
            ((start_sec * rate).round() as usize).min(n - target)
        }
    };
    clip.with_samples(clip.samples[start..start + target].to_vec(), clip.sample_rate)
}

/// Multiply samples by a gain drawn uniformly from the policy range.
/// Returns the augmented clip and the gain that was applied.
pub fn amplitude_scale<S: Scalar, R: Rng>(
    clip: &AudioClip<S>,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> (AudioClip<S>, f64) {
    let gain = if policy.gain_max > policy.gain_min {
        rng.gen_range(policy.gain_min..policy.gain_max)
    } else {
        policy.gain_min
    };
    let g = S::from_f(gain);
    let samples = clip.samples.iter().map(|&s| s * g).collect();
    (clip.with_samples(samples, clip.sample_rate), gain)
}

/// Set one contiguous block of `mask_len` frames and one of `mask_len` mel
/// bins to the silence value (0 for power, the dB floor after log
/// compression). Positions are uniform; a zero mask length is the identity.
pub fn mask_time_freq<S: Scalar, R: Rng>(
    spec: &MelSpectrogram<S>,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<MelSpectrogram<S>> {
    let len = policy.mask_len;
    if len == 0 {
        return Ok(spec.clone());
    }
    let (n_mels, n_frames) = spec.values.dim();
    if len > n_frames || len > n_mels {
        return Err(Error::Contract(format!(
            "mask length {len} exceeds spectrogram axes ({n_mels} x {n_frames})"
        )));
    }
    let fill = spec.floor_value();
    let mut out = spec.clone();
    for _ in 0..policy.time_masks {
        let t0 = rng.gen_range(0..=n_frames - len);
        out.values.slice_mut(ndarray::s![.., t0..t0 + len]).fill(fill);
    }
    for _ in 0..policy.freq_masks {
        let f0 = rng.gen_range(0..=n_mels - len);
        out.values.slice_mut(ndarray::s![f0..f0 + len, ..]).fill(fill);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{InstanceKind, Label};
    use crate::dsp::mel::MelParams;
    use crate::rng::{stream, RngSeed};
    use ndarray::Array2;

    fn clip_secs(sec: f64, rate: u32) -> AudioClip<f32> {
        let n = (sec * rate as f64).round() as usize;
        AudioClip {
            samples: (0..n).map(|i| ((i % 100) as f32 - 50.0) / 100.0).collect(),
            sample_rate: rate,
            subject_id: "t".into(),
            instance: InstanceKind::CountingFast,
            label: Label::Negative,
        }
    }

    #[test]
    fn eval_crop_takes_the_first_window() {
        let clip = clip_secs(10.0, 8000);
        let mut rng = stream(RngSeed(1), "t", &[], &[]);
        let out = crop_window(&clip, 4.0, CropMode::Eval, &mut rng);
        assert_eq!(out.samples.len(), 32000);
        assert_eq!(&out.samples[..], &clip.samples[..32000]);
    }

    #[test]
    fn short_clip_is_tail_padded() {
        let clip = clip_secs(3.0, 8000);
        let mut rng = stream(RngSeed(1), "t", &[], &[]);
        for mode in [CropMode::Train, CropMode::Eval] {
            let out = crop_window(&clip, 4.0, mode, &mut rng);
            assert_eq!(out.samples.len(), 32000);
            assert_eq!(&out.samples[..24000], &clip.samples[..]);
            assert!(out.samples[24000..].iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn train_crop_is_seeded_and_within_first_second() {
        let clip = clip_secs(10.0, 8000);
        let mut a = stream(RngSeed(9), "crop", &[], &[]);
        let mut b = stream(RngSeed(9), "crop", &[], &[]);
        let ca = crop_window(&clip, 4.0, CropMode::Train, &mut a);
        let cb = crop_window(&clip, 4.0, CropMode::Train, &mut b);
        assert_eq!(ca.samples, cb.samples);
        // the window lies within the first 5 seconds: find the offset
        let mut c = stream(RngSeed(10), "crop", &[], &[]);
        for _ in 0..50 {
            let cc = crop_window(&clip, 4.0, CropMode::Train, &mut c);
            let off = clip
                .samples
                .windows(cc.samples.len())
                .position(|w| w == &cc.samples[..])
                .unwrap();
            assert!(off <= 8000);
        }
    }

    #[test]
    fn gain_on_zeros_is_zeros_and_range_holds() {
        let zeros = AudioClip::<f64> {
            samples: vec![0.0; 100],
            sample_rate: 8000,
            subject_id: "t".into(),
            instance: InstanceKind::VowelO,
            label: Label::Negative,
        };
        let policy = AugmentationPolicy::default();
        let mut rng = stream(RngSeed(4), "gain", &[], &[]);
        let (out, _) = amplitude_scale(&zeros, &policy, &mut rng);
        assert!(out.samples.iter().all(|&s| s == 0.0));

        let clip = clip_secs(1.0, 8000);
        let peak_in = clip.samples.iter().fold(0.0f32, |a, &b| a.max(b.abs()));
        for _ in 0..1000 {
            let (out, g) = amplitude_scale(&clip, &policy, &mut rng);
            assert!((0.9..=1.3).contains(&g));
            let peak_out = out.samples.iter().fold(0.0f32, |a, &b| a.max(b.abs()));
            let ratio = peak_out / peak_in;
            assert!((0.9 - 1e-4..=1.3 + 1e-4).contains(&(ratio as f64)));
        }
        let mut a = stream(RngSeed(4), "gain2", &[], &[]);
        let mut b = stream(RngSeed(4), "gain2", &[], &[]);
        assert_eq!(amplitude_scale(&clip, &policy, &mut a).1, amplitude_scale(&clip, &policy, &mut b).1);
    }

    fn random_spec(n_mels: usize, n_frames: usize) -> MelSpectrogram<f64> {
        let mut rng = stream(RngSeed(7), "spec", &[], &[n_mels as u64, n_frames as u64]);
        let values = Array2::from_shape_fn((n_mels, n_frames), |_| rng.gen_range(0.1..1.0));
        MelSpectrogram {
            values,
            params: MelParams::default(),
            log_compressed: false,
        }
    }

    #[test]
    fn masking_changes_exactly_the_declared_cells() {
        let spec = random_spec(128, 173);
        let policy = AugmentationPolicy::default();
        for salt in 0..20u64 {
            let mut rng = stream(RngSeed(salt), "mask", &[], &[]);
            let out = mask_time_freq(&spec, &policy, &mut rng).unwrap();
            let changed = spec
                .values
                .iter()
                .zip(out.values.iter())
                .filter(|(a, b)| a != b)
                .count();
            // one 10-frame block and one 10-bin block minus their overlap
            let zeroed_cols: Vec<usize> = (0..173)
                .filter(|&t| (0..128).all(|m| out.values[(m, t)] == 0.0))
                .collect();
            let zeroed_rows: Vec<usize> = (0..128)
                .filter(|&m| (0..173).all(|t| out.values[(m, t)] == 0.0))
                .collect();
            assert_eq!(zeroed_cols.len(), 10);
            assert_eq!(zeroed_rows.len(), 10);
            assert!(zeroed_cols.windows(2).all(|w| w[1] == w[0] + 1), "time block contiguous");
            assert!(zeroed_rows.windows(2).all(|w| w[1] == w[0] + 1), "freq block contiguous");
            let overlap = 10 * 10;
            assert_eq!(changed, 10 * 128 + 10 * 173 - overlap);
            // unmasked cells unchanged => their sum is unchanged
            let sum_unmasked: f64 = spec
                .values
                .indexed_iter()
                .filter(|((m, t), _)| !zeroed_rows.contains(m) && !zeroed_cols.contains(t))
                .map(|(_, &v)| v)
                .sum();
            let sum_out: f64 = out.values.iter().sum();
            assert!((sum_out - sum_unmasked).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_mask_length_is_identity_and_seeding_is_deterministic() {
        let spec = random_spec(64, 80);
        let mut policy = AugmentationPolicy::default();
        policy.mask_len = 0;
        let mut rng = stream(RngSeed(1), "m0", &[], &[]);
        let out = mask_time_freq(&spec, &policy, &mut rng).unwrap();
        assert_eq!(out.values, spec.values);

        policy.mask_len = 10;
        let mut a = stream(RngSeed(2), "m1", &[], &[]);
        let mut b = stream(RngSeed(2), "m1", &[], &[]);
        let oa = mask_time_freq(&spec, &policy, &mut a).unwrap();
        let ob = mask_time_freq(&spec, &policy, &mut b).unwrap();
        assert_eq!(oa.values, ob.values);
    }

    #[test]
    fn log_domain_mask_uses_the_db_floor() {
        let mut spec = random_spec(32, 32);
        spec.values.mapv_inplace(|v| v * 40.0 - 20.0);
        spec.log_compressed = true;
        let max = spec.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut rng = stream(RngSeed(3), "mlog", &[], &[]);
        let policy = AugmentationPolicy { mask_len: 4, ..Default::default() };
        let out = mask_time_freq(&spec, &policy, &mut rng).unwrap();
        let floor = max - 80.0;
        let n_floor = out.values.iter().filter(|&&v| (v - floor).abs() < 1e-12).count();
        assert!(n_floor >= 4 * 32 + 4 * 32 - 16);
    }

    #[test]
    fn oversized_mask_is_contract_error() {
        let spec = random_spec(8, 8);
        let policy = AugmentationPolicy::default(); // len 10 > 8
        let mut rng = stream(RngSeed(3), "bad", &[], &[]);
        assert!(matches!(
            mask_time_freq(&spec, &policy, &mut rng),
            Err(Error::Contract(_))
        ));
    }
}
