//! Core audio domain types and WAV loading.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The seven body-sound recordings kept per subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceKind {
    #[serde(rename = "cough-heavy")]
    HeavyCough,
    #[serde(rename = "breath-deep")]
    DeepBreath,
    #[serde(rename = "counting-normal")]
    CountingNormal,
    #[serde(rename = "counting-fast")]
    CountingFast,
    #[serde(rename = "vowel-a")]
    VowelA,
    #[serde(rename = "vowel-e")]
    VowelE,
    #[serde(rename = "vowel-o")]
    VowelO,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 7] = [
        InstanceKind::HeavyCough,
        InstanceKind::DeepBreath,
        InstanceKind::CountingNormal,
        InstanceKind::CountingFast,
        InstanceKind::VowelA,
        InstanceKind::VowelE,
        InstanceKind::VowelO,
    ];

    /// File stem used in the on-disk dataset layout (`<stem>.wav`).
    pub fn file_stem(self) -> &'static str {
        match self {
            InstanceKind::HeavyCough => "cough-heavy",
            InstanceKind::DeepBreath => "breath-deep",
            InstanceKind::CountingNormal => "counting-normal",
            InstanceKind::CountingFast => "counting-fast",
            InstanceKind::VowelA => "vowel-a",
            InstanceKind::VowelE => "vowel-e",
            InstanceKind::VowelO => "vowel-o",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        InstanceKind::ALL.iter().copied().find(|k| k.file_stem() == s)
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// Binary target label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }

    pub fn target(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        })
    }
}

/// A mono sample buffer with its provenance.
///
/// Samples are normalized to [-1, 1] at load time. Intermediate transforms
/// (amplitude augmentation in particular) may step outside that range.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip<S = crate::Real> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
    pub subject_id: String,
    pub instance: InstanceKind,
    pub label: Label,
}

impl<S: Scalar> AudioClip<S> {
    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same clip with a different sample buffer (and possibly rate).
    pub fn with_samples(&self, samples: Vec<S>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
            subject_id: self.subject_id.clone(),
            instance: self.instance,
            label: self.label,
        }
    }
}

/// Identity attached to a clip when loading it from disk.
#[derive(Debug, Clone)]
pub struct ClipMeta {
    pub subject_id: String,
    pub instance: InstanceKind,
    pub label: Label,
}

/// Clamp samples into [-1, 1]. Idempotent.
pub fn normalize_samples<S: Scalar>(samples: &mut [S]) {
    let one = S::one();
    for s in samples.iter_mut() {
        if *s > one {
            *s = one;
        } else if *s < -one {
            *s = -one;
        }
    }
}

/// Load a WAV file as a mono clip with samples normalized to [-1, 1].
///
/// Integer PCM (16/24/32-bit) is divided by 2^(bits-1); float samples are
/// taken as-is and clamped. Multi-channel audio is downmixed by arithmetic
/// mean.
pub fn load_clip<S: Scalar>(path: &Path, meta: ClipMeta) -> Result<AudioClip<S>> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav { path: path.to_path_buf(), message: "zero channels".into() });
    }

    let mono: Vec<S> = match spec.sample_format {
        hound::SampleFormat::Float => {
            let frames: std::result::Result<Vec<f32>, _> = reader.samples::<f32>().collect();
            let frames = frames
                .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
            downmix(&frames, channels, 1.0)
        }
        hound::SampleFormat::Int => {
            let frames: std::result::Result<Vec<i32>, _> = reader.samples::<i32>().collect();
            let frames = frames
                .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
            let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
            downmix_i32(&frames, channels, scale)
        }
    };

    if mono.is_empty() {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }

    let mut samples = mono;
    normalize_samples(&mut samples);
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        subject_id: meta.subject_id,
        instance: meta.instance,
        label: meta.label,
    })
}

fn downmix<S: Scalar>(interleaved: &[f32], channels: usize, scale: f64) -> Vec<S> {
    let inv = scale / channels as f64;
    interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&v| v as f64).sum();
            S::from_f(sum * inv)
        })
        .collect()
}

fn downmix_i32<S: Scalar>(interleaved: &[i32], channels: usize, scale: f64) -> Vec<S> {
    let inv = scale / channels as f64;
    interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&v| v as f64).sum();
            S::from_f(sum * inv)
        })
        .collect()
}

/// Write a mono 16-bit PCM WAV.
pub fn write_wav_mono_16<S: Scalar>(path: &Path, samples: &[S], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    for &s in samples {
        let v = (s.to_f().clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(())
}

/// One subject's clips for the active instance set.
#[derive(Debug, Clone)]
pub struct SubjectRecord<S = crate::Real> {
    pub subject_id: String,
    pub label: Label,
    pub clips: BTreeMap<InstanceKind, AudioClip<S>>,
}

impl<S: Scalar> SubjectRecord<S> {
    /// Build a record, checking that exactly the required instances are
    /// present and that every clip agrees on subject and label.
    pub fn new(
        subject_id: String,
        label: Label,
        clips: BTreeMap<InstanceKind, AudioClip<S>>,
        required: &[InstanceKind],
    ) -> Result<Self> {
        for kind in required {
            if !clips.contains_key(kind) {
                return Err(Error::Contract(format!(
                    "subject {subject_id} is missing instance {kind}"
                )));
            }
        }
        if clips.len() != required.len() {
            return Err(Error::Contract(format!(
                "subject {subject_id} has {} clips, expected {}",
                clips.len(),
                required.len()
            )));
        }
        for clip in clips.values() {
            if clip.subject_id != subject_id || clip.label != label {
                return Err(Error::Contract(format!(
                    "clip identity mismatch for subject {subject_id}"
                )));
            }
        }
        Ok(SubjectRecord { subject_id, label, clips })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn meta() -> ClipMeta {
        ClipMeta {
            subject_id: "s1".into(),
            instance: InstanceKind::HeavyCough,
            label: Label::Negative,
        }
    }

    fn write_pcm16(path: &Path, samples: &[i16], channels: u16, rate: u32) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_peak_normalization() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_pcm16(&p, &[32767, -32768, 0], 1, 8000);
        let clip: AudioClip<f64> = load_clip(&p, meta()).unwrap();
        assert!((clip.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert!((clip.samples[1] + 1.0).abs() < 1e-12);
        assert_eq!(clip.samples[2], 0.0);
    }

    #[test]
    fn all_zero_one_second() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_pcm16(&p, &vec![0i16; 8000], 1, 8000);
        let clip: AudioClip<f32> = load_clip(&p, meta()).unwrap();
        assert_eq!(clip.samples.len(), 8000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
        assert!((clip.duration_sec() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stereo_symmetric_average_is_zero() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("st.wav");
        // channels (0.5, -0.5) everywhere
        let l = (0.5f64 * 32768.0) as i16;
        let frames: Vec<i16> = (0..100).flat_map(|_| [l, -l]).collect();
        write_pcm16(&p, &frames, 2, 8000);
        let clip: AudioClip<f64> = load_clip(&p, meta()).unwrap();
        assert_eq!(clip.samples.len(), 100);
        assert!(clip.samples.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn zero_length_is_an_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_pcm16(&p, &[], 1, 8000);
        let err = load_clip::<f32>(&p, meta()).unwrap_err();
        assert!(matches!(err, Error::EmptyAudio(_)));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = load_clip::<f32>(Path::new("/nonexistent/x.wav"), meta()).unwrap_err();
        assert!(matches!(err, Error::Wav { .. }));
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut v: Vec<f64> = vec![-1.5, -1.0, -0.3, 0.0, 0.9, 1.0, 2.0];
        normalize_samples(&mut v);
        let once = v.clone();
        normalize_samples(&mut v);
        assert_eq!(v, once);
        assert!(v.iter().all(|&s| (-1.0..=1.0).contains(&s)));
    }

    #[test]
    fn float_wav_is_clamped() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for s in [1.5f32, -2.0, 0.25] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let clip: AudioClip<f32> = load_clip(&p, meta()).unwrap();
        assert_eq!(clip.samples, vec![1.0, -1.0, 0.25]);
    }

    #[test]
    fn subject_record_requires_exact_instances() {
        let clip = AudioClip::<f32> {
            samples: vec![0.0; 10],
            sample_rate: 8000,
            subject_id: "s1".into(),
            instance: InstanceKind::HeavyCough,
            label: Label::Positive,
        };
        let mut clips = BTreeMap::new();
        clips.insert(InstanceKind::HeavyCough, clip);
        let required = [InstanceKind::HeavyCough, InstanceKind::DeepBreath];
        assert!(SubjectRecord::new("s1".into(), Label::Positive, clips.clone(), &required).is_err());
        assert!(SubjectRecord::new("s1".into(), Label::Positive, clips, &[InstanceKind::HeavyCough]).is_ok());
    }
}
