//! Build a curated manifest from an on-disk dataset tree: trim silence,
//! discard corrupted or too-short recordings, screen sound types, and
//! compute per-instance duration statistics.
//!
//! Expected layout: `<root>/<subject_id>/<instance-stem>.wav` for the seven
//! retained instances, plus `metadata.json` with a `covid_status` field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_clip, AudioClip, ClipMeta, InstanceKind, Label};
use crate::dsp::trim_silence;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestRecord};
use crate::scalar::Scalar;

/// Classifies a window of audio into ranked (event label, score) pairs,
/// best first. Must be deterministic for a fixed input.
pub trait EventScreener: Send + Sync {
    fn classify(&self, samples: &[f32], sample_rate: u32) -> Vec<(String, f64)>;
    fn name(&self) -> &str;
}

/// Event classes a body-sound recording is allowed to look like.
pub const TARGET_EVENTS: [&str; 3] = ["cough", "breath", "speech"];

/// Fraction of windows that must rank a target event in their top 3.
const WINDOW_PASS_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceVerdict {
    Kept,
    TooShort,
    Silent,
    WrongEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectVerdict {
    Kept,
    Discarded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub subject_id: String,
    pub verdicts: BTreeMap<InstanceKind, InstanceVerdict>,
    pub missing: Vec<InstanceKind>,
    pub subject_verdict: SubjectVerdict,
    pub notes: Vec<String>,
}

impl ScreeningReport {
    /// A subject is kept iff every required instance is present and kept.
    fn finalize(mut self, required: &[InstanceKind]) -> Self {
        let all_kept = required.iter().all(|k| {
            self.verdicts.get(k) == Some(&InstanceVerdict::Kept)
        }) && self.missing.is_empty();
        self.subject_verdict =
            if all_kept { SubjectVerdict::Kept } else { SubjectVerdict::Discarded };
        self
    }

    pub fn kept(&self) -> bool {
        self.subject_verdict == SubjectVerdict::Kept
    }
}

/// State of one instance after load + trim.
pub enum ClipState<S> {
    Ready(AudioClip<S>),
    /// unreadable or empty after trimming; carries a warning for the report
    Silent(Option<String>),
    Missing,
}

/// Apply the screening rules to one subject's trimmed clips.
///
/// An instance is too short below 1 s post-trim, silent when trimming
/// consumed it, and wrong-event when fewer than half of its 1 s windows
/// rank a target event (cough/breath/speech) in the screener's top 3.
pub fn screen_subject<S: Scalar>(
    subject_id: &str,
    clips: &BTreeMap<InstanceKind, ClipState<S>>,
    required: &[InstanceKind],
    screener: &dyn EventScreener,
) -> ScreeningReport {
    let mut report = ScreeningReport {
        subject_id: subject_id.to_string(),
        verdicts: BTreeMap::new(),
        missing: Vec::new(),
        subject_verdict: SubjectVerdict::Discarded,
        notes: Vec::new(),
    };
    for kind in required {
        match clips.get(kind) {
            None | Some(ClipState::Missing) => report.missing.push(*kind),
            Some(ClipState::Silent(warning)) => {
                if let Some(w) = warning {
                    report.notes.push(format!("{kind}: {w}"));
                }
                report.verdicts.insert(*kind, InstanceVerdict::Silent);
            }
            Some(ClipState::Ready(clip)) => {
                let verdict = if clip.duration_sec() < 1.0 {
                    InstanceVerdict::TooShort
                } else if !instance_passes_screener(clip, screener) {
                    InstanceVerdict::WrongEvent
                } else {
                    InstanceVerdict::Kept
                };
                report.verdicts.insert(*kind, verdict);
            }
        }
    }
    report.finalize(required)
}

fn instance_passes_screener<S: Scalar>(clip: &AudioClip<S>, screener: &dyn EventScreener) -> bool {
    let window = clip.sample_rate as usize; // 1 s windows
    let samples: Vec<f32> = clip.samples.iter().map(|s| s.to_f() as f32).collect();
    let n_windows = samples.len().div_ceil(window).max(1);
    let mut passed = 0usize;
    for w in 0..n_windows {
        let lo = w * window;
        let hi = ((w + 1) * window).min(samples.len());
        let ranked = screener.classify(&samples[lo..hi], clip.sample_rate);
        let top3_hit = ranked.iter().take(3).any(|(label, _)| {
            let l = label.to_lowercase();
            TARGET_EVENTS.iter().any(|t| l.contains(t))
        });
        if top3_hit {
            passed += 1;
        }
    }
    (passed as f64) >= WINDOW_PASS_FRACTION * n_windows as f64
}

/// Self-contained default screener: flags windows that are near-silent,
/// pure-tonal, or steady-noise-like via RMS and spectral flatness. Real
/// body sounds (and plausible synthetic stand-ins) mix harmonic and noisy
/// content, landing between the two flatness extremes.
pub struct HeuristicScreener {
    pub min_rms_dbfs: f64,
    pub flatness_lo: f64,
    pub flatness_hi: f64,
}

impl Default for HeuristicScreener {
    fn default() -> Self {
        HeuristicScreener { min_rms_dbfs: -45.0, flatness_lo: 1e-4, flatness_hi: 0.9 }
    }
}

impl HeuristicScreener {
    /// Median per-frame spectral flatness (geometric / arithmetic mean of
    /// the power spectrum, DC excluded) over 2048-sample frames.
    fn spectral_flatness(samples: &[f32]) -> f64 {
        use rustfft::num_complex::Complex;
        const FRAME: usize = 2048;
        let mut planner = rustfft::FftPlanner::<f64>::new();
        let size = FRAME.min(samples.len().next_power_of_two()).max(64);
        let fft = planner.plan_fft_forward(size);

        let frame_flatness = |frame: &[f32]| -> f64 {
            // Hann window keeps tone energy from leaking across the spectrum
            let mut buf: Vec<Complex<f64>> = frame
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let w = 0.5
                        * (1.0 - (std::f64::consts::TAU * i as f64 / frame.len() as f64).cos());
                    Complex::new(v as f64 * w, 0.0)
                })
                .collect();
            buf.resize(size, Complex::new(0.0, 0.0));
            fft.process(&mut buf);
            let bins = size / 2;
            let eps = 1e-12;
            let mut log_sum = 0.0;
            let mut sum = 0.0;
            for c in buf.iter().take(bins + 1).skip(1) {
                let p = c.norm_sqr() + eps;
                log_sum += p.ln();
                sum += p;
            }
            let m = bins as f64;
            ((log_sum / m).exp()) / (sum / m)
        };

        if samples.len() <= size {
            return frame_flatness(samples);
        }
        let mut flatness: Vec<f64> = samples
            .chunks(size)
            .filter(|c| c.len() == size)
            .map(|c| frame_flatness(c))
            .collect();
        flatness.sort_by(|a, b| a.partial_cmp(b).unwrap());
        flatness[flatness.len() / 2]
    }
}

impl EventScreener for HeuristicScreener {
    fn classify(&self, samples: &[f32], _sample_rate: u32) -> Vec<(String, f64)> {
        if samples.is_empty() {
            return vec![("silence".into(), 1.0)];
        }
        let rms =
            (samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64)
                .sqrt();
        let rms_db = 20.0 * rms.max(1e-12).log10();
        if rms_db < self.min_rms_dbfs {
            return vec![("silence".into(), 1.0)];
        }
        let flatness = Self::spectral_flatness(samples);
        if flatness < self.flatness_lo {
            return vec![("tone".into(), 1.0 - flatness), ("music".into(), 0.5)];
        }
        if flatness > self.flatness_hi {
            return vec![("noise".into(), flatness), ("static".into(), 0.5)];
        }
        vec![("speech".into(), 1.0 - flatness), ("breath".into(), 0.5), ("noise".into(), flatness)]
    }

    fn name(&self) -> &str {
        "heuristic"
    }
}

#[derive(Debug, Deserialize)]
struct SubjectMetadata {
    covid_status: String,
}

/// Map a Coswara-style status string onto the binary label; `None` means
/// the subject is excluded (recovered, unidentified, unknown strings).
pub fn label_from_status(status: &str) -> Option<Label> {
    let s = status.to_lowercase();
    if s == "healthy" || s == "negative" {
        Some(Label::Negative)
    } else if s.starts_with("positive") {
        Some(Label::Positive)
    } else {
        None
    }
}

/// Scan a dataset tree, screen every subject, and assemble the manifest of
/// kept subjects plus one screening report per scanned subject.
pub fn build_manifest<S: Scalar>(
    root: &Path,
    screener: &dyn EventScreener,
    trim_db: f64,
) -> Result<(Manifest, Vec<ScreeningReport>)> {
    let required = InstanceKind::ALL;
    let mut subject_dirs: Vec<PathBuf> = Vec::new();
    if root.exists() {
        for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            if entry.path().is_dir() {
                subject_dirs.push(entry.path());
            }
        }
    }
    subject_dirs.sort();

    struct SubjectScan {
        report: ScreeningReport,
        records: Vec<ManifestRecord>,
    }

    let scans: Vec<SubjectScan> = subject_dirs
        .par_iter()
        .map(|dir| {
            let subject_id =
                dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let mut report = ScreeningReport {
                subject_id: subject_id.clone(),
                verdicts: BTreeMap::new(),
                missing: Vec::new(),
                subject_verdict: SubjectVerdict::Discarded,
                notes: Vec::new(),
            };

            let label = match read_label(dir) {
                Ok(Some(label)) => label,
                Ok(None) => {
                    report.notes.push("excluded or unknown covid_status".into());
                    return SubjectScan { report, records: Vec::new() };
                }
                Err(msg) => {
                    report.notes.push(msg);
                    return SubjectScan { report, records: Vec::new() };
                }
            };

            let mut clips: BTreeMap<InstanceKind, ClipState<S>> = BTreeMap::new();
            for kind in required {
                let wav = dir.join(format!("{}.wav", kind.file_stem()));
                if !wav.exists() {
                    clips.insert(kind, ClipState::Missing);
                    continue;
                }
                let meta =
                    ClipMeta { subject_id: subject_id.clone(), instance: kind, label };
                let state = match load_clip::<S>(&wav, meta) {
                    Err(e) => ClipState::Silent(Some(format!("unreadable: {e}"))),
                    Ok(clip) => match trim_silence(&clip, trim_db) {
                        Ok(trimmed) => ClipState::Ready(trimmed),
                        Err(Error::EmptyAfterTrim) => ClipState::Silent(None),
                        Err(e) => ClipState::Silent(Some(format!("trim failed: {e}"))),
                    },
                };
                clips.insert(kind, state);
            }

            let report = screen_subject(&subject_id, &clips, &required, screener);
            let mut records = Vec::new();
            if report.kept() {
                for kind in required {
                    if let Some(ClipState::Ready(clip)) = clips.get(&kind) {
                        records.push(ManifestRecord {
                            subject_id: subject_id.clone(),
                            label,
                            instance: kind,
                            path: dir.join(format!("{}.wav", kind.file_stem())),
                            duration_sec: clip.duration_sec(),
                            sample_rate: clip.sample_rate,
                        });
                    }
                }
            }
            SubjectScan { report, records }
        })
        .collect();

    let mut reports = Vec::with_capacity(scans.len());
    let mut records = Vec::new();
    for scan in scans {
        reports.push(scan.report);
        records.extend(scan.records);
    }
    reports.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let manifest = Manifest::new(records)?;
    Ok((manifest, reports))
}

fn read_label(dir: &Path) -> std::result::Result<Option<Label>, String> {
    let meta_path = dir.join("metadata.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| format!("missing metadata: {e}"))?;
    let meta: SubjectMetadata =
        serde_json::from_str(&text).map_err(|e| format!("bad metadata: {e}"))?;
    Ok(label_from_status(&meta.covid_status))
}

/// Per-instance duration statistics over post-trim durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
}

pub fn duration_stats(manifest: &Manifest) -> Result<BTreeMap<InstanceKind, DurationStats>> {
    if manifest.is_empty() {
        return Err(Error::Contract("duration_stats needs a non-empty manifest".into()));
    }
    let mut grouped: BTreeMap<InstanceKind, Vec<f64>> = BTreeMap::new();
    for r in &manifest.records {
        grouped.entry(r.instance).or_default().push(r.duration_sec);
    }
    let mut out = BTreeMap::new();
    for (kind, mut durations) in grouped {
        durations.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = durations.len();
        let median = if n % 2 == 1 {
            durations[n / 2]
        } else {
            0.5 * (durations[n / 2 - 1] + durations[n / 2])
        };
        out.insert(
            kind,
            DurationStats {
                count: n,
                min: durations[0],
                max: durations[n - 1],
                median,
                mean: durations.iter().sum::<f64>() / n as f64,
            },
        );
    }
    Ok(out)
}

pub fn write_reports(reports: &[ScreeningReport], path: &Path) -> Result<()> {
    let json =
        serde_json::to_string_pretty(reports).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Aggregate counts for logging: (kept, discarded, per-reason counts).
pub fn summarize_reports(reports: &[ScreeningReport]) -> (usize, usize) {
    let kept = reports.iter().filter(|r| r.kept()).count();
    (kept, reports.len() - kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ready_clip(duration_sec: f64, kind: InstanceKind) -> ClipState<f32> {
        let rate = 8000u32;
        let n = (duration_sec * rate as f64) as usize;
        // speech-like: harmonics plus noise
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f32 / rate as f32;
                let mut v = 0.0f32;
                for h in 1..=5 {
                    v += 0.1 / h as f32 * (std::f32::consts::TAU * 150.0 * h as f32 * t).sin();
                }
                v + 0.02 * ((i as f32 * 12.9898).sin() * 43758.547).fract()
            })
            .collect();
        ClipState::Ready(AudioClip {
            samples,
            sample_rate: rate,
            subject_id: "s".into(),
            instance: kind,
            label: Label::Negative,
        })
    }

    #[test]
    fn short_clip_discards_the_subject() {
        let screener = HeuristicScreener::default();
        let mut clips = BTreeMap::new();
        for kind in InstanceKind::ALL {
            clips.insert(kind, ready_clip(4.0, kind));
        }
        clips.insert(InstanceKind::HeavyCough, ready_clip(0.8, InstanceKind::HeavyCough));
        let report = screen_subject("s", &clips, &InstanceKind::ALL, &screener);
        assert_eq!(report.verdicts[&InstanceKind::HeavyCough], InstanceVerdict::TooShort);
        assert_eq!(report.subject_verdict, SubjectVerdict::Discarded);
    }

    #[test]
    fn all_valid_instances_keep_the_subject() {
        let screener = HeuristicScreener::default();
        let mut clips = BTreeMap::new();
        for kind in InstanceKind::ALL {
            clips.insert(kind, ready_clip(3.0, kind));
        }
        let report = screen_subject("s", &clips, &InstanceKind::ALL, &screener);
        assert!(report.kept(), "{report:?}");
        assert!(report
            .verdicts
            .values()
            .all(|v| *v == InstanceVerdict::Kept));
    }

    #[test]
    fn pure_tonal_chord_is_wrong_event() {
        let screener = HeuristicScreener::default();
        let rate = 8000u32;
        let samples: Vec<f32> = (0..2 * rate as usize)
            .map(|i| {
                let t = i as f32 / rate as f32;
                0.3 * (std::f32::consts::TAU * 523.25 * t).sin()
                    + 0.3 * (std::f32::consts::TAU * 659.25 * t).sin()
                    + 0.3 * (std::f32::consts::TAU * 783.99 * t).sin()
            })
            .collect();
        let clip = AudioClip {
            samples,
            sample_rate: rate,
            subject_id: "s".into(),
            instance: InstanceKind::HeavyCough,
            label: Label::Negative,
        };
        let mut clips = BTreeMap::new();
        clips.insert(InstanceKind::HeavyCough, ClipState::Ready(clip));
        let report = screen_subject("s", &clips, &[InstanceKind::HeavyCough], &screener);
        assert_eq!(report.verdicts[&InstanceKind::HeavyCough], InstanceVerdict::WrongEvent);
    }

    #[test]
    fn missing_instance_discards() {
        let screener = HeuristicScreener::default();
        let mut clips: BTreeMap<InstanceKind, ClipState<f32>> = BTreeMap::new();
        clips.insert(InstanceKind::HeavyCough, ready_clip(3.0, InstanceKind::HeavyCough));
        let report = screen_subject(
            "s",
            &clips,
            &[InstanceKind::HeavyCough, InstanceKind::DeepBreath],
            &screener,
        );
        assert_eq!(report.missing, vec![InstanceKind::DeepBreath]);
        assert!(!report.kept());
    }

    #[test]
    fn label_mapping() {
        assert_eq!(label_from_status("healthy"), Some(Label::Negative));
        assert_eq!(label_from_status("negative"), Some(Label::Negative));
        assert_eq!(label_from_status("positive_mild"), Some(Label::Positive));
        assert_eq!(label_from_status("positive"), Some(Label::Positive));
        assert_eq!(label_from_status("recovered_full"), None);
        assert_eq!(label_from_status("resp_illness_not_identified"), None);
    }

    #[test]
    fn duration_stats_examples() {
        use crate::manifest::ManifestRecord;
        let rec = |kind: InstanceKind, dur: f64, id: &str| ManifestRecord {
            subject_id: id.into(),
            label: Label::Negative,
            instance: kind,
            path: format!("{id}/{kind}.wav").into(),
            duration_sec: dur,
            sample_rate: 44100,
        };
        let m = Manifest::new(vec![
            rec(InstanceKind::HeavyCough, 6.06, "a"),
            rec(InstanceKind::DeepBreath, 2.0, "a"),
            rec(InstanceKind::DeepBreath, 4.0, "b"),
            rec(InstanceKind::DeepBreath, 6.0, "c"),
        ])
        .unwrap();
        let stats = duration_stats(&m).unwrap();
        let cough = &stats[&InstanceKind::HeavyCough];
        assert_eq!((cough.min, cough.max, cough.median, cough.mean), (6.06, 6.06, 6.06, 6.06));
        let breath = &stats[&InstanceKind::DeepBreath];
        assert_eq!(breath.median, 4.0);
        assert_eq!(breath.mean, 4.0);
    }

    #[test]
    fn empty_root_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let screener = HeuristicScreener::default();
        let (manifest, reports) = build_manifest::<f32>(dir.path(), &screener, 60.0).unwrap();
        assert!(manifest.is_empty());
        assert!(reports.is_empty());
    }
}
