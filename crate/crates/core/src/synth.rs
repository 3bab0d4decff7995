//! Deterministic synthetic multi-instance dataset generator.
//!
//! Every subject gets the same kind of base signal per instance (noise
//! floor, speech-like harmonic stack, and the instance's carrier texture).
//! Positive subjects additionally carry the instance's cue with probability
//! `carrier_prob`, independently per instance, so no single instance is
//! fully informative and fusing instances is required to approach the
//! dataset's AUC ceiling.
//!
//! Cues are split across representations by construction: narrowband tones
//! are spectrally salient, while amplitude modulation above ~22 Hz rides on
//! band noise with its average power equalized, leaving nothing for a
//! 46 ms-window spectrogram to see but plenty for a waveform encoder.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav_mono_16, InstanceKind, Label};
use crate::error::{Error, Result};
use crate::ingest::{build_manifest, HeuristicScreener, ScreeningReport};
use crate::manifest::Manifest;
use crate::rng::{stream, RngSeed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CueKind {
    /// Steady sine at `freq_hz`: trivially visible in the mel spectrogram.
    NarrowbandTone { freq_hz: f64 },
    /// Full-depth amplitude modulation of the instance's band-noise
    /// carrier at `rate_hz`, power-equalized against the unmodulated
    /// carrier: salient in the waveform, near-invisible in 46 ms frames.
    AmplitudeModulation { rate_hz: f64 },
    /// Burst train at a strict periodic `rate_hz` grid instead of the
    /// jittered timing every subject gets: visible to both branches.
    NoiseBurstRhythm { rate_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueSpec {
    pub cue: CueKind,
    /// Linear amplitude of the cue component.
    pub strength: f64,
    /// Probability a positive subject carries this instance's cue.
    pub carrier_prob: f64,
}

/// Band-noise carrier texture of an instance (present for every subject).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierBand {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    /// Fraction of positive subjects.
    pub class_balance: f64,
    pub clip_sec: f64,
    pub sample_rate: u32,
    /// RMS of the white-noise floor in dBFS.
    pub noise_floor_db: f64,
    pub seed: u64,
    pub cues: BTreeMap<InstanceKind, CueSpec>,
    pub carriers: BTreeMap<InstanceKind, CarrierBand>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        use InstanceKind::*;
        let mut cues = BTreeMap::new();
        let tone = |f| CueKind::NarrowbandTone { freq_hz: f };
        let am = |r| CueKind::AmplitudeModulation { rate_hz: r };
        cues.insert(HeavyCough, CueSpec {
            cue: CueKind::NoiseBurstRhythm { rate_hz: 8.0 },
            strength: 0.30,
            carrier_prob: 0.5,
        });
        cues.insert(DeepBreath, CueSpec { cue: am(30.0), strength: 1.0, carrier_prob: 0.7 });
        cues.insert(CountingNormal, CueSpec { cue: tone(3300.0), strength: 0.30, carrier_prob: 0.5 });
        cues.insert(CountingFast, CueSpec { cue: tone(2500.0), strength: 0.30, carrier_prob: 0.5 });
        cues.insert(VowelA, CueSpec { cue: am(27.0), strength: 1.0, carrier_prob: 0.7 });
        cues.insert(VowelE, CueSpec { cue: tone(1800.0), strength: 0.30, carrier_prob: 0.5 });
        cues.insert(VowelO, CueSpec { cue: am(33.0), strength: 1.0, carrier_prob: 0.7 });

        let mut carriers = BTreeMap::new();
        carriers.insert(HeavyCough, CarrierBand { lo_hz: 800.0, hi_hz: 2400.0, level: 0.20 });
        carriers.insert(DeepBreath, CarrierBand { lo_hz: 400.0, hi_hz: 1600.0, level: 0.12 });
        carriers.insert(CountingNormal, CarrierBand { lo_hz: 300.0, hi_hz: 1200.0, level: 0.08 });
        carriers.insert(CountingFast, CarrierBand { lo_hz: 300.0, hi_hz: 1400.0, level: 0.08 });
        carriers.insert(VowelA, CarrierBand { lo_hz: 500.0, hi_hz: 2000.0, level: 0.12 });
        carriers.insert(VowelE, CarrierBand { lo_hz: 600.0, hi_hz: 2200.0, level: 0.12 });
        carriers.insert(VowelO, CarrierBand { lo_hz: 300.0, hi_hz: 1200.0, level: 0.12 });

        SynthSpec {
            n_subjects: 300,
            class_balance: 0.25,
            clip_sec: 4.0,
            sample_rate: 44100,
            noise_floor_db: -34.0,
            seed: 17,
            cues,
            carriers,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return Err(Error::Config("class_balance must lie in [0, 1]".into()));
        }
        if self.clip_sec <= 0.0 || self.sample_rate == 0 {
            return Err(Error::Config("clip duration and sample rate must be positive".into()));
        }
        // cue content must survive the 8 kHz waveform branch
        let wave_nyquist = 4000.0;
        for (kind, cue) in &self.cues {
            if !(0.0 < cue.carrier_prob && cue.carrier_prob <= 1.0) {
                return Err(Error::Config(format!("{kind}: carrier_prob must be in (0, 1]")));
            }
            let max_freq = match cue.cue {
                CueKind::NarrowbandTone { freq_hz } => freq_hz,
                CueKind::AmplitudeModulation { rate_hz } => rate_hz,
                CueKind::NoiseBurstRhythm { rate_hz } => rate_hz,
            };
            if max_freq <= 0.0 || max_freq >= wave_nyquist {
                return Err(Error::Config(format!(
                    "{kind}: cue frequency {max_freq} outside (0, {wave_nyquist})"
                )));
            }
        }
        for (kind, band) in &self.carriers {
            if band.lo_hz <= 0.0 || band.hi_hz <= band.lo_hz || band.hi_hz >= wave_nyquist {
                return Err(Error::Config(format!("{kind}: bad carrier band")));
            }
        }
        Ok(())
    }

    pub fn n_positive(&self) -> usize {
        (self.n_subjects as f64 * self.class_balance).round() as usize
    }

    pub fn subject_id(&self, idx: usize) -> String {
        format!("s{idx:04}")
    }

    pub fn label_of(&self, idx: usize) -> Label {
        if idx < self.n_positive() {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// The cue assignment of one subject (ground truth for diagnostics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub label: Label,
    pub cues: BTreeMap<InstanceKind, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub subjects: Vec<SubjectTruth>,
}

/// Deterministic cue assignment for one subject; negatives carry none.
pub fn assign_cues(spec: &SynthSpec, subject_idx: usize) -> SubjectTruth {
    let label = spec.label_of(subject_idx);
    let mut rng = stream(RngSeed(spec.seed), "synth-cues", &[], &[subject_idx as u64]);
    let mut cues = BTreeMap::new();
    for (kind, cue) in &spec.cues {
        let present = label.is_positive() && rng.gen_bool(cue.carrier_prob);
        cues.insert(*kind, present);
    }
    SubjectTruth { subject_id: spec.subject_id(subject_idx), label, cues }
}

/// Two cascaded RBJ bandpass biquads, output renormalized to unit RMS.
fn band_noise(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64, fs: f64) -> Vec<f64> {
    let f0 = (lo * hi).sqrt();
    let q = (f0 / (hi - lo)).max(0.3);
    let omega = std::f64::consts::TAU * f0 / fs;
    let alpha = omega.sin() / (2.0 * q);
    let b0 = alpha;
    let b2 = -alpha;
    let a0 = 1.0 + alpha;
    let a1 = -2.0 * omega.cos();
    let a2 = 1.0 - alpha;

    let mut out: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..2 {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0, 0.0, 0.0);
        for v in out.iter_mut() {
            let x0 = *v;
            let y0 = (b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    for v in out.iter_mut() {
        *v /= rms;
    }
    out
}

/// Incremental sine oscillator.
struct Phasor {
    re: f64,
    im: f64,
    step_re: f64,
    step_im: f64,
}

impl Phasor {
    fn new(freq_hz: f64, fs: f64, phase: f64) -> Self {
        let w = std::f64::consts::TAU * freq_hz / fs;
        Phasor { re: phase.cos(), im: phase.sin(), step_re: w.cos(), step_im: w.sin() }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        let s = self.im;
        let re = self.re * self.step_re - self.im * self.step_im;
        let im = self.re * self.step_im + self.im * self.step_re;
        self.re = re;
        self.im = im;
        s
    }
}

/// Synthesize one clip. Exposed for targeted tests; `generate_dataset`
/// drives it for the whole tree.
pub fn synthesize_clip(spec: &SynthSpec, subject_idx: usize, kind: InstanceKind) -> Vec<f32> {
    let truth = assign_cues(spec, subject_idx);
    let cue_present = truth.cues.get(&kind).copied().unwrap_or(false);
    let instance_idx = InstanceKind::ALL.iter().position(|k| *k == kind).unwrap() as u64;
    let mut rng = stream(
        RngSeed(spec.seed),
        "synth-audio",
        &[],
        &[subject_idx as u64, instance_idx],
    );

    let fs = spec.sample_rate as f64;
    let n = (spec.clip_sec * fs).round() as usize;
    let mut signal = vec![0.0f64; n];

    // white noise floor
    let floor_amp = 10f64.powf(spec.noise_floor_db / 20.0);
    for v in signal.iter_mut() {
        *v = floor_amp * rng.gen_range(-1.732..1.732);
    }

    // speech-like harmonic stack with a slow random envelope
    {
        let f0 = rng.gen_range(110.0..180.0);
        let n_harm = 6usize;
        let env_rate = rng.gen_range(0.3..1.2);
        let env_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut env = Phasor::new(env_rate, fs, env_phase);
        let mut oscs: Vec<(f64, Phasor)> = (1..=n_harm)
            .map(|h| {
                let amp = 0.11 / h as f64;
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (amp, Phasor::new(f0 * h as f64, fs, phase))
            })
            .collect();
        for v in signal.iter_mut() {
            let e = 0.55 + 0.45 * env.next();
            let mut s = 0.0;
            for (amp, osc) in oscs.iter_mut() {
                s += *amp * osc.next();
            }
            *v += e * s;
        }
    }

    let cue = spec.cues.get(&kind);
    let carrier = spec.carriers.get(&kind);

    match cue.map(|c| c.cue) {
        Some(CueKind::NoiseBurstRhythm { rate_hz }) => {
            // burst carrier for everyone; the cue is strict periodicity
            if let Some(band) = carrier {
                let noise = band_noise(&mut rng, n, band.lo_hz, band.hi_hz, fs);
                let strength = cue.map(|c| c.strength).unwrap_or(0.3);
                let period = 1.0 / rate_hz;
                let n_bursts = (spec.clip_sec * rate_hz).floor() as usize;
                let burst_len = (0.060 * fs) as usize;
                let ramp = (0.010 * fs) as usize;
                let phase0: f64 = rng.gen_range(0.0..period * 0.5);
                for k in 0..n_bursts {
                    let t_start = if cue_present {
                        phase0 + k as f64 * period
                    } else {
                        phase0 + k as f64 * period + rng.gen_range(-0.45 * period..0.45 * period)
                    };
                    let start = (t_start * fs) as usize;
                    for j in 0..burst_len {
                        let idx = start + j;
                        if idx >= n {
                            break;
                        }
                        let edge = if j < ramp {
                            j as f64 / ramp as f64
                        } else if j + ramp > burst_len {
                            (burst_len - j) as f64 / ramp as f64
                        } else {
                            1.0
                        };
                        signal[idx] += strength * edge * noise[idx];
                    }
                }
            }
        }
        Some(CueKind::AmplitudeModulation { rate_hz }) => {
            if let Some(band) = carrier {
                let noise = band_noise(&mut rng, n, band.lo_hz, band.hi_hz, fs);
                if cue_present {
                    // (1+cos)/2 envelope; sqrt(8/3) restores average power
                    let gain = band.level * (8.0f64 / 3.0).sqrt();
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    let mut lfo = Phasor::new(rate_hz, fs, phase);
                    for (v, x) in signal.iter_mut().zip(noise.iter()) {
                        let e = Q1 * (1.0 + lfo.next());
                        *v += gain * e * x;
                    }
                } else {
                    for (v, x) in signal.iter_mut().zip(noise.iter()) {
                        *v += band.level * x;
                    }
                }
            }
        }
        Some(CueKind::NarrowbandTone { freq_hz }) => {
            if let Some(band) = carrier {
                let noise = band_noise(&mut rng, n, band.lo_hz, band.hi_hz, fs);
                for (v, x) in signal.iter_mut().zip(noise.iter()) {
                    *v += band.level * x;
                }
            }
            if cue_present {
                let strength = cue.map(|c| c.strength).unwrap_or(0.3);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let mut osc = Phasor::new(freq_hz, fs, phase);
                for v in signal.iter_mut() {
                    *v += strength * osc.next();
                }
            }
        }
        None => {}
    }

    signal.iter().map(|&v| (v.clamp(-0.999, 0.999)) as f32).collect()
}

const Q1: f64 = 0.5;

/// Emit the dataset tree: one directory per subject with the seven WAVs and
/// a metadata.json, plus `cues.json` (ground truth) at the root.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<GroundTruth> {
    use rayon::prelude::*;
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let subjects: Vec<SubjectTruth> =
        (0..spec.n_subjects).map(|i| assign_cues(spec, i)).collect();

    (0..spec.n_subjects).into_par_iter().try_for_each(|i| -> Result<()> {
        let truth = &subjects[i];
        let dir = out_dir.join(&truth.subject_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for kind in InstanceKind::ALL {
            let samples = synthesize_clip(spec, i, kind);
            let path = dir.join(format!("{}.wav", kind.file_stem()));
            write_wav_mono_16(&path, &samples, spec.sample_rate)?;
        }
        let meta = serde_json::json!({ "covid_status": truth.label.to_string() });
        let meta_path = dir.join("metadata.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
            .map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    })?;

    let truth = GroundTruth { seed: spec.seed, subjects };
    let cues_path = out_dir.join("cues.json");
    let json = serde_json::to_string_pretty(&truth).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(&cues_path, json + "\n").map_err(|e| Error::io(&cues_path, e))?;
    Ok(truth)
}

/// Generate the tree and run it through ingest screening, returning the
/// curated manifest alongside the screening reports and ground truth.
pub fn generate_and_ingest(
    spec: &SynthSpec,
    out_dir: &Path,
) -> Result<(Manifest, Vec<ScreeningReport>, GroundTruth)> {
    let truth = generate_dataset(spec, out_dir)?;
    let screener = HeuristicScreener::default();
    let (manifest, reports) = build_manifest::<f32>(out_dir, &screener, 60.0)?;
    Ok((manifest, reports, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_spec(n: usize, balance: f64) -> SynthSpec {
        SynthSpec {
            n_subjects: n,
            class_balance: balance,
            clip_sec: 1.5,
            sample_rate: 8000,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn exact_class_counts_and_file_layout() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec(6, 0.5);
        let truth = generate_dataset(&spec, dir.path()).unwrap();
        assert_eq!(truth.subjects.len(), 6);
        let pos = truth.subjects.iter().filter(|s| s.label.is_positive()).count();
        assert_eq!(pos, 3);
        for s in &truth.subjects {
            let d = dir.path().join(&s.subject_id);
            for kind in InstanceKind::ALL {
                assert!(d.join(format!("{}.wav", kind.file_stem())).exists());
            }
            assert!(d.join("metadata.json").exists());
        }
        assert!(dir.path().join("cues.json").exists());
    }

    #[test]
    fn negatives_carry_no_cues() {
        let spec = tiny_spec(10, 0.3);
        for i in 0..10 {
            let t = assign_cues(&spec, i);
            if !t.label.is_positive() {
                assert!(t.cues.values().all(|&c| !c));
            }
        }
    }

    #[test]
    fn cue_frequency_matches_p_binomially() {
        let mut spec = SynthSpec::default();
        spec.n_subjects = 10000;
        spec.class_balance = 1.0; // all positive for the frequency check
        for kind in [InstanceKind::DeepBreath, InstanceKind::CountingNormal] {
            let p = spec.cues[&kind].carrier_prob;
            let count = (0..spec.n_subjects)
                .filter(|&i| assign_cues(&spec, i).cues[&kind])
                .count();
            let mean = p * spec.n_subjects as f64;
            let sigma = (spec.n_subjects as f64 * p * (1.0 - p)).sqrt();
            assert!(
                ((count as f64) - mean).abs() < 3.0 * sigma,
                "{kind}: {count} vs {mean} +- {sigma}"
            );
        }
    }

    #[test]
    fn at_least_one_cue_probability_closed_form() {
        // three instances at p = 0.6: P(>= 1 cue) = 1 - 0.4^3 = 0.936
        let mut spec = SynthSpec::default();
        spec.n_subjects = 10000;
        spec.class_balance = 1.0;
        spec.cues = spec
            .cues
            .iter()
            .take(3)
            .map(|(k, c)| (*k, CueSpec { carrier_prob: 0.6, ..*c }))
            .collect();
        let hits = (0..spec.n_subjects)
            .filter(|&i| assign_cues(&spec, i).cues.values().any(|&c| c))
            .count();
        let p = 1.0 - 0.4f64.powi(3);
        let sigma = (spec.n_subjects as f64 * p * (1.0 - p)).sqrt();
        assert!(
            ((hits as f64) - p * spec.n_subjects as f64).abs() < 3.0 * sigma,
            "{hits} vs {}",
            p * spec.n_subjects as f64
        );
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let spec = tiny_spec(2, 0.5);
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        generate_dataset(&spec, d1.path()).unwrap();
        generate_dataset(&spec, d2.path()).unwrap();
        for s in ["s0000", "s0001"] {
            for kind in [InstanceKind::HeavyCough, InstanceKind::VowelO] {
                let f = format!("{s}/{}.wav", kind.file_stem());
                let a = std::fs::read(d1.path().join(&f)).unwrap();
                let b = std::fs::read(d2.path().join(&f)).unwrap();
                assert_eq!(a, b, "{f} differs between runs");
            }
        }
    }

    #[test]
    fn generated_clips_pass_ingest_screening() {
        let dir = tempdir().unwrap();
        let mut spec = tiny_spec(4, 0.5);
        spec.clip_sec = 2.0;
        let (manifest, reports, _) = generate_and_ingest(&spec, dir.path()).unwrap();
        for r in &reports {
            assert!(r.kept(), "subject {} discarded: {r:?}", r.subject_id);
        }
        assert_eq!(manifest.subject_count(), 4);
        assert_eq!(manifest.records.len(), 4 * 7);
        manifest.validate_complete(&InstanceKind::ALL).unwrap();
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SynthSpec::default();
        spec.cues.insert(
            InstanceKind::VowelA,
            CueSpec { cue: CueKind::NarrowbandTone { freq_hz: 6000.0 }, strength: 0.3, carrier_prob: 0.5 },
        );
        assert!(spec.validate().is_err(), "tone above the 8 kHz pipeline Nyquist");
        let mut spec = SynthSpec::default();
        spec.cues.insert(
            InstanceKind::VowelA,
            CueSpec { cue: CueKind::NarrowbandTone { freq_hz: 1000.0 }, strength: 0.3, carrier_prob: 0.0 },
        );
        assert!(spec.validate().is_err(), "carrier_prob must be positive");
    }
}
