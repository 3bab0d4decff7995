//! In-memory dataset: clips loaded from the manifest, trimmed, and cached
//! in the representations the active model needs. Per-epoch augmentation
//! draws from per-clip streams keyed by (seed, subject, instance, epoch),
//! so results do not depend on iteration order or worker count.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Array4};
use rayon::prelude::*;

use crate::audio::{load_clip, AudioClip, ClipMeta, InstanceKind, Label};
use crate::dsp::{
    amplitude_scale, crop_window, log_compress, mask_time_freq, resample, trim_silence, CropMode,
    DspParams, MelSpectrogram,
};
use crate::encoders::features::{feature_path, read_features};
use crate::encoders::spectrogram::standardize;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::ModelInput;
use crate::rng::{clip_stream, RngSeed};
use crate::scalar::Scalar;

/// Which representations the dataset must materialize.
#[derive(Debug, Clone, Default)]
pub struct DataNeeds {
    pub wave: bool,
    pub spec: bool,
    /// adapter feature roots, when external backbones are active
    pub wave_features_dir: Option<std::path::PathBuf>,
    pub spec_features_dir: Option<std::path::PathBuf>,
}

struct PreparedClip<S> {
    /// trimmed native samples, capped at crop + 1 s; present only when the
    /// trimmed clip is longer than the crop window (train crops then vary)
    native: Option<(Vec<S>, u32)>,
    /// deterministic-crop waveform at the wave rate (exactly crop seconds)
    wave: Option<Vec<S>>,
    /// pre-log mel power of the deterministic crop
    mel_power: Option<Array2<S>>,
    wave_feats: Option<Array2<S>>,
    spec_feats: Option<Array1<S>>,
}

pub struct PreparedSubject<S> {
    pub subject_id: String,
    pub label: Label,
    clips: BTreeMap<InstanceKind, Arc<PreparedClip<S>>>,
}

pub struct Dataset<S> {
    pub instances: Vec<InstanceKind>,
    pub dsp: DspParams,
    needs: DataNeeds,
    subjects: Vec<PreparedSubject<S>>,
    index_of: HashMap<String, usize>,
}

impl<S: Scalar> Dataset<S> {
    /// A view over a subset of the loaded instances and representations,
    /// sharing the prepared clip buffers. Every instance in `instances`
    /// must already be loaded, and `needs` must not ask for more than the
    /// parent dataset materialized.
    pub fn view(&self, instances: &[InstanceKind], needs: DataNeeds) -> Result<Dataset<S>> {
        for kind in instances {
            if !self.instances.contains(kind) {
                return Err(Error::Config(format!("instance {kind} not loaded")));
            }
        }
        if (needs.wave && !self.needs.wave)
            || (needs.spec && !self.needs.spec)
            || (needs.wave_features_dir.is_some() && self.needs.wave_features_dir.is_none())
            || (needs.spec_features_dir.is_some() && self.needs.spec_features_dir.is_none())
        {
            return Err(Error::Config("view asks for representations the dataset lacks".into()));
        }
        Ok(Dataset {
            instances: instances.to_vec(),
            dsp: self.dsp,
            needs,
            subjects: self
                .subjects
                .iter()
                .map(|s| PreparedSubject {
                    subject_id: s.subject_id.clone(),
                    label: s.label,
                    clips: s.clips.clone(),
                })
                .collect(),
            index_of: self.index_of.clone(),
        })
    }
}

fn prepare_clip<S: Scalar>(
    path: &Path,
    meta: ClipMeta,
    dsp: &DspParams,
    needs: &DataNeeds,
) -> Result<PreparedClip<S>> {
    let mut out = PreparedClip {
        native: None,
        wave: None,
        mel_power: None,
        wave_feats: None,
        spec_feats: None,
    };

    if let Some(dir) = &needs.wave_features_dir {
        let p = feature_path(dir, &meta.subject_id, meta.instance);
        out.wave_feats = Some(read_features(&p)?);
    }
    if let Some(dir) = &needs.spec_features_dir {
        let p = feature_path(dir, &meta.subject_id, meta.instance);
        let m: Array2<S> = read_features(&p)?;
        if m.nrows() != 1 {
            return Err(Error::Contract(format!(
                "{}: spectrogram adapter features must have t = 1, got {}",
                p.display(),
                m.nrows()
            )));
        }
        out.spec_feats = Some(m.row(0).to_owned());
    }

    let wants_audio = needs.wave || needs.spec;
    if !wants_audio {
        return Ok(out);
    }

    let clip: AudioClip<S> = load_clip(path, meta)?;
    let trimmed = trim_silence(&clip, dsp.trim_db)?;

    // deterministic crop (first crop_sec seconds, zero-padded)
    let mut eval_rng = crate::rng::stream(RngSeed(0), "unused", &[], &[]);
    let cropped = crop_window(&trimmed, dsp.crop_sec, CropMode::Eval, &mut eval_rng);

    if needs.wave {
        out.wave = Some(resample(&cropped, dsp.wave_rate)?.samples);
    }
    if needs.spec {
        let at_spec_rate = resample(&cropped, dsp.spec_rate)?;
        out.mel_power = Some(crate::dsp::mel_power(&at_spec_rate.samples, &dsp.mel_params()));
    }

    // keep native audio only when train-time crops can differ from the
    // deterministic one
    let rate = trimmed.sample_rate;
    let crop_len = (dsp.crop_sec * rate as f64).round() as usize;
    if trimmed.samples.len() > crop_len {
        let keep = (((dsp.crop_sec + 1.0) * rate as f64).round() as usize).min(trimmed.samples.len());
        out.native = Some((trimmed.samples[..keep].to_vec(), rate));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub enum SampleMode {
    Train { epoch: u64, seed: RngSeed },
    Eval,
}

impl<S: Scalar> Dataset<S> {
    /// Load and prepare every manifest subject (optionally restricted to a
    /// subset), keeping only the representations in `needs`.
    pub fn load(
        manifest: &Manifest,
        instances: &[InstanceKind],
        dsp: &DspParams,
        needs: DataNeeds,
        subset: Option<&HashSet<String>>,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Config("dataset needs at least one instance kind".into()));
        }
        let entries: Vec<_> = manifest
            .subjects()
            .into_iter()
            .filter(|s| subset.map_or(true, |set| set.contains(&s.subject_id)))
            .collect();

        let subjects: Result<Vec<PreparedSubject<S>>> = entries
            .par_iter()
            .map(|entry| {
                let mut clips = BTreeMap::new();
                for kind in instances {
                    let rec = entry.instances.get(kind).ok_or_else(|| {
                        Error::Validation(format!(
                            "subject {} is missing instance {kind}",
                            entry.subject_id
                        ))
                    })?;
                    let meta = ClipMeta {
                        subject_id: entry.subject_id.clone(),
                        instance: *kind,
                        label: entry.label,
                    };
                    clips.insert(*kind, Arc::new(prepare_clip(&rec.path, meta, dsp, &needs)?));
                }
                Ok(PreparedSubject {
                    subject_id: entry.subject_id.clone(),
                    label: entry.label,
                    clips,
                })
            })
            .collect();
        let subjects = subjects?;

        let index_of =
            subjects.iter().enumerate().map(|(i, s)| (s.subject_id.clone(), i)).collect();
        Ok(Dataset { instances: instances.to_vec(), dsp: *dsp, needs, subjects, index_of })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn label(&self, idx: usize) -> Label {
        self.subjects[idx].label
    }

    pub fn subject_id(&self, idx: usize) -> &str {
        &self.subjects[idx].subject_id
    }

    pub fn index_of(&self, subject_id: &str) -> Result<usize> {
        self.index_of
            .get(subject_id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("subject {subject_id} not in dataset")))
    }

    pub fn indices_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter().map(|s| self.index_of(s)).collect()
    }

    fn wave_len(&self) -> usize {
        (self.dsp.crop_sec * self.dsp.wave_rate as f64).round() as usize
    }

    fn mel_shape(&self) -> (usize, usize) {
        let n = (self.dsp.crop_sec * self.dsp.spec_rate as f64).round() as usize;
        (self.dsp.n_mels, n / self.dsp.hop + 1)
    }

    /// Produce the (wave, mel) tensors of one clip under the given mode.
    fn clip_tensors(
        &self,
        subject: &PreparedSubject<S>,
        k: usize,
        mode: SampleMode,
    ) -> Result<(Option<Vec<S>>, Option<Array2<S>>)> {
        let kind = self.instances[k];
        let clip = &subject.clips[&kind];
        let policy = self.dsp.augmentation_policy();

        match mode {
            SampleMode::Eval => {
                let wave = if self.needs.wave { clip.wave.clone() } else { None };
                let mel = match clip.mel_power.as_ref().filter(|_| self.needs.spec) {
                    Some(p) => {
                        let spec = MelSpectrogram {
                            values: log_compress(p),
                            params: self.dsp.mel_params(),
                            log_compressed: true,
                        };
                        Some(standardize(&spec.values))
                    }
                    None => None,
                };
                Ok((wave, mel))
            }
            SampleMode::Train { epoch, seed } => {
                let mut rng = clip_stream(seed, &subject.subject_id, kind.file_stem(), epoch);
                match &clip.native {
                    None => {
                        // deterministic crop: reuse the cached tensors,
                        // apply gain in each domain (power scales by g^2)
                        let gain = if policy.gain_max > policy.gain_min {
                            use rand::Rng;
                            rng.gen_range(policy.gain_min..policy.gain_max)
                        } else {
                            policy.gain_min
                        };
                        let g = S::from_f(gain);
                        let wave = clip
                            .wave
                            .as_ref()
                            .filter(|_| self.needs.wave)
                            .map(|w| w.iter().map(|&s| s * g).collect::<Vec<S>>());
                        let mel = match clip.mel_power.as_ref().filter(|_| self.needs.spec) {
                            Some(p) => {
                                let scaled = p.mapv(|v| v * g * g);
                                let spec = MelSpectrogram {
                                    values: log_compress(&scaled),
                                    params: self.dsp.mel_params(),
                                    log_compressed: true,
                                };
                                let masked = mask_time_freq(&spec, &policy, &mut rng)?;
                                Some(standardize(&masked.values))
                            }
                            None => None,
                        };
                        Ok((wave, mel))
                    }
                    Some((samples, rate)) => {
                        let native = AudioClip {
                            samples: samples.clone(),
                            sample_rate: *rate,
                            subject_id: subject.subject_id.clone(),
                            instance: kind,
                            label: subject.label,
                        };
                        let cropped =
                            crop_window(&native, self.dsp.crop_sec, CropMode::Train, &mut rng);
                        let (scaled, _) = amplitude_scale(&cropped, &policy, &mut rng);
                        let wave = if self.needs.wave {
                            Some(resample(&scaled, self.dsp.wave_rate)?.samples)
                        } else {
                            None
                        };
                        let mel = if self.needs.spec {
                            let at_rate = resample(&scaled, self.dsp.spec_rate)?;
                            let power =
                                crate::dsp::mel_power(&at_rate.samples, &self.dsp.mel_params());
                            let spec = MelSpectrogram {
                                values: log_compress(&power),
                                params: self.dsp.mel_params(),
                                log_compressed: true,
                            };
                            let masked = mask_time_freq(&spec, &policy, &mut rng)?;
                            Some(standardize(&masked.values))
                        } else {
                            None
                        };
                        Ok((wave, mel))
                    }
                }
            }
        }
    }

    /// Assemble a batch for the model plus its 0/1 targets.
    pub fn batch(&self, idxs: &[usize], mode: SampleMode) -> Result<(ModelInput<S>, Array1<S>)> {
        let b = idxs.len();
        let c = self.instances.len();
        let mut input = ModelInput::default();
        let mut targets = Array1::zeros(b);

        let mut wave = if self.needs.wave {
            Some(Array3::<S>::zeros((b, c, self.wave_len())))
        } else {
            None
        };
        let mut spec = if self.needs.spec {
            let (m, t) = self.mel_shape();
            Some(Array4::<S>::zeros((b, c, m, t)))
        } else {
            None
        };
        let mut wave_feats: Option<Vec<Vec<Array2<S>>>> =
            self.needs.wave_features_dir.as_ref().map(|_| Vec::with_capacity(b));
        let mut spec_feats_rows: Vec<Array1<S>> = Vec::new();

        for (bi, &idx) in idxs.iter().enumerate() {
            let subject = &self.subjects[idx];
            targets[bi] = S::from_f(subject.label.target());
            let mut per_subject_feats = Vec::new();
            for k in 0..c {
                let (w, m) = self.clip_tensors(subject, k, mode)?;
                if let (Some(dst), Some(w)) = (wave.as_mut(), w) {
                    let mut row = dst.slice_mut(ndarray::s![bi, k, ..]);
                    row.assign(&Array1::from_vec(w));
                }
                if let (Some(dst), Some(m)) = (spec.as_mut(), m) {
                    dst.slice_mut(ndarray::s![bi, k, .., ..]).assign(&m);
                }
                let kind = self.instances[k];
                if wave_feats.is_some() {
                    per_subject_feats
                        .push(subject.clips[&kind].wave_feats.as_ref().unwrap().clone());
                }
                if self.needs.spec_features_dir.is_some() {
                    spec_feats_rows
                        .push(subject.clips[&kind].spec_feats.as_ref().unwrap().clone());
                }
            }
            if let Some(list) = wave_feats.as_mut() {
                list.push(per_subject_feats);
            }
        }

        input.wave = wave;
        input.spec = spec;
        input.wave_feats = wave_feats;
        if self.needs.spec_features_dir.is_some() {
            let d = spec_feats_rows[0].len();
            let mut arr = Array3::zeros((b, c, d));
            for (i, row) in spec_feats_rows.iter().enumerate() {
                arr.slice_mut(ndarray::s![i / c, i % c, ..]).assign(row);
            }
            input.spec_feats = Some(arr);
        }
        Ok((input, targets))
    }

    pub fn labels_of(&self, idxs: &[usize]) -> Vec<bool> {
        idxs.iter().map(|&i| self.subjects[i].label.is_positive()).collect()
    }
}
