//! The experiment matrix: baseline rows (single instance, no fusion) and
//! benchmark rows (instance combinations with attention fusion), each in a
//! waveform, spectrogram, or dual representation.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::InstanceKind;
use crate::dsp::DspParams;
use crate::encoders::{SpecBackbone, WaveBackbone};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::manifest::Manifest;
use crate::metrics::{compute_auc, optimal_threshold, roc_points, sensitivity_specificity, MetricsReport};
use crate::model::{ExperimentModel, ModelConfig, Representation};
use crate::rng::RngSeed;
use crate::scalar::Scalar;

use super::dataset::{DataNeeds, Dataset};
use super::split::FoldSplit;
use super::{score_subjects, train_model, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixRow {
    #[serde(rename = "BA1")]
    Ba1,
    #[serde(rename = "BA2")]
    Ba2,
    #[serde(rename = "BE1")]
    Be1,
    #[serde(rename = "BE2")]
    Be2,
    #[serde(rename = "BE3")]
    Be3,
}

impl MatrixRow {
    pub fn representation(self) -> Representation {
        match self {
            MatrixRow::Ba1 | MatrixRow::Be1 => Representation::Waveform,
            MatrixRow::Ba2 | MatrixRow::Be2 => Representation::Spectrogram,
            MatrixRow::Be3 => Representation::Dual,
        }
    }

    /// Benchmark rows fuse instances with self-attention; baselines do not.
    pub fn attention_fusion(self) -> bool {
        matches!(self, MatrixRow::Be1 | MatrixRow::Be2 | MatrixRow::Be3)
    }

    /// Weight decay defaults: 1e-1 for the spectrogram-only rows, 1e-3 for
    /// waveform and dual rows.
    pub fn default_weight_decay(self) -> f64 {
        match self {
            MatrixRow::Ba2 | MatrixRow::Be2 => 1e-1,
            _ => 1e-3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MatrixRow::Ba1 => "BA1",
            MatrixRow::Ba2 => "BA2",
            MatrixRow::Be1 => "BE1",
            MatrixRow::Be2 => "BE2",
            MatrixRow::Be3 => "BE3",
        }
    }
}

/// Body-sound combinations for the benchmark rows. Speech groups the two
/// counting recordings with the three vowel utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    Speech,
    CoughBreath,
    CoughSpeech,
    BreathSpeech,
    CoughBreathSpeech,
    Counting,
    Phoneme,
}

const SPEECH: [InstanceKind; 5] = [
    InstanceKind::CountingNormal,
    InstanceKind::CountingFast,
    InstanceKind::VowelA,
    InstanceKind::VowelE,
    InstanceKind::VowelO,
];

impl Combination {
    pub const ALL: [Combination; 7] = [
        Combination::Speech,
        Combination::CoughBreath,
        Combination::CoughSpeech,
        Combination::BreathSpeech,
        Combination::CoughBreathSpeech,
        Combination::Counting,
        Combination::Phoneme,
    ];

    pub fn instances(self) -> Vec<InstanceKind> {
        match self {
            Combination::Speech => SPEECH.to_vec(),
            Combination::CoughBreath => {
                vec![InstanceKind::HeavyCough, InstanceKind::DeepBreath]
            }
            Combination::CoughSpeech => {
                let mut v = vec![InstanceKind::HeavyCough];
                v.extend(SPEECH);
                v
            }
            Combination::BreathSpeech => {
                let mut v = vec![InstanceKind::DeepBreath];
                v.extend(SPEECH);
                v
            }
            Combination::CoughBreathSpeech => {
                let mut v = vec![InstanceKind::HeavyCough, InstanceKind::DeepBreath];
                v.extend(SPEECH);
                v
            }
            Combination::Counting => {
                vec![InstanceKind::CountingNormal, InstanceKind::CountingFast]
            }
            Combination::Phoneme => {
                vec![InstanceKind::VowelA, InstanceKind::VowelE, InstanceKind::VowelO]
            }
        }
    }
}

/// A full experiment description, serializable as the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub row: MatrixRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination: Option<Combination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave_backbone: Option<WaveBackbone>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_backbone: Option<SpecBackbone>,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dsp: DspParams,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Config with row-appropriate defaults.
    pub fn for_row(
        row: MatrixRow,
        combination: Option<Combination>,
        instance: Option<InstanceKind>,
        seed: u64,
    ) -> Self {
        let id = match (combination, instance) {
            (Some(c), _) => format!("{}_{}", row.name(), serde_snake(&c)),
            (_, Some(i)) => format!("{}_{}", row.name(), i.file_stem().replace('-', "_")),
            _ => row.name().to_string(),
        };
        let mut fusion = FusionConfig::default();
        fusion.attention = row.attention_fusion();
        let mut train = TrainConfig::default();
        train.weight_decay = row.default_weight_decay();
        ExperimentConfig {
            experiment_id: id,
            row,
            combination,
            instance,
            wave_backbone: row.representation().uses_wave().then(WaveBackbone::default),
            spec_backbone: row.representation().uses_spec().then(SpecBackbone::default),
            fusion,
            train,
            dsp: DspParams::default(),
            seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Fill backbone defaults and force the fusion mode of the matrix row.
    pub fn apply_defaults(&mut self) {
        self.fusion.attention = self.row.attention_fusion();
        let repr = self.row.representation();
        if repr.uses_wave() && self.wave_backbone.is_none() {
            self.wave_backbone = Some(WaveBackbone::default());
        }
        if repr.uses_spec() && self.spec_backbone.is_none() {
            self.spec_backbone = Some(SpecBackbone::default());
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.row {
            MatrixRow::Ba1 | MatrixRow::Ba2 => {
                if self.instance.is_none() || self.combination.is_some() {
                    return Err(Error::Config(format!(
                        "{} is a single-instance baseline: set `instance`, not `combination`",
                        self.row.name()
                    )));
                }
            }
            _ => {
                if self.combination.is_none() || self.instance.is_some() {
                    return Err(Error::Config(format!(
                        "{} is a benchmark row: set `combination`, not `instance`",
                        self.row.name()
                    )));
                }
            }
        }
        self.train.validate()?;
        self.model_config()?.validate()
    }

    pub fn instances(&self) -> Vec<InstanceKind> {
        match (self.combination, self.instance) {
            (Some(c), _) => c.instances(),
            (_, Some(i)) => vec![i],
            _ => vec![],
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let instances = self.instances();
        if instances.is_empty() {
            return Err(Error::Config("no instances selected".into()));
        }
        let mut fusion = self.fusion;
        fusion.attention = self.row.attention_fusion();
        Ok(ModelConfig {
            representation: self.row.representation(),
            n_instances: instances.len(),
            wave_backbone: self.wave_backbone.clone(),
            spec_backbone: self.spec_backbone.clone(),
            fusion,
        })
    }

    pub fn data_needs(&self) -> DataNeeds {
        let repr = self.row.representation();
        let mut needs = DataNeeds::default();
        match &self.wave_backbone {
            Some(WaveBackbone::ScratchConv(_)) if repr.uses_wave() => needs.wave = true,
            Some(WaveBackbone::ExternalAdapter { features_dir, .. }) if repr.uses_wave() => {
                needs.wave_features_dir = Some(features_dir.clone());
            }
            _ => {}
        }
        match &self.spec_backbone {
            Some(SpecBackbone::ScratchPatchTransformer(_)) if repr.uses_spec() => {
                needs.spec = true
            }
            Some(SpecBackbone::ExternalAdapter { features_dir, .. }) if repr.uses_spec() => {
                needs.spec_features_dir = Some(features_dir.clone());
            }
            _ => {}
        }
        needs
    }
}

fn serde_snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Per-trial artifacts of an experiment run.
pub struct TrialResult<S> {
    pub trial: usize,
    pub report: MetricsReport,
    pub logs: Vec<EpochLog>,
    /// test-set ROC operating points (fpr, tpr, threshold)
    pub roc: Vec<(f64, f64, f64)>,
    pub model: ExperimentModel<S>,
}

/// Evaluate a trained trial: threshold from its validation scores, metrics
/// on the fixed test fold.
pub fn evaluate_trial<S: Scalar>(
    cfg: &ExperimentConfig,
    outcome: &TrainOutcome<S>,
    data: &Dataset<S>,
    split: &FoldSplit,
    trial: usize,
) -> Result<(MetricsReport, Vec<(f64, f64, f64)>)> {
    let test_idx = data.indices_of(&split.test_subjects)?;
    if test_idx.is_empty() {
        return Err(Error::Split("empty test fold".into()));
    }
    let threshold = optimal_threshold(&outcome.val_scores, &outcome.val_labels)?;
    let test_scores =
        score_subjects(&outcome.model, data, &test_idx, cfg.train.batch_size)?;
    let test_labels = data.labels_of(&test_idx);
    let auc = compute_auc(&test_scores, &test_labels)?;
    let (sensitivity, specificity) =
        sensitivity_specificity(&test_scores, &test_labels, threshold)?;
    let n_pos = test_labels.iter().filter(|&&l| l).count();
    let report = MetricsReport {
        experiment_id: cfg.experiment_id.clone(),
        trial_id: trial,
        auc,
        threshold,
        sensitivity,
        specificity,
        n_pos,
        n_neg: test_labels.len() - n_pos,
        n_instances: cfg.instances().len(),
        seed: cfg.seed,
        threshold_rule: "youden_j_max_tie_high".into(),
    };
    report.validate()?;
    let roc = roc_points(&test_scores, &test_labels)?;
    Ok((report, roc))
}

/// Train and evaluate the given trials of one experiment. The dataset is
/// loaded once and shared; trials run in parallel when requested.
pub fn run_experiment<S: Scalar>(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    split: &FoldSplit,
    trials: &[usize],
    parallel: bool,
) -> Result<Vec<TrialResult<S>>> {
    cfg.validate()?;
    let instances = cfg.instances();

    // restrict loading to the subjects any requested trial can touch
    let mut subset: HashSet<String> = split.test_subjects.iter().cloned().collect();
    for fold in &split.folds {
        subset.extend(fold.iter().cloned());
    }
    let data = Dataset::<S>::load(manifest, &instances, &cfg.dsp, cfg.data_needs(), Some(&subset))?;
    run_experiment_on(cfg, &data, split, trials, parallel)
}

/// Like [`run_experiment`], on an already-loaded dataset (or a view of a
/// larger shared one).
pub fn run_experiment_on<S: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset<S>,
    split: &FoldSplit,
    trials: &[usize],
    parallel: bool,
) -> Result<Vec<TrialResult<S>>> {
    cfg.validate()?;
    let data = data.view(&cfg.instances(), cfg.data_needs())?;
    let data = &data;
    let model_cfg = cfg.model_config()?;
    let run_one = |&trial: &usize| -> Result<TrialResult<S>> {
        let outcome =
            train_model(&model_cfg, &cfg.train, &data, split, trial, RngSeed(cfg.seed))?;
        let (report, roc) = evaluate_trial(cfg, &outcome, &data, split, trial)?;
        Ok(TrialResult { trial, report, logs: outcome.logs, roc, model: outcome.model })
    };

    let mut results: Vec<TrialResult<S>> = if parallel {
        trials.par_iter().map(run_one).collect::<Result<Vec<_>>>()?
    } else {
        trials.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };
    results.sort_by_key(|r| r.trial);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speech_expands_to_five_instances() {
        let inst = Combination::Speech.instances();
        assert_eq!(inst.len(), 5);
        assert!(inst.contains(&InstanceKind::CountingNormal));
        assert!(inst.contains(&InstanceKind::CountingFast));
        assert!(inst.contains(&InstanceKind::VowelA));
        assert!(inst.contains(&InstanceKind::VowelE));
        assert!(inst.contains(&InstanceKind::VowelO));
    }

    #[test]
    fn combination_sizes_match_the_matrix() {
        assert_eq!(Combination::CoughBreath.instances().len(), 2);
        assert_eq!(Combination::CoughSpeech.instances().len(), 6);
        assert_eq!(Combination::BreathSpeech.instances().len(), 6);
        assert_eq!(Combination::CoughBreathSpeech.instances().len(), 7);
        assert_eq!(Combination::Counting.instances().len(), 2);
        assert_eq!(Combination::Phoneme.instances().len(), 3);
    }

    #[test]
    fn row_properties() {
        assert_eq!(MatrixRow::Ba1.representation(), Representation::Waveform);
        assert_eq!(MatrixRow::Be2.representation(), Representation::Spectrogram);
        assert_eq!(MatrixRow::Be3.representation(), Representation::Dual);
        assert!(!MatrixRow::Ba1.attention_fusion());
        assert!(MatrixRow::Be3.attention_fusion());
        assert_eq!(MatrixRow::Ba2.default_weight_decay(), 1e-1);
        assert_eq!(MatrixRow::Be3.default_weight_decay(), 1e-3);
    }

    #[test]
    fn baseline_requires_instance_not_combination() {
        let mut cfg = ExperimentConfig::for_row(MatrixRow::Ba2, None, None, 1);
        assert!(cfg.validate().is_err());
        cfg.instance = Some(InstanceKind::HeavyCough);
        cfg.validate().unwrap();
        cfg.combination = Some(Combination::Speech);
        assert!(cfg.validate().is_err());

        let be = ExperimentConfig::for_row(MatrixRow::Be3, Some(Combination::Speech), None, 1);
        be.validate().unwrap();
        assert_eq!(be.experiment_id, "BE3_speech");
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.json");
        let cfg = ExperimentConfig::for_row(
            MatrixRow::Be3,
            Some(Combination::CoughBreathSpeech),
            None,
            99,
        );
        cfg.save(&p).unwrap();
        let back = ExperimentConfig::load(&p).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn dsp_config_keys_are_stable() {
        // the documented experiment-config keys for the transform params
        let cfg = ExperimentConfig::for_row(MatrixRow::Ba1, None, Some(InstanceKind::VowelA), 7);
        let json = serde_json::to_value(&cfg).unwrap();
        let dsp = &json["dsp"];
        for key in
            ["fft_size", "win_size", "hop", "n_mels", "crop_sec", "gain_min", "gain_max", "mask_len", "trim_db"]
        {
            assert!(dsp.get(key).is_some(), "missing dsp key {key}");
        }
    }
}
