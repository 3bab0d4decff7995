//! Subject-level cross-validation split: a fixed stratified test set plus
//! rotating train/validation folds.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::Label;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::rng::{stream, RngSeed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub seed: u64,
    pub n_folds: usize,
    /// fixed across all trials
    pub test_subjects: Vec<String>,
    /// fold k is the validation set of trial k + 1
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    pub fn n_trials(&self) -> usize {
        self.n_folds
    }

    fn check_trial(&self, trial: usize) -> Result<()> {
        if trial == 0 || trial > self.n_folds {
            return Err(Error::Config(format!(
                "trial index {trial} out of range 1..={}",
                self.n_folds
            )));
        }
        Ok(())
    }

    /// Validation subjects of a 1-based trial index.
    pub fn validation_subjects(&self, trial: usize) -> Result<&[String]> {
        self.check_trial(trial)?;
        Ok(&self.folds[trial - 1])
    }

    /// Train subjects of a 1-based trial index: all non-test subjects
    /// outside the trial's validation fold.
    pub fn train_subjects(&self, trial: usize) -> Result<Vec<String>> {
        self.check_trial(trial)?;
        let mut out = Vec::new();
        for (k, fold) in self.folds.iter().enumerate() {
            if k != trial - 1 {
                out.extend(fold.iter().cloned());
            }
        }
        Ok(out)
    }

    /// No subject may appear in more than one of test/fold_k.
    pub fn validate_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in self.test_subjects.iter().chain(self.folds.iter().flatten()) {
            if !seen.insert(s.as_str()) {
                return Err(Error::Split(format!("subject {s} assigned twice")));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: FoldSplit =
            serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
        split.validate_disjoint()?;
        Ok(split)
    }
}

/// Draw a stratified-by-label test set of `test_fraction` of each class,
/// then partition the remaining subjects into `n_folds` near-equal folds.
pub fn split_folds(
    manifest: &Manifest,
    test_fraction: f64,
    n_folds: usize,
    seed: RngSeed,
) -> Result<FoldSplit> {
    if n_folds < 2 {
        return Err(Error::Split("need at least 2 folds".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Split("test fraction must lie in [0, 1)".into()));
    }

    let mut by_label: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for s in manifest.subjects() {
        by_label.entry(s.label).or_default().push(s.subject_id);
    }
    for (label, subjects) in &by_label {
        if subjects.len() < n_folds + 1 {
            return Err(Error::Split(format!(
                "class {label} has {} subjects, need at least {}",
                subjects.len(),
                n_folds + 1
            )));
        }
    }

    let mut rng = stream(seed, "split", &[], &[n_folds as u64]);
    let mut test_subjects = Vec::new();
    let mut remaining = Vec::new();
    for (_, mut subjects) in by_label {
        subjects.sort();
        subjects.shuffle(&mut rng);
        let n_test = (test_fraction * subjects.len() as f64).round() as usize;
        test_subjects.extend(subjects.drain(..n_test));
        remaining.extend(subjects);
    }

    remaining.sort();
    remaining.shuffle(&mut rng);
    let m = remaining.len();
    if m < n_folds {
        return Err(Error::Split("not enough non-test subjects for the folds".into()));
    }
    let base = m / n_folds;
    let extra = m % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut cursor = 0usize;
    for k in 0..n_folds {
        let size = base + usize::from(k < extra);
        folds.push(remaining[cursor..cursor + size].to_vec());
        cursor += size;
    }

    test_subjects.sort();
    let split = FoldSplit { seed: seed.0, n_folds, test_subjects, folds };
    split.validate_disjoint()?;
    Ok(split)
}
