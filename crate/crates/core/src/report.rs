//! Aggregation of per-trial reports into per-experiment summaries.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_sd, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment_id: String,
    pub n_trials: usize,
    pub n_instances: usize,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub sensitivity_mean: f64,
    pub sensitivity_sd: f64,
    pub specificity_mean: f64,
    pub specificity_sd: f64,
    /// sd is reported as 0 and flagged when only one trial is present
    pub single_trial: bool,
}

/// Group per-trial reports by experiment id; mean +- sample sd per metric.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<ExperimentSummary> {
    let mut grouped: BTreeMap<&str, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        grouped.entry(&r.experiment_id).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(id, rs)| {
            let aucs: Vec<f64> = rs.iter().map(|r| r.auc).collect();
            let sens: Vec<f64> = rs.iter().map(|r| r.sensitivity).collect();
            let spec: Vec<f64> = rs.iter().map(|r| r.specificity).collect();
            let (auc_mean, auc_sd) = mean_sd(&aucs);
            let (sensitivity_mean, sensitivity_sd) = mean_sd(&sens);
            let (specificity_mean, specificity_sd) = mean_sd(&spec);
            ExperimentSummary {
                experiment_id: id.to_string(),
                n_trials: rs.len(),
                n_instances: rs[0].n_instances,
                auc_mean,
                auc_sd,
                sensitivity_mean,
                sensitivity_sd,
                specificity_mean,
                specificity_sd,
                single_trial: rs.len() == 1,
            }
        })
        .collect()
}

/// Fixed-width text table of the summaries.
pub fn render_table(summaries: &[ExperimentSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>6} {:>5} {:>17} {:>17} {:>17}\n",
        "experiment", "trials", "inst", "AUC", "sensitivity", "specificity"
    ));
    for s in summaries {
        let flag = if s.single_trial { " (single trial)" } else { "" };
        out.push_str(&format!(
            "{:<28} {:>6} {:>5} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}{}\n",
            s.experiment_id,
            s.n_trials,
            s.n_instances,
            s.auc_mean,
            s.auc_sd,
            s.sensitivity_mean,
            s.sensitivity_sd,
            s.specificity_mean,
            s.specificity_sd,
            flag
        ));
    }
    out
}

/// AUC vs. instance count, for the scaling analysis: one (n_instances,
/// experiment, auc_mean, auc_sd) row per experiment, ascending counts.
pub fn instance_count_table(summaries: &[ExperimentSummary]) -> String {
    let mut rows: Vec<&ExperimentSummary> = summaries.iter().collect();
    rows.sort_by(|a, b| {
        (a.n_instances, &a.experiment_id).cmp(&(b.n_instances, &b.experiment_id))
    });
    let mut out = String::from("n_instances,experiment,auc_mean,auc_sd\n");
    for s in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            s.n_instances, s.experiment_id, s.auc_mean, s.auc_sd
        ));
    }
    out
}

/// Read every `*.report.json` directly inside a directory.
pub fn scan_reports(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".report.json")))
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", p.display())))?;
        out.push(report);
    }
    Ok(out)
}

/// Read ROC CSVs (`fpr,tpr,threshold` rows) grouped per experiment:
/// `<experiment>_trial<k>.roc.csv`.
pub fn scan_roc_curves(dir: &Path) -> Result<BTreeMap<String, Vec<Vec<(f64, f64)>>>> {
    let mut out: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".roc.csv")))
        .collect();
    paths.sort();
    for p in paths {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        let experiment = match name.rfind("_trial") {
            Some(i) => name[..i].to_string(),
            None => name.trim_end_matches(".roc.csv").to_string(),
        };
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut curve = Vec::new();
        for line in text.lines().skip(1) {
            let mut cols = line.split(',');
            let fpr: f64 = cols.next().unwrap_or("0").parse().unwrap_or(0.0);
            let tpr: f64 = cols.next().unwrap_or("0").parse().unwrap_or(0.0);
            curve.push((fpr, tpr));
        }
        out.entry(experiment).or_default().push(curve);
    }
    Ok(out)
}
