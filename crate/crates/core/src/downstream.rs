//! Using importance weights: target risk estimation, weighted fine-tuning
//! and model selection.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit_logistic_weighted, Classifier, FitReport, LogisticConfig, Penalty, ProbClassifier};
use crate::data::{fmt_f64, LabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::spearman;
use crate::tilt::WeightVector;

/// `(1/n) Σ g_i w_i`; the weights already carry the normalization.
pub fn weighted_expectation(g: &[f64], w: &WeightVector) -> Result<f64> {
    if g.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: g.len(),
        });
    }
    if g.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(g.iter().zip(&w.weights).map(|(a, b)| a * b).sum::<f64>() / g.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Misclassification; the estimate is the target error rate.
    ZeroOne,
    /// Negative log-likelihood of the true label.
    Nll,
}

/// Weighted empirical risk of `predictor` on the source sample.
pub fn evaluate_target(predictor: &dyn Classifier, src: &LabeledDataset, w: &WeightVector, loss: Loss) -> Result<f64> {
    if predictor.input_dim() != src.dim() {
        return Err(Error::DimensionMismatch {
            expected: predictor.input_dim(),
            actual: src.dim(),
        });
    }
    let g: Vec<f64> = (0..src.len())
        .map(|i| {
            let x = src.row_slice(i);
            let y = src.labels()[i];
            match loss {
                Loss::ZeroOne => f64::from(u8::from(predictor.predict(x) != y)),
                Loss::Nll => -predictor.log_proba(x)[y],
            }
        })
        .collect();
    weighted_expectation(&g, w)
}

/// Plain accuracy on a labeled set.
pub fn accuracy(predictor: &dyn Classifier, ds: &LabeledDataset) -> f64 {
    let hits = (0..ds.len())
        .filter(|&i| predictor.predict(ds.row_slice(i)) == ds.labels()[i])
        .count();
    hits as f64 / ds.len() as f64
}

/// Weighted-ERM logistic regression; uniform weights give `fit_logistic`.
pub fn finetune(src: &LabeledDataset, w: &WeightVector, cfg: &LogisticConfig) -> Result<(ProbClassifier, FitReport)> {
    if w.len() != src.len() {
        return Err(Error::LengthMismatch {
            expected: src.len(),
            actual: w.len(),
        });
    }
    fit_logistic_weighted(src, Some(&w.weights), cfg)
}

/// `n / (K · n_k)` for every sample of class `k`.
pub fn class_balanced_weights(ds: &LabeledDataset) -> Vec<f64> {
    inverse_frequency(ds.labels(), ds.class_count())
}

/// `n / (G · n_g)` for every sample of group `g`, over the groups present.
pub fn group_balanced_weights(ds: &LabeledDataset) -> Result<Vec<f64>> {
    let groups = ds.groups().ok_or(Error::NoGroups)?;
    let count = groups.iter().max().map_or(0, |m| m + 1);
    Ok(inverse_frequency(groups, count))
}

fn inverse_frequency(ids: &[usize], count: usize) -> Vec<f64> {
    let mut freq = vec![0usize; count];
    ids.iter().for_each(|&i| freq[i] += 1);
    let present = freq.iter().filter(|&&c| c > 0).count() as f64;
    let n = ids.len() as f64;
    ids.iter().map(|&i| n / (present * freq[i] as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    ClassBalanced,
    GroupBalanced,
}

/// The zoo's inverse-regularization grid: 20 log-spaced values of `C` from
/// 1e-4 to 1e-1; each model uses penalty strength `1/C`.
pub fn zoo_c_grid() -> Vec<f64> {
    (0..20)
        .map(|i| match i {
            0 => 1e-4,
            19 => 1e-1,
            _ => 10f64.powf(-4.0 + 3.0 * i as f64 / 19.0),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZooMember {
    pub id: usize,
    pub weighting: Weighting,
    pub penalty: Penalty,
    pub c: f64,
    pub classifier: ProbClassifier,
    pub report: FitReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelZoo {
    pub members: Vec<ZooMember>,
    /// Set when the data has no groups and the group-balanced tier is absent.
    pub group_tier_skipped: bool,
}

/// Weighting schemes × {L1, L2} × [`zoo_c_grid`]: 120 models with groups,
/// 80 without. Fits run on the current rayon pool; order is fixed.
pub fn build_model_zoo(src_train: &LabeledDataset, base: &LogisticConfig) -> Result<ModelZoo> {
    let mut schemes = vec![
        (Weighting::Uniform, vec![1.0; src_train.len()]),
        (Weighting::ClassBalanced, class_balanced_weights(src_train)),
    ];
    let group_tier_skipped = src_train.groups().is_none();
    if !group_tier_skipped {
        schemes.push((Weighting::GroupBalanced, group_balanced_weights(src_train)?));
    }
    let grid = zoo_c_grid();
    let mut jobs = Vec::new();
    for (s, _) in schemes.iter().enumerate() {
        for penalty in [Penalty::L1, Penalty::L2] {
            for &c in &grid {
                jobs.push((s, penalty, c));
            }
        }
    }
    let fits: Vec<Result<ZooMember>> = jobs
        .par_iter()
        .enumerate()
        .map(|(id, &(s, penalty, c))| {
            let cfg = LogisticConfig {
                penalty,
                strength: 1.0 / c,
                ..*base
            };
            let (classifier, report) = fit_logistic_weighted(src_train, Some(&schemes[s].1), &cfg)?;
            Ok(ZooMember {
                id,
                weighting: schemes[s].0,
                penalty,
                c,
                classifier,
                report,
            })
        })
        .collect();
    Ok(ModelZoo {
        members: fits.into_iter().collect::<Result<_>>()?,
        group_tier_skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScoreRow {
    pub model_id: usize,
    pub srcval: f64,
    pub extra: f64,
    pub external: Option<f64>,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    /// Model chosen by each score (highest value, lowest id on ties).
    pub selected: BTreeMap<String, usize>,
    /// Spearman correlation of each score with target accuracy; `None` when
    /// undefined (no target labels or a constant column).
    pub spearman: BTreeMap<String, Option<f64>>,
    /// Target accuracy of each selected model, when target labels exist.
    pub selected_target: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub rows: Vec<ModelScoreRow>,
    pub summary: SelectionSummary,
}

fn argmax_lowest_id(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores each model by source validation accuracy and by ExTRA-weighted
/// validation accuracy (`1 −` weighted zero-one risk), and against target
/// accuracy when a labeled target set is given.
pub fn score_models(
    zoo: &[&dyn Classifier],
    src_val: &LabeledDataset,
    w: &WeightVector,
    tgt_test: Option<&LabeledDataset>,
    external: Option<&[f64]>,
) -> Result<SelectionReport> {
    if zoo.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(e) = external {
        if e.len() != zoo.len() {
            return Err(Error::LengthMismatch {
                expected: zoo.len(),
                actual: e.len(),
            });
        }
    }
    let rows: Vec<ModelScoreRow> = zoo
        .par_iter()
        .enumerate()
        .map(|(id, m)| {
            Ok(ModelScoreRow {
                model_id: id,
                srcval: accuracy(*m, src_val),
                extra: 1.0 - evaluate_target(*m, src_val, w, Loss::ZeroOne)?,
                external: external.map(|e| e[id]),
                target: tgt_test.map(|t| accuracy(*m, t)),
            })
        })
        .collect::<Result<_>>()?;

    let mut columns: Vec<(&str, Vec<f64>)> = vec![
        ("srcval", rows.iter().map(|r| r.srcval).collect()),
        ("extra", rows.iter().map(|r| r.extra).collect()),
    ];
    if external.is_some() {
        columns.push(("external", rows.iter().map(|r| r.external.unwrap_or(f64::NAN)).collect()));
    }
    let truth: Option<Vec<f64>> = tgt_test.map(|_| rows.iter().map(|r| r.target.unwrap_or(f64::NAN)).collect());
    let mut summary = SelectionSummary {
        selected: BTreeMap::new(),
        spearman: BTreeMap::new(),
        selected_target: BTreeMap::new(),
    };
    for (name, values) in &columns {
        let pick = argmax_lowest_id(values);
        summary.selected.insert(name.to_string(), pick);
        if let Some(t) = &truth {
            summary.selected_target.insert(name.to_string(), t[pick]);
            summary
                .spearman
                .insert(name.to_string(), if zoo.len() >= 2 { spearman(values, t).ok() } else { None });
        }
    }
    if let Some(t) = &truth {
        summary.selected.insert("target".into(), argmax_lowest_id(t));
    }
    Ok(SelectionReport { rows, summary })
}

impl SelectionReport {
    /// CSV `model_id,srcval,extra,external,target` plus a JSON summary next to it.
    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut body = String::from("model_id,srcval,extra,external,target\n");
        for r in &self.rows {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                r.model_id,
                fmt_f64(r.srcval),
                fmt_f64(r.extra),
                opt(r.external),
                opt(r.target)
            ));
        }
        let p = csv_path.as_ref();
        std::fs::write(p, body).map_err(|e| Error::io(p, e))?;
        let j = json_path.as_ref();
        std::fs::write(j, serde_json::to_string_pretty(&self.summary)?).map_err(|e| Error::io(j, e))
    }
}
