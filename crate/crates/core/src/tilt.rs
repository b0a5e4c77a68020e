//! Exponential tilt fitting by KL distribution matching.
//!
//! Under the tilt model the target joint is `q(x, k) = p(x, k) exp(θ_k·T(x) + α_k)`.
//! With a source posterior `η̂` the parameters maximize
//!
//! ```text
//! L(θ, β) = E_Q̂ [ log Σ_k η̂_k(X) exp(θ_k·T(X) + β_k) ]
//! N(θ, β) = E_P̂ [ exp(θ_Y·T(X) + β_Y) ]
//! ```
//!
//! through the minibatch objective `-L + log N + λ (N + 1/N)`, minimized with
//! Adam. `-L + log N` is invariant to a common shift of every `β_k`; the fit
//! is finalized by `α = β - log N` with `N` evaluated on the full source set,
//! which makes the mean source weight exactly one.
//!
//! Exponent arguments `θ_k·T(x) + β_k` are clamped to `[-80, 80]` and every
//! clamp is counted.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{CalibrationKind, Classifier};
use crate::data::{fmt_f64, LabeledDataset, SufficientStatistic, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{dot, lse_unchecked, rng_stream, AdamConfig, AdamState, ClipCounter};

/// Hyperparameters of one tilt fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraConfig {
    pub learning_rate: f64,
    /// Capped at the dataset size; a batch at least as large as both
    /// datasets gives deterministic full-batch steps.
    pub batch_size: usize,
    pub epochs: usize,
    /// Normalization regularizer; `0` disables it.
    pub lambda: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian initialization of `θ` and `β`.
    pub init_scale: f64,
    /// Keep `θ = 0` and fit only the intercepts (pure label shift).
    #[serde(default)]
    pub freeze_theta: bool,
    #[serde(default)]
    pub statistic: SufficientStatistic,
}

impl Default for ExtraConfig {
    fn default() -> Self {
        ExtraConfig {
            learning_rate: 5e-4,
            batch_size: 500,
            epochs: 100,
            lambda: 0.0,
            seed: 0,
            init_scale: 0.01,
            freeze_theta: false,
            statistic: SufficientStatistic::Identity,
        }
    }
}

impl ExtraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init scale must be >= 0".into()));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()?;
        self.statistic.validate(None)
    }
}

/// Raw tilt parameters: `θ` stored row-major as `K × d`, intercepts `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltParams {
    pub classes: usize,
    pub dim: usize,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl TiltParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        TiltParams {
            classes,
            dim,
            theta: vec![0.0; classes * dim],
            beta: vec![0.0; classes],
        }
    }

    pub fn from_rows(theta: &[Vec<f64>], beta: &[f64]) -> Result<Self> {
        let classes = beta.len();
        if theta.len() != classes {
            return Err(Error::LengthMismatch {
                expected: classes,
                actual: theta.len(),
            });
        }
        let dim = theta.first().map_or(0, Vec::len);
        if theta.iter().any(|r| r.len() != dim) {
            return Err(Error::schema("ragged theta"));
        }
        Ok(TiltParams {
            classes,
            dim,
            theta: theta.concat(),
            beta: beta.to_vec(),
        })
    }

    pub fn theta_row(&self, k: usize) -> &[f64] {
        &self.theta[k * self.dim..(k + 1) * self.dim]
    }

    pub fn theta_rows(&self) -> Vec<Vec<f64>> {
        (0..self.classes).map(|k| self.theta_row(k).to_vec()).collect()
    }

    /// Stacked `(β_k, θ_k)` per class.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.classes * (self.dim + 1));
        for k in 0..self.classes {
            out.push(self.beta[k]);
            out.extend_from_slice(self.theta_row(k));
        }
        out
    }

    pub fn from_flat(classes: usize, dim: usize, flat: &[f64]) -> Self {
        let mut p = TiltParams::zeros(classes, dim);
        p.set_flat(flat);
        p
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let s = self.dim + 1;
        for k in 0..self.classes {
            self.beta[k] = flat[k * s];
            self.theta[k * self.dim..(k + 1) * self.dim].copy_from_slice(&flat[k * s + 1..(k + 1) * s]);
        }
    }

    fn exponent(&self, k: usize, t: &[f64]) -> f64 {
        dot(self.theta_row(k), t) + self.beta[k]
    }
}

/// Value of the minibatch or full-data objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Mean target log-mixture `L̂`.
    pub log_mixture: f64,
    /// Source normalizer `N̂`.
    pub normalizer: f64,
    /// `-L̂ + log N̂ + λ (N̂ + 1/N̂)`.
    pub objective: f64,
}

impl ObjectiveValue {
    /// `-L̂ + log N̂`, the λ-free criterion used for model choice.
    pub fn unregularized(&self) -> f64 {
        -self.log_mixture + self.normalizer.ln()
    }
}

/// Precomputed data for the tilt objective: sufficient statistics on both
/// samples and the source posterior evaluated on the target sample.
pub struct TiltObjective {
    classes: usize,
    dim: usize,
    src_stat: Array2<f64>,
    src_labels: Vec<usize>,
    src_weights: Option<Vec<f64>>,
    tgt_stat: Array2<f64>,
    tgt_log_post: Array2<f64>,
    tgt_weights: Option<Vec<f64>>,
}

fn check_weights(w: &Option<Vec<f64>>, n: usize) -> Result<()> {
    if let Some(w) = w {
        if w.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: w.len(),
            });
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("sample weights must be non-negative with positive sum".into()));
        }
    }
    Ok(())
}

fn stat_rows(stat: &SufficientStatistic, features: &Array2<f64>) -> Array2<f64> {
    stat.transform(features).as_standard_layout().into_owned()
}

fn row(m: &Array2<f64>, i: usize) -> &[f64] {
    let c = m.ncols();
    &m.as_slice().expect("row-major")[i * c..(i + 1) * c]
}

impl TiltObjective {
    pub fn new(
        posterior: &dyn Classifier,
        stat: &SufficientStatistic,
        src: &LabeledDataset,
        tgt: &UnlabeledDataset,
    ) -> Result<Self> {
        Self::weighted(posterior, stat, src, None, tgt, None)
    }

    /// Samples carry non-negative weights, e.g. atoms of a discrete
    /// distribution weighted by their probabilities.
    pub fn weighted(
        posterior: &dyn Classifier,
        stat: &SufficientStatistic,
        src: &LabeledDataset,
        src_weights: Option<Vec<f64>>,
        tgt: &UnlabeledDataset,
        tgt_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::EmptyInput);
        }
        if src.dim() != tgt.dim() {
            return Err(Error::DimensionMismatch {
                expected: src.dim(),
                actual: tgt.dim(),
            });
        }
        if posterior.input_dim() != src.dim() {
            return Err(Error::DimensionMismatch {
                expected: posterior.input_dim(),
                actual: src.dim(),
            });
        }
        if posterior.class_count() != src.class_count() {
            return Err(Error::schema(format!(
                "classifier has {} classes, source {}",
                posterior.class_count(),
                src.class_count()
            )));
        }
        stat.validate(Some(src.dim()))?;
        check_weights(&src_weights, src.len())?;
        check_weights(&tgt_weights, tgt.len())?;
        let k = src.class_count();
        let mut tgt_log_post = Array2::zeros((tgt.len(), k));
        for i in 0..tgt.len() {
            let lp = posterior.log_proba(tgt.row_slice(i));
            for (j, v) in lp.into_iter().enumerate() {
                tgt_log_post[[i, j]] = v;
            }
        }
        Ok(TiltObjective {
            classes: k,
            dim: stat.output_dim(src.dim()),
            src_stat: stat_rows(stat, src.features()),
            src_labels: src.labels().to_vec(),
            src_weights,
            tgt_stat: stat_rows(stat, tgt.features()),
            tgt_log_post,
            tgt_weights,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_len(&self) -> usize {
        self.src_labels.len()
    }

    pub fn target_len(&self) -> usize {
        self.tgt_stat.nrows()
    }

    /// Full-data objective and its gradient w.r.t. the flat `(β_k, θ_k)` layout.
    pub fn evaluate(
        &self,
        params: &TiltParams,
        lambda: f64,
        grad: Option<&mut [f64]>,
        clip: &mut ClipCounter,
    ) -> ObjectiveValue {
        let src: Vec<usize> = (0..self.source_len()).collect();
        let tgt: Vec<usize> = (0..self.target_len()).collect();
        self.evaluate_batch(params, lambda, &src, &tgt, grad, clip)
    }

    /// Objective and gradient restricted to the given row indices.
    pub fn evaluate_batch(
        &self,
        params: &TiltParams,
        lambda: f64,
        src_idx: &[usize],
        tgt_idx: &[usize],
        grad: Option<&mut [f64]>,
        clip: &mut ClipCounter,
    ) -> ObjectiveValue {
        let k = self.classes;
        let d = self.dim;
        let s = d + 1;
        let mut grad_l = vec![0.0; k * s];
        let mut grad_logn = vec![0.0; k * s];
        let want_grad = grad.is_some();

        // target term
        let mut a = vec![0.0; k];
        let mut inside = vec![true; k];
        let mut l_sum = 0.0;
        let mut w_sum = 0.0;
        for &i in tgt_idx {
            let wi = self.tgt_weights.as_ref().map_or(1.0, |w| w[i]);
            if wi == 0.0 {
                continue;
            }
            let t = row(&self.tgt_stat, i);
            let lp = row(&self.tgt_log_post, i);
            for c in 0..k {
                let (e, ok) = clip.clamp(params.exponent(c, t));
                inside[c] = ok;
                a[c] = lp[c] + e;
            }
            let lse = lse_unchecked(&a);
            l_sum += wi * lse;
            w_sum += wi;
            if want_grad {
                for c in 0..k {
                    if !inside[c] || a[c] == f64::NEG_INFINITY {
                        continue;
                    }
                    let r = wi * (a[c] - lse).exp();
                    grad_l[c * s] += r;
                    for (g, &tj) in grad_l[c * s + 1..(c + 1) * s].iter_mut().zip(t) {
                        *g += r * tj;
                    }
                }
            }
        }
        let log_mixture = l_sum / w_sum;
        if want_grad {
            grad_l.iter_mut().for_each(|g| *g /= w_sum);
        }

        // source normalizer, accumulated in log space
        let mut expo = Vec::with_capacity(src_idx.len());
        let mut src_w_sum = 0.0;
        for &j in src_idx {
            let wj = self.src_weights.as_ref().map_or(1.0, |w| w[j]);
            src_w_sum += wj;
            if wj == 0.0 {
                expo.push((f64::NEG_INFINITY, false));
                continue;
            }
            let y = self.src_labels[j];
            let (e, ok) = clip.clamp(params.exponent(y, row(&self.src_stat, j)));
            expo.push((e + wj.ln(), ok));
        }
        let log_total = lse_unchecked(&expo.iter().map(|e| e.0).collect::<Vec<_>>());
        let log_n = log_total - src_w_sum.ln();
        let normalizer = log_n.exp();
        if want_grad {
            for (&j, &(e, ok)) in src_idx.iter().zip(&expo) {
                if !ok || e == f64::NEG_INFINITY {
                    continue;
                }
                let pi = (e - log_total).exp();
                let y = self.src_labels[j];
                grad_logn[y * s] += pi;
                for (g, &tj) in grad_logn[y * s + 1..(y + 1) * s]
                    .iter_mut()
                    .zip(row(&self.src_stat, j))
                {
                    *g += pi * tj;
                }
            }
        }

        let objective = -log_mixture + log_n + lambda * (normalizer + 1.0 / normalizer);
        if let Some(g) = grad {
            let coef = 1.0 + lambda * (normalizer - 1.0 / normalizer);
            for i in 0..k * s {
                g[i] = -grad_l[i] + coef * grad_logn[i];
            }
        }
        ObjectiveValue {
            log_mixture,
            normalizer,
            objective,
        }
    }

    /// `log N̂` over the full (weighted) source sample.
    pub fn log_normalizer(&self, params: &TiltParams, clip: &mut ClipCounter) -> f64 {
        let n = self.source_len();
        let mut terms = Vec::with_capacity(n);
        let mut w_sum = 0.0;
        for j in 0..n {
            let wj = self.src_weights.as_ref().map_or(1.0, |w| w[j]);
            w_sum += wj;
            if wj == 0.0 {
                continue;
            }
            let (e, _) = clip.clamp(params.exponent(self.src_labels[j], row(&self.src_stat, j)));
            terms.push(e + wj.ln());
        }
        lse_unchecked(&terms) - w_sum.ln()
    }
}

/// `(L̂, N̂)` of the untransformed objective on the given batches.
pub fn objective_terms(
    posterior: &dyn Classifier,
    stat: &SufficientStatistic,
    params: &TiltParams,
    src_batch: &LabeledDataset,
    tgt_batch: &UnlabeledDataset,
) -> Result<(f64, f64)> {
    let obj = TiltObjective::new(posterior, stat, src_batch, tgt_batch)?;
    check_params(&obj, params)?;
    let mut clip = ClipCounter::default();
    let v = obj.evaluate(params, 0.0, None, &mut clip);
    Ok((v.log_mixture, v.normalizer))
}

fn check_params(obj: &TiltObjective, params: &TiltParams) -> Result<()> {
    if params.classes != obj.classes || params.dim != obj.dim {
        return Err(Error::DimensionMismatch {
            expected: obj.classes * (obj.dim + 1),
            actual: params.classes * (params.dim + 1),
        });
    }
    Ok(())
}

/// Fitted tilt: `ω(x, y) = exp(θ_y·T(x) + α_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltModel {
    #[serde(rename = "T")]
    pub stat: SufficientStatistic,
    pub theta: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// Intercepts before the normalization correction.
    pub beta_raw: Vec<f64>,
    /// `N̂` on the full source sample at the final parameters.
    pub normalizer_at_fit: f64,
    /// Full-data `-L̂ + log N̂` at the final parameters; NaN (JSON `null`) when not fitted.
    #[serde(deserialize_with = "nan_from_null")]
    pub objective: f64,
}

fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl TiltModel {
    /// Model with known `(θ, α)`, e.g. an analytic ground truth.
    pub fn exact(stat: SufficientStatistic, theta: Vec<Vec<f64>>, alpha: Vec<f64>) -> Self {
        TiltModel {
            stat,
            theta,
            beta_raw: alpha.clone(),
            alpha,
            normalizer_at_fit: 1.0,
            objective: f64::NAN,
        }
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn log_weight(&self, x: &[f64], y: usize) -> f64 {
        let t = self.stat.apply(x);
        dot(&self.theta[y], &t) + self.alpha[y]
    }

    /// Weight with the exponent clamped like in fitting.
    pub fn weight(&self, x: &[f64], y: usize) -> f64 {
        let mut clip = ClipCounter::default();
        clip.clamp(self.log_weight(x, y)).0.exp()
    }

    pub fn weights_for(&self, ds: &LabeledDataset) -> Vec<f64> {
        (0..ds.len())
            .map(|i| self.weight(ds.row_slice(i), ds.labels()[i]))
            .collect()
    }

    /// Stacked `(α_k, θ_k)` per class.
    pub fn stacked(&self) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.alpha)
            .flat_map(|(t, a)| std::iter::once(*a).chain(t.iter().copied()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-source-sample importance weights plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub mean_weight: f64,
    pub config: Option<ExtraConfig>,
    /// Full-data `-L̂ + log N̂` at the selected parameters.
    pub objective: Option<f64>,
    /// Exponent clamps during fitting and weight evaluation.
    #[serde(default)]
    pub clipped: u64,
}

#[derive(Serialize, Deserialize)]
struct WeightSidecar {
    config: Option<ExtraConfig>,
    objective: Option<f64>,
    mean_weight: f64,
    clipped: u64,
    n: usize,
}

impl WeightVector {
    /// Weights without fit provenance; every weight must be positive.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput);
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::schema("weights must be finite and positive"));
        }
        let mean_weight = weights.iter().sum::<f64>() / weights.len() as f64;
        Ok(WeightVector {
            weights,
            mean_weight,
            config: None,
            objective: None,
            clipped: 0,
        })
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector::from_weights(vec![1.0; n]).expect("n > 0")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Same weights multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= c);
        out.mean_weight *= c;
        out
    }

    /// Writes `index,weight` CSV plus a `<stem>.json` sidecar with provenance.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let path = csv_path.as_ref();
        let mut body = String::from("index,weight\n");
        for (i, w) in self.weights.iter().enumerate() {
            body.push_str(&format!("{i},{}\n", fmt_f64(*w)));
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
        let sidecar = WeightSidecar {
            config: self.config.clone(),
            objective: self.objective,
            mean_weight: self.mean_weight,
            clipped: self.clipped,
            n: self.weights.len(),
        };
        let side = path.with_extension("json");
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    /// Reads the CSV and, when present, its sidecar.
    pub fn load(csv_path: impl AsRef<Path>) -> Result<Self> {
        let path = csv_path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::schema(format!("{other:?}")),
        })?;
        let mut weights = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let idx: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::schema(format!("row {r}: bad index")))?;
            if idx != r {
                return Err(Error::schema(format!("row {r}: index {idx} out of order")));
            }
            let w: f64 = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::schema(format!("row {r}: bad weight")))?;
            weights.push(w);
        }
        let mut wv = WeightVector::from_weights(weights)?;
        let side = path.with_extension("json");
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: WeightSidecar = serde_json::from_str(&text)?;
            wv.config = meta.config;
            wv.objective = meta.objective;
            wv.clipped = meta.clipped;
        }
        Ok(wv)
    }
}

/// Without-replacement minibatch stream that reshuffles when exhausted.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    full: bool,
}

impl BatchStream {
    fn new(n: usize, batch: usize) -> Self {
        BatchStream {
            order: (0..n).collect(),
            pos: n,
            full: batch >= n,
        }
    }

    fn start_epoch(&mut self, rng: &mut ChaCha8Rng) {
        if !self.full {
            self.order.shuffle(rng);
            self.pos = 0;
        }
    }

    fn next(&mut self, batch: usize, rng: &mut ChaCha8Rng, out: &mut Vec<usize>) {
        out.clear();
        if self.full {
            out.extend_from_slice(&self.order);
            return;
        }
        while out.len() < batch {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (batch - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
    }
}

/// Diagnostics of a single fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub steps: u64,
    pub steps_per_epoch: usize,
    /// Minibatch objective averaged over each epoch.
    pub epoch_objective: Vec<f64>,
    pub clipped: u64,
}

/// Runs the minibatch Adam loop, then normalizes and emits weights.
pub fn fit_extra(
    posterior: &dyn Classifier,
    src: &LabeledDataset,
    tgt: &UnlabeledDataset,
    cfg: &ExtraConfig,
) -> Result<(TiltModel, WeightVector)> {
    let (model, weights, _) = fit_extra_traced(posterior, src, tgt, cfg)?;
    Ok((model, weights))
}

pub fn fit_extra_traced(
    posterior: &dyn Classifier,
    src: &LabeledDataset,
    tgt: &UnlabeledDataset,
    cfg: &ExtraConfig,
) -> Result<(TiltModel, WeightVector, FitTrace)> {
    cfg.validate()?;
    let objective = TiltObjective::new(posterior, &cfg.statistic, src, tgt)?;
    fit_objective(&objective, cfg)
}

/// Fit on a prepared (possibly sample-weighted) objective.
pub fn fit_objective(
    objective: &TiltObjective,
    cfg: &ExtraConfig,
) -> Result<(TiltModel, WeightVector, FitTrace)> {
    cfg.validate()?;
    let k = objective.classes;
    let d = objective.dim;
    let n_src = objective.source_len();
    let n_tgt = objective.target_len();

    let mut params = TiltParams::zeros(k, d);
    if cfg.init_scale > 0.0 {
        let mut rng = rng_stream(cfg.seed, 0, 0);
        let normal = Normal::new(0.0, cfg.init_scale).expect("finite scale");
        if !cfg.freeze_theta {
            params.theta.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        params.beta.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }

    let b_src = cfg.batch_size.min(n_src);
    let b_tgt = cfg.batch_size.min(n_tgt);
    let steps_per_epoch = n_src.max(n_tgt).div_ceil(cfg.batch_size).max(1);
    let mut src_stream = BatchStream::new(n_src, cfg.batch_size);
    let mut tgt_stream = BatchStream::new(n_tgt, cfg.batch_size);
    let mut src_idx = Vec::with_capacity(b_src);
    let mut tgt_idx = Vec::with_capacity(b_tgt);

    let mut flat = params.to_flat();
    let mut grad = vec![0.0; flat.len()];
    let mut adam = AdamState::new(flat.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut clip = ClipCounter::default();
    let mut epoch_objective = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut src_rng = rng_stream(cfg.seed, 1, epoch as u32);
        let mut tgt_rng = rng_stream(cfg.seed, 2, epoch as u32);
        src_stream.start_epoch(&mut src_rng);
        tgt_stream.start_epoch(&mut tgt_rng);
        let mut acc = 0.0;
        for _ in 0..steps_per_epoch {
            src_stream.next(b_src, &mut src_rng, &mut src_idx);
            tgt_stream.next(b_tgt, &mut tgt_rng, &mut tgt_idx);
            params.set_flat(&flat);
            let v = objective.evaluate_batch(&params, cfg.lambda, &src_idx, &tgt_idx, Some(&mut grad), &mut clip);
            if !v.objective.is_finite() {
                return Err(Error::NonFiniteObjective);
            }
            acc += v.objective;
            if cfg.freeze_theta {
                for c in 0..k {
                    grad[c * (d + 1) + 1..(c + 1) * (d + 1)].iter_mut().for_each(|g| *g = 0.0);
                }
            }
            adam.step(&mut flat, &grad)?;
        }
        epoch_objective.push(acc / steps_per_epoch as f64);
    }
    params.set_flat(&flat);

    let full = objective.evaluate(&params, 0.0, None, &mut clip);
    let log_n = full.normalizer.ln();
    let fitted_objective = full.unregularized();
    if !fitted_objective.is_finite() || !log_n.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let alpha: Vec<f64> = params.beta.iter().map(|b| b - log_n).collect();
    let model = TiltModel {
        stat: cfg.statistic.clone(),
        theta: params.theta_rows(),
        alpha,
        beta_raw: params.beta.clone(),
        normalizer_at_fit: full.normalizer,
        objective: fitted_objective,
    };
    let weights: Vec<f64> = (0..n_src)
        .map(|j| {
            let y = objective.src_labels[j];
            let e = dot(&model.theta[y], row(&objective.src_stat, j)) + model.alpha[y];
            clip.clamp(e).0.exp()
        })
        .collect();
    let mean_weight = match &objective.src_weights {
        Some(w) => weights.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>(),
        None => weights.iter().sum::<f64>() / n_src as f64,
    };
    let wv = WeightVector {
        weights,
        mean_weight,
        config: Some(cfg.clone()),
        objective: Some(fitted_objective),
        clipped: clip.clipped,
    };
    let trace = FitTrace {
        steps: adam.steps(),
        steps_per_epoch,
        epoch_objective,
        clipped: clip.clipped,
    };
    Ok((model, wv, trace))
}

/// A named source posterior competing in a sweep (e.g. one calibration variant).
pub struct PosteriorVariant<'a> {
    pub label: String,
    pub posterior: &'a dyn Classifier,
}

/// One (posterior variant × config) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: String,
    pub config: ExtraConfig,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub best_index: usize,
    pub best_model: TiltModel,
    pub best_weights: WeightVector,
    pub cells: Vec<SweepCell>,
}

/// Fits every (variant × config) cell and keeps the lowest full-data
/// objective; ties go to the earliest cell. Cells run in parallel on the
/// current rayon pool; results do not depend on the thread count.
pub fn sweep(
    variants: &[PosteriorVariant<'_>],
    src: &LabeledDataset,
    tgt: &UnlabeledDataset,
    grid: &[ExtraConfig],
) -> Result<SweepOutcome> {
    if grid.is_empty() || variants.is_empty() {
        return Err(Error::Config("sweep needs at least one variant and one config".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..grid.len()).map(move |c| (v, c)))
        .collect();
    let results: Vec<Result<(TiltModel, WeightVector)>> = jobs
        .par_iter()
        .map(|&(v, c)| fit_extra(variants[v].posterior, src, tgt, &grid[c]))
        .collect();

    let mut cells = Vec::with_capacity(jobs.len());
    let mut best: Option<(usize, TiltModel, WeightVector)> = None;
    let mut first_error = None;
    for (idx, (&(v, c), res)) in jobs.iter().zip(results).enumerate() {
        match res {
            Ok((model, weights)) => {
                cells.push(SweepCell {
                    variant: variants[v].label.clone(),
                    config: grid[c].clone(),
                    objective: Some(model.objective),
                    error: None,
                });
                let better = best.as_ref().is_none_or(|(_, m, _)| model.objective < m.objective);
                if better {
                    best = Some((idx, model, weights));
                }
            }
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
                cells.push(SweepCell {
                    variant: variants[v].label.clone(),
                    config: grid[c].clone(),
                    objective: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some((best_index, best_model, best_weights)) => Ok(SweepOutcome {
            best_index,
            best_model,
            best_weights,
            cells,
        }),
        None => Err(Error::AllCellsFailed {
            first: first_error.unwrap_or_default(),
        }),
    }
}

/// Waterbirds protocol: learning rates {5e-4, 4e-5}, batch 500, epochs
/// {100, 200, 400}, λ = 0. Combined with four calibration variants this is 24 cells.
pub fn waterbirds_grid(seed: u64) -> Vec<ExtraConfig> {
    let mut grid = Vec::new();
    for &learning_rate in &[5e-4, 4e-5] {
        for &epochs in &[100, 200, 400] {
            grid.push(ExtraConfig {
                learning_rate,
                batch_size: 500,
                epochs,
                lambda: 0.0,
                seed,
                ..Default::default()
            });
        }
    }
    grid
}

pub const WATERBIRDS_CALIBRATIONS: [CalibrationKind; 4] = [
    CalibrationKind::None,
    CalibrationKind::Ts,
    CalibrationKind::Bcts,
    CalibrationKind::Vs,
];

/// Breeds protocol: learning rate 1e-4, batch 1500, 500 epochs, λ = 1e-6, BCTS.
pub fn breeds_config(seed: u64) -> ExtraConfig {
    ExtraConfig {
        learning_rate: 1e-4,
        batch_size: 1500,
        epochs: 500,
        lambda: 1e-6,
        seed,
        ..Default::default()
    }
}

pub const BREEDS_CALIBRATION: CalibrationKind = CalibrationKind::Bcts;
