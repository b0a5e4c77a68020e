//! Multinomial logistic source classifier and post-hoc logit calibration.
//!
//! The penalized objective follows the inverse-C convention:
//!
//! ```text
//! (1/n) [ Σ_i w_i · NLL_i  +  strength · R(W) ]
//! ```
//!
//! with `R = ½‖W‖²` (L2) or `‖W‖₁` (L1) and `strength = 1/C`. Intercepts are
//! not penalized. Dividing by `n` does not move the minimizer; it only keeps
//! the stopping tolerance independent of sample size.

use std::fmt;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{lse_unchecked, softmax_in_place, AdamConfig, AdamState};

/// Anything that maps a feature vector to class log-probabilities.
pub trait Classifier: Send + Sync {
    fn class_count(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Log-probabilities for each class; entries may be `-inf`.
    fn log_proba(&self, x: &[f64]) -> Vec<f64>;

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.log_proba(x).into_iter().map(f64::exp).collect()
    }

    /// Most probable class, lowest index on ties.
    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.log_proba(x))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    None,
    /// Temperature scaling.
    Ts,
    /// Bias-corrected temperature scaling.
    Bcts,
    /// Vector scaling.
    Vs,
}

impl fmt::Display for CalibrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationKind::None => "none",
            CalibrationKind::Ts => "ts",
            CalibrationKind::Bcts => "bcts",
            CalibrationKind::Vs => "vs",
        })
    }
}

/// Logit transform applied before centering.
///
/// - `None`: identity
/// - `Ts`: `z / T`
/// - `Bcts`: `z / T + c`
/// - `Vs`: `s ∘ z + c`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTransform {
    pub kind: CalibrationKind,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default)]
    pub scale: Vec<f64>,
    #[serde(default)]
    pub bias: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for CalibrationTransform {
    fn default() -> Self {
        CalibrationTransform::identity()
    }
}

impl CalibrationTransform {
    pub fn identity() -> Self {
        CalibrationTransform {
            kind: CalibrationKind::None,
            temperature: 1.0,
            scale: Vec::new(),
            bias: Vec::new(),
        }
    }

    pub fn apply(&self, z: &mut [f64]) {
        match self.kind {
            CalibrationKind::None => {}
            CalibrationKind::Ts => z.iter_mut().for_each(|v| *v /= self.temperature),
            CalibrationKind::Bcts => {
                for (v, c) in z.iter_mut().zip(&self.bias) {
                    *v = *v / self.temperature + c;
                }
            }
            CalibrationKind::Vs => {
                for ((v, s), c) in z.iter_mut().zip(&self.scale).zip(&self.bias) {
                    *v = *v * s + c;
                }
            }
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::schema(format!("calibration {}: {m}", self.kind)));
        match self.kind {
            CalibrationKind::None => Ok(()),
            CalibrationKind::Ts | CalibrationKind::Bcts
                if !(self.temperature > 0.0 && self.temperature.is_finite()) =>
            {
                bad("temperature must be positive")
            }
            CalibrationKind::Bcts if self.bias.len() != k => bad("bias length must equal K"),
            CalibrationKind::Vs if self.scale.len() != k || self.bias.len() != k => {
                bad("scale and bias lengths must equal K")
            }
            _ => Ok(()),
        }
    }
}

/// Multinomial logistic classifier `logits(x) = W x + b` plus calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbClassifier {
    #[serde(rename = "W", with = "matrix_serde")]
    weights: Array2<f64>,
    #[serde(rename = "b")]
    bias: Vec<f64>,
    penalty: Penalty,
    strength: f64,
    #[serde(default)]
    calibration: CalibrationTransform,
}

mod matrix_serde {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.outer_iter().map(|r| r.to_vec()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let k = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(serde::de::Error::custom("ragged weight matrix"));
        }
        Array2::from_shape_vec((k, p), rows.into_iter().flatten().collect())
            .map_err(serde::de::Error::custom)
    }
}

impl ProbClassifier {
    pub fn new(weights: Array2<f64>, bias: Vec<f64>, penalty: Penalty, strength: f64) -> Result<Self> {
        let clf = ProbClassifier {
            weights,
            bias,
            penalty,
            strength,
            calibration: CalibrationTransform::identity(),
        };
        clf.validate()?;
        Ok(clf)
    }

    /// Fixed-parameter classifier (no penalty bookkeeping), e.g. an exact
    /// Bayes posterior written in logistic form.
    pub fn from_parameters(weights: Array2<f64>, bias: Vec<f64>) -> Result<Self> {
        Self::new(weights, bias, Penalty::L2, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.nrows();
        if k < 1 || self.bias.len() != k {
            return Err(Error::schema("bias length must equal the number of weight rows"));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::schema("non-finite classifier parameter"));
        }
        if !(self.strength >= 0.0) {
            return Err(Error::schema("penalty strength must be non-negative"));
        }
        self.calibration.validate(k)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn calibration(&self) -> &CalibrationTransform {
        &self.calibration
    }

    pub fn with_calibration(mut self, calibration: CalibrationTransform) -> Result<Self> {
        calibration.validate(self.weights.nrows())?;
        self.calibration = calibration;
        Ok(self)
    }

    /// Uncalibrated logits `W x + b`.
    pub fn raw_logits(&self, x: &[f64]) -> Vec<f64> {
        let xv = ArrayView1::from(x);
        self.weights
            .outer_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.dot(&xv) + b)
            .collect()
    }

    pub fn calibrated_logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.raw_logits(x);
        self.calibration.apply(&mut z);
        z
    }

    /// Calibrated logits shifted to sum to zero.
    pub fn centered_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.ncols(),
                actual: x.len(),
            });
        }
        let mut z = self.calibrated_logits(x);
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        z.iter_mut().for_each(|v| *v -= mean);
        Ok(z)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let clf: ProbClassifier = serde_json::from_str(s)?;
        clf.validate()?;
        Ok(clf)
    }
}

impl Classifier for ProbClassifier {
    fn class_count(&self) -> usize {
        self.weights.nrows()
    }

    fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn log_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.calibrated_logits(x);
        let lse = lse_unchecked(&z);
        z.iter_mut().for_each(|v| *v -= lse);
        z
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.calibrated_logits(x);
        softmax_in_place(&mut z);
        z
    }
}

/// Settings for [`fit_logistic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub penalty: Penalty,
    /// `1/C`; zero disables the penalty.
    pub strength: f64,
    /// Sup-norm bound on the (minimum-norm sub)gradient of the objective.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    /// `C = 0.1`, `tol = 1e-6`, `max_iter = 500`.
    fn default() -> Self {
        LogisticConfig {
            penalty: Penalty::L2,
            strength: 10.0,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// Outcome flags of a logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub converged: bool,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub gradient_norm: f64,
    /// Unpenalized fit on perfectly separated training data.
    pub separable: bool,
}

struct LogisticProblem<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    w: Option<&'a [f64]>,
    k: usize,
    p: usize,
    n: f64,
    penalty: Penalty,
    strength: f64,
}

impl LogisticProblem<'_> {
    // params layout: K rows of (p weights, then 1 bias)
    fn stride(&self) -> usize {
        self.p + 1
    }

    fn l2_coef(&self) -> f64 {
        match self.penalty {
            Penalty::L2 => self.strength / self.n,
            Penalty::L1 => 0.0,
        }
    }

    fn l1_coef(&self) -> f64 {
        match self.penalty {
            Penalty::L1 => self.strength / self.n,
            Penalty::L2 => 0.0,
        }
    }

    /// Weighted mean negative log-likelihood and its gradient.
    fn value_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let s = self.stride();
        let mut z = vec![0.0; self.k];
        let mut loss = 0.0;
        for (i, row) in self.x.outer_iter().enumerate() {
            let wi = self.w.map_or(1.0, |w| w[i]);
            if wi == 0.0 {
                continue;
            }
            for k in 0..self.k {
                let base = k * s;
                let mut acc = params[base + self.p];
                for (j, &xj) in row.iter().enumerate() {
                    acc += params[base + j] * xj;
                }
                z[k] = acc;
            }
            let lse = lse_unchecked(&z);
            let yi = self.y[i];
            loss += wi * (lse - z[yi]);
            for k in 0..self.k {
                let mut r = (z[k] - lse).exp();
                if k == yi {
                    r -= 1.0;
                }
                let r = r * wi / self.n;
                if r == 0.0 {
                    continue;
                }
                let base = k * s;
                for (j, &xj) in row.iter().enumerate() {
                    grad[base + j] += r * xj;
                }
                grad[base + self.p] += r;
            }
        }
        loss / self.n
    }

    fn weight_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let s = self.stride();
        (0..self.k).flat_map(move |k| (0..self.p).map(move |j| k * s + j))
    }

    /// Penalty term, handled through its proximal operator.
    fn penalty_value(&self, params: &[f64]) -> f64 {
        let (c1, c2) = (self.l1_coef(), self.l2_coef());
        self.weight_indices()
            .map(|i| c1 * params[i].abs() + 0.5 * c2 * params[i] * params[i])
            .sum()
    }

    fn prox(&self, params: &mut [f64], step: f64) {
        let c1 = self.l1_coef() * step;
        let shrink = 1.0 / (1.0 + self.l2_coef() * step);
        for i in self.weight_indices().collect::<Vec<_>>() {
            let v = &mut params[i];
            if c1 > 0.0 {
                *v = v.signum() * (v.abs() - c1).max(0.0);
            } else {
                *v *= shrink;
            }
        }
    }

    /// Sup-norm of the minimum-norm subgradient.
    fn stationarity(&self, params: &[f64], grad: &[f64]) -> f64 {
        let (c1, c2) = (self.l1_coef(), self.l2_coef());
        let s = self.stride();
        let mut worst = 0.0f64;
        for (i, (&g, &v)) in grad.iter().zip(params).enumerate() {
            let is_bias = i % s == self.p;
            let r = if is_bias {
                g.abs()
            } else if c1 == 0.0 {
                (g + c2 * v).abs()
            } else if v != 0.0 {
                (g + c1 * v.signum()).abs()
            } else {
                (g.abs() - c1).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// Fits the penalized multinomial logistic model.
///
/// Optimizer: accelerated proximal gradient with backtracking and
/// function-value restarts, so the objective never increases between
/// accepted iterates. Starts from zero parameters; the problem is convex, so
/// the result is deterministic.
pub fn fit_logistic(ds: &LabeledDataset, cfg: &LogisticConfig) -> Result<(ProbClassifier, FitReport)> {
    fit_logistic_weighted(ds, None, cfg)
}

/// As [`fit_logistic`], each sample's loss multiplied by `sample_weights[i]`.
pub fn fit_logistic_weighted(
    ds: &LabeledDataset,
    sample_weights: Option<&[f64]>,
    cfg: &LogisticConfig,
) -> Result<(ProbClassifier, FitReport)> {
    if !(cfg.strength >= 0.0) || !cfg.strength.is_finite() {
        return Err(Error::Config(format!("penalty strength {} must be >= 0", cfg.strength)));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let k = ds.class_count();
    if ds.len() < k {
        return Err(Error::Config(format!(
            "need at least K = {k} samples, got {}",
            ds.len()
        )));
    }
    if let Some(w) = sample_weights {
        if w.len() != ds.len() {
            return Err(Error::LengthMismatch {
                expected: ds.len(),
                actual: w.len(),
            });
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("sample weights must be finite and non-negative".into()));
        }
    }
    let problem = LogisticProblem {
        x: ds.features(),
        y: ds.labels(),
        w: sample_weights,
        k,
        p: ds.dim(),
        n: ds.len() as f64,
        penalty: cfg.penalty,
        strength: cfg.strength,
    };
    let dim = k * problem.stride();
    let mut x = vec![0.0; dim];
    let mut gx = vec![0.0; dim];
    let fx_smooth = problem.value_grad(&x, &mut gx);
    let mut fx = fx_smooth + problem.penalty_value(&x);
    let initial_objective = fx;

    let mut y = x.clone();
    let mut gy = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut gz = vec![0.0; dim];
    let mut t = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut iterations = 0;
    let mut gnorm = problem.stationarity(&x, &gx);
    let mut converged = gnorm <= cfg.tol;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let fy = problem.value_grad(&y, &mut gy);
        lipschitz = (lipschitz / 2.0).max(1e-12);
        let mut fz;
        loop {
            let step = 1.0 / lipschitz;
            for i in 0..dim {
                z[i] = y[i] - step * gy[i];
            }
            problem.prox(&mut z, step);
            fz = problem.value_grad(&z, &mut gz);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..dim {
                let d = z[i] - y[i];
                lin += gy[i] * d;
                sq += d * d;
            }
            if fz <= fy + lin + 0.5 * lipschitz * sq + 1e-15 * fy.abs() || lipschitz > 1e15 {
                break;
            }
            lipschitz *= 2.0;
        }
        let fz_total = fz + problem.penalty_value(&z);
        // a plain proximal step from x is always kept; an accelerated step that
        // increases the objective restarts the momentum instead
        if fz_total > fx && y != x {
            y.copy_from_slice(&x);
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        for i in 0..dim {
            y[i] = z[i] + momentum * (z[i] - x[i]);
        }
        std::mem::swap(&mut x, &mut z);
        std::mem::swap(&mut gx, &mut gz);
        fx = fz_total;
        t = t_next;
        gnorm = problem.stationarity(&x, &gx);
        converged = gnorm <= cfg.tol;
    }

    let s = problem.stride();
    let p = problem.p;
    let weights = Array2::from_shape_fn((k, p), |(r, c)| x[r * s + c]);
    let bias: Vec<f64> = (0..k).map(|r| x[r * s + p]).collect();
    let clf = ProbClassifier::new(weights, bias, cfg.penalty, cfg.strength)?;
    // with zero penalty and perfectly separated training data the loss has no
    // minimizer; a small gradient there does not mean convergence
    let separable = cfg.strength == 0.0 && training_accuracy(&clf, ds) == 1.0;
    let converged = converged && !separable;
    Ok((
        clf,
        FitReport {
            converged,
            iterations,
            initial_objective,
            final_objective: fx,
            gradient_norm: gnorm,
            separable,
        },
    ))
}

fn training_accuracy(clf: &dyn Classifier, ds: &LabeledDataset) -> f64 {
    let hits = (0..ds.len())
        .filter(|&i| clf.predict(ds.row_slice(i)) == ds.labels()[i])
        .count();
    hits as f64 / ds.len() as f64
}

/// Holdout negative log-likelihood before and after calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub kind: CalibrationKind,
    pub nll_before: f64,
    pub nll_after: f64,
    /// Holdout contained a single class; the fit is valid but uninformative.
    pub single_class: bool,
}

fn holdout_nll(logits: &[Vec<f64>], labels: &[usize], t: &CalibrationTransform) -> f64 {
    let mut total = 0.0;
    let mut z = Vec::new();
    for (raw, &y) in logits.iter().zip(labels) {
        z.clear();
        z.extend_from_slice(raw);
        t.apply(&mut z);
        total += lse_unchecked(&z) - z[y];
    }
    total / labels.len() as f64
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

const CALIBRATION_ADAM_STEPS: usize = 3000;
const CALIBRATION_ADAM_LR: f64 = 0.01;

/// Fits calibration parameters by minimizing holdout NLL over the chosen
/// transform family. TS uses golden-section search on `log T`; BCTS and VS
/// run full-batch Adam started from the TS solution. The identity transform
/// belongs to every family, so holdout NLL never gets worse.
pub fn calibrate(
    clf: &ProbClassifier,
    holdout: &LabeledDataset,
    kind: CalibrationKind,
) -> Result<(ProbClassifier, CalibrationReport)> {
    let k = clf.class_count();
    if holdout.is_empty() {
        return Err(Error::EmptyInput);
    }
    if holdout.dim() != clf.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: clf.input_dim(),
            actual: holdout.dim(),
        });
    }
    if holdout.class_count() != k {
        return Err(Error::schema(format!(
            "holdout has {} classes, classifier {k}",
            holdout.class_count()
        )));
    }
    let logits: Vec<Vec<f64>> = holdout
        .features()
        .outer_iter()
        .map(|r| clf.raw_logits(&r.to_vec()))
        .collect();
    let labels = holdout.labels();
    let counts = holdout.class_counts();
    let single_class = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let identity = CalibrationTransform::identity();
    let nll_before = holdout_nll(&logits, labels, &clf.calibration);
    let nll_identity = holdout_nll(&logits, labels, &identity);

    let ts = || {
        let f = |log_inv_t: f64| {
            let t = CalibrationTransform {
                kind: CalibrationKind::Ts,
                temperature: (-log_inv_t).exp(),
                ..CalibrationTransform::identity()
            };
            holdout_nll(&logits, labels, &t)
        };
        let u = golden_section(f, (1e-3f64).ln(), (1e2f64).ln(), 1e-10);
        (-u).exp()
    };

    let fitted = match kind {
        CalibrationKind::None => identity.clone(),
        CalibrationKind::Ts => CalibrationTransform {
            kind: CalibrationKind::Ts,
            temperature: ts(),
            ..CalibrationTransform::identity()
        },
        CalibrationKind::Bcts | CalibrationKind::Vs => {
            let t0 = ts();
            adam_calibration(&logits, labels, k, kind, t0)
        }
    };
    let nll_fitted = holdout_nll(&logits, labels, &fitted);
    let (chosen, nll_after) = if nll_fitted <= nll_identity {
        (fitted, nll_fitted)
    } else {
        (identity_of_kind(kind, k), nll_identity)
    };
    let report = CalibrationReport {
        kind,
        nll_before,
        nll_after,
        single_class,
    };
    Ok((clf.clone().with_calibration(chosen)?, report))
}

fn identity_of_kind(kind: CalibrationKind, k: usize) -> CalibrationTransform {
    match kind {
        CalibrationKind::None | CalibrationKind::Ts => CalibrationTransform {
            kind,
            ..CalibrationTransform::identity()
        },
        CalibrationKind::Bcts => CalibrationTransform {
            kind,
            temperature: 1.0,
            scale: Vec::new(),
            bias: vec![0.0; k],
        },
        CalibrationKind::Vs => CalibrationTransform {
            kind,
            temperature: 1.0,
            scale: vec![1.0; k],
            bias: vec![0.0; k],
        },
    }
}

/// BCTS: params `(log(1/T), c_1..c_K)`; VS: `(s_1..s_K, c_1..c_K)`.
fn adam_calibration(
    logits: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    kind: CalibrationKind,
    t0: f64,
) -> CalibrationTransform {
    let to_transform = |params: &[f64]| match kind {
        CalibrationKind::Bcts => CalibrationTransform {
            kind,
            temperature: (-params[0]).exp(),
            scale: Vec::new(),
            bias: params[1..].to_vec(),
        },
        _ => CalibrationTransform {
            kind,
            temperature: 1.0,
            scale: params[..k].to_vec(),
            bias: params[k..].to_vec(),
        },
    };
    let mut params = match kind {
        CalibrationKind::Bcts => {
            let mut p = vec![0.0; k + 1];
            p[0] = -t0.ln();
            p
        }
        _ => {
            let mut p = vec![1.0 / t0; 2 * k];
            p[k..].iter_mut().for_each(|v| *v = 0.0);
            p
        }
    };
    let n = labels.len() as f64;
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(CALIBRATION_ADAM_LR));
    let mut best = (f64::INFINITY, params.clone());
    let mut grad = vec![0.0; params.len()];
    let mut z = vec![0.0; k];
    for _ in 0..CALIBRATION_ADAM_STEPS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut nll = 0.0;
        let inv_t = params[0].exp();
        for (raw, &y) in logits.iter().zip(labels) {
            for j in 0..k {
                z[j] = match kind {
                    CalibrationKind::Bcts => raw[j] * inv_t + params[1 + j],
                    _ => raw[j] * params[j] + params[k + j],
                };
            }
            let lse = lse_unchecked(&z);
            nll += lse - z[y];
            for j in 0..k {
                let mut r = (z[j] - lse).exp();
                if j == y {
                    r -= 1.0;
                }
                r /= n;
                match kind {
                    CalibrationKind::Bcts => {
                        grad[0] += r * raw[j] * inv_t;
                        grad[1 + j] += r;
                    }
                    _ => {
                        grad[j] += r * raw[j];
                        grad[k + j] += r;
                    }
                }
            }
        }
        nll /= n;
        if nll < best.0 {
            best = (nll, params.clone());
        }
        adam.step(&mut params, &grad).expect("dimensions fixed");
    }
    let final_t = to_transform(&params);
    if holdout_nll(logits, labels, &final_t) < best.0 {
        final_t
    } else {
        to_transform(&best.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_stream, softmax};
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_pair(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = rng_stream(seed, 0, 0);
        let mut feats = Array2::zeros((n, 1));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = rng.random_range(0..2usize);
            let e: f64 = StandardNormal.sample(&mut rng);
            feats[[i, 0]] = if y == 1 { 2.0 } else { -2.0 } + e;
            labels.push(y);
        }
        LabeledDataset::new(feats, labels, None, 2).unwrap()
    }

    #[test]
    fn symmetric_two_point_fit() {
        let ds = LabeledDataset::new(array![[-1.0], [1.0]], vec![0, 1], None, 2).unwrap();
        let cfg = LogisticConfig {
            penalty: Penalty::L2,
            strength: 10.0,
            tol: 1e-10,
            max_iter: 5000,
        };
        let (clf, rep) = fit_logistic(&ds, &cfg).unwrap();
        assert!(rep.converged);
        assert!(clf.bias()[0].abs() < 1e-8 && clf.bias()[1].abs() < 1e-8);
        let w = clf.weights();
        assert!((w[[0, 0]] + w[[1, 0]]).abs() < 1e-8);
        assert!(w[[1, 0]] > 0.0);
    }

    #[test]
    fn heavy_penalty_predicts_class_frequencies() {
        let ds = gaussian_pair(300, 4);
        let cfg = LogisticConfig {
            strength: 1e9,
            ..Default::default()
        };
        let (clf, _) = fit_logistic(&ds, &cfg).unwrap();
        assert!(clf.weights().iter().all(|v| v.abs() < 1e-5));
        let freq1 = ds.labels().iter().filter(|&&y| y == 1).count() as f64 / 300.0;
        let p = clf.predict_proba(&[0.7]);
        assert!((p[1] - freq1).abs() < 1e-4, "{p:?} vs {freq1}");
    }

    #[test]
    fn separated_gaussians_generalize() {
        let train = gaussian_pair(200, 1);
        let test = gaussian_pair(4000, 2);
        let cfg = LogisticConfig {
            strength: 1.0,
            ..Default::default()
        };
        let (clf, rep) = fit_logistic(&train, &cfg).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(rep.final_objective <= rep.initial_objective);
        let acc = (0..test.len())
            .filter(|&i| clf.predict(&test.row(i).to_vec()) == test.labels()[i])
            .count() as f64
            / test.len() as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn l1_stationarity_and_sparsity() {
        let mut rng = rng_stream(11, 0, 0);
        let n = 400;
        let mut feats = Array2::zeros((n, 5));
        let mut labels = Vec::new();
        for i in 0..n {
            let y = rng.random_range(0..3usize);
            for j in 0..5 {
                let e: f64 = StandardNormal.sample(&mut rng);
                feats[[i, j]] = e + if j == y { 1.5 } else { 0.0 };
            }
            labels.push(y);
        }
        let ds = LabeledDataset::new(feats, labels, None, 3).unwrap();
        let cfg = LogisticConfig {
            penalty: Penalty::L1,
            strength: 40.0,
            tol: 1e-7,
            max_iter: 20000,
        };
        let (clf, rep) = fit_logistic(&ds, &cfg).unwrap();
        assert!(rep.converged, "{rep:?}");
        // columns 3 and 4 carry no class signal
        assert!(clf.weights().iter().any(|&v| v == 0.0));
    }

    #[test]
    fn separable_without_penalty_is_flagged() {
        let ds = LabeledDataset::new(array![[-2.0], [-1.0], [1.0], [2.0]], vec![0, 0, 1, 1], None, 2).unwrap();
        let cfg = LogisticConfig {
            strength: 0.0,
            max_iter: 200,
            ..Default::default()
        };
        let (_, rep) = fit_logistic(&ds, &cfg).unwrap();
        assert!(!rep.converged);
        assert!(rep.separable);
    }

    #[test]
    fn centered_logits_examples() {
        let zero = ProbClassifier::from_parameters(Array2::zeros((3, 2)), vec![0.0; 3]).unwrap();
        assert_eq!(zero.centered_logits(&[1.0, -4.0]).unwrap(), vec![0.0; 3]);
        // logits (0, ln 3) give probabilities (1/4, 3/4)
        let clf = ProbClassifier::from_parameters(Array2::zeros((2, 1)), vec![0.0, 3f64.ln()]).unwrap();
        let f = clf.centered_logits(&[5.0]).unwrap();
        let h = 3f64.ln() / 2.0;
        assert!((f[0] + h).abs() < 1e-15 && (f[1] - h).abs() < 1e-15);
        let p = clf.predict_proba(&[5.0]);
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!(matches!(
            clf.centered_logits(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn centering_identity_random() {
        let mut rng = rng_stream(3, 0, 0);
        for _ in 0..50 {
            let w = Array2::from_shape_fn((4, 3), |_| rng.random_range(-3.0..3.0));
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cal = CalibrationTransform {
                kind: CalibrationKind::Vs,
                temperature: 1.0,
                scale: (0..4).map(|_| rng.random_range(0.2..2.0)).collect(),
                bias: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let clf = ProbClassifier::from_parameters(w, b).unwrap().with_calibration(cal).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = clf.centered_logits(&x).unwrap();
            assert!(f.iter().sum::<f64>().abs() < 1e-12);
            let p1 = softmax(&f).unwrap();
            let p2 = clf.predict_proba(&x);
            for (a, b) in p1.iter().zip(&p2) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    /// Holdout whose labels are drawn from softmax(scale_true · x); the
    /// classifier reports logits `x` directly.
    fn logit_holdout(n: usize, scale_true: f64, seed: u64) -> LabeledDataset {
        let mut rng = rng_stream(seed, 0, 0);
        let k = 3;
        let mut feats = Array2::zeros((n, k));
        let mut labels = Vec::new();
        for i in 0..n {
            let z: Vec<f64> = (0..k).map(|_| 2.0 * { let v: f64 = StandardNormal.sample(&mut rng); v }).collect();
            let p = softmax(&z.iter().map(|v| v * scale_true).collect::<Vec<_>>()).unwrap();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = k - 1;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    y = j;
                    break;
                }
            }
            for j in 0..k {
                feats[[i, j]] = z[j];
            }
            labels.push(y);
        }
        LabeledDataset::new(feats, labels, None, k).unwrap()
    }

    fn identity_logits(k: usize) -> ProbClassifier {
        ProbClassifier::from_parameters(Array2::eye(k), vec![0.0; k]).unwrap()
    }

    #[test]
    fn temperature_recovers_one_when_calibrated() {
        let hold = logit_holdout(5000, 1.0, 21);
        let (cal, rep) = calibrate(&identity_logits(3), &hold, CalibrationKind::Ts).unwrap();
        let t = cal.calibration().temperature;
        assert!((0.9..=1.1).contains(&t), "T = {t}");
        assert!(rep.nll_after <= rep.nll_before + 1e-9);
    }

    #[test]
    fn temperature_recovers_overconfidence() {
        // classifier logits are 5x the true logits
        let hold = logit_holdout(5000, 0.2, 22);
        let (cal, rep) = calibrate(&identity_logits(3), &hold, CalibrationKind::Ts).unwrap();
        let t = cal.calibration().temperature;
        assert!((4.0..=6.0).contains(&t), "T = {t}");
        assert!(rep.nll_after < rep.nll_before);
        // argmax never changes under a positive temperature
        for i in 0..200 {
            let x = hold.row(i).to_vec();
            assert_eq!(cal.predict(&x), identity_logits(3).predict(&x));
        }
    }

    #[test]
    fn every_kind_never_hurts_holdout_nll() {
        let hold = logit_holdout(800, 0.5, 23);
        for kind in [CalibrationKind::None, CalibrationKind::Ts, CalibrationKind::Bcts, CalibrationKind::Vs] {
            let (cal, rep) = calibrate(&identity_logits(3), &hold, kind).unwrap();
            assert!(rep.nll_after <= rep.nll_before + 1e-9, "{kind}: {rep:?}");
            assert_eq!(cal.calibration().kind, kind);
        }
        let (same, _) = calibrate(&identity_logits(3), &hold, CalibrationKind::None).unwrap();
        assert_eq!(same, identity_logits(3));
    }

    #[test]
    fn single_class_holdout_is_flagged() {
        let hold = LabeledDataset::new(array![[1.0, 0.0], [2.0, 0.5]], vec![1, 1], None, 2).unwrap();
        let (_, rep) = calibrate(&identity_logits(2), &hold, CalibrationKind::Ts).unwrap();
        assert!(rep.single_class);
    }

    #[test]
    fn json_round_trip() {
        let clf = ProbClassifier::new(array![[1.0, -2.5], [0.125, 3.0]], vec![0.5, -0.5], Penalty::L1, 10.0)
            .unwrap()
            .with_calibration(CalibrationTransform {
                kind: CalibrationKind::Bcts,
                temperature: 1.7,
                scale: vec![],
                bias: vec![0.1, -0.1],
            })
            .unwrap();
        let s = clf.to_json().unwrap();
        assert!(s.contains("\"W\"") && s.contains("\"penalty\": \"l1\""));
        assert_eq!(ProbClassifier::from_json(&s).unwrap(), clf);
    }
}
