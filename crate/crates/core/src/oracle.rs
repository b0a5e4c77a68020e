//! Exact tilt solutions on finite sample spaces.
//!
//! A [`DiscreteShiftSpec`] lists atoms, the source joint `p(atom, class)` and
//! the target feature marginal `q_X`. [`oracle_solve`] minimizes the exact
//! KL divergence between `q_X` and the normalized tilted mixture
//! `Σ_k p(x, k) exp(θ_k·T(x) + α_k)` from many starting points and returns
//! every distinct optimum, so non-identifiable specs surface as several
//! optima with equal KL. [`check_anchor_sets`] reports the anchor atoms of
//! each class and whether they span the affine parameter space.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::{LabeledDataset, SufficientStatistic};
use crate::error::{Error, Result};
use crate::numerics::{dot, lse_unchecked, rng_stream};
use crate::synth::SyntheticDraw;
use crate::tilt::TiltModel;

/// Largest number of (atom, class) cells accepted by the oracle.
pub const MAX_CELLS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteShiftSpec {
    pub atoms: Vec<Vec<f64>>,
    /// `source_joint[i][k] = p(atom_i, k)`.
    pub source_joint: Vec<Vec<f64>>,
    pub target_marginal: Vec<f64>,
    #[serde(default)]
    pub statistic: SufficientStatistic,
    /// Tilt the target was built from, when known.
    #[serde(default)]
    pub true_theta: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub true_alpha: Option<Vec<f64>>,
}

impl DiscreteShiftSpec {
    /// Builds the target by tilting `source_joint`; `alpha` is shifted by a
    /// common constant so the target joint sums to one.
    pub fn from_tilt(
        atoms: Vec<Vec<f64>>,
        source_joint: Vec<Vec<f64>>,
        statistic: SufficientStatistic,
        theta: Vec<Vec<f64>>,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        let mut spec = DiscreteShiftSpec {
            target_marginal: vec![0.0; atoms.len()],
            atoms,
            source_joint,
            statistic,
            true_theta: Some(theta),
            true_alpha: Some(alpha),
        };
        spec.check_shapes()?;
        let q = spec.tilted_joint(spec.true_theta.as_ref().unwrap(), spec.true_alpha.as_ref().unwrap());
        let log_z = q.iter().flatten().sum::<f64>().ln();
        for a in spec.true_alpha.as_mut().unwrap() {
            *a -= log_z;
        }
        let q = spec.tilted_joint(spec.true_theta.as_ref().unwrap(), spec.true_alpha.as_ref().unwrap());
        spec.target_marginal = q.iter().map(|row| row.iter().sum()).collect();
        spec.validate()?;
        Ok(spec)
    }

    pub fn classes(&self) -> usize {
        self.source_joint.first().map_or(0, Vec::len)
    }

    pub fn input_dim(&self) -> usize {
        self.atoms.first().map_or(0, Vec::len)
    }

    /// Dimension `d` of `T(x)`.
    pub fn stat_dim(&self) -> usize {
        self.statistic.output_dim(self.input_dim())
    }

    fn check_shapes(&self) -> Result<()> {
        let m = self.atoms.len();
        let k = self.classes();
        if m == 0 || k == 0 {
            return Err(Error::EmptyInput);
        }
        if m * k > MAX_CELLS {
            return Err(Error::Config(format!("{m} atoms x {k} classes exceeds {MAX_CELLS} cells")));
        }
        let p = self.input_dim();
        if self.atoms.iter().any(|a| a.len() != p) {
            return Err(Error::schema("atoms must share one dimension"));
        }
        if self.source_joint.len() != m || self.source_joint.iter().any(|r| r.len() != k) {
            return Err(Error::schema("source joint must be atoms x classes"));
        }
        if self.target_marginal.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: self.target_marginal.len(),
            });
        }
        for i in 0..m {
            for j in i + 1..m {
                if self.atoms[i] == self.atoms[j] {
                    return Err(Error::schema(format!("atoms {i} and {j} coincide")));
                }
            }
        }
        self.statistic.validate(Some(p))
    }

    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        let p_total: f64 = self.source_joint.iter().flatten().sum();
        if self.source_joint.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) || (p_total - 1.0).abs() > 1e-9 {
            return Err(Error::schema("source joint must be a probability table"));
        }
        let q_total: f64 = self.target_marginal.iter().sum();
        if self.target_marginal.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (q_total - 1.0).abs() > 1e-9 {
            return Err(Error::schema("target marginal must be a probability vector"));
        }
        Ok(())
    }

    pub fn source_marginal(&self) -> Vec<f64> {
        self.source_joint.iter().map(|r| r.iter().sum()).collect()
    }

    fn stats(&self) -> Vec<Vec<f64>> {
        self.atoms.iter().map(|a| self.statistic.apply(a)).collect()
    }

    /// `p(x, k) exp(θ_k·T(x) + α_k)` per cell.
    pub fn tilted_joint(&self, theta: &[Vec<f64>], alpha: &[f64]) -> Vec<Vec<f64>> {
        self.stats()
            .iter()
            .zip(&self.source_joint)
            .map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, &p)| if p > 0.0 { p * (dot(&theta[k], t) + alpha[k]).exp() } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Target joint implied by the true tilt.
    pub fn target_joint(&self) -> Option<Vec<Vec<f64>>> {
        Some(self.tilted_joint(self.true_theta.as_ref()?, self.true_alpha.as_ref()?))
    }

    pub fn truth(&self) -> Option<TiltModel> {
        Some(TiltModel::exact(
            self.statistic.clone(),
            self.true_theta.clone()?,
            self.true_alpha.clone()?,
        ))
    }

    /// KL divergence of the normalized tilted mixture from `q_X`.
    pub fn kl(&self, theta: &[Vec<f64>], alpha: &[f64]) -> f64 {
        let m: Vec<f64> = self.tilted_joint(theta, alpha).iter().map(|r| r.iter().sum()).collect();
        let total: f64 = m.iter().sum();
        self.target_marginal
            .iter()
            .zip(&m)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, mi)| q * (q / (mi / total)).ln())
            .sum()
    }

    /// `E_P |ω_a(X, Y) − ω_b(X, Y)|` computed exactly over the cells.
    pub fn weight_l1(&self, a: &TiltModel, b: &TiltModel) -> f64 {
        let mut total = 0.0;
        for (atom, row) in self.atoms.iter().zip(&self.source_joint) {
            for (k, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    total += p * (a.weight(atom, k) - b.weight(atom, k)).abs();
                }
            }
        }
        total
    }

    /// `E_P[g(X, Y) ω(X, Y)]` computed exactly over the cells.
    pub fn source_expectation(&self, w: &TiltModel, g: impl Fn(&[f64], usize) -> f64) -> f64 {
        let mut total = 0.0;
        for (atom, row) in self.atoms.iter().zip(&self.source_joint) {
            for (k, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    total += p * w.weight(atom, k) * g(atom, k);
                }
            }
        }
        total
    }

    /// Draws `n_p` labeled source and `n_q` target points; needs the true tilt
    /// for the target labels.
    pub fn sample(&self, n_p: usize, n_q: usize, seed: u64) -> Result<SyntheticDraw> {
        self.validate()?;
        let q_joint = self
            .target_joint()
            .ok_or_else(|| Error::Config("sampling needs the true tilt".into()))?;
        let k = self.classes();
        let draw = |joint: &[Vec<f64>], n: usize, stream: u32| -> Result<LabeledDataset> {
            let cells: Vec<f64> = joint.iter().flatten().copied().collect();
            let dist = WeightedIndex::new(&cells).map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = rng_stream(seed, stream, 0);
            let p = self.input_dim();
            let mut x = ndarray::Array2::zeros((n, p));
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = dist.sample(&mut rng);
                for (j, v) in self.atoms[c / k].iter().enumerate() {
                    x[[i, j]] = *v;
                }
                labels.push(c % k);
            }
            LabeledDataset::new(x, labels, None, k)
        };
        let source = draw(&self.source_joint, n_p, 0)?;
        let target_labeled = draw(&q_joint, n_q, 1)?;
        Ok(SyntheticDraw {
            source,
            target: target_labeled.to_unlabeled(),
            target_labeled,
            truth: self.truth(),
        })
    }

    /// Exact source posterior as a classifier.
    pub fn posterior(&self) -> TablePosterior {
        TablePosterior::new(self)
    }
}

fn atom_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Exact `η_k(x) = p(x, k) / p_X(x)` looked up by atom. Points that are not
/// atoms get the source class prior.
#[derive(Debug, Clone)]
pub struct TablePosterior {
    dim: usize,
    classes: usize,
    table: HashMap<Vec<u64>, Vec<f64>>,
    prior: Vec<f64>,
}

impl TablePosterior {
    pub fn new(spec: &DiscreteShiftSpec) -> Self {
        let k = spec.classes();
        let mut prior = vec![0.0; k];
        let mut table = HashMap::new();
        for (atom, row) in spec.atoms.iter().zip(&spec.source_joint) {
            let total: f64 = row.iter().sum();
            row.iter().enumerate().for_each(|(c, &v)| prior[c] += v);
            if total > 0.0 {
                table.insert(atom_key(atom), row.iter().map(|v| (v / total).ln()).collect());
            }
        }
        TablePosterior {
            dim: spec.input_dim(),
            classes: k,
            table,
            prior: prior.iter().map(|v| v.ln()).collect(),
        }
    }
}

impl Classifier for TablePosterior {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn log_proba(&self, x: &[f64]) -> Vec<f64> {
        self.table.get(&atom_key(x)).unwrap_or(&self.prior).clone()
    }
}

/// Anchor atoms of one class and the rank of their rows `(1, T(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub class: usize,
    pub anchors: Vec<usize>,
    pub rank: usize,
    /// Rank equals `d + 1`.
    pub spans: bool,
}

pub fn check_anchor_sets(spec: &DiscreteShiftSpec) -> Result<Vec<AnchorReport>> {
    spec.validate()?;
    let stats = spec.stats();
    let d = spec.stat_dim();
    let k = spec.classes();
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let anchors: Vec<usize> = (0..spec.atoms.len())
            .filter(|&i| {
                let row = &spec.source_joint[i];
                row[c] > 0.0 && row.iter().enumerate().all(|(l, &v)| l == c || v == 0.0)
            })
            .collect();
        let rank = if anchors.is_empty() {
            0
        } else {
            let m = DMatrix::from_fn(anchors.len(), d + 1, |r, j| if j == 0 { 1.0 } else { stats[anchors[r]][j - 1] });
            let sv = m.singular_values();
            let top = sv.max();
            sv.iter().filter(|&&s| s > 1e-9 * top.max(1.0)).count()
        };
        out.push(AnchorReport {
            class: c,
            spans: rank == d + 1,
            anchors,
            rank,
        });
    }
    Ok(out)
}

/// One distinct optimum of the exact problem, gauge-fixed so the tilted
/// source joint sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptimum {
    pub theta: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub kl: f64,
    /// Restarts that converged to this optimum.
    pub hits: usize,
}

impl OracleOptimum {
    pub fn model(&self, stat: &SufficientStatistic) -> TiltModel {
        TiltModel::exact(stat.clone(), self.theta.clone(), self.alpha.clone())
    }

    /// Stacked `(α_k, θ_k)` per class.
    pub fn stacked(&self) -> Vec<f64> {
        self.model(&SufficientStatistic::Identity).stacked()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub restarts: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Optima closer than this (Euclidean, gauge-fixed) are merged.
    pub dedup_distance: f64,
    /// Smallest KL still considered an exact fit.
    pub feasibility_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            restarts: 50,
            init_scale: 2.0,
            seed: 0,
            max_iter: 500,
            grad_tol: 1e-11,
            dedup_distance: 1e-3,
            feasibility_tol: 1e-8,
        }
    }
}

/// Affine rows `(log p(x, k), a_xk)` with `a_xk·ξ = θ_k·T(x) + β_k` for the
/// stacked `(β_k, θ_k)` layout.
struct Cells {
    dim: usize,
    /// Per atom: list of (class, log p).
    atoms: Vec<Vec<(usize, f64)>>,
    stats: Vec<Vec<f64>>,
    q: Vec<f64>,
    stride: usize,
}

impl Cells {
    fn new(spec: &DiscreteShiftSpec) -> Self {
        let stride = spec.stat_dim() + 1;
        Cells {
            dim: spec.classes() * stride,
            atoms: spec
                .source_joint
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(k, &p)| (k, p.ln()))
                        .collect()
                })
                .collect(),
            stats: spec.stats(),
            q: spec.target_marginal.clone(),
            stride,
        }
    }

    fn exponent(&self, xi: &[f64], atom: usize, k: usize) -> f64 {
        let base = k * self.stride;
        xi[base] + dot(&xi[base + 1..base + self.stride], &self.stats[atom])
    }

    fn add_row(&self, v: &mut DVector<f64>, atom: usize, k: usize, coef: f64) {
        let base = k * self.stride;
        v[base] += coef;
        for (j, t) in self.stats[atom].iter().enumerate() {
            v[base + 1 + j] += coef * t;
        }
    }

    /// LSE over a set of cells with value, gradient and Hessian accumulated
    /// with multiplier `coef`.
    fn lse_terms(
        &self,
        xi: &[f64],
        cells: &[(usize, usize, f64)],
        coef: f64,
        grad: &mut DVector<f64>,
        hess: Option<&mut DMatrix<f64>>,
    ) -> f64 {
        let vals: Vec<f64> = cells.iter().map(|&(a, k, lp)| lp + self.exponent(xi, a, k)).collect();
        let lse = lse_unchecked(&vals);
        let mut mean = DVector::zeros(self.dim);
        let probs: Vec<f64> = vals.iter().map(|v| (v - lse).exp()).collect();
        for (&(a, k, _), &pi) in cells.iter().zip(&probs) {
            self.add_row(&mut mean, a, k, pi);
        }
        grad.axpy(coef, &mean, 1.0);
        if let Some(h) = hess {
            // covariance of the rows under the softmax weights
            for (&(a, k, _), &pi) in cells.iter().zip(&probs) {
                let mut r = DVector::zeros(self.dim);
                self.add_row(&mut r, a, k, 1.0);
                r -= &mean;
                h.ger(coef * pi, &r, &r, 1.0);
            }
        }
        lse
    }

    /// `f(ξ) = −Σ_x q(x) log m_ξ(x) + log Σ_x m_ξ(x)`.
    fn evaluate(&self, xi: &[f64], want_hess: bool) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
        let mut grad = DVector::zeros(self.dim);
        let mut hess = want_hess.then(|| DMatrix::zeros(self.dim, self.dim));
        let mut f = 0.0;
        let mut all = Vec::new();
        for (a, cells) in self.atoms.iter().enumerate() {
            let cells: Vec<(usize, usize, f64)> = cells.iter().map(|&(k, lp)| (a, k, lp)).collect();
            if self.q[a] > 0.0 {
                f -= self.q[a] * self.lse_terms(xi, &cells, -self.q[a], &mut grad, hess.as_mut());
            }
            all.extend(cells);
        }
        f += self.lse_terms(xi, &all, 1.0, &mut grad, hess.as_mut());
        (f, grad, hess)
    }

    fn value(&self, xi: &[f64]) -> f64 {
        self.evaluate(xi, false).0
    }

    fn log_normalizer(&self, xi: &[f64]) -> f64 {
        let vals: Vec<f64> = self
            .atoms
            .iter()
            .enumerate()
            .flat_map(|(a, cells)| cells.iter().map(move |&(k, lp)| (a, k, lp)))
            .map(|(a, k, lp)| lp + self.exponent(xi, a, k))
            .collect();
        lse_unchecked(&vals)
    }

    fn fix_gauge(&self, xi: &mut [f64]) {
        let log_m = self.log_normalizer(xi);
        for k in 0..self.dim / self.stride {
            xi[k * self.stride] -= log_m;
        }
    }
}

struct Descent {
    xi: Vec<f64>,
    converged: bool,
}

fn newton(cells: &Cells, mut xi: Vec<f64>, cfg: &OracleConfig) -> Descent {
    let n = cells.dim;
    cells.fix_gauge(&mut xi);
    for _ in 0..cfg.max_iter {
        let (f, g, h) = cells.evaluate(&xi, true);
        if g.amax() <= cfg.grad_tol {
            return Descent { xi, converged: true };
        }
        let h = h.expect("hessian requested");
        let mut shift = 1e-10 * (1.0 + h.diagonal().amax());
        let direction = loop {
            let mut m = h.clone();
            for i in 0..n {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break -ch.solve(&g);
            }
            shift *= 10.0;
        };
        let slope = g.dot(&direction);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = xi.iter().zip(direction.iter()).map(|(x, d)| x + t * d).collect();
            let ft = cells.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * t * slope {
                xi = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        cells.fix_gauge(&mut xi);
        if !accepted {
            // no further decrease representable in floating point
            let (_, g, _) = cells.evaluate(&xi, false);
            return Descent {
                converged: g.amax() <= cfg.grad_tol.sqrt(),
                xi,
            };
        }
    }
    let (_, g, _) = cells.evaluate(&xi, false);
    Descent {
        converged: g.amax() <= cfg.grad_tol,
        xi,
    }
}

fn unstack(xi: &[f64], classes: usize, stride: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let theta = (0..classes).map(|k| xi[k * stride + 1..(k + 1) * stride].to_vec()).collect();
    let alpha = (0..classes).map(|k| xi[k * stride]).collect();
    (theta, alpha)
}

/// All distinct optima found from `cfg.restarts` starts, sorted by KL.
/// Restart 0 starts at the origin; the rest are Gaussian with scale
/// `cfg.init_scale`.
pub fn oracle_solve(spec: &DiscreteShiftSpec, cfg: &OracleConfig) -> Result<Vec<OracleOptimum>> {
    spec.validate()?;
    let p_x = spec.source_marginal();
    if spec.target_marginal.iter().zip(&p_x).any(|(&q, &p)| q > 0.0 && p == 0.0) {
        return Err(Error::InfeasibleSpec {
            residual_kl: f64::INFINITY,
        });
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("need at least one restart".into()));
    }
    let cells = Cells::new(spec);
    let k = spec.classes();
    let normal = Normal::new(0.0, cfg.init_scale).map_err(|e| Error::Config(e.to_string()))?;
    let runs: Vec<Descent> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let xi = if r == 0 {
                vec![0.0; cells.dim]
            } else {
                let mut rng = rng_stream(cfg.seed, r as u32, 0);
                (0..cells.dim).map(|_| normal.sample(&mut rng)).collect()
            };
            newton(&cells, xi, cfg)
        })
        .collect();

    let mut optima: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    let mut best_unconverged: Option<(Vec<f64>, f64)> = None;
    for run in runs {
        let (theta, alpha) = unstack(&run.xi, k, cells.stride);
        let kl = spec.kl(&theta, &alpha);
        if !run.converged {
            if best_unconverged.as_ref().is_none_or(|(_, b)| kl < *b) {
                best_unconverged = Some((run.xi, kl));
            }
            continue;
        }
        let found = optima.iter_mut().find(|(xi, _, _)| {
            xi.iter().zip(&run.xi).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < cfg.dedup_distance
        });
        match found {
            Some(entry) => {
                entry.2 += 1;
                if kl < entry.1 {
                    entry.0 = run.xi;
                    entry.1 = kl;
                }
            }
            None => optima.push((run.xi, kl, 1)),
        }
    }
    if optima.is_empty() {
        if let Some((xi, kl)) = best_unconverged {
            optima.push((xi, kl, 1));
        }
    }
    optima.sort_by(|a, b| a.1.total_cmp(&b.1));
    let best_kl = optima[0].1;
    if best_kl > cfg.feasibility_tol {
        return Err(Error::InfeasibleSpec { residual_kl: best_kl });
    }
    Ok(optima
        .into_iter()
        .map(|(xi, kl, hits)| {
            let (theta, alpha) = unstack(&xi, k, cells.stride);
            OracleOptimum { theta, alpha, kl, hits }
        })
        .collect())
}

/// Serializable summary of an oracle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub optima: Vec<OracleOptimum>,
    pub kl: Vec<f64>,
    pub anchored: Vec<AnchorReport>,
}

impl OracleReport {
    pub fn run(spec: &DiscreteShiftSpec, cfg: &OracleConfig) -> Result<Self> {
        let optima = oracle_solve(spec, cfg)?;
        Ok(OracleReport {
            kl: optima.iter().map(|o| o.kl).collect(),
            anchored: check_anchor_sets(spec)?,
            optima,
        })
    }
}

fn normalize(mut joint: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let total: f64 = joint.iter().flatten().sum();
    joint.iter_mut().flatten().for_each(|v| *v /= total);
    joint
}

/// Five small anchored specs with known tilts (K ∈ {2, 3}, at most 10 atoms).
/// Each class owns several well-separated anchor atoms centred on the origin,
/// so slopes and intercepts are estimated with small, nearly independent errors.
pub fn anchored_specs() -> Vec<DiscreteShiftSpec> {
    // 1-D: class 0 anchored at {-3, 0, 3}, class 1 at {-2, 2}, both classes on {-1, 1}
    let atoms_1d: Vec<Vec<f64>> = (-3..=3).map(|i| vec![f64::from(i)]).collect();
    let joint_1d = |c0: [f64; 3], c1: [f64; 2], shared: f64| {
        normalize(
            (-3..=3)
                .map(|i: i32| match i {
                    -3 => vec![c0[0], 0.0],
                    0 => vec![c0[1], 0.0],
                    3 => vec![c0[2], 0.0],
                    -2 => vec![0.0, c1[0]],
                    2 => vec![0.0, c1[1]],
                    _ => vec![shared, shared],
                })
                .collect(),
        )
    };
    let mut specs = vec![
        DiscreteShiftSpec::from_tilt(
            atoms_1d.clone(),
            joint_1d([1.0, 1.0, 1.0], [1.0, 1.0], 0.5),
            SufficientStatistic::Identity,
            vec![vec![0.3], vec![-0.25]],
            vec![0.0, 0.2],
        )
        .expect("valid spec"),
        DiscreteShiftSpec::from_tilt(
            atoms_1d.clone(),
            joint_1d([1.5, 1.0, 0.8], [1.2, 1.0], 0.4),
            SufficientStatistic::Identity,
            vec![vec![-0.2], vec![0.15]],
            vec![0.1, -0.3],
        )
        .expect("valid spec"),
        DiscreteShiftSpec::from_tilt(
            atoms_1d,
            joint_1d([0.8, 1.2, 1.0], [1.0, 1.5], 0.6),
            SufficientStatistic::Identity,
            vec![vec![0.1], vec![0.35]],
            vec![-0.2, 0.0],
        )
        .expect("valid spec"),
    ];

    // 2-D, K = 3: each class owns a triangle of anchors of radius 2.5
    // (rotated by 40 degrees per class) and all classes share the origin.
    let mut atoms_2d = Vec::with_capacity(10);
    let mut owner = Vec::with_capacity(10);
    for k in 0..3 {
        for j in 0..3 {
            let angle = (40.0 * k as f64 + 120.0 * j as f64).to_radians();
            atoms_2d.push(vec![2.5 * angle.cos(), 2.5 * angle.sin()]);
            owner.push(Some(k));
        }
    }
    atoms_2d.push(vec![0.0, 0.0]);
    owner.push(None);
    let joint_2d = |mass: [f64; 3], shared: f64| {
        normalize(
            owner
                .iter()
                .map(|o| match o {
                    Some(k) => (0..3).map(|c| if c == *k { mass[c] } else { 0.0 }).collect(),
                    None => vec![shared; 3],
                })
                .collect(),
        )
    };
    specs.push(
        DiscreteShiftSpec::from_tilt(
            atoms_2d.clone(),
            joint_2d([1.0, 1.0, 1.0], 0.5),
            SufficientStatistic::Identity,
            vec![vec![0.25, -0.1], vec![-0.2, 0.2], vec![0.0, 0.3]],
            vec![0.0, 0.1, -0.1],
        )
        .expect("valid spec"),
    );
    specs.push(
        DiscreteShiftSpec::from_tilt(
            atoms_2d,
            joint_2d([1.3, 1.0, 0.8], 0.4),
            SufficientStatistic::Identity,
            vec![vec![-0.3, 0.05], vec![0.1, 0.15], vec![0.2, -0.25]],
            vec![0.2, 0.0, -0.2],
        )
        .expect("valid spec"),
    );
    specs
}

/// Discretized Gaussian label-switching pair: two classes with equal priors
/// and overlapping unit-variance kernels on a symmetric 1-D grid, so no atom
/// is an anchor. Ratios of such kernels are exponential-linear, hence the
/// target is reproduced both by the true tilt and by the tilt that sends
/// each class onto the other's target component.
pub fn permutation_twin_spec() -> DiscreteShiftSpec {
    let atoms: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
    let means = [-0.75, 0.75];
    let joint = normalize(
        atoms
            .iter()
            .map(|a| means.iter().map(|m| (-(a[0] - m) * (a[0] - m) / 2.0).exp()).collect())
            .collect(),
    );
    DiscreteShiftSpec::from_tilt(
        atoms,
        joint,
        SufficientStatistic::Identity,
        vec![vec![-0.5], vec![1.0]],
        vec![0.0, 0.0],
    )
    .expect("valid spec")
}

/// Class 0 is anchored on two atoms; class 1 lives on a single atom, so its
/// slope and intercept are only determined through `θ_1·x + α_1`.
pub fn rank_deficient_spec() -> DiscreteShiftSpec {
    let atoms = vec![vec![-1.0], vec![0.0], vec![1.0]];
    let joint = normalize(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    DiscreteShiftSpec::from_tilt(
        atoms,
        joint,
        SufficientStatistic::Identity,
        vec![vec![0.5], vec![0.3]],
        vec![0.0, 0.4],
    )
    .expect("valid spec")
}
