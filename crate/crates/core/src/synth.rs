//! Synthetic shift generators with known ground truth.
//!
//! * [`GaussianLdaSpec`]: shared-covariance Gaussian class conditionals whose
//!   means drift between domains. The tilt is exactly linear in `x`.
//! * [`GroupShiftSpec`]: Gaussian blob per group, source and target differ only
//!   in group proportions (subpopulation shift). Presets mimic Waterbirds and a
//!   Breeds-style disjoint-subgroup task.
//!
//! Every generator returns the labeled target draw separately from the
//! unlabeled target features; only evaluation code should touch it.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::{Penalty, ProbClassifier};
use crate::data::{LabeledDataset, SufficientStatistic, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{dot, rng_stream};
use crate::tilt::TiltModel;

/// Output of a generator.
#[derive(Debug, Clone)]
pub struct SyntheticDraw {
    pub source: LabeledDataset,
    pub target: UnlabeledDataset,
    /// Labels (and groups) of the target draw, for evaluation only.
    pub target_labeled: LabeledDataset,
    /// Ground-truth tilt when the generator has one in closed form.
    pub truth: Option<TiltModel>,
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config(format!("{what} must be non-negative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} must sum to 1, got {s}")));
    }
    Ok(())
}

fn gaussian_row(rng: &mut impl Rng, mean: &[f64], sd: f64, out: &mut [f64]) {
    for (o, m) in out.iter_mut().zip(mean) {
        let e: f64 = StandardNormal.sample(rng);
        *o = m + sd * e;
    }
}

/// Shared-identity-covariance Gaussian classes with drifting means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLdaSpec {
    pub priors: Vec<f64>,
    pub source_means: Vec<Vec<f64>>,
    pub target_means: Vec<Vec<f64>>,
}

impl GaussianLdaSpec {
    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.priors, "priors")?;
        if self.priors.contains(&0.0) {
            return Err(Error::Config("priors must be positive".into()));
        }
        let k = self.priors.len();
        if k < 2 || self.source_means.len() != k || self.target_means.len() != k {
            return Err(Error::Config("need one source and one target mean per class (K >= 2)".into()));
        }
        let p = self.dim();
        if p == 0 || self.source_means.iter().chain(&self.target_means).any(|m| m.len() != p) {
            return Err(Error::Config("means must share a positive dimension".into()));
        }
        Ok(())
    }

    /// Two classes in two dimensions with unequal priors (0.3, 0.7); the
    /// target moves both class means by half a unit in different directions.
    pub fn mean_drift() -> Self {
        GaussianLdaSpec {
            priors: vec![0.3, 0.7],
            source_means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            target_means: vec![vec![-1.0, 0.5], vec![1.5, 0.0]],
        }
    }

    pub fn classes(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.source_means.first().map_or(0, Vec::len)
    }

    /// `θ_k = μ_Q,k − μ_P,k`, `α_k = (‖μ_P,k‖² − ‖μ_Q,k‖²)/2` with `T(x) = x`.
    pub fn true_tilt(&self) -> TiltModel {
        let theta = self
            .source_means
            .iter()
            .zip(&self.target_means)
            .map(|(p, q)| q.iter().zip(p).map(|(a, b)| a - b).collect())
            .collect();
        let alpha = self
            .source_means
            .iter()
            .zip(&self.target_means)
            .map(|(p, q)| 0.5 * (dot(p, p) - dot(q, q)))
            .collect();
        TiltModel::exact(SufficientStatistic::Identity, theta, alpha)
    }

    /// Bayes posterior of the source domain, exactly a multinomial logistic model.
    pub fn source_bayes_classifier(&self) -> ProbClassifier {
        Self::bayes(&self.priors, &self.source_means)
    }

    pub fn target_bayes_classifier(&self) -> ProbClassifier {
        Self::bayes(&self.priors, &self.target_means)
    }

    fn bayes(priors: &[f64], means: &[Vec<f64>]) -> ProbClassifier {
        let k = priors.len();
        let p = means[0].len();
        let w = Array2::from_shape_fn((k, p), |(r, c)| means[r][c]);
        let b = priors
            .iter()
            .zip(means)
            .map(|(pi, m)| pi.ln() - 0.5 * dot(m, m))
            .collect();
        ProbClassifier::new(w, b, Penalty::L2, 0.0).expect("valid shapes")
    }

    /// Swaps the target means of classes `a` and `b`. With equal priors of
    /// the two classes the target feature marginal is unchanged while the
    /// tilt parameters differ.
    pub fn label_switch_twin(&self, a: usize, b: usize) -> GaussianLdaSpec {
        let mut twin = self.clone();
        twin.target_means.swap(a, b);
        twin
    }
}

fn sample_classes(rng: &mut impl Rng, priors: &[f64], n: usize) -> Vec<usize> {
    let dist = WeightedIndex::new(priors).expect("validated priors");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Draws `n_p` source and `n_q` target samples from an LDA spec.
pub fn gen_lda(spec: &GaussianLdaSpec, n_p: usize, n_q: usize, seed: u64) -> Result<SyntheticDraw> {
    spec.validate()?;
    if n_p == 0 || n_q == 0 {
        return Err(Error::EmptyInput);
    }
    let k = spec.classes();
    let p = spec.dim();
    let draw = |means: &[Vec<f64>], n: usize, stream: u32| {
        let mut rng = rng_stream(seed, stream, 0);
        let labels = sample_classes(&mut rng, &spec.priors, n);
        let mut x = Array2::zeros((n, p));
        for (i, &y) in labels.iter().enumerate() {
            gaussian_row(&mut rng, &means[y], 1.0, x.row_mut(i).as_slice_mut().expect("row-major"));
        }
        LabeledDataset::new(x, labels, None, k)
    };
    let source = draw(&spec.source_means, n_p, 0)?;
    let target_labeled = draw(&spec.target_means, n_q, 1)?;
    Ok(SyntheticDraw {
        source,
        target: target_labeled.to_unlabeled(),
        target_labeled,
        truth: Some(spec.true_tilt()),
    })
}

/// Gaussian blob per group; groups map onto classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShiftSpec {
    pub group_means: Vec<Vec<f64>>,
    pub group_to_class: Vec<usize>,
    pub src_props: Vec<f64>,
    pub tgt_props: Vec<f64>,
    pub noise_sd: f64,
}

/// Waterbirds training group counts {0: 3498, 1: 184, 2: 56, 3: 1057}.
pub const WATERBIRDS_SOURCE_COUNTS: [f64; 4] = [3498.0, 184.0, 56.0, 1057.0];
/// Waterbirds test counts of groups 1 and 2 (3187 and 908).
pub const WATERBIRDS_MINORITY_TEST_COUNTS: [f64; 2] = [3187.0, 908.0];

impl GroupShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let g = self.group_means.len();
        if g == 0 || self.group_to_class.len() != g || self.src_props.len() != g || self.tgt_props.len() != g {
            return Err(Error::Config("group means, class map and proportions must have equal length".into()));
        }
        let p = self.dim();
        if p == 0 || self.group_means.iter().any(|m| m.len() != p) {
            return Err(Error::Config("group means must share a positive dimension".into()));
        }
        check_simplex(&self.src_props, "source proportions")?;
        check_simplex(&self.tgt_props, "target proportions")?;
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise sd must be positive".into()));
        }
        let k = self.classes();
        if k < 2 || (0..k).any(|c| !self.group_to_class.contains(&c)) {
            return Err(Error::Config("groups must cover at least two classes 0..K".into()));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.group_means.len()
    }

    pub fn classes(&self) -> usize {
        self.group_to_class.iter().max().map_or(0, |m| m + 1)
    }

    pub fn dim(&self) -> usize {
        self.group_means.first().map_or(0, Vec::len)
    }

    /// Four groups (landbird/land, landbird/water, waterbird/land,
    /// waterbird/water) in `p = 8` dimensions: class signal on the first
    /// coordinate and an equally strong background signal on the second, unit
    /// noise elsewhere. Background and class agree in the majority groups, so a
    /// plain source fit leans on the background.
    /// Source proportions follow the Waterbirds training counts; the target
    /// holds only the two minority groups in the Waterbirds test ratio.
    pub fn waterbirds_analog() -> Self {
        let class_signal = 1.5;
        let background_signal = 1.5;
        let p = 8;
        let mean = |class: f64, bg: f64| {
            let mut m = vec![0.0; p];
            m[0] = class * class_signal;
            m[1] = bg * background_signal;
            m
        };
        let total: f64 = WATERBIRDS_SOURCE_COUNTS.iter().sum();
        let minority: f64 = WATERBIRDS_MINORITY_TEST_COUNTS.iter().sum();
        GroupShiftSpec {
            group_means: vec![mean(-1.0, -1.0), mean(-1.0, 1.0), mean(1.0, -1.0), mean(1.0, 1.0)],
            group_to_class: vec![0, 0, 1, 1],
            src_props: WATERBIRDS_SOURCE_COUNTS.iter().map(|c| c / total).collect(),
            tgt_props: vec![
                0.0,
                WATERBIRDS_MINORITY_TEST_COUNTS[0] / minority,
                WATERBIRDS_MINORITY_TEST_COUNTS[1] / minority,
                0.0,
            ],
            noise_sd: 1.0,
        }
    }

    /// Pure label shift: one group per class, class priors (0.5, 0.5) in the
    /// source and (0.2, 0.8) in the target, identical class conditionals.
    pub fn label_shift() -> Self {
        GroupShiftSpec {
            group_means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            group_to_class: vec![0, 1],
            src_props: vec![0.5, 0.5],
            tgt_props: vec![0.2, 0.8],
            noise_sd: 1.0,
        }
    }

    /// With one group per class and positive proportions the shift is a pure
    /// label shift and the tilt is `θ = 0`, `α_k = log(q_k / p_k)`.
    pub fn label_shift_tilt(&self) -> Option<TiltModel> {
        let k = self.classes();
        if self.groups() != k {
            return None;
        }
        let mut p = vec![0.0; k];
        let mut q = vec![0.0; k];
        for g in 0..k {
            p[self.group_to_class[g]] += self.src_props[g];
            q[self.group_to_class[g]] += self.tgt_props[g];
        }
        if p.iter().chain(&q).any(|&v| v <= 0.0) {
            return None;
        }
        let alpha = p.iter().zip(&q).map(|(a, b)| (b / a).ln()).collect();
        Some(TiltModel::exact(
            SufficientStatistic::Identity,
            vec![vec![0.0; self.dim()]; k],
            alpha,
        ))
    }

    /// Same groups with identical source and target proportions.
    pub fn waterbirds_no_shift() -> Self {
        let mut spec = Self::waterbirds_analog();
        spec.tgt_props = spec.src_props.clone();
        spec
    }

    /// Breeds-style task: `classes` classes with two subgroups each; the
    /// source holds only the first subgroup of every class and the target only
    /// the second. Subgroups of a class share a class direction and differ
    /// along a class-specific offset. Combine with
    /// [`crate::data::mix_target_into_source`] to create overlap.
    pub fn breeds_analog(classes: usize, dim: usize) -> Self {
        assert!(classes >= 2 && dim > classes, "need dim > classes");
        let mut group_means = Vec::new();
        let mut group_to_class = Vec::new();
        for c in 0..classes {
            for sub in 0..2 {
                let mut m = vec![0.0; dim];
                m[c] = 2.5;
                let offset_axis = classes + c % (dim - classes);
                m[offset_axis] = if sub == 0 { -1.5 } else { 1.5 };
                group_means.push(m);
                group_to_class.push(c);
            }
        }
        let half = 1.0 / classes as f64;
        let src_props = (0..2 * classes).map(|g| if g % 2 == 0 { half } else { 0.0 }).collect();
        let tgt_props = (0..2 * classes).map(|g| if g % 2 == 1 { half } else { 0.0 }).collect();
        GroupShiftSpec {
            group_means,
            group_to_class,
            src_props,
            tgt_props,
            noise_sd: 1.0,
        }
    }
}

/// Draws from a group-shift spec; group ids are attached to both labeled sets.
pub fn gen_group_shift(spec: &GroupShiftSpec, n_p: usize, n_q: usize, seed: u64) -> Result<SyntheticDraw> {
    spec.validate()?;
    if n_p == 0 || n_q == 0 {
        return Err(Error::EmptyInput);
    }
    let k = spec.classes();
    let p = spec.dim();
    let draw = |props: &[f64], n: usize, stream: u32| {
        let mut rng = rng_stream(seed, stream, 0);
        let groups = sample_classes(&mut rng, props, n);
        let mut x = Array2::zeros((n, p));
        for (i, &g) in groups.iter().enumerate() {
            gaussian_row(
                &mut rng,
                &spec.group_means[g],
                spec.noise_sd,
                x.row_mut(i).as_slice_mut().expect("row-major"),
            );
        }
        let labels = groups.iter().map(|&g| spec.group_to_class[g]).collect();
        LabeledDataset::new(x, labels, Some(groups), k)
    };
    let source = draw(&spec.src_props, n_p, 0)?;
    let target_labeled = draw(&spec.tgt_props, n_q, 1)?;
    Ok(SyntheticDraw {
        source,
        target: target_labeled.to_unlabeled(),
        target_labeled,
        truth: spec.label_shift_tilt(),
    })
}

/// Permutation two-sample test based on the energy distance.
///
/// Each sample is truncated to its first `max_per_sample` rows. In more than
/// one dimension the full pairwise distance matrix is kept in memory. Returns the permutation
/// p-value `(1 + #{stat_perm ≥ stat}) / (1 + permutations)`.
pub fn energy_test(
    a: &Array2<f64>,
    b: &Array2<f64>,
    permutations: usize,
    max_per_sample: usize,
    seed: u64,
) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    let na = a.nrows().min(max_per_sample);
    let nb = b.nrows().min(max_per_sample);
    if na < 2 || nb < 2 {
        return Err(Error::EmptyInput);
    }
    let n = na + nb;
    let (fa, fb) = (na as f64, nb as f64);
    let statistic: Box<dyn Fn(&[bool]) -> f64> = if a.ncols() == 1 {
        // one dimension: sum of |x_i - x_j| over ordered pairs of a subset
        // equals 2 Σ x_(r) (2r - m + 1) over its sorted values
        let mut values: Vec<(f64, usize)> = a
            .column(0)
            .iter()
            .take(na)
            .chain(b.column(0).iter().take(nb))
            .copied()
            .zip(0..n)
            .collect();
        values.sort_by(|x, y| x.0.total_cmp(&y.0));
        Box::new(move |member: &[bool]| {
            let (mut ra, mut rb, mut ra_n, mut rb_n, mut rall) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (r, &(v, idx)) in values.iter().enumerate() {
                rall += v * (2.0 * r as f64 - n as f64 + 1.0);
                if member[idx] {
                    ra += v * (2.0 * ra_n - fa + 1.0);
                    ra_n += 1.0;
                } else {
                    rb += v * (2.0 * rb_n - fb + 1.0);
                    rb_n += 1.0;
                }
            }
            let (aa, bb) = (2.0 * ra, 2.0 * rb);
            let ab = 2.0 * rall - aa - bb;
            ab / (fa * fb) - aa / (fa * fa) - bb / (fb * fb)
        })
    } else {
        let rows: Vec<Vec<f64>> = a
            .outer_iter()
            .take(na)
            .chain(b.outer_iter().take(nb))
            .map(|r| r.to_vec())
            .collect();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Box::new(move |member: &[bool]| {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let d = dist[i * n + j];
                    match (member[i], member[j]) {
                        (true, true) => aa += d,
                        (false, false) => bb += d,
                        _ => ab += d,
                    }
                }
            }
            ab / (fa * fb) - aa / (fa * fa) - bb / (fb * fb)
        })
    };
    let mut member: Vec<bool> = (0..n).map(|i| i < na).collect();
    let observed = statistic(&member);
    let mut rng = rng_stream(seed, 0, 0);
    let mut exceed = 0;
    for _ in 0..permutations {
        member.shuffle(&mut rng);
        if statistic(&member) >= observed {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (1 + permutations) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Classifier;

    fn spec_1d() -> GaussianLdaSpec {
        GaussianLdaSpec {
            priors: vec![0.5, 0.5],
            source_means: vec![vec![-1.0], vec![1.0]],
            target_means: vec![vec![-1.0], vec![2.0]],
        }
    }

    #[test]
    fn lda_truth_examples() {
        let t = spec_1d().true_tilt();
        assert_eq!(t.theta, vec![vec![0.0], vec![1.0]]);
        assert_eq!(t.alpha, vec![0.0, -1.5]);

        let mut same = spec_1d();
        same.target_means = same.source_means.clone();
        let t = same.true_tilt();
        assert!(t.theta.iter().flatten().all(|&v| v == 0.0));
        assert!(t.alpha.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lda_true_weights_average_to_one() {
        let spec = GaussianLdaSpec {
            priors: vec![0.3, 0.7],
            source_means: vec![vec![-1.0, 0.5], vec![1.0, 0.0]],
            target_means: vec![vec![-0.5, 0.0], vec![1.0, 1.0]],
        };
        let draw = gen_lda(&spec, 10_000, 10, 3).unwrap();
        let w = draw.truth.unwrap().weights_for(&draw.source);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * sd / n.sqrt(), "mean {mean}, se {}", sd / n.sqrt());
    }

    #[test]
    fn bayes_classifier_matches_density_ratio() {
        let spec = spec_1d();
        let clf = spec.source_bayes_classifier();
        let x = 0.3f64;
        let d0 = 0.5 * (-(x + 1.0).powi(2) / 2.0).exp();
        let d1 = 0.5 * (-(x - 1.0).powi(2) / 2.0).exp();
        let p = clf.predict_proba(&[x]);
        assert!((p[1] - d1 / (d0 + d1)).abs() < 1e-12);
    }

    #[test]
    fn label_switch_twin_has_same_marginal() {
        let spec = GaussianLdaSpec {
            priors: vec![0.5, 0.5],
            source_means: vec![vec![-1.0], vec![1.0]],
            target_means: vec![vec![-2.0], vec![0.5]],
        };
        let twin = spec.label_switch_twin(0, 1);
        assert_ne!(spec.true_tilt().theta, twin.true_tilt().theta);
        let a = gen_lda(&spec, 10, 5000, 1).unwrap();
        let b = gen_lda(&twin, 10, 5000, 2).unwrap();
        let pval = energy_test(a.target.features(), b.target.features(), 199, 5000, 9).unwrap();
        assert!(pval > 0.01, "p = {pval}");
    }

    #[test]
    fn energy_test_detects_mean_shift() {
        let spec = spec_1d();
        let d = gen_lda(&spec, 500, 500, 4).unwrap();
        let src = d.source.features().clone();
        let shifted = src.mapv(|v| v + 1.0);
        let pval = energy_test(&src, &shifted, 99, 500, 1).unwrap();
        assert!(pval <= 0.02);
        let mut two_d = Array2::zeros((500, 2));
        two_d.column_mut(0).assign(&src.column(0));
        let mut two_d_shifted = two_d.clone();
        two_d_shifted.column_mut(0).mapv_inplace(|v| v + 1.0);
        assert!(energy_test(&two_d, &two_d_shifted, 99, 500, 1).unwrap() <= 0.02);
    }

    #[test]
    fn waterbirds_preset_proportions() {
        let spec = GroupShiftSpec::waterbirds_analog();
        spec.validate().unwrap();
        let expected = [0.7296, 0.0384, 0.0117, 0.2204];
        // quoted to four decimals
        for (p, e) in spec.src_props.iter().zip(expected) {
            assert!((p - e).abs() <= 1e-4, "{p} vs {e}");
        }
        assert_eq!(spec.tgt_props[0], 0.0);
        assert_eq!(spec.tgt_props[3], 0.0);
        assert!((spec.tgt_props[1] - 0.778).abs() < 1e-3);
    }

    #[test]
    fn group_shift_draws_only_target_groups() {
        let spec = GroupShiftSpec::waterbirds_analog();
        let d = gen_group_shift(&spec, 2000, 1000, 5).unwrap();
        let g = d.target_labeled.groups().unwrap();
        assert!(g.iter().all(|&v| v == 1 || v == 2));
        assert_eq!(d.source.groups().unwrap().len(), 2000);
        for (i, &grp) in d.source.groups().unwrap().iter().enumerate() {
            assert_eq!(d.source.labels()[i], spec.group_to_class[grp]);
        }
    }

    #[test]
    fn equal_proportions_are_indistinguishable() {
        let spec = GroupShiftSpec::waterbirds_no_shift();
        let d = gen_group_shift(&spec, 1000, 1000, 8).unwrap();
        let pval = energy_test(d.source.features(), d.target.features(), 99, 1000, 2).unwrap();
        assert!(pval > 0.01, "p = {pval}");
    }

    #[test]
    fn breeds_analog_groups_are_disjoint() {
        let spec = GroupShiftSpec::breeds_analog(3, 6);
        spec.validate().unwrap();
        for g in 0..spec.groups() {
            assert!(spec.src_props[g] == 0.0 || spec.tgt_props[g] == 0.0);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = GroupShiftSpec::waterbirds_analog();
        let a = gen_group_shift(&spec, 300, 200, 11).unwrap();
        let b = gen_group_shift(&spec, 300, 200, 11).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target_labeled, b.target_labeled);
    }
}
