//! Diagnostics: precision/recall of target groups among the most upweighted
//! source samples, group weight summaries, and error-versus-n curves.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit_logistic, LogisticConfig};
use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::numerics::mean_std;
use crate::synth::SyntheticDraw;
use crate::tilt::{fit_extra, ExtraConfig, WeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub fractions: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Recall of a non-informative ranking, equal to the fraction.
    pub baseline: Vec<f64>,
}

impl PrCurve {
    /// CSV `x,precision,recall,baseline`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut body = String::from("x,precision,recall,baseline\n");
        for i in 0..self.fractions.len() {
            body.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(self.fractions[i]),
                fmt_f64(self.precision[i]),
                fmt_f64(self.recall[i]),
                fmt_f64(self.baseline[i])
            ));
        }
        let p = path.as_ref();
        std::fs::write(p, body).map_err(|e| Error::io(p, e))
    }
}

/// 40 evenly spaced fractions in (0, 0.5].
pub fn default_grid() -> Vec<f64> {
    (1..=40).map(|i| i as f64 * 0.5 / 40.0).collect()
}

/// Size of the top-`x` set for `n` samples: `⌈x·n⌉`.
pub fn top_count(x: f64, n: usize) -> usize {
    ((x * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices by decreasing weight; equal weights keep ascending index order.
pub fn rank_by_weight(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    order
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::Config("grid fractions must lie in (0, 1]".into()));
    }
    Ok(())
}

fn curve_for(weights: &[f64], is_target: &[bool], grid: &[f64]) -> Result<PrCurve> {
    let total_target = is_target.iter().filter(|&&t| t).count();
    if total_target == 0 {
        return Err(Error::EmptyTargetGroup);
    }
    let n = weights.len();
    let order = rank_by_weight(weights);
    // prefix[j] = target samples among the j largest weights
    let mut prefix = vec![0usize; n + 1];
    for (j, &i) in order.iter().enumerate() {
        prefix[j + 1] = prefix[j] + usize::from(is_target[i]);
    }
    let mut curve = PrCurve {
        fractions: grid.to_vec(),
        precision: Vec::with_capacity(grid.len()),
        recall: Vec::with_capacity(grid.len()),
        baseline: grid.to_vec(),
    };
    for &x in grid {
        let m = top_count(x, n).max(1);
        curve.precision.push(prefix[m] as f64 / m as f64);
        curve.recall.push(prefix[m] as f64 / total_target as f64);
    }
    Ok(curve)
}

/// Precision and recall of target-group membership among the `⌈x·n⌉`
/// largest weights, for every `x` in `grid`.
pub fn precision_recall(
    w: &WeightVector,
    groups: Option<&[usize]>,
    target_groups: &[usize],
    grid: &[f64],
) -> Result<PrCurve> {
    let groups = groups.ok_or(Error::NoGroups)?;
    if groups.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: groups.len(),
        });
    }
    check_grid(grid)?;
    let is_target: Vec<bool> = groups.iter().map(|g| target_groups.contains(g)).collect();
    curve_for(&w.weights, &is_target, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrCurve {
    pub class: usize,
    /// Target-group samples of this class.
    pub target_count: usize,
    /// `None` when the class has no target-group samples.
    pub curve: Option<PrCurve>,
}

/// [`precision_recall`] restricted to the samples of each label.
pub fn per_class_pr(
    w: &WeightVector,
    labels: &[usize],
    groups: Option<&[usize]>,
    target_groups: &[usize],
    grid: &[f64],
) -> Result<Vec<ClassPrCurve>> {
    let groups = groups.ok_or(Error::NoGroups)?;
    if groups.len() != w.len() || labels.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: groups.len().min(labels.len()),
        });
    }
    check_grid(grid)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let weights: Vec<f64> = idx.iter().map(|&i| w.weights[i]).collect();
        let is_target: Vec<bool> = idx.iter().map(|&i| target_groups.contains(&groups[i])).collect();
        let target_count = is_target.iter().filter(|&&t| t).count();
        let curve = if idx.is_empty() || target_count == 0 {
            None
        } else {
            Some(curve_for(&weights, &is_target, grid)?)
        };
        out.push(ClassPrCurve {
            class: c,
            target_count,
            curve,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeightSummary {
    pub group: usize,
    pub count: usize,
    pub mean_weight: f64,
    /// Share of the total weight carried by the group.
    pub weight_share: f64,
}

pub fn group_weight_summary(w: &WeightVector, groups: Option<&[usize]>) -> Result<Vec<GroupWeightSummary>> {
    let groups = groups.ok_or(Error::NoGroups)?;
    if groups.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: groups.len(),
        });
    }
    let g_count = groups.iter().max().map_or(0, |m| m + 1);
    let mut count = vec![0usize; g_count];
    let mut sum = vec![0.0; g_count];
    for (&g, &v) in groups.iter().zip(&w.weights) {
        count[g] += 1;
        sum[g] += v;
    }
    let total: f64 = sum.iter().sum();
    Ok((0..g_count)
        .filter(|&g| count[g] > 0)
        .map(|g| GroupWeightSummary {
            group: g,
            count: count[g],
            mean_weight: sum[g] / count[g] as f64,
            weight_share: sum[g] / total,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub param_err_mean: f64,
    pub param_err_std: f64,
    pub weight_err_mean: f64,
    pub weight_err_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
    /// Least-squares slope of log mean parameter error against log n.
    pub log_log_slope: f64,
}

impl ConsistencyTable {
    /// CSV `n,param_err_mean,param_err_std,weight_err_mean,weight_err_std`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut body = String::from("n,param_err_mean,param_err_std,weight_err_mean,weight_err_std\n");
        for r in &self.rows {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                fmt_f64(r.param_err_mean),
                fmt_f64(r.param_err_std),
                fmt_f64(r.weight_err_mean),
                fmt_f64(r.weight_err_std)
            ));
        }
        let p = path.as_ref();
        std::fs::write(p, body).map_err(|e| Error::io(p, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub extra: ExtraConfig,
    /// Source posterior fitted on each source draw.
    pub posterior: LogisticConfig,
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Parameter and weight error of ExTRA fits against the generator's true
/// tilt for growing sample sizes. `generate(n, seed)` must return a draw with
/// `truth` set; each repeat uses its own data seed and fit seed.
pub fn consistency_curve<G>(generate: G, cfg: &ConsistencyConfig) -> Result<ConsistencyTable>
where
    G: Fn(usize, u64) -> Result<SyntheticDraw> + Sync,
{
    if cfg.sizes.is_empty() || cfg.repeats == 0 {
        return Err(Error::Config("need at least one size and one repeat".into()));
    }
    if cfg.sizes.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Config("sizes must be increasing".into()));
    }
    let jobs: Vec<(usize, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.repeats).map(move |r| (n, r)))
        .collect();
    let errors: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let data_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((n as u64) << 20).wrapping_add(r as u64);
            let draw = generate(n, data_seed)?;
            let truth = draw
                .truth
                .as_ref()
                .ok_or_else(|| Error::Config("generator has no ground-truth tilt".into()))?;
            let (posterior, _) = fit_logistic(&draw.source, &cfg.posterior)?;
            let extra = ExtraConfig {
                seed: cfg.extra.seed.wrapping_add(r as u64),
                ..cfg.extra.clone()
            };
            let (model, weights) = fit_extra(&posterior, &draw.source, &draw.target, &extra)?;
            let param_err = model
                .stacked()
                .iter()
                .zip(truth.stacked())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let true_w = truth.weights_for(&draw.source);
            let weight_err =
                weights.weights.iter().zip(&true_w).map(|(a, b)| (a - b).abs()).sum::<f64>() / true_w.len() as f64;
            Ok((param_err, weight_err))
        })
        .collect();
    let errors: Vec<(f64, f64)> = errors.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for (i, &n) in cfg.sizes.iter().enumerate() {
        let chunk = &errors[i * cfg.repeats..(i + 1) * cfg.repeats];
        let (pm, ps) = mean_std(&chunk.iter().map(|e| e.0).collect::<Vec<_>>());
        let (wm, ws) = mean_std(&chunk.iter().map(|e| e.1).collect::<Vec<_>>());
        rows.push(ConsistencyRow {
            n,
            param_err_mean: pm,
            param_err_std: ps,
            weight_err_mean: wm,
            weight_err_std: ws,
        });
    }
    let log_log_slope = if rows.len() >= 2 {
        slope(
            &rows.iter().map(|r| (r.n as f64).ln()).collect::<Vec<_>>(),
            &rows.iter().map(|r| r.param_err_mean.ln()).collect::<Vec<_>>(),
        )
    } else {
        f64::NAN
    };
    Ok(ConsistencyTable { rows, log_log_slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_stream;
    use crate::synth::{gen_lda, GaussianLdaSpec};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn top_count_uses_ceiling() {
        assert_eq!(top_count(0.1, 100), 10);
        assert_eq!(top_count(0.101, 100), 11);
        assert_eq!(top_count(0.3, 10), 3);
        assert_eq!(top_count(1.0, 7), 7);
    }

    #[test]
    fn perfect_weights() {
        // 20 of 100 samples are in target group 1, weighted 5; the rest 0.5
        let groups: Vec<usize> = (0..100).map(|i| usize::from(i % 5 == 0)).collect();
        let w = WeightVector::from_weights(groups.iter().map(|&g| if g == 1 { 5.0 } else { 0.5 }).collect()).unwrap();
        let grid = [0.1, 0.2, 0.3, 0.5];
        let c = precision_recall(&w, Some(&groups), &[1], &grid).unwrap();
        assert_eq!(c.precision[..2], [1.0, 1.0]);
        assert_eq!(c.recall[1], 1.0);
        assert!(c.precision[2] < 1.0 && c.precision[3] < c.precision[2]);
        assert_eq!(c.recall[0], 0.5);
    }

    #[test]
    fn random_weights_follow_baseline() {
        let mut rng = rng_stream(3, 0, 0);
        let n = 10_000;
        let groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let w = WeightVector::from_weights((0..n).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap();
        let c = precision_recall(&w, Some(&groups), &[1, 2], &default_grid()).unwrap();
        for (r, x) in c.recall.iter().zip(&c.baseline) {
            assert!((r - x).abs() <= 0.05, "{r} vs {x}");
        }
    }

    #[test]
    fn equal_weights_give_index_order_steps() {
        let groups = vec![1, 0, 1, 0, 0, 1, 0, 0, 0, 0];
        let w = WeightVector::uniform(10);
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let c = precision_recall(&w, Some(&groups), &[1], &grid).unwrap();
        let expected = [1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0].map(|v: f64| v / 3.0);
        assert_eq!(c.recall, expected.to_vec());
    }

    #[test]
    fn errors() {
        let w = WeightVector::uniform(3);
        assert!(matches!(precision_recall(&w, None, &[1], &[0.5]), Err(Error::NoGroups)));
        assert!(matches!(
            precision_recall(&w, Some(&[0, 0, 0]), &[1], &[0.5]),
            Err(Error::EmptyTargetGroup)
        ));
        assert!(precision_recall(&w, Some(&[0, 1, 0]), &[1], &[0.0]).is_err());
    }

    #[test]
    fn single_class_matches_pooled() {
        let groups = vec![1, 0, 1, 0, 2, 1];
        let labels = vec![0; 6];
        let w = WeightVector::from_weights(vec![0.5, 2.0, 1.0, 0.1, 3.0, 0.7]).unwrap();
        let grid = default_grid();
        let pooled = precision_recall(&w, Some(&groups), &[1, 2], &grid).unwrap();
        let per = per_class_pr(&w, &labels, Some(&groups), &[1, 2], &grid).unwrap();
        assert_eq!(per.len(), 1);
        assert_eq!(per[0].curve.as_ref().unwrap(), &pooled);
    }

    #[test]
    fn per_class_recall_counting_identity() {
        // balanced classes carrying the same weight multiset: the pooled top
        // set of even size is the union of the per-class top sets, so the
        // count-weighted per-class recalls reproduce the pooled recall
        let mut rng = rng_stream(8, 0, 0);
        let half = 200;
        let base: Vec<f64> = (0..half).map(|_| rng.random_range(0.1..2.0)).collect();
        let mut weights = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for (j, &b) in base.iter().enumerate() {
            for class in 0..2 {
                weights.push(b);
                labels.push(class);
                groups.push(if rng.random_bool(0.3) { 2 } else { j % 2 });
            }
        }
        let w = WeightVector::from_weights(weights).unwrap();
        let grid: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
        let per = per_class_pr(&w, &labels, Some(&groups), &[2], &grid).unwrap();
        let pooled = precision_recall(&w, Some(&groups), &[2], &grid).unwrap();
        let total: usize = per.iter().map(|c| c.target_count).sum();
        for i in 0..grid.len() {
            let avg: f64 = per
                .iter()
                .map(|c| c.curve.as_ref().unwrap().recall[i] * c.target_count as f64)
                .sum::<f64>()
                / total as f64;
            assert!((avg - pooled.recall[i]).abs() < 1e-12, "x = {}", grid[i]);
        }
    }

    #[test]
    fn group_summary_shares_sum_to_one() {
        let w = WeightVector::from_weights(vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let s = group_weight_summary(&w, Some(&[0, 1, 1, 3])).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].mean_weight, 2.5);
        assert!((s.iter().map(|g| g.weight_share).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_repeat_has_zero_std() {
        let spec = GaussianLdaSpec {
            priors: vec![0.4, 0.6],
            source_means: vec![vec![-1.0], vec![1.0]],
            target_means: vec![vec![-0.5], vec![1.5]],
        };
        let cfg = ConsistencyConfig {
            sizes: vec![300, 600],
            repeats: 1,
            seed: 1,
            extra: ExtraConfig {
                learning_rate: 0.05,
                batch_size: 1_000_000,
                epochs: 300,
                ..Default::default()
            },
            posterior: LogisticConfig {
                strength: 1e-3,
                ..Default::default()
            },
        };
        let t = consistency_curve(|n, s| gen_lda(&spec, n, n, s), &cfg).unwrap();
        assert!(t.rows.iter().all(|r| r.param_err_std == 0.0 && r.weight_err_std == 0.0));
        assert!(t.rows.iter().all(|r| r.param_err_mean >= 0.0 && r.weight_err_mean >= 0.0));
    }

    proptest! {
        #[test]
        fn recall_is_monotone(ws in proptest::collection::vec(0.01f64..10.0, 10..60), seed in 0u64..1000) {
            let n = ws.len();
            let mut rng = rng_stream(seed, 0, 0);
            let mut groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            groups[0] = 1;
            let w = WeightVector::from_weights(ws).unwrap();
            let c = precision_recall(&w, Some(&groups), &[1], &default_grid()).unwrap();
            for pair in c.recall.windows(2) {
                prop_assert!(pair[1] >= pair[0]);
            }
            let full = precision_recall(&w, Some(&groups), &[1], &[1.0]).unwrap();
            prop_assert_eq!(full.recall[0], 1.0);
            for (&p, &r) in c.precision.iter().zip(&c.recall) {
                prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
            }
        }
    }
}
