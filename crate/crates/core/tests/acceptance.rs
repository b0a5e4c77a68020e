//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so every line is printed; the process fails if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use tiltweigh::classifier::{calibrate, fit_logistic, Classifier, LogisticConfig, ProbClassifier};
use tiltweigh::cli::run_from_args;
use tiltweigh::data::{split, LabeledDataset, SplitSpec, SufficientStatistic, UnlabeledDataset};
use tiltweigh::downstream::{accuracy, evaluate_target, finetune, score_models, Loss};
use tiltweigh::eval::{consistency_curve, precision_recall, ConsistencyConfig};
use tiltweigh::numerics::{rng_stream, ClipCounter};
use tiltweigh::oracle::{
    anchored_specs, check_anchor_sets, oracle_solve, permutation_twin_spec, OracleConfig,
};
use tiltweigh::synth::{gen_group_shift, gen_lda, GaussianLdaSpec, GroupShiftSpec, SyntheticDraw};
use tiltweigh::tilt::{
    fit_extra, sweep, waterbirds_grid, ExtraConfig, PosteriorVariant, TiltObjective, TiltParams, WeightVector,
    WATERBIRDS_CALIBRATIONS,
};

type Outcome = Result<(bool, String), String>;

fn full_batch(learning_rate: f64, epochs: usize) -> ExtraConfig {
    ExtraConfig {
        learning_rate,
        batch_size: usize::MAX / 2,
        epochs,
        ..Default::default()
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn no_shift_identity() -> Outcome {
    let start = Instant::now();
    let draw = gen_group_shift(&GroupShiftSpec::waterbirds_no_shift(), 5000, 5000, 0).map_err(|e| e.to_string())?;
    let (clf, _) = fit_logistic(&draw.source, &LogisticConfig::default()).map_err(|e| e.to_string())?;
    let (_, wv) = fit_extra(&clf, &draw.source, &draw.target, &ExtraConfig::default()).map_err(|e| e.to_string())?;
    let n = wv.len() as f64;
    let mean = wv.weights.iter().sum::<f64>() / n;
    let std = (wv.weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n).sqrt();
    let weighted_acc = 1.0 - evaluate_target(&clf, &draw.source, &wv, Loss::ZeroOne).map_err(|e| e.to_string())?;
    let target_acc = accuracy(&clf, &draw.target_labeled);
    let gap = (weighted_acc - target_acc).abs();
    let secs = start.elapsed().as_secs_f64();
    let pass = (mean - 1.0).abs() <= 0.05 && std <= 0.15 && gap <= 0.02 && secs <= 30.0;
    Ok((
        pass,
        format!("mean {mean:.4}, std {std:.4}, |acc gap| {gap:.4}, {secs:.1}s"),
    ))
}

fn oracle_recovery() -> Outcome {
    let start = Instant::now();
    let mut worst_param: f64 = 0.0;
    let mut worst_l1: f64 = 0.0;
    for (i, spec) in anchored_specs().iter().enumerate() {
        let optima = oracle_solve(spec, &OracleConfig::default()).map_err(|e| e.to_string())?;
        let star = &optima[0];
        let star_model = star.model(&spec.statistic);
        let draw = spec.sample(50_000, 50_000, 100 + i as u64).map_err(|e| e.to_string())?;
        let posterior = spec.posterior();
        let cfg = ExtraConfig {
            statistic: spec.statistic.clone(),
            ..full_batch(0.02, 1000)
        };
        let (model, _) = fit_extra(&posterior, &draw.source, &draw.target, &cfg).map_err(|e| e.to_string())?;
        worst_param = worst_param.max(l2(&model.stacked(), &star_model.stacked()));
        worst_l1 = worst_l1.max(spec.weight_l1(&model, &star_model));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_param <= 0.05 && worst_l1 <= 0.05 && secs <= 120.0;
    Ok((
        pass,
        format!("worst parameter error {worst_param:.4}, worst weight L1 {worst_l1:.4}, {secs:.1}s"),
    ))
}

fn label_shift_reduction() -> Outcome {
    let draw = gen_group_shift(&GroupShiftSpec::label_shift(), 10_000, 10_000, 0).map_err(|e| e.to_string())?;
    let (clf, _) = fit_logistic(&draw.source, &LogisticConfig::default()).map_err(|e| e.to_string())?;
    let cfg = ExtraConfig {
        freeze_theta: true,
        ..full_batch(0.02, 600)
    };
    let (model, _) = fit_extra(&clf, &draw.source, &draw.target, &cfg).map_err(|e| e.to_string())?;
    let theta_zero = model.theta.iter().flatten().all(|&t| t == 0.0);
    let odds = (model.alpha[1] - model.alpha[0]).exp();
    Ok((
        theta_zero && (3.4..=4.6).contains(&odds),
        format!("exp(a1 - a0) = {odds:.4}, theta frozen: {theta_zero}"),
    ))
}

fn non_identifiability() -> Outcome {
    let spec = permutation_twin_spec();
    let optima = oracle_solve(&spec, &OracleConfig::default()).map_err(|e| e.to_string())?;
    let kls: Vec<f64> = optima.iter().map(|o| o.kl).collect();
    let gap = kls.iter().cloned().fold(f64::MIN, f64::max) - kls.iter().cloned().fold(f64::MAX, f64::min);
    let anchors = check_anchor_sets(&spec).map_err(|e| e.to_string())?;
    let none = anchors.iter().all(|a| a.anchors.is_empty());
    Ok((
        optima.len() >= 2 && gap <= 1e-8 && none,
        format!("{} optima, KL gap {gap:.2e}, no anchors: {none}", optima.len()),
    ))
}

fn consistency_trend() -> Outcome {
    let start = Instant::now();
    let spec = GaussianLdaSpec::mean_drift();
    let cfg = ConsistencyConfig {
        sizes: vec![1000, 4000, 16000],
        repeats: 5,
        seed: 0,
        extra: full_batch(0.05, 800),
        posterior: LogisticConfig::default(),
    };
    let table = consistency_curve(|n, s| gen_lda(&spec, n, n, s), &cfg).map_err(|e| e.to_string())?;
    let errs: Vec<f64> = table.rows.iter().map(|r| r.param_err_mean).collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let secs = start.elapsed().as_secs_f64();
    Ok((
        decreasing && table.log_log_slope < 0.0 && secs <= 300.0,
        format!(
            "mean errors {:?}, slope {:.3}, {secs:.1}s",
            errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>(),
            table.log_log_slope
        ),
    ))
}

fn gradient_correctness() -> Outcome {
    let mut rng = rng_stream(2024, 0, 0);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let k = rng.random_range(2..=3);
        let d = rng.random_range(1..=4);
        let n = rng.random_range(k..=40);
        let b = rng.random_range(1..=32).min(n);
        let xs = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let src = LabeledDataset::new(xs, labels, None, k).map_err(|e| e.to_string())?;
        let tgt = UnlabeledDataset::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0)))
            .map_err(|e| e.to_string())?;
        let w = Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
        let bias = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        let clf = ProbClassifier::from_parameters(w, bias).map_err(|e| e.to_string())?;
        let obj = TiltObjective::new(&clf, &SufficientStatistic::Identity, &src, &tgt).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = (0..k * (d + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params = TiltParams::from_flat(k, d, &flat);
        let lambda = if case % 2 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        let src_idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let tgt_idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();

        let mut grad = vec![0.0; flat.len()];
        let mut clip = ClipCounter::default();
        obj.evaluate_batch(&params, lambda, &src_idx, &tgt_idx, Some(&mut grad), &mut clip);
        let h = 1e-5;
        let f = |v: &[f64]| {
            let p = TiltParams::from_flat(k, d, v);
            obj.evaluate_batch(&p, lambda, &src_idx, &tgt_idx, None, &mut ClipCounter::default())
                .objective
        };
        let fd: Vec<f64> = (0..flat.len())
            .map(|i| {
                let mut up = flat.clone();
                up[i] += h;
                let mut dn = flat.clone();
                dn[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect();
        let rel = l2(&grad, &fd) / l2(&fd, &vec![0.0; fd.len()]).max(1e-12);
        worst = worst.max(rel);
    }
    Ok((worst <= 1e-4, format!("worst relative error {worst:.2e} over 20 instances")))
}

fn finetune_gain() -> Outcome {
    let spec = GroupShiftSpec::waterbirds_analog();
    let cfg = LogisticConfig::default();
    let (mut extra_acc, mut erm_acc, mut oracle_acc) = (0.0, 0.0, 0.0);
    let seeds = 10;
    for seed in 0..seeds {
        let draw = gen_group_shift(&spec, 4795, 4095, seed).map_err(|e| e.to_string())?;
        let src = &draw.source;
        let (w, _) = protocol_weights(&draw, seed)?;
        let (extra_clf, _) = finetune(src, &w, &cfg).map_err(|e| e.to_string())?;
        let (erm_clf, _) = finetune(src, &WeightVector::uniform(src.len()), &cfg).map_err(|e| e.to_string())?;
        let groups = src.groups().expect("group labels");
        let minority: Vec<usize> = (0..src.len()).filter(|&i| groups[i] == 1 || groups[i] == 2).collect();
        let (oracle_clf, _) = fit_logistic(&src.select(&minority), &cfg).map_err(|e| e.to_string())?;
        extra_acc += accuracy(&extra_clf, &draw.target_labeled);
        erm_acc += accuracy(&erm_clf, &draw.target_labeled);
        oracle_acc += accuracy(&oracle_clf, &draw.target_labeled);
    }
    let s = seeds as f64;
    let (extra_acc, erm_acc, oracle_acc) = (extra_acc / s, erm_acc / s, oracle_acc / s);
    Ok((
        extra_acc - erm_acc >= 0.05 && oracle_acc - extra_acc <= 0.03,
        format!("target accuracy: ExTRA {extra_acc:.4}, ERM {erm_acc:.4}, oracle {oracle_acc:.4}"),
    ))
}

/// Linear classifiers pointing at angles from 0 to 90 degrees.
fn directional_zoo(models: usize) -> Vec<ProbClassifier> {
    (0..models)
        .map(|i| {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / (models - 1) as f64;
            let (s, c) = phi.sin_cos();
            let w = Array2::from_shape_vec((2, 2), vec![-c, -s, c, s]).expect("2x2");
            ProbClassifier::from_parameters(w, vec![0.0, 0.0]).expect("valid")
        })
        .collect()
}

fn model_selection_gain() -> Outcome {
    let spec = GaussianLdaSpec {
        priors: vec![0.5, 0.5],
        source_means: vec![vec![-1.0, -1.0], vec![1.0, 1.0]],
        target_means: vec![vec![-1.4, 0.0], vec![1.4, 0.0]],
    };
    let zoo = directional_zoo(12);
    let members: Vec<&dyn Classifier> = zoo.iter().map(|c| c as &dyn Classifier).collect();
    let seeds = 5;
    let (mut extra_sum, mut src_sum) = (0.0, 0.0);
    let mut all_positive = true;
    let mut per_seed = Vec::new();
    for seed in 0..seeds {
        let draw = gen_lda(&spec, 4000, 4000, seed).map_err(|e| e.to_string())?;
        let test = gen_lda(&spec, 1, 20_000, seed + 1000).map_err(|e| e.to_string())?.target_labeled;
        let (train, val) = split(&draw.source, SplitSpec { fraction: 0.5, seed }).map_err(|e| e.to_string())?;
        let (posterior, _) = fit_logistic(&train, &LogisticConfig::default()).map_err(|e| e.to_string())?;
        let cfg = ExtraConfig {
            seed,
            ..full_batch(0.05, 500)
        };
        let (_, w) = fit_extra(&posterior, &val, &draw.target, &cfg).map_err(|e| e.to_string())?;
        let report = score_models(&members, &val, &w, Some(&test), None).map_err(|e| e.to_string())?;
        let get = |name: &str| report.summary.spearman.get(name).copied().flatten().unwrap_or(f64::NAN);
        let (e, s) = (get("extra"), get("srcval"));
        all_positive &= e > 0.0;
        extra_sum += e;
        src_sum += s;
        per_seed.push(format!("{e:.2}/{s:.2}"));
    }
    let (extra, src) = (extra_sum / seeds as f64, src_sum / seeds as f64);
    Ok((
        extra >= src + 0.2 && all_positive,
        format!(
            "mean spearman ExTRA {extra:.3}, SrcVal {src:.3}; per seed (ExTRA/SrcVal) {}",
            per_seed.join(" ")
        ),
    ))
}

/// Waterbirds protocol: posterior fitted on 80% of the source, four
/// calibration variants on the remaining 20%, the 24-cell sweep over the full
/// source, lowest objective wins.
fn protocol_weights(draw: &SyntheticDraw, seed: u64) -> Result<(WeightVector, String), String> {
    let (train, holdout) = split(&draw.source, SplitSpec { fraction: 0.8, seed }).map_err(|e| e.to_string())?;
    let (base, _) = fit_logistic(&train, &LogisticConfig::default()).map_err(|e| e.to_string())?;
    let mut posteriors = Vec::new();
    for kind in WATERBIRDS_CALIBRATIONS {
        let (c, _) = calibrate(&base, &holdout, kind).map_err(|e| e.to_string())?;
        posteriors.push((kind, c));
    }
    let variants: Vec<PosteriorVariant<'_>> = posteriors
        .iter()
        .map(|(k, c)| PosteriorVariant {
            label: k.to_string(),
            posterior: c,
        })
        .collect();
    let out = sweep(&variants, &draw.source, &draw.target, &waterbirds_grid(seed)).map_err(|e| e.to_string())?;
    let best = &out.cells[out.best_index];
    let label = format!("{} lr {} E {}", best.variant, best.config.learning_rate, best.config.epochs);
    Ok((out.best_weights, label))
}

fn precision_recall_top10() -> Outcome {
    let draw = gen_group_shift(&GroupShiftSpec::waterbirds_analog(), 4795, 4095, 0).map_err(|e| e.to_string())?;
    let (w, best) = protocol_weights(&draw, 0)?;
    let curve = precision_recall(&w, draw.source.groups(), &[1, 2], &[0.1]).map_err(|e| e.to_string())?;
    let recall = curve.recall[0];
    Ok((
        recall >= 0.8,
        format!(
            "recall {recall:.4}, precision {:.4} at top 10% (best cell of 24: {best})",
            curve.precision[0]
        ),
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["tiltweigh"];
    argv.extend_from_slice(args);
    match run_from_args(argv.clone()) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", argv.join(" "))),
    }
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("run directory") {
        let entry = entry.expect("entry");
        let name = entry.file_name().to_string_lossy().into_owned();
        if name != "config.json" {
            out.insert(name, std::fs::read(entry.path()).expect("readable"));
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |s: &str| -> String { root.join(s).to_string_lossy().into_owned() };
    let stages: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth".into(), "--preset".into(), "waterbirds-analog".into(), "--n-source".into(), "1500".into(), "--n-target".into(), "1200".into(), "--seed".into(), "1".into()]),
        ("fit-source", vec!["fit-source".into(), "-s".into(), p("synth/source.csv"), "--calibration".into(), "ts".into()]),
        ("calibrate", vec!["calibrate".into(), "--classifier".into(), p("fit-source/classifier.json"), "--holdout".into(), p("synth/target_labeled.csv"), "--kind".into(), "vs".into()]),
        ("fit-extra", vec!["fit-extra".into(), "--classifier".into(), p("fit-source/classifier.json"), "-s".into(), p("synth/source.csv"), "-t".into(), p("synth/target.csv"), "--epochs".into(), "20".into(), "--runs".into(), "2".into()]),
        ("sweep", vec!["sweep".into(), "--preset".into(), "waterbirds".into(), "-s".into(), p("synth/source.csv"), "-t".into(), p("synth/target.csv"), "--epochs".into(), "5,10".into(), "--threads".into(), "3".into()]),
        ("eval-target", vec!["eval-target".into(), "--classifier".into(), p("fit-source/classifier.json"), "-s".into(), p("synth/source.csv"), "--weights".into(), p("fit-extra/weights.csv"), "--target-labeled".into(), p("synth/target_labeled.csv")]),
        ("finetune", vec!["finetune".into(), "-s".into(), p("synth/source.csv"), "--weights".into(), p("sweep/weights.csv"), "--target-labeled".into(), p("synth/target_labeled.csv")]),
        ("model-select", vec!["model-select".into(), "-s".into(), p("synth/source.csv"), "-t".into(), p("synth/target.csv"), "--target-labeled".into(), p("synth/target_labeled.csv"), "--epochs".into(), "10".into(), "--max-iter".into(), "50".into(), "--threads".into(), "2".into()]),
        ("oracle", vec!["oracle".into(), "--preset".into(), "permutation-twin".into(), "--restarts".into(), "12".into()]),
        ("pr-curve", vec!["pr-curve".into(), "--weights".into(), p("sweep/weights.csv"), "-s".into(), p("synth/source.csv"), "--target-groups".into(), "1,2".into()]),
        ("consistency", vec!["consistency".into(), "--sizes".into(), "200,400".into(), "--repeats".into(), "2".into(), "--epochs".into(), "20".into()]),
    ];
    let mut compared = 0;
    for (name, args) in &stages {
        let out = p(name);
        let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
        argv.extend(["-o", &out]);
        run_cli(&argv)?;
        let again = p(&format!("{name}-rerun"));
        let config = PathBuf::from(&out).join("config.json");
        run_cli(&["rerun", "--config", &config.to_string_lossy(), "-o", &again])?;
        let a = dir_files(Path::new(&out));
        let b = dir_files(Path::new(&again));
        for required in ["metrics.json", "run.log"] {
            if !a.contains_key(required) {
                return Ok((false, format!("{name}: {required} missing")));
            }
        }
        if a != b {
            let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
            return Ok((false, format!("{name}: rerun differs in {differing:?}")));
        }
        compared += a.len();
    }
    Ok((true, format!("{} stages re-run from config.json, {compared} files identical", stages.len())))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("no-shift identity", no_shift_identity),
        ("oracle recovery", oracle_recovery),
        ("label-shift reduction", label_shift_reduction),
        ("non-identifiability detection", non_identifiability),
        ("consistency trend", consistency_trend),
        ("gradient correctness", gradient_correctness),
        ("fine-tuning gain", finetune_gain),
        ("model-selection gain", model_selection_gain),
        ("precision/recall at top 10%", precision_recall_top10),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {:>2} {:<30} {}  {detail}", i + 1, name, if pass { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
