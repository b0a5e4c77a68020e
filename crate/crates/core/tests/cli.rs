use std::path::Path;

use tiltweigh::cli::run_from_args;
use tiltweigh::data::{load_labeled, load_unlabeled, Format};
use tiltweigh::tilt::{TiltModel, WeightVector};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["tiltweigh"];
    argv.extend_from_slice(args);
    run_from_args(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn synth_emits_the_four_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w1");
    assert_eq!(run(&["synth", "--preset", "waterbirds-analog", "--seed", "1", "-o", s(&out)]), 0);
    for f in ["source.csv", "target.csv", "target_labeled.csv", "truth.json", "config.json", "metrics.json", "run.log"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let src = load_labeled(out.join("source.csv"), Format::Csv, None).unwrap();
    let tgt = load_unlabeled(out.join("target.csv"), Format::Csv).unwrap();
    assert_eq!((src.len(), src.dim(), src.class_count()), (5000, 8, 2));
    assert_eq!(tgt.len(), 5000);
    let groups = src.groups().unwrap();
    assert!(groups.iter().all(|&g| g < 4));
    let tl = load_labeled(out.join("target_labeled.csv"), Format::Csv, None).unwrap();
    assert!(tl.groups().unwrap().iter().all(|&g| g == 1 || g == 2));
}

#[test]
fn label_shift_truth_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ls");
    assert_eq!(run(&["synth", "--preset", "label-shift", "--n-source", "100", "--n-target", "100", "-o", s(&out)]), 0);
    let truth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    let tilt: TiltModel = serde_json::from_value(truth["tilt"].clone()).unwrap();
    assert!((tilt.alpha[0] - 0.4f64.ln()).abs() < 1e-12);
    assert!((tilt.alpha[1] - 1.6f64.ln()).abs() < 1e-12);
}

#[test]
fn pipeline_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n);
    assert_eq!(run(&["synth", "--preset", "waterbirds-analog", "--n-source", "2000", "--n-target", "1500", "-o", s(&d("data"))]), 0);
    let src = d("data").join("source.csv");
    let tgt = d("data").join("target.csv");
    let tl = d("data").join("target_labeled.csv");
    assert_eq!(run(&["fit-source", "-s", s(&src), "-o", s(&d("clf"))]), 0);
    let clf = d("clf").join("classifier.json");
    assert_eq!(
        run(&["fit-extra", "--classifier", s(&clf), "-s", s(&src), "-t", s(&tgt), "--epochs", "200", "-o", s(&d("w"))]),
        0
    );
    let weights = WeightVector::load(d("w").join("weights.csv")).unwrap();
    assert_eq!(weights.len(), 2000);
    assert!((weights.mean_weight - 1.0).abs() < 1e-9);
    assert!(weights.config.is_some());

    let w = d("w").join("weights.csv");
    assert_eq!(run(&["eval-target", "--classifier", s(&clf), "-s", s(&src), "--weights", s(&w), "--target-labeled", s(&tl), "-o", s(&d("ev"))]), 0);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("ev").join("metrics.json")).unwrap()).unwrap();
    let est = m["estimated_target_risk"].as_f64().unwrap();
    let src_risk = m["source_risk"].as_f64().unwrap();
    let actual = m["target_risk"].as_f64().unwrap();
    assert!((est - actual).abs() < (src_risk - actual).abs(), "weighting should move the estimate towards the target");

    assert_eq!(run(&["pr-curve", "--weights", s(&w), "-s", s(&src), "--target-groups", "1,2", "-o", s(&d("pr"))]), 0);
    let pr = std::fs::read_to_string(d("pr").join("pr_curve.csv")).unwrap();
    assert!(pr.starts_with("x,precision,recall,baseline\n"));
    assert_eq!(pr.lines().count(), 41);
}

#[test]
fn domain_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n);
    assert_eq!(run(&["synth", "--preset", "lda", "--n-source", "50", "--n-target", "50", "-o", s(&d("data"))]), 0);
    // the LDA draw has no group column
    let src = d("data").join("source.csv");
    let weights = d("w.csv");
    WeightVector::uniform(50).save(&weights).unwrap();
    assert_eq!(run(&["pr-curve", "--weights", s(&weights), "-s", s(&src), "--target-groups", "1", "-o", s(&d("pr"))]), 1);
    // weights of the wrong length
    let short = d("short.csv");
    WeightVector::uniform(10).save(&short).unwrap();
    assert_eq!(run(&["finetune", "-s", s(&src), "--weights", s(&short), "-o", s(&d("ft"))]), 1);
    let log = std::fs::read_to_string(d("ft").join("run.log")).unwrap();
    assert!(log.contains("status: failed"));
}

#[test]
fn bad_values_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(run(&["synth", "--preset", "lda", "--n-source", "ten", "-o", s(&out)]), 2);
    assert_eq!(run(&["oracle", "--preset", "anchored", "--index", "9", "-o", s(&out)]), 2);
    assert_eq!(run(&["--threads", "0", "oracle", "-o", s(&out)]), 2);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n);
    assert_eq!(run(&["synth", "--preset", "waterbirds-analog", "--n-source", "800", "--n-target", "600", "-o", s(&d("data"))]), 0);
    let src = d("data").join("source.csv");
    let tgt = d("data").join("target.csv");
    for (threads, out) in [("1", "one"), ("4", "four")] {
        let code = run(&[
            "--threads", threads, "sweep", "-s", s(&src), "-t", s(&tgt), "--epochs", "3,6", "-o", s(&d(out)),
        ]);
        assert_eq!(code, 0);
    }
    for f in ["sweep.csv", "weights.csv", "metrics.json", "model.json"] {
        assert_eq!(std::fs::read(d("one").join(f)).unwrap(), std::fs::read(d("four").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn oracle_reports_twin_optima() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("or");
    assert_eq!(run(&["oracle", "--preset", "permutation-twin", "-o", s(&out)]), 0);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("oracle.json")).unwrap()).unwrap();
    assert!(report["optima"].as_array().unwrap().len() >= 2);
    assert!(report["anchored"].as_array().unwrap().iter().all(|a| a["anchors"].as_array().unwrap().is_empty()));
}

#[test]
fn discrete_spec_round_trips_through_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n);
    assert_eq!(run(&["synth", "--preset", "discrete", "--index", "3", "--n-source", "100", "--n-target", "100", "-o", s(&d("data"))]), 0);
    let spec = d("data").join("spec.json");
    assert_eq!(run(&["oracle", "--spec", s(&spec), "--restarts", "5", "-o", s(&d("or"))]), 0);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("or").join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["optima"], 1);
    assert!(m["truth_distance"].as_f64().unwrap() < 1e-6);
}
