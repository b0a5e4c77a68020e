//! Rank a zoo of 120 logistic models (three weighting schemes, two penalties,
//! twenty values of C) by plain and tilt-weighted validation accuracy.

use tiltweigh::classifier::{fit_logistic, Classifier, LogisticConfig};
use tiltweigh::data::{split, SplitSpec};
use tiltweigh::downstream::{build_model_zoo, score_models};
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};
use tiltweigh::tilt::{fit_extra, ExtraConfig};

fn main() -> tiltweigh::Result<()> {
    let draw = gen_group_shift(&GroupShiftSpec::waterbirds_analog(), 6000, 4000, 5)?;
    let (train, val) = split(&draw.source, SplitSpec { fraction: 0.5, seed: 5 })?;

    let (posterior, _) = fit_logistic(&train, &LogisticConfig::default())?;
    let cfg = ExtraConfig {
        epochs: 400,
        ..Default::default()
    };
    let (_, w) = fit_extra(&posterior, &val, &draw.target, &cfg)?;

    let zoo = build_model_zoo(&train, &LogisticConfig::default())?;
    let members: Vec<&dyn Classifier> = zoo.members.iter().map(|m| &m.classifier as &dyn Classifier).collect();
    let report = score_models(&members, &val, &w, Some(&draw.target_labeled), None)?;

    println!("{} models", members.len());
    for (score, id) in &report.summary.selected {
        let m = &zoo.members[*id];
        println!(
            "{score:<7} picks model {id:>3} ({:?}, {}, C = {:.2e})",
            m.weighting, m.penalty, m.c
        );
    }
    for (score, rho) in &report.summary.spearman {
        println!("spearman({score}, target accuracy) = {}", rho.map_or("n/a".into(), |r| format!("{r:.3}")));
    }
    for (score, acc) in &report.summary.selected_target {
        println!("target accuracy of the {score} pick: {acc:.4}");
    }
    Ok(())
}
