//! Weighted ERM: retrain the classifier on the source with tilt weights and
//! compare target accuracy against plain ERM and a model fitted only on the
//! source samples of the target groups.

use tiltweigh::classifier::{fit_logistic, LogisticConfig};
use tiltweigh::downstream::{accuracy, finetune};
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};
use tiltweigh::tilt::{fit_extra, ExtraConfig, WeightVector};

fn main() -> tiltweigh::Result<()> {
    let draw = gen_group_shift(&GroupShiftSpec::waterbirds_analog(), 4795, 4095, 11)?;
    let src = &draw.source;
    let cfg = LogisticConfig::default();
    let (posterior, _) = fit_logistic(src, &cfg)?;
    let extra = ExtraConfig {
        epochs: 400,
        ..Default::default()
    };
    let (_, w) = fit_extra(&posterior, src, &draw.target, &extra)?;

    let (weighted, _) = finetune(src, &w, &cfg)?;
    let (erm, _) = finetune(src, &WeightVector::uniform(src.len()), &cfg)?;
    let groups = src.groups().expect("generator attaches groups");
    let minority: Vec<usize> = (0..src.len()).filter(|&i| matches!(groups[i], 1 | 2)).collect();
    let (oracle, _) = fit_logistic(&src.select(&minority), &cfg)?;

    for (name, clf) in [("ERM", &erm), ("tilt-weighted", &weighted), ("target groups only", &oracle)] {
        println!("{name:<20} target accuracy {:.4}", accuracy(clf, &draw.target_labeled));
    }
    Ok(())
}
