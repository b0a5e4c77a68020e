//! Estimate a classifier's target accuracy and log loss from labeled source
//! data alone, then compare with the (normally unavailable) target labels.

use tiltweigh::classifier::{fit_logistic, LogisticConfig};
use tiltweigh::downstream::{evaluate_target, Loss};
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};
use tiltweigh::tilt::{fit_extra, ExtraConfig, WeightVector};

fn main() -> tiltweigh::Result<()> {
    let draw = gen_group_shift(&GroupShiftSpec::waterbirds_analog(), 4795, 4095, 3)?;
    let (clf, _) = fit_logistic(&draw.source, &LogisticConfig::default())?;
    let cfg = ExtraConfig {
        epochs: 400,
        ..Default::default()
    };
    let (_, w) = fit_extra(&clf, &draw.source, &draw.target, &cfg)?;
    let uniform = WeightVector::uniform(draw.source.len());
    let target_uniform = WeightVector::uniform(draw.target_labeled.len());

    println!("{:<10} {:>10} {:>10} {:>10}", "loss", "source", "weighted", "target");
    for loss in [Loss::ZeroOne, Loss::Nll] {
        println!(
            "{:<10} {:>10.4} {:>10.4} {:>10.4}",
            format!("{loss:?}"),
            evaluate_target(&clf, &draw.source, &uniform, loss)?,
            evaluate_target(&clf, &draw.source, &w, loss)?,
            evaluate_target(&clf, &draw.target_labeled, &target_uniform, loss)?,
        );
    }
    Ok(())
}
