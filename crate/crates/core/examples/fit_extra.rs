//! Fit tilt weights on the Waterbirds-style synthetic task and show how the
//! weight mass moves onto the two minority groups that make up the target.

use tiltweigh::classifier::{fit_logistic, LogisticConfig};
use tiltweigh::eval::group_weight_summary;
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};
use tiltweigh::tilt::{fit_extra_traced, ExtraConfig};

fn main() -> tiltweigh::Result<()> {
    let draw = gen_group_shift(&GroupShiftSpec::waterbirds_analog(), 4795, 4095, 7)?;
    let (posterior, _) = fit_logistic(&draw.source, &LogisticConfig::default())?;

    let cfg = ExtraConfig {
        epochs: 400,
        ..Default::default()
    };
    let (model, weights, trace) = fit_extra_traced(&posterior, &draw.source, &draw.target, &cfg)?;

    println!(
        "{} Adam steps, objective {:.4}, mean weight {:.6}, {} clipped exponents",
        trace.steps, model.objective, weights.mean_weight, weights.clipped
    );
    for e in [0, 99, 199, 399] {
        println!("  epoch {:>3}: minibatch objective {:.4}", e + 1, trace.epoch_objective[e]);
    }
    println!("group  count  mean weight  share of weight");
    for g in group_weight_summary(&weights, draw.source.groups())? {
        println!("{:>5}  {:>5}  {:>11.3}  {:>15.3}", g.group, g.count, g.mean_weight, g.weight_share);
    }
    Ok(())
}
