//! Pure label shift: with the slopes frozen at zero the tilt reduces to one
//! intercept per class, and `exp(α₁ - α₀)` estimates the change in class odds.

use tiltweigh::classifier::{fit_logistic, LogisticConfig};
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};
use tiltweigh::tilt::{fit_extra, ExtraConfig};

fn main() -> tiltweigh::Result<()> {
    let spec = GroupShiftSpec::label_shift();
    let draw = gen_group_shift(&spec, 10_000, 10_000, 1)?;
    let (posterior, _) = fit_logistic(&draw.source, &LogisticConfig::default())?;

    let cfg = ExtraConfig {
        freeze_theta: true,
        learning_rate: 0.02,
        batch_size: 20_000,
        epochs: 600,
        ..Default::default()
    };
    let (model, _) = fit_extra(&posterior, &draw.source, &draw.target, &cfg)?;
    let truth = spec.label_shift_tilt().expect("one group per class");

    let odds = (model.alpha[1] - model.alpha[0]).exp();
    let true_odds = (truth.alpha[1] - truth.alpha[0]).exp();
    println!("class weights  fitted {:.3} / {:.3}", model.alpha[0].exp(), model.alpha[1].exp());
    println!("               true   {:.3} / {:.3}", truth.alpha[0].exp(), truth.alpha[1].exp());
    println!("odds ratio     fitted {odds:.3}, true {true_odds:.3}");
    Ok(())
}
