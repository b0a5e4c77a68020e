//! Post-hoc calibration of an overconfident source classifier: temperature,
//! bias-corrected temperature and vector scaling, fitted on a holdout split.

use tiltweigh::classifier::{calibrate, fit_logistic, CalibrationKind, LogisticConfig, Penalty};
use tiltweigh::data::{split, SplitSpec};
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};

fn main() -> tiltweigh::Result<()> {
    let spec = GroupShiftSpec::breeds_analog(3, 6);
    let draw = gen_group_shift(&spec, 600, 10, 4)?;
    let (train, holdout) = split(&draw.source, SplitSpec { fraction: 0.5, seed: 4 })?;
    // an almost unpenalized fit on a small sample is overconfident
    let cfg = LogisticConfig {
        penalty: Penalty::L2,
        strength: 1e-3,
        ..Default::default()
    };
    let (clf, _) = fit_logistic(&train, &cfg)?;
    for kind in [CalibrationKind::Ts, CalibrationKind::Bcts, CalibrationKind::Vs] {
        let (_, report) = calibrate(&clf, &holdout, kind)?;
        println!(
            "{kind:<5} holdout NLL {:.4} -> {:.4}",
            report.nll_before, report.nll_after
        );
    }
    Ok(())
}
