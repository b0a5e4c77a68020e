//! Subpopulation shift with disjoint subgroups: the target holds subgroups
//! never seen in the source. Mixing a share π of target rows into the source
//! creates overlap; the Breeds preset is then fitted for each π.

use tiltweigh::classifier::{calibrate, fit_logistic, LogisticConfig};
use tiltweigh::data::{mix_target_into_source, split, SplitSpec};
use tiltweigh::eval::precision_recall;
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};
use tiltweigh::tilt::{breeds_config, fit_extra, ExtraConfig, BREEDS_CALIBRATION};

fn main() -> tiltweigh::Result<()> {
    let classes = 4;
    let spec = GroupShiftSpec::breeds_analog(classes, 8);
    let draw = gen_group_shift(&spec, 3000, 3000, 9)?;
    // mixed-in rows are tagged with the next unused group id
    let mixed_id = draw.source.groups().and_then(|g| g.iter().max()).map_or(0, |m| m + 1);

    for pi in [0.05, 0.1, 0.2] {
        let src = mix_target_into_source(&draw.source, &draw.target_labeled, pi, 9)?;
        let (train, holdout) = split(&src, SplitSpec { fraction: 0.8, seed: 9 })?;
        let (base, _) = fit_logistic(&train, &LogisticConfig::default())?;
        let (posterior, _) = calibrate(&base, &holdout, BREEDS_CALIBRATION)?;
        let cfg = ExtraConfig {
            learning_rate: 1e-3,
            epochs: 200,
            ..breeds_config(9)
        };
        let (_, w) = fit_extra(&posterior, &src, &draw.target, &cfg)?;
        let curve = precision_recall(&w, src.groups(), &[mixed_id], &[pi])?;
        println!(
            "pi = {pi:.2}: {} mixed rows, recall of mixed rows in the top {:.0}% = {:.3}",
            src.len() - draw.source.len(),
            pi * 100.0,
            curve.recall[0]
        );
    }
    Ok(())
}
