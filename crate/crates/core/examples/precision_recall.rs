//! Full sweep protocol (four calibrations × six optimizer settings), then the
//! share of minority-group samples among the most upweighted source points.

use tiltweigh::classifier::{calibrate, fit_logistic, LogisticConfig};
use tiltweigh::data::{split, SplitSpec};
use tiltweigh::eval::{per_class_pr, precision_recall};
use tiltweigh::synth::{gen_group_shift, GroupShiftSpec};
use tiltweigh::tilt::{sweep, waterbirds_grid, PosteriorVariant, WATERBIRDS_CALIBRATIONS};

fn main() -> tiltweigh::Result<()> {
    let draw = gen_group_shift(&GroupShiftSpec::waterbirds_analog(), 4795, 4095, 2)?;
    let (train, holdout) = split(&draw.source, SplitSpec { fraction: 0.8, seed: 2 })?;
    let (base, _) = fit_logistic(&train, &LogisticConfig::default())?;
    let mut posteriors = Vec::new();
    for kind in WATERBIRDS_CALIBRATIONS {
        posteriors.push((kind, calibrate(&base, &holdout, kind)?.0));
    }
    let variants: Vec<_> = posteriors
        .iter()
        .map(|(kind, clf)| PosteriorVariant {
            label: kind.to_string(),
            posterior: clf,
        })
        .collect();
    let out = sweep(&variants, &draw.source, &draw.target, &waterbirds_grid(2))?;
    let best = &out.cells[out.best_index];
    println!(
        "best of {} cells: {} lr {} epochs {} objective {:.4}",
        out.cells.len(),
        best.variant,
        best.config.learning_rate,
        best.config.epochs,
        out.best_model.objective
    );

    let grid = [0.02, 0.05, 0.1, 0.2, 0.3];
    let curve = precision_recall(&out.best_weights, draw.source.groups(), &[1, 2], &grid)?;
    println!("top x   precision  recall");
    for i in 0..grid.len() {
        println!("{:>5.2}   {:>9.3}  {:>6.3}", grid[i], curve.precision[i], curve.recall[i]);
    }
    for c in per_class_pr(&out.best_weights, draw.source.labels(), draw.source.groups(), &[1, 2], &[0.1])? {
        if let Some(curve) = c.curve {
            println!("class {}: recall at top 10% of the class {:.3}", c.class, curve.recall[0]);
        }
    }
    Ok(())
}
