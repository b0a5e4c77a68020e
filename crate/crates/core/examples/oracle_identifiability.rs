//! Population optima of small discrete shifts. Anchored specs have a single
//! optimum equal to the generating tilt; the label-switching twin has two
//! optima that explain the target equally well.

use tiltweigh::oracle::{anchored_specs, permutation_twin_spec, rank_deficient_spec, OracleConfig, OracleReport};

fn main() -> tiltweigh::Result<()> {
    let cfg = OracleConfig::default();
    let mut cases: Vec<(String, _)> = anchored_specs()
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("anchored #{i}"), s))
        .collect();
    cases.push(("permutation twin".into(), permutation_twin_spec()));
    cases.push(("rank deficient".into(), rank_deficient_spec()));

    for (name, spec) in &cases {
        let report = OracleReport::run(spec, &cfg)?;
        let spans = report.anchored.iter().filter(|a| a.spans).count();
        println!(
            "{name:<17} {} optimum(s), best KL {:.1e}, classes with spanning anchors {spans}/{}",
            report.optima.len(),
            report.kl[0],
            spec.classes()
        );
        for o in report.optima.iter().take(3) {
            let theta: Vec<String> = o.theta.iter().map(|t| format!("{t:.3?}")).collect();
            println!("    theta {} alpha {:.3?} ({} restarts)", theta.join(" "), o.alpha, o.hits);
        }
        if report.optima.len() > 3 {
            println!("    ... {} more", report.optima.len() - 3);
        }
    }
    Ok(())
}
