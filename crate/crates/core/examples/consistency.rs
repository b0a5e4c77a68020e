//! Error of the fitted tilt against the analytic tilt of a Gaussian
//! mean-drift model as the sample size grows.

use tiltweigh::classifier::LogisticConfig;
use tiltweigh::eval::{consistency_curve, ConsistencyConfig};
use tiltweigh::synth::{gen_lda, GaussianLdaSpec};
use tiltweigh::tilt::ExtraConfig;

fn main() -> tiltweigh::Result<()> {
    let spec = GaussianLdaSpec::mean_drift();
    let truth = spec.true_tilt();
    println!("true theta {:?}, alpha {:?}", truth.theta, truth.alpha);

    let cfg = ConsistencyConfig {
        sizes: vec![1000, 4000, 16000],
        repeats: 4,
        seed: 0,
        extra: ExtraConfig {
            learning_rate: 0.05,
            batch_size: 1 << 20,
            epochs: 800,
            ..Default::default()
        },
        posterior: LogisticConfig::default(),
    };
    let table = consistency_curve(|n, seed| gen_lda(&spec, n, n, seed), &cfg)?;
    println!("{:>6}  {:>16}  {:>16}", "n", "parameter error", "weight error");
    for r in &table.rows {
        println!(
            "{:>6}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}",
            r.n, r.param_err_mean, r.param_err_std, r.weight_err_mean, r.weight_err_std
        );
    }
    println!("log-log slope {:.3}", table.log_log_slope);
    Ok(())
}
