//! Command-line front end. Every subcommand writes `config.json` (the fully
//! resolved invocation), `metrics.json` and `run.log` into the run directory
//! given by `--out`; `rerun --config` replays a recorded invocation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classifier::{
    calibrate, fit_logistic, CalibrationKind, Classifier, LogisticConfig, Penalty, ProbClassifier,
};
use crate::data::{
    load_labeled, load_unlabeled, mix_target_into_source, save_labeled, save_unlabeled, split, Format,
    LabeledDataset, SplitSpec, UnlabeledDataset,
};
use crate::downstream::{accuracy, build_model_zoo, evaluate_target, finetune, score_models, Loss};
use crate::error::{Error, Result};
use crate::eval::{
    consistency_curve, default_grid, group_weight_summary, per_class_pr, precision_recall, ConsistencyConfig,
};
use crate::numerics::mean_std;
use crate::oracle::{anchored_specs, permutation_twin_spec, rank_deficient_spec, DiscreteShiftSpec, OracleConfig, OracleReport};
use crate::synth::{gen_group_shift, gen_lda, GaussianLdaSpec, GroupShiftSpec, SyntheticDraw};
use crate::tilt::{
    breeds_config, fit_extra, sweep, waterbirds_grid, ExtraConfig, PosteriorVariant, TiltModel, WeightVector,
    BREEDS_CALIBRATION, WATERBIRDS_CALIBRATIONS,
};

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(
    name = "tiltweigh",
    version,
    about = "Exponential-tilt importance weights for evaluating and training classifiers under distribution shift"
)]
pub struct Cli {
    /// Worker threads for parallel sweeps, zoos and restarts; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Global seed for splits, initializations and generators.
    #[arg(long, global = true, env = "TILTWEIGH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Run directory (created if missing).
    #[arg(short = 'o', long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit the source posterior (multinomial logistic regression), optionally calibrated on a holdout.
    FitSource(FitSourceArgs),
    /// Calibrate a saved classifier on a labeled holdout set.
    Calibrate(CalibrateArgs),
    /// Fit tilt weights for a source/target pair given a source posterior.
    FitExtra(FitExtraArgs),
    /// Fit every (calibration × hyperparameter) cell and keep the lowest objective.
    Sweep(SweepArgs),
    /// Estimate target risk of a classifier from weighted source data.
    EvalTarget(EvalTargetArgs),
    /// Weighted-ERM logistic regression on the source.
    Finetune(FinetuneArgs),
    /// Score a zoo of source classifiers by plain and weighted validation accuracy.
    ModelSelect(ModelSelectArgs),
    /// Generate a synthetic source/target pair with ground truth.
    Synth(SynthArgs),
    /// Enumerate population optima of a discrete shift by multi-start Newton.
    Oracle(OracleArgs),
    /// Precision and recall of target groups among the largest weights.
    PrCurve(PrCurveArgs),
    /// Parameter and weight error of tilt fits against truth for growing n.
    Consistency(ConsistencyArgs),
    /// Replay the invocation recorded in a run's config.json into `--out`.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LogisticArgs {
    /// Penalty type.
    #[arg(long, value_enum, default_value_t = Penalty::L2)]
    pub penalty: Penalty,
    /// Penalty strength, the inverse of the usual C (strength = 1/C).
    #[arg(long, default_value_t = 10.0)]
    pub strength: f64,
    /// Stationarity tolerance of the proximal-gradient solver.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

impl LogisticArgs {
    fn config(&self) -> LogisticConfig {
        LogisticConfig {
            penalty: self.penalty,
            strength: self.strength,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtraArgs {
    /// Adam learning rate (Waterbirds protocol: 5e-4).
    #[arg(long, default_value_t = 5e-4)]
    pub learning_rate: f64,
    /// Minibatch size for source and target (Waterbirds protocol: 500).
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
    /// Passes over the larger of the two samples (Waterbirds protocol: 100).
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Normalization regularizer weight; 0 disables it (Breeds protocol: 1e-6).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Standard deviation of the Gaussian parameter initialization.
    #[arg(long, default_value_t = 0.01)]
    pub init_scale: f64,
    /// Fit intercepts only (pure label shift).
    #[arg(long)]
    pub freeze_theta: bool,
}

impl ExtraArgs {
    fn config(&self, seed: u64) -> ExtraConfig {
        ExtraConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lambda: self.lambda,
            seed,
            init_scale: self.init_scale,
            freeze_theta: self.freeze_theta,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitSourceArgs {
    /// Labeled source data (.csv or .json).
    #[arg(short = 's', long)]
    pub source: PathBuf,
    #[command(flatten)]
    pub logistic: LogisticArgs,
    /// Calibration fitted on a holdout split of the source.
    #[arg(long, value_enum, default_value_t = CalibrationKind::None)]
    pub calibration: CalibrationKind,
    /// Share of the source held out for calibration.
    #[arg(long, default_value_t = 0.2)]
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// Classifier JSON written by fit-source or finetune.
    #[arg(long)]
    pub classifier: PathBuf,
    /// Labeled holdout data.
    #[arg(long)]
    pub holdout: PathBuf,
    #[arg(long, value_enum, default_value_t = CalibrationKind::Bcts)]
    pub kind: CalibrationKind,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitExtraArgs {
    /// Source posterior (classifier JSON).
    #[arg(long)]
    pub classifier: PathBuf,
    /// Labeled source data.
    #[arg(short = 's', long)]
    pub source: PathBuf,
    /// Unlabeled target data.
    #[arg(short = 't', long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub extra: ExtraArgs,
    /// Independent initializations (seeds seed, seed+1, ...); the lowest objective is kept.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepPreset {
    /// Learning rates {5e-4, 4e-5}, batch 500, epochs {100, 200, 400}, λ = 0, calibrations {none, ts, bcts, vs}.
    Waterbirds,
    /// Learning rate 1e-4, batch 1500, 500 epochs, λ = 1e-6, BCTS.
    Breeds,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = SweepPreset::Waterbirds)]
    pub preset: SweepPreset,
    /// Labeled source data.
    #[arg(short = 's', long)]
    pub source: PathBuf,
    /// Unlabeled target data.
    #[arg(short = 't', long)]
    pub target: PathBuf,
    /// Base posterior settings, fitted on the non-holdout part of the source.
    #[command(flatten)]
    pub logistic: LogisticArgs,
    /// Share of the source held out to fit calibrations.
    #[arg(long, default_value_t = 0.2)]
    pub holdout_fraction: f64,
    /// Override the preset's calibration variants.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub calibrations: Option<Vec<CalibrationKind>>,
    /// Override the preset's learning rates.
    #[arg(long, value_delimiter = ',')]
    pub learning_rates: Option<Vec<f64>>,
    /// Override the preset's epoch counts.
    #[arg(long, value_delimiter = ',')]
    pub epochs: Option<Vec<usize>>,
    /// Override the preset's batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override the preset's λ.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalTargetArgs {
    /// Classifier JSON to evaluate.
    #[arg(long)]
    pub classifier: PathBuf,
    /// Labeled source data (evaluation sample).
    #[arg(short = 's', long)]
    pub source: PathBuf,
    /// Weights CSV aligned with the source rows; uniform when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Loss::ZeroOne)]
    pub loss: Loss,
    /// Labeled target data, for reporting the actual target risk.
    #[arg(long)]
    pub target_labeled: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FinetuneArgs {
    /// Labeled source data.
    #[arg(short = 's', long)]
    pub source: PathBuf,
    /// Weights CSV aligned with the source rows; uniform when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub logistic: LogisticArgs,
    /// Labeled target data, for reporting target accuracy.
    #[arg(long)]
    pub target_labeled: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelSelectArgs {
    /// Labeled source data, split into zoo-training and validation parts.
    #[arg(short = 's', long)]
    pub source: PathBuf,
    /// Unlabeled target data.
    #[arg(short = 't', long)]
    pub target: PathBuf,
    /// Share of the source used for validation and weight fitting.
    #[arg(long, default_value_t = 0.5)]
    pub val_fraction: f64,
    /// Source posterior settings (fitted on the training part).
    #[command(flatten)]
    pub logistic: LogisticArgs,
    #[command(flatten)]
    pub extra: ExtraArgs,
    /// One external score per zoo model, one value per line.
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Labeled target data, for rank correlations against target accuracy.
    #[arg(long)]
    pub target_labeled: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthPreset {
    /// Four background/class groups in 8 dimensions; target = the two minority groups.
    WaterbirdsAnalog,
    /// The same groups without shift.
    NoShift,
    /// Disjoint subgroups per class between source and target.
    BreedsAnalog,
    /// Two Gaussian classes whose means drift.
    Lda,
    /// One group per class, priors (0.5, 0.5) to (0.2, 0.8).
    LabelShift,
    /// An anchored discrete shift (pick with --index).
    Discrete,
    /// Discrete shift with two exchangeable classes and no anchors.
    PermutationTwin,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub preset: SynthPreset,
    #[arg(long, default_value_t = 5000)]
    pub n_source: usize,
    #[arg(long, default_value_t = 5000)]
    pub n_target: usize,
    /// Classes of the breeds-analog preset.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Dimension of the breeds-analog preset.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Share of target rows mixed into the source, as floor(n_source · mix) rows.
    #[arg(long, default_value_t = 0.0)]
    pub mix: f64,
    /// Which anchored discrete spec (0-4).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OraclePreset {
    Anchored,
    PermutationTwin,
    RankDeficient,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    /// Discrete spec JSON (as written by `synth --preset discrete`); overrides --preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OraclePreset::Anchored)]
    pub preset: OraclePreset,
    /// Which anchored spec (0-4).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 50)]
    pub restarts: usize,
    /// Standard deviation of random starting points.
    #[arg(long, default_value_t = 2.0)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PrCurveArgs {
    /// Weights CSV.
    #[arg(long)]
    pub weights: PathBuf,
    /// Labeled source data carrying a group column.
    #[arg(short = 's', long)]
    pub source: PathBuf,
    /// Group ids that make up the target (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub target_groups: Vec<usize>,
    /// Fractions x in (0, 1]; 40 evenly spaced points when absent.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyPreset {
    Lda,
    LabelShift,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConsistencyArgs {
    #[arg(long, value_enum, default_value_t = ConsistencyPreset::Lda)]
    pub preset: ConsistencyPreset,
    /// Increasing source sizes (the target has the same size).
    #[arg(long, value_delimiter = ',', default_values_t = vec![1000, 4000, 16000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub extra: ExtraArgs,
    #[command(flatten)]
    pub logistic: LogisticArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// config.json of an earlier run.
    #[arg(long)]
    pub config: PathBuf,
}

/// Collects log lines and writes the run directory's files.
struct RunDir {
    dir: PathBuf,
    log: Vec<String>,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            log: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn flush_log(&self) -> Result<()> {
        let p = self.path("run.log");
        let mut text = self.log.join("\n");
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

fn labeled(path: &Path) -> Result<LabeledDataset> {
    load_labeled(path, Format::from_path(path), None)
}

fn labeled_with(path: &Path, classes: usize) -> Result<LabeledDataset> {
    load_labeled(path, Format::from_path(path), Some(classes))
}

fn unlabeled(path: &Path) -> Result<UnlabeledDataset> {
    load_unlabeled(path, Format::from_path(path))
}

fn load_classifier(path: &Path) -> Result<ProbClassifier> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ProbClassifier::from_json(&text)
}

fn load_weights(path: Option<&Path>, n: usize) -> Result<WeightVector> {
    let w = match path {
        Some(p) => WeightVector::load(p)?,
        None => WeightVector::uniform(n),
    };
    if w.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: w.len(),
        });
    }
    Ok(w)
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 success, 1 domain error, 2 usage error.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match cli.command {
        Command::Rerun(ref r) => match load_rerun(&r.config, &cli.out) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return exit_code(&e);
            }
        },
        _ => cli,
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn load_rerun(config: &Path, out: &Path) -> Result<Cli> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut cli: Cli = serde_json::from_str(&text)?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::Config("a rerun config cannot itself be a rerun".into()));
    }
    cli.out = out.to_path_buf();
    Ok(cli)
}

/// Executes a parsed invocation inside a rayon pool of `threads` workers.
pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rd = RunDir::create(&cli.out)?;
    rd.write_json("config.json", cli)?;
    rd.log(format!("tiltweigh {}", env!("CARGO_PKG_VERSION")));
    let outcome = pool.install(|| dispatch(cli, &mut rd));
    match &outcome {
        Ok(metrics) => {
            rd.write_json("metrics.json", metrics)?;
            rd.log("status: ok");
        }
        Err(e) => rd.log(format!("status: failed: {e}")),
    }
    rd.flush_log()?;
    outcome.map(|_| ())
}

fn dispatch(cli: &Cli, rd: &mut RunDir) -> Result<Value> {
    let seed = cli.seed;
    match &cli.command {
        Command::FitSource(a) => fit_source_cmd(a, seed, rd),
        Command::Calibrate(a) => calibrate_cmd(a, rd),
        Command::FitExtra(a) => fit_extra_cmd(a, seed, rd),
        Command::Sweep(a) => sweep_cmd(a, seed, rd),
        Command::EvalTarget(a) => eval_target_cmd(a, rd),
        Command::Finetune(a) => finetune_cmd(a, rd),
        Command::ModelSelect(a) => model_select_cmd(a, seed, rd),
        Command::Synth(a) => synth_cmd(a, seed, rd),
        Command::Oracle(a) => oracle_cmd(a, seed, rd),
        Command::PrCurve(a) => pr_curve_cmd(a, rd),
        Command::Consistency(a) => consistency_cmd(a, seed, rd),
        Command::Rerun(_) => Err(Error::Config("nested rerun".into())),
    }
}

/// Fits the logistic posterior on `1 - holdout_fraction` of the source and
/// returns it with the holdout part.
fn fit_with_holdout(
    src: &LabeledDataset,
    holdout_fraction: f64,
    cfg: &LogisticConfig,
    seed: u64,
    rd: &mut RunDir,
) -> Result<(ProbClassifier, LabeledDataset, Value)> {
    let (train, holdout) = split(
        src,
        SplitSpec {
            fraction: 1.0 - holdout_fraction,
            seed,
        },
    )?;
    let (clf, report) = fit_logistic(&train, cfg)?;
    rd.log(format!(
        "posterior: {} train rows, {} holdout rows, converged {} after {} iterations",
        train.len(),
        holdout.len(),
        report.converged,
        report.iterations
    ));
    let info = json!({
        "n_train": train.len(),
        "n_holdout": holdout.len(),
        "fit": report,
        "train_accuracy": accuracy(&clf, &train),
    });
    Ok((clf, holdout, info))
}

fn fit_source_cmd(a: &FitSourceArgs, seed: u64, rd: &mut RunDir) -> Result<Value> {
    let src = labeled(&a.source)?;
    let cfg = a.logistic.config();
    let (clf, metrics) = if a.calibration == CalibrationKind::None {
        let (clf, report) = fit_logistic(&src, &cfg)?;
        rd.log(format!(
            "posterior: {} rows, converged {} after {} iterations",
            src.len(),
            report.converged,
            report.iterations
        ));
        let m = json!({
            "n_train": src.len(),
            "fit": report,
            "train_accuracy": accuracy(&clf, &src),
        });
        (clf, m)
    } else {
        let (base, holdout, mut m) = fit_with_holdout(&src, a.holdout_fraction, &cfg, seed, rd)?;
        let (clf, report) = calibrate(&base, &holdout, a.calibration)?;
        rd.log(format!(
            "calibration {}: holdout nll {:.6} -> {:.6}",
            a.calibration, report.nll_before, report.nll_after
        ));
        m["calibration"] = serde_json::to_value(&report)?;
        (clf, m)
    };
    std::fs::write(rd.path("classifier.json"), clf.to_json()?).map_err(|e| Error::io(rd.path("classifier.json"), e))?;
    Ok(metrics)
}

fn calibrate_cmd(a: &CalibrateArgs, rd: &mut RunDir) -> Result<Value> {
    let clf = load_classifier(&a.classifier)?;
    let holdout = labeled_with(&a.holdout, clf.class_count())?;
    let (out, report) = calibrate(&clf, &holdout, a.kind)?;
    rd.log(format!(
        "calibration {}: holdout nll {:.6} -> {:.6}",
        a.kind, report.nll_before, report.nll_after
    ));
    std::fs::write(rd.path("classifier.json"), out.to_json()?).map_err(|e| Error::io(rd.path("classifier.json"), e))?;
    Ok(json!({ "calibration": report, "holdout_accuracy": accuracy(&out, &holdout) }))
}

fn save_model(rd: &RunDir, model: &TiltModel) -> Result<()> {
    let p = rd.path("model.json");
    std::fs::write(&p, model.to_json()?).map_err(|e| Error::io(&p, e))
}

fn fit_extra_cmd(a: &FitExtraArgs, seed: u64, rd: &mut RunDir) -> Result<Value> {
    if a.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let clf = load_classifier(&a.classifier)?;
    let src = labeled_with(&a.source, clf.class_count())?;
    let tgt = unlabeled(&a.target)?;
    let mut best: Option<(usize, TiltModel, WeightVector)> = None;
    let mut objectives = Vec::with_capacity(a.runs);
    for r in 0..a.runs {
        let cfg = a.extra.config(seed.wrapping_add(r as u64));
        let (model, wv) = fit_extra(&clf, &src, &tgt, &cfg)?;
        rd.log(format!(
            "run {r}: seed {} objective {:.9} clipped {}",
            cfg.seed, model.objective, wv.clipped
        ));
        objectives.push(model.objective);
        if best.as_ref().is_none_or(|(_, m, _)| model.objective < m.objective) {
            best = Some((r, model, wv));
        }
    }
    let (best_run, model, wv) = best.expect("at least one run");
    wv.save(rd.path("weights.csv"))?;
    save_model(rd, &model)?;
    let (obj_mean, obj_std) = mean_std(&objectives);
    Ok(json!({
        "n_source": src.len(),
        "n_target": tgt.len(),
        "objectives": objectives,
        "objective_mean": obj_mean,
        "objective_std": obj_std,
        "best_run": best_run,
        "objective": model.objective,
        "normalizer_at_fit": model.normalizer_at_fit,
        "mean_weight": wv.mean_weight,
        "clipped": wv.clipped,
    }))
}

fn sweep_cmd(a: &SweepArgs, seed: u64, rd: &mut RunDir) -> Result<Value> {
    let src = labeled(&a.source)?;
    let tgt = unlabeled(&a.target)?;
    let (mut grid, default_cals): (Vec<ExtraConfig>, Vec<CalibrationKind>) = match a.preset {
        SweepPreset::Waterbirds => (waterbirds_grid(seed), WATERBIRDS_CALIBRATIONS.to_vec()),
        SweepPreset::Breeds => (vec![breeds_config(seed)], vec![BREEDS_CALIBRATION]),
    };
    if a.learning_rates.is_some() || a.epochs.is_some() {
        let mut lrs = Vec::new();
        let mut eps = Vec::new();
        for c in &grid {
            if !lrs.contains(&c.learning_rate) {
                lrs.push(c.learning_rate);
            }
            if !eps.contains(&c.epochs) {
                eps.push(c.epochs);
            }
        }
        let lrs = a.learning_rates.clone().unwrap_or(lrs);
        let eps = a.epochs.clone().unwrap_or(eps);
        let base = grid[0].clone();
        grid = lrs
            .iter()
            .flat_map(|&learning_rate| {
                eps.iter().map({
                    let base = base.clone();
                    move |&epochs| ExtraConfig {
                        learning_rate,
                        epochs,
                        ..base.clone()
                    }
                })
            })
            .collect();
    }
    for c in &mut grid {
        if let Some(b) = a.batch_size {
            c.batch_size = b;
        }
        if let Some(l) = a.lambda {
            c.lambda = l;
        }
    }
    let cals = a.calibrations.clone().unwrap_or(default_cals);
    let (base, holdout, posterior_info) = fit_with_holdout(&src, a.holdout_fraction, &a.logistic.config(), seed, rd)?;
    let mut posteriors = Vec::with_capacity(cals.len());
    for &kind in &cals {
        let (clf, report) = calibrate(&base, &holdout, kind)?;
        rd.log(format!(
            "calibration {kind}: holdout nll {:.6} -> {:.6}",
            report.nll_before, report.nll_after
        ));
        posteriors.push((kind, clf));
    }
    let variants: Vec<PosteriorVariant<'_>> = posteriors
        .iter()
        .map(|(k, c)| PosteriorVariant {
            label: k.to_string(),
            posterior: c,
        })
        .collect();
    let outcome = sweep(&variants, &src, &tgt, &grid)?;

    let mut body = String::from("cell,variant,learning_rate,batch_size,epochs,lambda,objective,error\n");
    for (i, c) in outcome.cells.iter().enumerate() {
        body.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            c.variant,
            c.config.learning_rate,
            c.config.batch_size,
            c.config.epochs,
            c.config.lambda,
            c.objective.map(|v| v.to_string()).unwrap_or_default(),
            c.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    let p = rd.path("sweep.csv");
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    for (i, c) in outcome.cells.iter().enumerate() {
        rd.log(format!(
            "cell {i}: {} lr {} epochs {} objective {}",
            c.variant,
            c.config.learning_rate,
            c.config.epochs,
            c.objective.map_or("failed".to_string(), |v| format!("{v:.9}"))
        ));
    }
    outcome.best_weights.save(rd.path("weights.csv"))?;
    save_model(rd, &outcome.best_model)?;
    let best_cell = &outcome.cells[outcome.best_index];
    let best_clf = &posteriors[outcome.best_index / grid.len()].1;
    let cp = rd.path("posterior.json");
    std::fs::write(&cp, best_clf.to_json()?).map_err(|e| Error::io(&cp, e))?;
    Ok(json!({
        "posterior": posterior_info,
        "cells": outcome.cells.len(),
        "failed_cells": outcome.cells.iter().filter(|c| c.error.is_some()).count(),
        "best_index": outcome.best_index,
        "best_variant": best_cell.variant,
        "best_config": best_cell.config,
        "best_objective": outcome.best_model.objective,
        "mean_weight": outcome.best_weights.mean_weight,
        "clipped": outcome.best_weights.clipped,
    }))
}

fn eval_target_cmd(a: &EvalTargetArgs, rd: &mut RunDir) -> Result<Value> {
    let clf = load_classifier(&a.classifier)?;
    let src = labeled_with(&a.source, clf.class_count())?;
    let w = load_weights(a.weights.as_deref(), src.len())?;
    let estimate = evaluate_target(&clf, &src, &w, a.loss)?;
    let unweighted = evaluate_target(&clf, &src, &WeightVector::uniform(src.len()), a.loss)?;
    rd.log(format!("weighted source risk ({:?}): {estimate:.6}", a.loss));
    let mut m = json!({
        "loss": a.loss,
        "estimated_target_risk": estimate,
        "source_risk": unweighted,
    });
    if let Some(t) = &a.target_labeled {
        let tgt = labeled_with(t, clf.class_count())?;
        let actual = evaluate_target(&clf, &tgt, &WeightVector::uniform(tgt.len()), a.loss)?;
        rd.log(format!("actual target risk: {actual:.6}"));
        m["target_risk"] = json!(actual);
        m["absolute_error"] = json!((actual - estimate).abs());
    }
    Ok(m)
}

fn finetune_cmd(a: &FinetuneArgs, rd: &mut RunDir) -> Result<Value> {
    let src = labeled(&a.source)?;
    let w = load_weights(a.weights.as_deref(), src.len())?;
    let (clf, report) = finetune(&src, &w, &a.logistic.config())?;
    rd.log(format!(
        "weighted fit: converged {} after {} iterations",
        report.converged, report.iterations
    ));
    let p = rd.path("classifier.json");
    std::fs::write(&p, clf.to_json()?).map_err(|e| Error::io(&p, e))?;
    let mut m = json!({ "fit": report, "source_accuracy": accuracy(&clf, &src) });
    if let Some(t) = &a.target_labeled {
        let tgt = labeled_with(t, src.class_count())?;
        m["target_accuracy"] = json!(accuracy(&clf, &tgt));
    }
    Ok(m)
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>()
                .map_err(|_| Error::schema(format!("{}: line {}: not a number", path.display(), i + 1)))
        })
        .collect()
}

fn model_select_cmd(a: &ModelSelectArgs, seed: u64, rd: &mut RunDir) -> Result<Value> {
    let src = labeled(&a.source)?;
    let tgt = unlabeled(&a.target)?;
    let (train, val) = split(
        &src,
        SplitSpec {
            fraction: 1.0 - a.val_fraction,
            seed,
        },
    )?;
    let (posterior, _) = fit_logistic(&train, &a.logistic.config())?;
    let (_, w) = fit_extra(&posterior, &val, &tgt, &a.extra.config(seed))?;
    rd.log(format!(
        "weights on {} validation rows: objective {:.9}",
        val.len(),
        w.objective.unwrap_or(f64::NAN)
    ));
    w.save(rd.path("weights.csv"))?;
    let zoo = build_model_zoo(&train, &LogisticConfig {
        tol: a.logistic.tol,
        max_iter: a.logistic.max_iter,
        ..Default::default()
    })?;
    rd.log(format!("zoo: {} models", zoo.members.len()));
    let members: Vec<&dyn Classifier> = zoo.members.iter().map(|m| &m.classifier as &dyn Classifier).collect();
    let external = a.external.as_deref().map(read_scores).transpose()?;
    let tgt_labeled = a
        .target_labeled
        .as_deref()
        .map(|p| labeled_with(p, src.class_count()))
        .transpose()?;
    let report = score_models(&members, &val, &w, tgt_labeled.as_ref(), external.as_deref())?;
    report.save(rd.path("selection.csv"), rd.path("selection_summary.json"))?;
    for (name, id) in &report.summary.selected {
        rd.log(format!("selected by {name}: model {id}"));
    }
    Ok(json!({
        "zoo_size": zoo.members.len(),
        "group_tier_skipped": zoo.group_tier_skipped,
        "summary": report.summary,
    }))
}

fn discrete_preset(index: usize) -> Result<DiscreteShiftSpec> {
    let specs = anchored_specs();
    let n = specs.len();
    specs
        .into_iter()
        .nth(index)
        .ok_or_else(|| Error::Config(format!("--index must be below {n}")))
}

fn synth_cmd(a: &SynthArgs, seed: u64, rd: &mut RunDir) -> Result<Value> {
    let (draw, spec): (SyntheticDraw, Value) = match a.preset {
        SynthPreset::WaterbirdsAnalog => {
            let s = GroupShiftSpec::waterbirds_analog();
            (gen_group_shift(&s, a.n_source, a.n_target, seed)?, serde_json::to_value(&s)?)
        }
        SynthPreset::NoShift => {
            let s = GroupShiftSpec::waterbirds_no_shift();
            (gen_group_shift(&s, a.n_source, a.n_target, seed)?, serde_json::to_value(&s)?)
        }
        SynthPreset::BreedsAnalog => {
            if a.classes < 2 || a.dim <= a.classes {
                return Err(Error::Config("breeds-analog needs --classes >= 2 and --dim > --classes".into()));
            }
            let s = GroupShiftSpec::breeds_analog(a.classes, a.dim);
            (gen_group_shift(&s, a.n_source, a.n_target, seed)?, serde_json::to_value(&s)?)
        }
        SynthPreset::Lda => {
            let s = GaussianLdaSpec::mean_drift();
            (gen_lda(&s, a.n_source, a.n_target, seed)?, serde_json::to_value(&s)?)
        }
        SynthPreset::LabelShift => {
            let s = GroupShiftSpec::label_shift();
            (gen_group_shift(&s, a.n_source, a.n_target, seed)?, serde_json::to_value(&s)?)
        }
        SynthPreset::Discrete | SynthPreset::PermutationTwin => {
            let s = if a.preset == SynthPreset::Discrete {
                discrete_preset(a.index)?
            } else {
                permutation_twin_spec()
            };
            rd.write_json("spec.json", &s)?;
            (s.sample(a.n_source, a.n_target, seed)?, serde_json::to_value(&s)?)
        }
    };
    let SyntheticDraw {
        mut source,
        target,
        target_labeled,
        truth,
    } = draw;
    if a.mix > 0.0 {
        let before = source.len();
        source = mix_target_into_source(&source, &target_labeled, a.mix, seed)?;
        rd.log(format!("mixed {} target rows into the source", source.len() - before));
    }
    save_labeled(&source, rd.path("source.csv"), Format::Csv)?;
    save_unlabeled(&target, rd.path("target.csv"), Format::Csv)?;
    save_labeled(&target_labeled, rd.path("target_labeled.csv"), Format::Csv)?;
    let truth = if a.mix > 0.0 { None } else { truth };
    rd.write_json("truth.json", &json!({ "preset": a.preset, "tilt": truth, "spec": spec }))?;
    rd.log(format!(
        "{} source rows, {} target rows, {} classes, dimension {}",
        source.len(),
        target.len(),
        source.class_count(),
        source.dim()
    ));
    Ok(json!({
        "n_source": source.len(),
        "n_target": target.len(),
        "classes": source.class_count(),
        "dim": source.dim(),
        "source_class_counts": source.class_counts(),
        "target_class_counts": target_labeled.class_counts(),
        "has_truth": truth.is_some(),
    }))
}

fn oracle_cmd(a: &OracleArgs, seed: u64, rd: &mut RunDir) -> Result<Value> {
    let spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<DiscreteShiftSpec>(&text)?
        }
        None => match a.preset {
            OraclePreset::Anchored => discrete_preset(a.index)?,
            OraclePreset::PermutationTwin => permutation_twin_spec(),
            OraclePreset::RankDeficient => rank_deficient_spec(),
        },
    };
    let cfg = OracleConfig {
        restarts: a.restarts,
        init_scale: a.init_scale,
        seed,
        max_iter: a.max_iter,
        ..Default::default()
    };
    let report = OracleReport::run(&spec, &cfg)?;
    rd.write_json("oracle.json", &report)?;
    for (i, o) in report.optima.iter().enumerate() {
        rd.log(format!("optimum {i}: kl {:.3e}, reached by {} restarts", o.kl, o.hits));
    }
    let kl_gap = report.kl.last().copied().unwrap_or(0.0) - report.kl.first().copied().unwrap_or(0.0);
    Ok(json!({
        "optima": report.optima.len(),
        "best_kl": report.kl.first(),
        "kl_gap": kl_gap,
        "anchored": report.anchored,
        "truth_distance": spec.truth().map(|t| {
            let best = report.optima[0].stacked();
            let s = t.stacked();
            best.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        }),
    }))
}

fn pr_curve_cmd(a: &PrCurveArgs, rd: &mut RunDir) -> Result<Value> {
    let src = labeled(&a.source)?;
    let w = load_weights(Some(&a.weights), src.len())?;
    let grid = a.grid.clone().unwrap_or_else(default_grid);
    let curve = precision_recall(&w, src.groups(), &a.target_groups, &grid)?;
    curve.save(rd.path("pr_curve.csv"))?;
    let per_class = per_class_pr(&w, src.labels(), src.groups(), &a.target_groups, &grid)?;
    rd.write_json("pr_per_class.json", &per_class)?;
    let groups = group_weight_summary(&w, src.groups())?;
    rd.write_json("group_weights.json", &groups)?;
    let at_tenth = precision_recall(&w, src.groups(), &a.target_groups, &[0.1])?;
    rd.log(format!(
        "top 10%: precision {:.4}, recall {:.4} (baseline {:.4})",
        at_tenth.precision[0], at_tenth.recall[0], at_tenth.baseline[0]
    ));
    Ok(json!({
        "precision_at_0.1": at_tenth.precision[0],
        "recall_at_0.1": at_tenth.recall[0],
        "baseline": at_tenth.baseline[0],
        "group_weights": groups,
    }))
}

fn consistency_cmd(a: &ConsistencyArgs, seed: u64, rd: &mut RunDir) -> Result<Value> {
    let cfg = ConsistencyConfig {
        sizes: a.sizes.clone(),
        repeats: a.repeats,
        seed,
        extra: a.extra.config(seed),
        posterior: a.logistic.config(),
    };
    let table = match a.preset {
        ConsistencyPreset::Lda => {
            let spec = GaussianLdaSpec::mean_drift();
            consistency_curve(|n, s| gen_lda(&spec, n, n, s), &cfg)?
        }
        ConsistencyPreset::LabelShift => {
            let spec = GroupShiftSpec::label_shift();
            consistency_curve(|n, s| gen_group_shift(&spec, n, n, s), &cfg)?
        }
    };
    table.save(rd.path("consistency.csv"))?;
    for r in &table.rows {
        rd.log(format!(
            "n {}: parameter error {:.5} ± {:.5}, weight error {:.5} ± {:.5}",
            r.n, r.param_err_mean, r.param_err_std, r.weight_err_mean, r.weight_err_std
        ));
    }
    Ok(serde_json::to_value(&table)?)
}
