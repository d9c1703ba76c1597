//! Command-line interface. Every run resolves its flags into a [`RunConfig`],
//! writes it to `manifest.json` in the output directory, and executes it;
//! `replay` executes a saved manifest again.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SyntheticSpec, DEFAULT_PREVALENCE, DEFAULT_SYNTHETIC_DIM};
use crate::error::{Error, Result};
use crate::featsel::{self, Criterion};
use crate::harness::{self, BatchPlan, PredictorSpec};
use crate::metrics::DEFAULT_RELIABILITY_BINS;
use crate::mlp::TrainConfig;
use crate::rebalance::{RebalanceKind, RebalanceMode};
use crate::seed;
use crate::venn::{DecisionRule, Theta};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "VENNPRED_OUT";
pub const DEFAULT_LAMBDA: usize = 6;
pub const DEFAULT_HIDDEN: usize = 5;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vennpred", version, about = "Venn prediction with neural-network taxonomies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic binary-feature dataset with known probabilities.
    Gen(GenArgs),
    /// Score features with chi-squared and information gain.
    Featsel(FeatselArgs),
    /// Repeated stratified cross-validation.
    Batch(BatchArgs),
    /// Online protocol with cumulative error and bound curves.
    Online(OnlineArgs),
    /// Re-run a saved manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory [default: $VENNPRED_OUT or ./vennpred-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 162)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_PREVALENCE)]
    pub prevalence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SYNTHETIC_DIM)]
    pub dim: usize,
    /// Standard deviation of the latent logit noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Labeled CSV (label column last).
    #[arg(long, conflicts_with = "synthetic_n")]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic examples instead of reading a file.
    #[arg(long)]
    pub synthetic_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub synthetic_seed: u64,
    #[arg(long, default_value_t = DEFAULT_PREVALENCE)]
    pub prevalence: f64,
    /// Comma-separated feature indices to keep.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct FeatselArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = CriterionArg::Chi2)]
    pub criterion: CriterionArg,
    /// Features are retained when their score exceeds this value.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Chi2,
    Ig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Vp,
    Ann,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    None,
    Mo,
    Mu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Threshold,
    Argmax,
}

#[derive(Debug, Args)]
pub struct PredictorArgs {
    #[arg(long, value_enum, default_value_t = PredictorArg::Vp)]
    pub predictor: PredictorArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Mo)]
    pub mode: ModeArg,
    /// Number of taxonomy categories (vp only) [default: 6]
    #[arg(long)]
    pub lambda: Option<usize>,
    /// Decision threshold, a number or "auto" (vp only) [default: auto]
    #[arg(long)]
    pub theta: Option<String>,
    /// Decision rule (vp only) [default: threshold]
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Caps the worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RELIABILITY_BINS)]
    pub bins: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[arg(long, default_value_t = 5)]
    pub initial: usize,
    /// Shuffle the example order once with this seed before the run.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the manifest's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic { spec: SyntheticSpec, n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub features: Option<Vec<usize>>,
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        let ds = match &self.source {
            DataSource::Csv { path } => data::load_csv(path, true)?,
            DataSource::Synthetic { spec, n } => data::generate_synthetic(spec, *n)?.0,
        };
        match &self.features {
            Some(cols) => ds.select_features(cols),
            None => Ok(ds),
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum RunConfig {
    Gen {
        spec: SyntheticSpec,
        n: usize,
    },
    Featsel {
        data: DataConfig,
        criterion: Criterion,
        epsilon: f64,
    },
    Batch {
        data: DataConfig,
        plan: BatchPlan,
        workers: Option<usize>,
    },
    Online {
        data: DataConfig,
        predictor: PredictorSpec,
        rule: DecisionRule,
        initial_size: usize,
        shuffle_seed: Option<u64>,
        workers: Option<usize>,
    },
}

fn default_out(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("vennpred-out"))
}

fn resolve_data(args: &DataArgs) -> Result<DataConfig> {
    let source = match (&args.data, args.synthetic_n) {
        (Some(path), None) => DataSource::Csv { path: path.clone() },
        (None, Some(n)) => DataSource::Synthetic {
            spec: SyntheticSpec::with_dim(DEFAULT_SYNTHETIC_DIM, args.prevalence, args.synthetic_seed),
            n,
        },
        _ => return Err(Error::invalid("exactly one of --data or --synthetic-n is required")),
    };
    Ok(DataConfig {
        source,
        features: args.features.clone(),
    })
}

fn resolve_predictor(args: &PredictorArgs) -> Result<(PredictorSpec, DecisionRule)> {
    let mode = RebalanceMode::new(match args.mode {
        ModeArg::None => RebalanceKind::None,
        ModeArg::Mo => RebalanceKind::Mo,
        ModeArg::Mu => RebalanceKind::Mu,
    });
    let mut train_cfg = TrainConfig::with_hidden(args.hidden);
    if let Some(e) = args.max_epochs {
        train_cfg.max_epochs = e;
    }
    train_cfg.validate()?;
    match args.predictor {
        PredictorArg::Ann => {
            if args.lambda.is_some() || args.theta.is_some() || args.rule.is_some() {
                return Err(Error::invalid(
                    "--lambda, --theta and --rule apply only to --predictor vp",
                ));
            }
            Ok((PredictorSpec::Ann { mode, train_cfg }, DecisionRule::default()))
        }
        PredictorArg::Vp => {
            let lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
            if lambda < 2 {
                return Err(Error::invalid("--lambda must be at least 2"));
            }
            let rule = match args.rule.unwrap_or(RuleArg::Threshold) {
                RuleArg::Argmax => {
                    if args.theta.is_some() {
                        return Err(Error::invalid("--theta cannot be combined with --rule argmax"));
                    }
                    DecisionRule::Argmax
                }
                RuleArg::Threshold => DecisionRule::Threshold(match &args.theta {
                    Some(t) => t.parse()?,
                    None => Theta::Auto,
                }),
            };
            Ok((
                PredictorSpec::Vp {
                    lambda,
                    mode,
                    train_cfg,
                },
                rule,
            ))
        }
    }
}

/// Turns parsed arguments into a run configuration and output directory.
pub fn resolve(command: &Command) -> Result<(RunConfig, PathBuf)> {
    match command {
        Command::Gen(a) => {
            let mut spec = SyntheticSpec::with_dim(a.dim, a.prevalence, a.seed);
            if let Some(noise) = a.noise {
                spec.noise_scale = noise;
            }
            Ok((RunConfig::Gen { spec, n: a.n }, default_out(&a.out.out)))
        }
        Command::Featsel(a) => Ok((
            RunConfig::Featsel {
                data: resolve_data(&a.data)?,
                criterion: match a.criterion {
                    CriterionArg::Chi2 => Criterion::Chi2,
                    CriterionArg::Ig => Criterion::Ig,
                },
                epsilon: a.epsilon,
            },
            default_out(&a.out.out),
        )),
        Command::Batch(a) => {
            let (predictor, rule) = resolve_predictor(&a.predictor)?;
            let plan = BatchPlan {
                folds: a.folds,
                repeats: a.repeats,
                seed: a.seed,
                predictor,
                rule,
                n_bins: a.bins,
            };
            Ok((
                RunConfig::Batch {
                    data: resolve_data(&a.data)?,
                    plan,
                    workers: a.predictor.workers,
                },
                default_out(&a.out.out),
            ))
        }
        Command::Online(a) => {
            let (predictor, rule) = resolve_predictor(&a.predictor)?;
            Ok((
                RunConfig::Online {
                    data: resolve_data(&a.data)?,
                    predictor,
                    rule,
                    initial_size: a.initial,
                    shuffle_seed: a.shuffle_seed,
                    workers: a.predictor.workers,
                },
                default_out(&a.out.out),
            ))
        }
        Command::Replay(a) => {
            let text = fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
            let config: RunConfig = serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("bad manifest {}: {e}", a.manifest.display())))?;
            let out = match &a.out {
                Some(o) => o.clone(),
                None => a
                    .manifest
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from(".")),
            };
            Ok((config, out))
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Executes a configuration, writing all artifacts and the manifest into `out`.
/// Returns a short human-readable summary.
pub fn execute(config: &RunConfig, out: &Path) -> Result<String> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = serde_json::to_string_pretty(config)
        .map_err(|e| Error::invalid(format!("cannot serialize manifest: {e}")))?;
    write(&out.join("manifest.json"), manifest + "\n")?;

    match config {
        RunConfig::Gen { spec, n } => {
            let (ds, probs) = data::generate_synthetic(spec, *n)?;
            ds.write_csv(&out.join("data.csv"))?;
            let mut sidecar = String::from("true_prob\n");
            for p in &probs {
                sidecar.push_str(&format!("{p}\n"));
            }
            write(&out.join("true_probs.csv"), sidecar)?;
            Ok(format!(
                "generated {} examples ({} features, prevalence {:.4})",
                ds.len(),
                ds.dim(),
                ds.prevalence().unwrap_or(0.0)
            ))
        }
        RunConfig::Featsel {
            data,
            criterion,
            epsilon,
        } => {
            let ds = data.load()?;
            let scores = featsel::score_features(&ds, *criterion, *epsilon)?;
            featsel::write_scores_csv(&out.join("feature_scores.csv"), &scores)?;
            let kept = featsel::retained_indices(&scores);
            Ok(format!(
                "retained {} of {} features: {}",
                kept.len(),
                scores.len(),
                kept.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
            ))
        }
        RunConfig::Batch {
            data,
            plan,
            workers,
        } => {
            let ds = data.load()?;
            let result = harness::with_workers(*workers, || harness::run_batch(&ds, plan))??;
            let name = config_name(&plan.predictor);
            harness::write_report_csv(&out.join("pooled.csv"), &[(name.clone(), result.pooled.clone())])?;
            let runs: Vec<(String, _)> = result
                .per_run
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("{name}#{i}"), r.clone()))
                .collect();
            harness::write_report_csv(&out.join("per_run.csv"), &runs)?;
            Ok(format!("{name}: {}", result.pooled.to_kv()))
        }
        RunConfig::Online {
            data,
            predictor,
            rule,
            initial_size,
            shuffle_seed,
            workers,
        } => {
            let mut ds = data.load()?;
            if let Some(s) = shuffle_seed {
                let mut order: Vec<usize> = (0..ds.len()).collect();
                order.shuffle(&mut seed::rng_from(*s));
                ds = ds.subset(&order);
            }
            let p = predictor.build(*rule)?;
            let trace = harness::with_workers(*workers, || harness::run_online(&ds, p.as_ref(), *initial_size))??;
            trace.write_csv(&out.join("trace.csv"))?;
            let name = config_name(predictor);
            write(&out.join("curves.svg"), trace.to_svg(&name))?;
            let last = trace.len() - 1;
            let mut summary = format!("{name}: N={} E_N={}", trace.len(), trace.errors[last]);
            if trace.has_bounds() {
                summary.push_str(&format!(" LEP_N={:.3} UEP_N={:.3}", trace.lep[last], trace.uep[last]));
            } else {
                let p = trace.miscalibration_pvalue()?;
                summary.push_str(&format!(" EP_N={:.3} p_value={p:e}", trace.ep[last]));
                write(&out.join("pvalue.txt"), format!("{p:e}\n"))?;
            }
            Ok(summary)
        }
    }
}

fn config_name(spec: &PredictorSpec) -> String {
    match spec {
        PredictorSpec::Vp {
            lambda,
            mode,
            train_cfg,
        } => format!("vp-{}-l{}-h{}", mode.kind, lambda, train_cfg.hidden_units),
        PredictorSpec::Ann { mode, train_cfg } => format!("ann-{}-h{}", mode.kind, train_cfg.hidden_units),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::NoRows
        | Error::DimensionMismatch { .. }
        | Error::InsufficientData(_)
        | Error::Unlabeled(_)
        | Error::UndefinedRate(_) => EXIT_DATA,
    }
}

/// Parses `args`, runs the command, prints a summary and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = resolve(&cli.command).and_then(|(config, out)| {
        let summary = execute(&config, &out)?;
        Ok((summary, out))
    });
    match result {
        Ok((summary, out)) => {
            println!("{summary}");
            println!("outputs written to {}", out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig> {
        let cli = Cli::try_parse_from(std::iter::once("vennpred").chain(args.iter().copied())).unwrap();
        resolve(&cli.command).map(|(c, _)| c)
    }

    #[test]
    fn defaults_resolve() {
        let c = parse(&["batch", "--synthetic-n", "50"]).unwrap();
        match c {
            RunConfig::Batch { plan, .. } => {
                assert_eq!((plan.folds, plan.repeats, plan.n_bins), (10, 10, 20));
                assert_eq!(plan.rule, DecisionRule::Threshold(Theta::Auto));
                match plan.predictor {
                    PredictorSpec::Vp { lambda, train_cfg, .. } => {
                        assert_eq!(lambda, 6);
                        assert_eq!(train_cfg.hidden_units, 5);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lambda_requires_vp() {
        let err = parse(&["batch", "--synthetic-n", "50", "--predictor", "ann", "--lambda", "6"]).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
    }

    #[test]
    fn data_source_required() {
        assert!(parse(&["online"]).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let c = parse(&["online", "--synthetic-n", "30", "--theta", "0.1852", "--mode", "mu"]).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
