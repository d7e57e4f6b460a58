//! `mgl`: sample datasets, train and evaluate learners, run gap experiments,
//! sweeps and the verification suites.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification failure,
//! 3 solver non-convergence (the output is still written).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mgl::harness::{
    run_gap_experiment, run_integrality_report, sample_split, sweep, sweep_csv, to_csv, train_model, verify_lemmas,
    with_threads, ExperimentConfig, Split, Suite, TrainedModel,
};
use mgl::measures::{dataset_from_csv, dataset_to_csv};
use mgl::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "mgl", version, about = "Margin-gap lab for surrogate-loss learners on the sphere")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON). `sweep` also takes a list of configs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the master seed of every config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "MGL_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Orthopoly,
    Kernels,
    Geometry,
    Band,
    Solver,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the train or test split of a config to CSV.
    Gen {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Sample size; defaults to the config's n_train or n_test.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the config's learner and write the model as JSON.
    Train {
        /// Training CSV; the config's train split when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Test CSV; the config's test split when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Margin for err_margin; defaults to the config's gamma.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run the gap experiment over all seeds of the config.
    Gap,
    /// Surrogate optimum against the certified margin error, per seed.
    Integrality,
    /// One row per (config, seed) over a list of configs.
    Sweep,
    /// Run the lemma verification suites.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: SuiteArg,
    },
}

enum Failure {
    Usage(String),
    Verify,
    NonConvergence,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } => Failure::NonConvergence,
            other => Failure::Usage(other.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.global.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => with_threads(n, || run(&cli)).unwrap_or_else(|e| Err(e.into())),
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Verify) => ExitCode::from(EXIT_VERIFY),
        Err(Failure::NonConvergence) => {
            eprintln!("error: solver did not reach the requested duality gap");
            ExitCode::from(EXIT_NONCONVERGENCE)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::Gen { split, n } => {
            let cfg = load_config(g)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let data = sample_split(&cfg, cfg.spec.seed, split, *n)?;
            let text = match g.format.unwrap_or(Format::Csv) {
                Format::Csv => dataset_to_csv(&data)?,
                Format::Json => json(&data)?,
            };
            emit(g, &text)
        }
        Command::Train { data } => {
            json_only(g)?;
            let cfg = load_config(g)?;
            let data = match data {
                Some(p) => dataset_from_csv(&read(p)?)?,
                None => sample_split(&cfg, cfg.spec.seed, Split::Train, None)?,
            };
            let model = train_model(&cfg, &data)?;
            emit(g, &model.to_json()?)?;
            converged(model.certificate().converged)
        }
        Command::Eval { model, data, gamma } => {
            let model = TrainedModel::from_json(&read(model)?)?;
            let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
            let gamma = gamma
                .or(cfg.as_ref().map(|c| c.spec.gamma))
                .ok_or_else(|| Failure::Usage("eval needs --gamma or --config".into()))?;
            let boundary = cfg.as_ref().is_some_and(|c| c.spec.boundary_counts);
            let data = match (data, &cfg) {
                (Some(p), _) => dataset_from_csv(&read(p)?)?,
                (None, Some(c)) => sample_split(c, c.spec.seed, Split::Test, None)?,
                (None, None) => return Err(Failure::Usage("eval needs --data or --config".into())),
            };
            let ev = model.evaluate(&data, gamma, boundary)?;
            let text = match g.format.unwrap_or(Format::Json) {
                Format::Csv => to_csv(&[ev])?,
                Format::Json => json(&ev)?,
            };
            emit(g, &text)
        }
        Command::Gap => {
            let cfg = load_config(g)?;
            let report = run_gap_experiment(&cfg)?;
            let text = match g.format.unwrap_or(Format::Json) {
                Format::Csv => to_csv(&report.seeds)?,
                Format::Json => report.to_json()?,
            };
            emit(g, &text)?;
            converged(!report.has_nonconvergence())
        }
        Command::Integrality => {
            let cfg = load_config(g)?;
            let report = run_integrality_report(&cfg)?;
            let text = match g.format.unwrap_or(Format::Json) {
                Format::Csv => to_csv(&report.rows)?,
                Format::Json => json(&report)?,
            };
            emit(g, &text)?;
            converged(!report.has_nonconvergence())
        }
        Command::Sweep => {
            let configs = load_configs(g)?;
            let rows = sweep(&configs)?;
            let text = match g.format.unwrap_or(Format::Csv) {
                Format::Csv => sweep_csv(&rows)?,
                Format::Json => json(&rows)?,
            };
            emit(g, &text)
        }
        Command::Verify { suite } => {
            let suite = match suite {
                SuiteArg::Orthopoly => Suite::Orthopoly,
                SuiteArg::Kernels => Suite::Kernels,
                SuiteArg::Geometry => Suite::Geometry,
                SuiteArg::Band => Suite::Band,
                SuiteArg::Solver => Suite::Solver,
                SuiteArg::All => Suite::All,
            };
            let report = verify_lemmas(suite);
            let text = match g.format.unwrap_or(Format::Json) {
                Format::Csv => {
                    let rows: Vec<CheckRow> = report
                        .checks
                        .iter()
                        .map(|c| CheckRow {
                            suite: c.suite.clone(),
                            name: c.name.clone(),
                            passed: c.passed,
                            cases: c.cases,
                            counterexample: c.counterexample.as_ref().map(|v| v.to_string()).unwrap_or_default(),
                        })
                        .collect();
                    to_csv(&rows)?
                }
                Format::Json => report.to_json()?,
            };
            emit(g, &text)?;
            if report.passed {
                Ok(())
            } else {
                Err(Failure::Verify)
            }
        }
    }
}

/// `verify` rows with the counterexample as an inline JSON string.
#[derive(Serialize)]
struct CheckRow {
    suite: String,
    name: String,
    passed: bool,
    cases: usize,
    counterexample: String,
}

fn converged(ok: bool) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(Failure::NonConvergence)
    }
}

fn json_only(g: &Global) -> Outcome {
    match g.format {
        Some(Format::Csv) => Err(Failure::Usage("models are written as JSON only".into())),
        _ => Ok(()),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Usage(e.to_string()))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn config_text(g: &Global) -> Result<String, Failure> {
    let path = g.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    read(path)
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::from_json(&config_text(g)?)?;
    if let Some(seed) = g.seed {
        cfg.spec.seed = seed;
    }
    Ok(cfg)
}

/// A single config or a JSON list of them.
fn load_configs(g: &Global) -> Result<Vec<ExperimentConfig>, Failure> {
    let value: serde_json::Value = serde_json::from_str(&config_text(g)?).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut configs: Vec<ExperimentConfig> =
        if value.is_array() { serde_json::from_value(value) } else { serde_json::from_value(value).map(|c| vec![c]) }
            .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = g.seed {
        configs.iter_mut().for_each(|c| c.spec.seed = seed);
    }
    Ok(configs)
}

fn emit(g: &Global, text: &str) -> Outcome {
    let text = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
    match &g.out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Usage(e.to_string())),
    }
}
