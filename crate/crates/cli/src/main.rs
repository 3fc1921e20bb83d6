use anyhow::Context;
use clap::{Parser, Subcommand};
use mulann::harness::{self, ExperimentConfig, HarnessError, Table};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Semi-supervised multi-domain adversarial learning experiments.
///
/// Reports go to `$MULANN_OUT/<experiment.name>/<command>.csv`.
#[derive(Parser, Debug)]
#[command(name = "mulann", version)]
struct Cli {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// First seed (overrides `experiment.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root.
    #[arg(long, global = true, env = "MULANN_OUT", default_value = "mulann-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per seed; write metrics, checkpoints and loss traces.
    Train,
    /// Re-evaluate the checkpoints written by `train`.
    Evaluate,
    /// Accuracy over the sweep grid of (p, p*).
    SweepP,
    /// Class-asymmetry cases for each configured method.
    Asymmetry,
    /// Fuzz random discrete instances against every bound.
    Bounds,
    /// Proxy divergence per domain pair on inputs and features.
    Divergence,
    /// Print the effective config as TOML.
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::SweepP => "sweep-p",
            Command::Asymmetry => "asymmetry",
            Command::Bounds => "bounds",
            Command::Divergence => "divergence",
            Command::Config => "config",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config { path: path.display().to_string(), reason: e.to_string() })?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(table: &Table, out: &Path, file: &str) {
    let means = table.rows.iter().filter(|r| r.first().is_some_and(|s| s == "mean")).count();
    println!("{}: {} rows ({} aggregate)", out.join(file).display(), table.rows.len(), means);
}

fn run(cli: &Cli) -> Result<ExitCode, HarnessError> {
    let cfg = load_config(cli)?;
    let out = cli.out.join(&cfg.experiment.name);
    match cli.command {
        Command::Train => report(&harness::cmd_train(&cfg, &out)?, &out, "train.csv"),
        Command::Evaluate => report(&harness::cmd_evaluate(&cfg, &out)?, &out, "evaluate.csv"),
        Command::SweepP => report(&harness::cmd_sweep_p(&cfg, &out)?, &out, "sweep-p.csv"),
        Command::Asymmetry => report(&harness::cmd_asymmetry(&cfg, &out)?, &out, "asymmetry.csv"),
        Command::Divergence => report(&harness::cmd_divergence(&cfg, &out)?, &out, "divergence.csv"),
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Bounds => {
            let s = harness::cmd_bounds(&cfg, &out)?;
            println!(
                "{}: {} instances, {} checks, {} violations",
                out.join("bounds.csv").display(),
                s.instances,
                s.checks,
                s.violations
            );
            if s.violations > 0 {
                return Ok(ExitCode::from(harness::EXIT_BOUND_VIOLATION));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli).with_context(|| format!("mulann {}", cli.command.name())) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code)
        }
    }
}
