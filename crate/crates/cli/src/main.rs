//! `mid`: command-line driver for sweeps, single runs and game verification.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 a games
//! bound was violated.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mid_core::data::save_csv;
use mid_core::harness::{
    emit_plotdata, load_records_csv, run_games, run_single, run_sweep, DataSource, ExperimentConfig, GamesConfig,
};
use mid_core::{Error, Seed};

#[derive(Parser)]
#[command(name = "mid", version, about = "Mutual-information defenses against model inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker count. Runs are sequential; values above 1 are accepted and
    /// produce identical output.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load a dataset and write `data.csv` and `schema.json`.
    Synth(Common),
    /// Train one model (first grid point of the first defense) and write it.
    Train(Common),
    /// Train one model and write per-instance attack results.
    Attack(Common),
    /// Run a full defense sweep and write `tradeoff.csv`.
    Sweep(Common),
    /// Verify the game bounds and write `games.json`.
    Games(Common),
    /// Turn a tradeoff CSV into plot files.
    Report {
        /// Tradeoff CSV written by `sweep`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
    Violation,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn experiment(c: &Common) -> Result<ExperimentConfig, Failure> {
    if c.jobs == 0 {
        return Err(Failure::Config("--jobs must be >= 1".into()));
    }
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = Seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = experiment(&c)?;
            let data = cfg.data.load(cfg.seed)?;
            std::fs::create_dir_all(&c.out)?;
            save_csv(c.out.join("data.csv"), &data)?;
            write(&c.out, "schema.json", &to_json(data.schema())?)?;
            if let DataSource::Preset { preset, .. } = cfg.data {
                eprintln!("generated {} rows from preset {preset:?}", data.len());
            }
            println!("{}", c.out.join("data.csv").display());
        }
        Command::Train(c) => {
            let cfg = experiment(&c)?;
            let r = run_single(&cfg)?;
            write(&c.out, "model.json", &r.model_json)?;
            let summary = serde_json::json!({
                "utility_metric": r.utility_metric,
                "utility": r.utility,
                "ece": r.ece,
            });
            write(&c.out, "train_metrics.json", &to_json(&summary)?)?;
            println!("{}", to_json(&summary)?);
        }
        Command::Attack(c) => {
            let cfg = experiment(&c)?;
            let r = run_single(&cfg)?;
            std::fs::create_dir_all(&c.out)?;
            for (kind, result) in &r.attacks {
                let path = c.out.join(format!("attack_{}.csv", kind.as_str()));
                result.save_csv(&path)?;
                println!("{}", path.display());
            }
            r.baseline.save_csv(c.out.join("attack_prior_baseline.csv"))?;
        }
        Command::Sweep(c) => {
            let mut cfg = experiment(&c)?;
            cfg.output = Some(c.out.join("tradeoff.csv"));
            let records = run_sweep(&cfg)?;
            eprintln!("{} records", records.len());
            println!("{}", c.out.join("tradeoff.csv").display());
        }
        Command::Games(c) => {
            if c.jobs == 0 {
                return Err(Failure::Config("--jobs must be >= 1".into()));
            }
            let mut cfg = match &c.config {
                Some(p) => GamesConfig::load(p)?,
                None => GamesConfig::default(),
            };
            if let Some(s) = c.seed {
                cfg.seed = Seed(s);
            }
            let report = run_games(&cfg)?;
            let body = to_json(&report)?;
            write(&c.out, "games.json", &body)?;
            println!("{body}");
            if !report.pass {
                return Err(Failure::Violation);
            }
        }
        Command::Report { input, out } => {
            let records = load_records_csv(&input)?;
            for p in emit_plotdata(&records, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Violation) => {
            eprintln!("bound violated");
            ExitCode::from(3)
        }
    }
}
