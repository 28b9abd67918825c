use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use piezobeam::analysis::{self, ConvergenceKind};
use piezobeam::scenario::{run_scenario, ScenarioConfig};
use piezobeam::Error;

#[derive(Parser)]
#[command(name = "piezobeam", version, about = "Filtered finite-difference piezoelectric beam simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; omitted means the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key.path=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one scenario and write its time series, snapshots and summary.
    Run(Common),
    /// Refinement study with Richardson order estimates.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Kind::Space)]
        kind: Kind,
        /// Grid sizes (space) or time steps (time); at least three.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Integration horizon of each refinement run.
        #[arg(long, default_value_t = 0.5)]
        t_end: f64,
    },
    /// Grid search of the feedback gains over {0.1, 1, 10}^3.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0])]
        values: Vec<f64>,
    },
    /// Run the verification suite.
    Check {
        #[command(flatten)]
        common: Common,
        /// Include the long reference-scenario runs.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Space,
    Time,
}

fn load(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut config = match &common.config {
        Some(path) => ScenarioConfig::from_file(path, &common.overrides)?,
        None => ScenarioConfig::from_toml_str("", &common.overrides)?,
    };
    if let Some(out) = &common.out {
        config.output_dir = Some(out.clone());
    }
    Ok(config)
}

fn write_json(dir: Option<&Path>, name: &str, value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), &text)?;
    }
    println!("{text}");
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidGrid(_) => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run(common) => {
            let config = load(&common)?;
            let record = run_scenario(&config)?;
            if let Some(dir) = &config.output_dir {
                record.write(dir)?;
            }
            let s = &record.summary;
            println!(
                "{} N={} t_end={} E0={:.6e} E_T={:.6e} ratio={:.6e} completed={}",
                config.model, config.n, s.t_end, s.initial_energy.total, s.final_energy.total, s.energy_ratio, s.completed
            );
            if let Some(f) = &s.failure {
                eprintln!("solver failure: {f}");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Converge { common, kind, levels, t_end } => {
            let config = load(&common)?;
            let kind = match kind {
                Kind::Space => ConvergenceKind::Space,
                Kind::Time => ConvergenceKind::Time,
            };
            let levels = levels.unwrap_or_else(|| analysis::default_levels(kind));
            let report = analysis::convergence_study(&config, kind, &levels, t_end)?;
            write_json(config.output_dir.as_deref(), "convergence.json", &report)?;
            Ok(0)
        }
        Command::Sweep { common, values } => {
            let config = load(&common)?;
            let report = analysis::gain_sweep(&config, &values)?;
            write_json(config.output_dir.as_deref(), "sweep.json", &report)?;
            Ok(if report.best.is_some() { 0 } else { 3 })
        }
        Command::Check { common, full } => {
            let config = load(&common)?;
            let report = analysis::check_suite(&config, full);
            for c in &report.checks {
                println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(dir) = &config.output_dir {
                write_json(Some(dir), "checks.json", &report)?;
            }
            Ok(if report.all_passed() { 0 } else { 4 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
