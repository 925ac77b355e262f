use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use carleman_core::experiment::{self, Axis, CellStatus, ExperimentConfig};
use carleman_core::Error;

#[derive(Parser, Debug)]
#[command(name = "carleman", version, about = "Truncated Carleman linearization experiments for 1D Burgers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// First-moment snapshots per truncation against the reference.
    Snapshot(Common),
    /// Errors over N for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Standard and sparse degrees of freedom.
    Dof(Common),
    /// Oracle checks; nonzero exit when any fails.
    Verify(Common),
    /// Theory constants over nu_list x c_list x lambda_list.
    CheckConstants(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if common.workers.is_some() {
        cfg.workers = common.workers;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.resolve()
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Snapshot(common) => {
            let out = experiment::cmd_snapshot(&load(&common)?)?;
            for (n, e) in &out.failures {
                eprintln!("N={n}: {e}");
            }
            println!("wrote {}", out.path.display());
            Ok(if out.failures.iter().any(|(_, e)| e.is_convergence_failure()) { 3 } else { 0 })
        }
        Command::Sweep { common, axis } => {
            let out = experiment::cmd_sweep(&load(&common)?, axis)?;
            for c in &out.cells {
                let errs: Vec<String> = c.errors().iter().map(|e| format!("{e:.3e}")).collect();
                println!(
                    "{}={:<8} {:<8} ratio {:<10} e_N [{}]",
                    axis.name(),
                    c.axis_value,
                    format!("{:?}", c.status).to_lowercase(),
                    c.fitted_ratio.map_or("-".into(), |r| format!("{r:.4}")),
                    errs.join(", ")
                );
            }
            if let Some(t) = out.b_threshold {
                println!("b threshold in ({}, {})", t.converged_below, t.diverged_above);
            }
            println!("wrote {}", out.path.display());
            let failed = out.cells.iter().any(|c| c.status == CellStatus::Error);
            Ok(if failed { 1 } else { 0 })
        }
        Command::Dof(common) => {
            let (rows, path) = experiment::cmd_dof(&load(&common)?)?;
            println!("{} rows, wrote {}", rows.len(), path.display());
            Ok(0)
        }
        Command::Verify(common) => {
            let (report, path) = experiment::cmd_verify(&load(&common)?)?;
            for c in &report.checks {
                println!("{:<34} {:<5} {:e}", c.name, if c.passed { "ok" } else { "FAIL" }, c.value);
            }
            println!("wrote {}", path.display());
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::CheckConstants(common) => {
            let (rows, path) = experiment::cmd_check_constants(&load(&common)?)?;
            println!("{} rows, wrote {}", rows.len(), path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
