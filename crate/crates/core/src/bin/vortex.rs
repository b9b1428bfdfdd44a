use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vortex::harness::{self, RunConfig};
use vortex::{Error, Result};

/// Stabilized finite element solver for 2D periodic vorticity dynamics.
#[derive(Parser)]
#[command(name = "vortex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write ledger, snapshots and report.
    Run {
        config: PathBuf,
        /// Output directory (overrides `outputs.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mesh-refinement study with `dt = c h^{3/2}`.
    Converge {
        config: PathBuf,
        /// Comma-separated mesh sizes, e.g. `16,32,64`.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 0.25)]
        dt_coefficient: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute estimator reports from a previous run's outputs.
    Estimate {
        config: PathBuf,
        /// Directory holding `ledger.csv`, `diagnostics.csv` and `snapshots/`.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Filter widths (defaults to the configured policy).
        #[arg(long, value_delimiter = ',')]
        delta: Vec<f64>,
    },
    /// Maximum-principle check with stabilizer calibration.
    DmpCheck {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the mesh as JSON.
    MeshDump {
        #[arg(long)]
        n: usize,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    kind: &'a str,
    exit_code: i32,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    print_line(&serde_json::to_string_pretty(value)?)
}

/// Writes to stdout; a closed pipe is not an error.
fn print_line(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn out_dir(out: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    out.unwrap_or_else(|| cfg.outputs.dir.clone())
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let summary = harness::cli_run(&cfg, out.as_deref())?;
            print_json(&summary)?;
            Ok(0)
        }
        Command::Converge {
            config,
            n,
            dt_coefficient,
            out,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let table = harness::converge(&cfg, &n, dt_coefficient)?;
            harness::write_convergence(&table, &out_dir(out, &cfg))?;
            print_json(&table)?;
            Ok(if table.complete { 0 } else { 1 })
        }
        Command::Estimate { config, dir, delta } => {
            let cfg = RunConfig::from_path(&config)?;
            let deltas = if delta.is_empty() { vec![cfg.delta_policy.delta(cfg.h())] } else { delta };
            let reports = harness::cli_estimate(&cfg, &out_dir(dir, &cfg), &deltas)?;
            print_json(&reports)?;
            Ok(0)
        }
        Command::DmpCheck { config, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let report = harness::dmp_check(&cfg)?;
            harness::write_dmp_report(&report, &out_dir(out, &cfg))?;
            print_json(&report)?;
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::MeshDump { n, out } => {
            let dump = harness::mesh_dump(n)?;
            match out {
                Some(p) => write_file(&p, &serde_json::to_string(&dump)?)?,
                None => print_line(&serde_json::to_string(&dump)?)?,
            }
            Ok(0)
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = harness::worker_pool().and_then(|p| {
        let n = p.current_num_threads();
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }) {
        return fail(&e);
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    let report = ErrorReport {
        error: &e.to_string(),
        kind: e.kind(),
        exit_code: e.exit_code(),
    };
    eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
    ExitCode::from(e.exit_code() as u8)
}
