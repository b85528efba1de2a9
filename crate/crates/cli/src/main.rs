use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dps_abs_cli::config::ConfigFile;
use dps_abs_cli::{commands, CmdError, CmdResult};

#[derive(Parser)]
#[command(
    name = "dps-abs",
    version,
    about = "Active beam splitting attack analysis for the DPS QKD protocol"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the seed from the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize the attack for every configured channel length (sweep.csv).
    Sweep,
    /// Optimize the attack at a single length and dump the full record.
    OptimizePoint,
    /// Critical error rate for a given information bound.
    CriticalError,
    /// Secret key rate for a given conclusive probability and bound.
    Keyrate,
    /// Key-rate-optimal Alice intensity per length (optimal_mua.csv).
    OptimalMua,
    /// Monte-Carlo simulation of the configured clean or attacked protocol.
    Simulate,
    /// Monte-Carlo and finite-difference validation suite.
    Validate,
}

fn run(cli: &Cli) -> CmdResult<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let resolved = file.resolve(cli.seed)?;

    std::fs::create_dir_all(&cli.out).map_err(|e| {
        CmdError::config(format!(
            "cannot create output directory {}: {e}",
            cli.out.display()
        ))
    })?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CmdError::config("--jobs must be at least 1"));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CmdError::config(format!("cannot build worker pool: {e}")))?;

    pool.install(|| match cli.cmd {
        Cmd::Sweep => commands::run_sweep(&resolved, &cli.out),
        Cmd::OptimizePoint => commands::run_optimize_point(&resolved, &cli.out),
        Cmd::CriticalError => commands::run_critical_error(&resolved, &cli.out),
        Cmd::Keyrate => commands::run_keyrate(&resolved, &cli.out),
        Cmd::OptimalMua => commands::run_optimal_mua(&resolved, &cli.out),
        Cmd::Simulate => commands::run_simulate(&resolved, &cli.out),
        Cmd::Validate => commands::run_validate(&resolved, &cli.out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
