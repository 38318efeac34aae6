use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use vrpg_cli::commands::{cmd_constants, cmd_run, cmd_verify, Overrides};
use vrpg_cli::spec::default_out_dir;
use vrpg_core::verify::Level;

#[derive(Parser)]
#[command(name = "vrpg", version, about = "Variance-reduced (natural) policy gradient laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a spec and write CSV/JSON artifacts.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory (default: the spec file's out_dir, then $VRPG_OUT_DIR, then ./vrpg-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds replacing the spec file's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Use exact advantages in the NPG subproblem.
        #[arg(long)]
        exact_adv: bool,
        /// Fisher damping.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Run the acceptance criteria; exits 1 if any fails.
    Verify {
        #[arg(long, default_value = "fast")]
        level: Level,
        /// Where to write verify.json (and constants/audit JSON at full level).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the constants report and theorem schedules for a spec.
    Constants {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds; the first seeds the moment probes.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Target accuracy for the schedules (default: from the spec file, else 0.1).
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { spec, out, seeds, exact_adv, lambda } => {
            let o = Overrides { out, seeds, exact_adv, lambda, epsilon: None };
            let index = cmd_run(&spec, &o)?;
            for e in &index.runs {
                let flag = if e.truncated { " (budget exhausted)" } else { "" };
                println!("{} seed {}: {} updates, {} trajectories -> {}{flag}", e.algorithm, e.seed, e.updates, e.trajectories, e.csv);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { level, out } => {
            let out = out.or_else(|| std::env::var_os(vrpg_cli::spec::OUT_DIR_ENV).map(|_| default_out_dir()));
            let summary = cmd_verify(level, out.as_deref(), |c| println!("{c}"))?;
            println!("{}", if summary.passed { "all criteria passed" } else { "some criteria FAILED" });
            Ok(if summary.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Constants { spec, out, seeds, lambda, epsilon } => {
            let o = Overrides { out, seeds, exact_adv: false, lambda, epsilon };
            let res = cmd_constants(&spec, &o)?;
            println!("{}", serde_json::to_string_pretty(&res)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
