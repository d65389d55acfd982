use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hamfd_core::harness::{
    run_detect_sir, run_detect_skr, run_estimate, run_simulate, run_verify, RunReport, Scenario, Suite, VerifyOptions,
};

/// Projection-based fault detection experiments.
#[derive(Parser)]
#[command(name = "hamfd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (must exist).
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the excluded leading fraction of samples.
    #[arg(long = "burn-in")]
    burn_in: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario and write data.csv.
    Simulate(RunArgs),
    /// Image-side detection.
    DetectSir(RunArgs),
    /// Kernel-side detection.
    DetectSkr(RunArgs),
    /// Uncertainty estimation.
    Estimate(RunArgs),
    /// Run an invariant suite.
    Verify {
        /// factorization, projection, divergence, estimation, lti_oracle or all
        #[arg(default_value = "all", value_parser = parse_suite)]
        suite: Suite,
        /// Scale the SIR storage gradient before projecting (mutation test).
        #[arg(long)]
        corrupt_gradient: Option<f64>,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: hamfd_core::Error| e.to_string())
}

fn run(args: &RunArgs, f: fn(&Scenario, &Path) -> hamfd_core::Result<RunReport>) -> anyhow::Result<u8> {
    let sc = Scenario::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?
        .with_overrides(args.seed, args.burn_in);
    let report = f(&sc, &args.out)?;
    if let Some(v) = report.summary.verdict {
        println!("{v}: {}/{} windows faulty", report.summary.faulty_windows, report.summary.windows);
    }
    if let Some(e) = &report.estimate {
        println!("consistency defect {:e} (relative {:e})", e.consistency_defect, e.relative_defect);
    }
    Ok(report.exit_status() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => run(a, run_simulate),
        Command::DetectSir(a) => run(a, run_detect_sir),
        Command::DetectSkr(a) => run(a, run_detect_skr),
        Command::Estimate(a) => run(a, run_estimate),
        Command::Verify { suite, corrupt_gradient } => {
            let rep = run_verify(*suite, &VerifyOptions { corrupt_gradient: *corrupt_gradient });
            for c in &rep.checks {
                println!("{c}");
            }
            Ok(if rep.passed() { 0 } else { 1 })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
