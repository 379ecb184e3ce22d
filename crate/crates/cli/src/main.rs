//! `dkam` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 value iteration did not
//! converge, 3 configuration error, 4 `verify` found a failing invariant.

mod config;
mod run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig};
use run::Run;

#[derive(Parser, Debug)]
#[command(name = "dkam", version, about = "Discounted weak KAM toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` of the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Caps the number of worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve the discounted value function.
    Value,
    /// Integrate trajectories from configured and random starts.
    Flow,
    /// Calibrated points and the Aubry set approximation.
    Aubry,
    /// Lyapunov partition, maximal attractor and ω-limits.
    Attractor,
    /// Seeded occupation measures and the Mather set.
    Measures,
    /// Vanishing-discount study over `limits.lambdas`.
    Limits,
    /// Cross-module invariant suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Value => "value",
            Command::Flow => "flow",
            Command::Aubry => "aubry",
            Command::Attractor => "attractor",
            Command::Measures => "measures",
            Command::Limits => "limits",
            Command::Verify => "verify",
        }
    }
}

/// Marks a completed `verify` with failing invariants.
#[derive(Debug)]
struct VerifyFailed(usize);

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} invariant(s) failed; see verify_report.json", self.0)
    }
}

impl std::error::Error for VerifyFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 3;
    }
    if err.downcast_ref::<VerifyFailed>().is_some() {
        return 4;
    }
    match err.downcast_ref::<dkam::Error>() {
        Some(dkam::Error::Config(_)) => 3,
        Some(dkam::Error::NonConvergence(_)) => 2,
        _ => 1,
    }
}

fn execute(command: Command, run: &mut Run) -> Result<()> {
    match command {
        Command::Value => {
            let solved = run.value()?;
            eprintln!(
                "value: {} iterations, guaranteed error {:.3e}",
                solved.report.iterations, solved.report.guaranteed_error
            );
        }
        Command::Flow => run.flow()?,
        Command::Aubry => {
            let solved = run.value()?;
            let approx = run.aubry(&solved)?;
            eprintln!("aubry: {} points", approx.points.len());
        }
        Command::Attractor => {
            let solved = run.value()?;
            run.aubry(&solved)?;
            let (_, att) = run.attractor(&solved)?;
            eprintln!("attractor: {} cells after {} rounds", att.cells.count(), att.rounds);
        }
        Command::Measures => {
            let solved = run.value()?;
            let approx = run.aubry(&solved)?;
            let records = run.measures(&solved, &approx)?;
            eprintln!(
                "measures: {} seeds, {} minimizing",
                records.len(),
                records.iter().filter(|r| r.minimizing).count()
            );
        }
        Command::Limits => {
            let rows = run.limits()?;
            for r in &rows {
                eprintln!("lambda {}: sup|λu| {:.4e}, alpha_hat {:.3e}", r.lambda, r.sup_lambda_u, r.alpha_hat);
            }
        }
        Command::Verify => {
            let report = verify::verify(run)?;
            run.json("verify_report.json", &report)?;
            for c in &report.invariants {
                eprintln!("{} {}: {:.3e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.detail);
            }
            let failed = report.invariants.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(VerifyFailed(failed).into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let clock = Instant::now();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let setup = || -> Result<Run> {
        let path = cli.config.as_ref().ok_or_else(|| ConfigError("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(dir) = &cli.output_dir {
            cfg.output_dir = dir.clone();
        }
        Run::new(cfg)
    };
    let mut run = match setup() {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let result = execute(cli.command, &mut run);
    let (code, message) = match &result {
        Ok(()) => (0, None),
        Err(e) => (exit_code(e), Some(format!("{e:#}"))),
    };
    if let Err(e) = run.write_meta(cli.command.name(), clock.elapsed().as_secs_f64(), code.into(), message.clone()) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    if let Some(m) = message {
        eprintln!("error: {m}");
    }
    ExitCode::from(code)
}
