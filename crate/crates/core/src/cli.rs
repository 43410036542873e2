//! Command-line front end: `run`, `verify` and `list-integrands`.
//!
//! Exit codes: 0 success, 1 runtime or I/O error, 2 invalid config,
//! 3 a hard invariant failed (the failing check is named on stderr).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::functional::IntegrandRegistry;
use crate::io::write_field_csv;
use crate::pipeline::minimizing_sequence_pipeline;
use crate::verify::{run_suite, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "symmin", version, about = "Symmetric minimizing sequences on discretized balls and annuli")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the minimizing-sequence pipeline for one experiment config.
    Run { config: PathBuf },
    /// Run an invariant suite: axioms, oracle or pipeline.
    Verify {
        suite: Suite,
        /// Smaller case counts for the axiom and oracle suites.
        #[arg(long)]
        quick: bool,
    },
    /// List the registered integrands.
    ListIntegrands,
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidDomain(_)
            | Error::InvalidGrid(_)
            | Error::InvalidGrowth(_)
            | Error::UnknownIntegrand(_)
            | Error::Json(_)
    )
}

/// The check an invariant error comes from, if it is one.
fn invariant_check(e: &Error) -> Option<&'static str> {
    match e {
        Error::PolarAssumptionViolated { .. } => Some("polarization monotonicity"),
        Error::AssertionFailure { .. } => Some("a-priori gradient bound"),
        Error::InfEstimateDrift { .. } => Some("inf estimate"),
        _ => None,
    }
}

fn run(config: &Path, out: &mut dyn Write, err: &mut dyn Write) -> std::io::Result<i32> {
    let registry = IntegrandRegistry::with_builtins();
    let experiment = match ExperimentConfig::load(config).and_then(|c| c.build(&registry)) {
        Ok(e) => e,
        Err(Error::Io(e)) => {
            writeln!(err, "cannot read {}: {e}", config.display())?;
            return Ok(EXIT_RUNTIME);
        }
        Err(e) => {
            writeln!(err, "config rejected: {e}")?;
            return Ok(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_RUNTIME });
        }
    };
    let cfg = &experiment.config;
    let trace = match minimizing_sequence_pipeline(&experiment.functional, &cfg.pipeline) {
        Ok(t) => t,
        Err(e) => {
            if let Some(check) = invariant_check(&e) {
                writeln!(err, "invariant violated: {check}: {e}")?;
                return Ok(EXIT_INVARIANT);
            }
            writeln!(err, "run failed: {e}")?;
            return Ok(EXIT_RUNTIME);
        }
    };
    let dir = cfg.output_dir();
    let stem = cfg.stem();
    let written = trace.write(&dir, stem).and_then(|()| {
        if cfg.outputs.fields {
            for (row, v) in trace.rows.iter().zip(&trace.selected) {
                write_field_csv(&dir.join(format!("{stem}.v{}.csv", row.h)), v)?;
            }
        }
        Ok(())
    });
    if let Err(e) = written {
        writeln!(err, "cannot write outputs to {}: {e}", dir.display())?;
        return Ok(EXIT_RUNTIME);
    }
    writeln!(out, "{}: {} steps written to {}", cfg.name, trace.rows.len(), dir.join(stem).display())?;
    for c in &trace.meta.checks {
        let status = match (c.passed, c.hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        writeln!(out, "  {status} {} ({})", c.name, c.detail)?;
    }
    if trace.invariants_hold() {
        return Ok(EXIT_OK);
    }
    for c in trace.failed_checks().into_iter().filter(|c| c.hard) {
        writeln!(err, "invariant violated: {}: {}", c.name, c.detail)?;
    }
    Ok(EXIT_INVARIANT)
}

fn verify(suite: Suite, quick: bool, out: &mut dyn Write, err: &mut dyn Write) -> std::io::Result<i32> {
    let report = match run_suite(suite, quick) {
        Ok(r) => r,
        Err(e) => {
            writeln!(err, "suite aborted: {e}")?;
            return Ok(EXIT_RUNTIME);
        }
    };
    write!(out, "{}", report.render())?;
    if report.passed() {
        return Ok(EXIT_OK);
    }
    writeln!(err, "failed: {}", report.failed().join("; "))?;
    Ok(EXIT_INVARIANT)
}

/// Executes a parsed command and returns the process exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let code = match &cli.command {
        Command::Run { config } => run(config, out, err),
        Command::Verify { suite, quick } => verify(*suite, *quick, out, err),
        Command::ListIntegrands => IntegrandRegistry::with_builtins()
            .names()
            .into_iter()
            .try_for_each(|(name, description)| writeln!(out, "{name}\t{description}"))
            .map(|()| EXIT_OK),
    };
    code.unwrap_or(EXIT_RUNTIME)
}
