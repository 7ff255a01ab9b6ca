//! `geoflow`: command-line access to geodesic shooting, curve comparison,
//! curvature sampling and neural distance fields.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 usage, 3 numeric failure,
//! 4 non-convergence, 5 partial success (some shooting seeds failed).

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use geoflow_core::GeoError;

use args::{Cli, Command};

/// Bad input detected by the front end.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub enum Outcome {
    Complete,
    Partial(String),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<GeoError>() {
        Some(e) if e.is_numeric() => 3,
        Some(e) if e.is_non_convergence() => 4,
        Some(GeoError::InvalidArgument(_) | GeoError::Shape(_) | GeoError::Parse(_)) => 2,
        _ => 1,
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    use commands::*;
    match &cli.command {
        Command::Shoot {
            common,
            integrator,
            p,
            v,
        } => shoot(common, integrator, p, v),
        Command::Connect {
            common,
            integrator,
            shooting,
            p,
            q,
            report,
        } => connect(common, integrator, shooting, p, q, report.as_deref()),
        Command::Compare {
            common,
            integrator,
            shooting,
            p,
            q,
            ensemble,
            steps,
            report,
        } => compare(
            common,
            integrator,
            shooting,
            p,
            q,
            *ensemble,
            *steps,
            report.as_deref(),
        ),
        Command::CurvatureField {
            common,
            grid,
            alpha,
        } => curvature_field(common, *grid, *alpha),
        Command::SampleCurvature {
            common,
            n,
            chains,
            burn_in,
            thin,
            sigma,
            alpha,
        } => sample_curvature(common, *n, *chains, *burn_in, *thin, *sigma, *alpha),
        Command::TrainEikonal {
            common,
            source,
            epochs,
            batch,
            lr,
            lambda,
            alpha,
            sampler,
            weights,
            history,
            resume,
        } => {
            let a = TrainArgs {
                source,
                epochs: *epochs,
                batch: *batch,
                lr: *lr,
                lambda: *lambda,
                alpha: *alpha,
                sampler: sampler.map(Into::into),
                weights: weights.as_deref(),
                history: history.as_deref(),
                resume: resume.as_deref(),
            };
            train_eikonal(common, &a)
        }
        Command::EvalField {
            common,
            weights,
            grid,
            points,
        } => eval_field(common, weights, *grid, points.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(5)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
