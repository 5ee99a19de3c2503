//! Batch experiments behind the `lab` binary: one subcommand per check, driven by a flat config
//! file and writing CSV or JSON reports with optional SVG plots.
//!
//! Reports depend only on the config, so identical configs give byte-identical files regardless
//! of `LAB_THREADS`. Wall time goes to stderr.

pub mod commands;
pub mod config;
pub mod report;
pub mod selftest;

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::boundary_core::{inv, BoundaryPoint, Word};
use crate::error::{Error, Result};
pub use config::{ExperimentConfig, Format};
pub use report::{PlotSpec, Report, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Selftest,
    Sobolev,
    GeometricControl,
    CayleyNorms,
    RepBound,
    AlmostInvariant,
    Potential,
    Rescaling,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Selftest,
        Command::Sobolev,
        Command::GeometricControl,
        Command::CayleyNorms,
        Command::RepBound,
        Command::AlmostInvariant,
        Command::Potential,
        Command::Rescaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Selftest => "selftest",
            Command::Sobolev => "sobolev",
            Command::GeometricControl => "geometric_control",
            Command::CayleyNorms => "cayley_norms",
            Command::RepBound => "rep_bound",
            Command::AlmostInvariant => "almost_invariant",
            Command::Potential => "potential",
            Command::Rescaling => "rescaling",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand {s:?}")))
    }
}

/// Runs one experiment and returns its report.
pub fn run_command(cmd: Command, config: &ExperimentConfig) -> Result<Report> {
    match cmd {
        Command::Selftest => commands::cmd_selftest(config),
        Command::Sobolev => commands::cmd_sobolev(config),
        Command::GeometricControl => commands::cmd_geometric_control(config),
        Command::CayleyNorms => commands::cmd_cayley_norms(config),
        Command::RepBound => commands::cmd_rep_bound(config),
        Command::AlmostInvariant => commands::cmd_almost_invariant(config),
        Command::Potential => commands::cmd_potential(config),
        Command::Rescaling => commands::cmd_rescaling(config),
    }
}

/// Exit status for an error: 2 for bad input, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::ParamError(_) | Error::Io(_) | Error::TailDivergence(_) => 2,
        _ => 1,
    }
}

/// Loads the config, runs the experiment and writes the report; returns the process exit code.
pub fn execute(cmd: Command, config_path: &Path, out: Option<&Path>, plot: bool) -> i32 {
    let started = std::time::Instant::now();
    let result = (|| -> Result<Report> {
        let mut config = ExperimentConfig::load(config_path)?;
        if let Some(out) = out {
            config.output_path = out.display().to_string();
        }
        config.plot |= plot;
        let report = run_command(cmd, &config)?;
        for path in report.write(Path::new(&config.output_path), config.format, config.plot)? {
            eprintln!("wrote {}", path.display());
        }
        Ok(report)
    })();
    eprintln!("{} finished in {:.2?}", cmd.name(), started.elapsed());
    match result {
        Ok(report) if report.passed() => 0,
        Ok(report) => {
            for v in &report.violations {
                eprintln!("violation: {v}");
            }
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// The configured basepoints, or ten distinct seeded random ones.
pub fn random_basepoints(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<BoundaryPoint>> {
    if !config.basepoints.is_empty() {
        return config.basepoints.iter().map(|b| BoundaryPoint::parse(b)).collect();
    }
    let k = 2 * config.m as u8;
    let mut out: Vec<BoundaryPoint> = Vec::new();
    while out.len() < 10 {
        let head: Vec<u8> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(0..k)).collect();
        let period: Vec<u8> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(0..k)).collect();
        let raw_reduced = |w: &[u8]| w.windows(2).all(|p| p[1] != inv(p[0]));
        if !raw_reduced(&head) || !raw_reduced(&period) {
            continue;
        }
        if let Ok(b) = BoundaryPoint::new(&Word::from_letters(&head), &Word::from_letters(&period)) {
            if !out.contains(&b) {
                out.push(b);
            }
        }
    }
    Ok(out)
}
