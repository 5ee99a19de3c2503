use std::path::PathBuf;
use std::process::ExitCode;

use boundary_lab::lab_cli::{execute, Command};
use clap::Parser;

/// Runs one boundary-lab experiment and writes its report.
#[derive(Parser)]
#[command(name = "lab", version)]
struct Cli {
    /// selftest, sobolev, geometric_control, cayley_norms, rep_bound, almost_invariant, potential or rescaling
    subcommand: String,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_path` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG plot next to the report.
    #[arg(long)]
    plot: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cmd: Command = match cli.subcommand.parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(threads) = std::env::var("LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
    }
    ExitCode::from(execute(cmd, &cli.config, cli.out.as_deref(), cli.plot) as u8)
}
