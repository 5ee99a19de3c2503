//! Running a `lab` experiment from code and reading its report.

use boundary_lab::lab_cli::{run_command, Command, ExperimentConfig};

fn main() -> boundary_lab::error::Result<()> {
    let config = ExperimentConfig::parse("depth = 4\ns_grid = 0.2, 0.4\nt_grid = 0\ngroup_radius = 2\nseed = 7\n")?;
    let report = run_command(Command::RepBound, &config)?;
    println!("{}: {} rows, passed = {}", report.experiment, report.rows.len(), report.passed());
    for (key, value) in &report.summary {
        println!("  {key} = {value:?}");
    }
    let (rows, _summary) = report.to_csv()?;
    println!("first CSV lines:\n{}", rows.lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}
