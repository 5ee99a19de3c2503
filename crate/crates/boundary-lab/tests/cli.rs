//! End-to-end runs of the `lab` binary: exit codes, output files and thread-count independence.

use std::path::{Path, PathBuf};
use std::process::Command;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lab-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn lab(args: &[&str], threads: Option<&str>) -> (i32, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lab"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("LAB_THREADS", t);
    }
    let out = cmd.output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn selftest_succeeds_and_writes_csv_and_plot() {
    let dir = scratch("selftest");
    let cfg = write_config(&dir, "depth = 3\ntrials = 10\n");
    let out = dir.join("st.csv");
    let (code, err) = lab(&["selftest", "--config", &cfg, "--out", out.to_str().unwrap(), "--plot"], None);
    assert_eq!(code, 0, "{err}");
    let rows = std::fs::read_to_string(&out).unwrap();
    assert!(rows.starts_with("suite,instances,max_residual,tolerance,pass\n"));
    assert!(std::fs::read_to_string(dir.join("st.csv.summary.csv")).unwrap().contains("max_residual,"));
    assert!(err.contains("finished in"));
}

#[test]
fn plot_is_an_svg() {
    let dir = scratch("plot");
    let cfg = write_config(&dir, "depth = 3\ntrials = 5\n");
    let out = dir.join("sob.csv");
    let (code, err) = lab(&["sobolev", "--config", &cfg, "--out", out.to_str().unwrap(), "--plot"], None);
    assert_eq!(code, 0, "{err}");
    let svg = std::fs::read_to_string(dir.join("sob.csv.svg")).unwrap();
    assert!(svg.contains("<svg"));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = scratch("bad");
    let unknown = write_config(&dir, "colour = red\n");
    assert_eq!(lab(&["selftest", "--config", &unknown], None).0, 2);
    assert_eq!(lab(&["selftest", "--config", dir.join("missing.cfg").to_str().unwrap()], None).0, 2);
    assert_eq!(lab(&["nonsense", "--config", &unknown], None).0, 2);
    assert_eq!(lab(&["selftest"], None).0, 2);
    // Almost invariance needs p > D.
    let low_p = write_config(&dir, "p = 1\n");
    assert_eq!(lab(&["almost_invariant", "--config", &low_p], None).0, 2);
    // Sobolev needs sp < D.
    let big_s = write_config(&dir, "s_grid = 0.9\np = 2\n");
    assert_eq!(lab(&["sobolev", "--config", &big_s], None).0, 2);
}

#[test]
fn failed_check_exits_with_one() {
    let dir = scratch("violation");
    let cfg = write_config(&dir, "depth = 3\ns_grid = 0.3\nbasepoints = /a\n");
    let out = dir.join("r.csv");
    let (code, err) = lab(&["rescaling", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code, 1);
    assert!(err.contains("violation:"));
    assert!(std::fs::read_to_string(dir.join("r.csv.summary.csv")).unwrap().contains("violation,"));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = scratch("threads");
    let cfg = write_config(&dir, "depth = 4\ns_grid = 0.2, 0.3\nt_grid = 0, 1\ngroup_radius = 2\nformat = json\nseed = 9\n");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        for cmd in ["cayley_norms", "rep_bound"] {
            // Same path each time: the output path is echoed into the report.
            let out = dir.join(format!("{cmd}.json"));
            let (code, err) = lab(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()], Some(threads));
            assert_eq!(code, 0, "{err}");
            outputs.push(std::fs::read(&out).unwrap());
        }
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
    let doc: serde_json::Value = serde_json::from_slice(&outputs[0]).unwrap();
    assert_eq!(doc["experiment"], "cayley_norms");
}
