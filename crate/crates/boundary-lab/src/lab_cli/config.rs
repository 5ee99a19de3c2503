//! Flat `key = value` experiment configs.
//!
//! Lines starting with `#` and blank lines are skipped. Lists are comma separated. Unknown and
//! repeated keys are errors, so a config file is a complete record of what was run.

use std::path::Path;

use crate::boundary_core::{BoundaryPoint, Tree};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub m: usize,
    /// Largest depth used; depth scans cover `depth − 2 ..= depth`.
    pub depth: usize,
    /// Chart truncation `M`; defaults to `depth + 2`.
    pub truncation: Option<usize>,
    pub s_grid: Vec<f64>,
    pub p: f64,
    pub t_grid: Vec<f64>,
    pub group_radius: usize,
    /// `head/period` strings; empty means ten seeded random points.
    pub basepoints: Vec<String>,
    pub trials: usize,
    pub seed: u64,
    pub output_path: String,
    pub format: Format,
    pub plot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 2,
            depth: 4,
            truncation: None,
            s_grid: vec![0.3],
            p: 2.0,
            t_grid: vec![0.0],
            group_radius: 1,
            basepoints: Vec::new(),
            trials: 100,
            seed: 0,
            output_path: "report.csv".into(),
            format: Format::Csv,
            plot: false,
        }
    }
}

pub const KEYS: [&str; 13] = [
    "m",
    "depth",
    "truncation",
    "s_grid",
    "p",
    "t_grid",
    "group_radius",
    "basepoints",
    "trials",
    "seed",
    "output_path",
    "format",
    "plot",
];

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value for {key}: {value:?}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("key {key:?} given twice")));
            }
            seen.push(key);
            match key {
                "m" => cfg.m = num(key, value)?,
                "depth" => cfg.depth = num(key, value)?,
                "truncation" => cfg.truncation = Some(num(key, value)?),
                "s_grid" => cfg.s_grid = list(key, value)?,
                "p" => cfg.p = num(key, value)?,
                "t_grid" => cfg.t_grid = list(key, value)?,
                "group_radius" => cfg.group_radius = num(key, value)?,
                "basepoints" => {
                    cfg.basepoints = value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
                }
                "trials" => cfg.trials = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                "output_path" => cfg.output_path = value.to_string(),
                "format" => {
                    cfg.format = match value {
                        "csv" => Format::Csv,
                        "json" => Format::Json,
                        _ => return Err(bad(key, value)),
                    }
                }
                "plot" => cfg.plot = num(key, value)?,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        Tree::new(self.m).map_err(|e| Error::Config(e.to_string()))?;
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("depth {} outside 1..=8", self.depth)));
        }
        if self.truncation.is_some_and(|m| m < 2) {
            return Err(Error::Config("truncation must be at least 2".into()));
        }
        if self.s_grid.is_empty() || self.s_grid.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Config("s_grid needs positive values".into()));
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(Error::Config(format!("p = {} must be at least 1", self.p)));
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("t_grid needs finite values".into()));
        }
        for b in &self.basepoints {
            BoundaryPoint::parse(b).map_err(|e| Error::Config(format!("basepoint {b:?}: {e}")))?;
        }
        Ok(())
    }

    pub fn tree(&self) -> Tree {
        Tree::new(self.m).expect("validated")
    }

    pub fn truncation(&self) -> usize {
        self.truncation.unwrap_or(self.depth + 2)
    }

    pub fn depths(&self) -> Vec<usize> {
        (self.depth.saturating_sub(2).max(1)..=self.depth).collect()
    }

    /// Key/value echo in the fixed key order, as written into reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let vals = [
            self.m.to_string(),
            self.depth.to_string(),
            self.truncation().to_string(),
            join(&self.s_grid),
            self.p.to_string(),
            join(&self.t_grid),
            self.group_radius.to_string(),
            self.basepoints.join(","),
            self.trials.to_string(),
            self.seed.to_string(),
            self.output_path.clone(),
            match self.format {
                Format::Csv => "csv".into(),
                Format::Json => "json".into(),
            },
            self.plot.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }
}
