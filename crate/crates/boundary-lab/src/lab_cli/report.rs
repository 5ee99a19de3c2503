//! Experiment reports and their CSV, JSON and SVG renderings.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Float(f) => fmt_float(*f),
            Value::Text(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
        }
    }
}

fn fmt_float(f: f64) -> String {
    if f == 0.0 || !f.is_finite() || (1e-4..1e12).contains(&f.abs()) {
        f.to_string()
    } else {
        format!("{f:e}")
    }
}

impl From<f64> for Value {
    fn from(f: f64) -> Self {
        Value::Float(f)
    }
}
impl From<usize> for Value {
    fn from(i: usize) -> Self {
        Value::Int(i as i64)
    }
}
impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}
impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}
impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}
impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

/// A named polyline.
type Series = (String, Vec<(f64, f64)>);

/// Which columns to draw: one line per distinct value of `series`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub series: Option<String>,
    pub log_y: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub params: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub summary: Vec<(String, Value)>,
    /// Failed checks; a non-empty list makes the run exit with status 1.
    pub violations: Vec<String>,
    pub plot: Option<PlotSpec>,
}

impl Report {
    pub fn new(experiment: &str, params: Vec<(String, String)>, columns: &[&str]) -> Self {
        Report {
            experiment: experiment.into(),
            params,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: Vec::new(),
            violations: Vec::new(),
            plot: None,
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn summarize(&mut self, key: impl Into<String>, value: impl Into<Value>) {
        self.summary.push((key.into(), value.into()));
    }

    /// Records `what` as a violation unless `ok`.
    pub fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.violations.push(what.into());
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn summary_value(&self, key: &str) -> Option<&Value> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_csv(&self) -> Result<(String, String)> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Value::render)).map_err(io)?;
        }
        let rows = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("utf-8");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["key", "value"]).map_err(io)?;
        w.write_record(["experiment", self.experiment.as_str()]).map_err(io)?;
        for (k, v) in &self.params {
            w.write_record([format!("param.{k}"), v.clone()]).map_err(io)?;
        }
        for (k, v) in &self.summary {
            w.write_record([k.clone(), v.render()]).map_err(io)?;
        }
        for v in &self.violations {
            w.write_record(["violation", v.as_str()]).map_err(io)?;
        }
        let summary = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("utf-8");
        Ok((rows, summary))
    }

    pub fn to_json(&self) -> String {
        let params: serde_json::Map<String, serde_json::Value> =
            self.params.iter().map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone()))).collect();
        let summary: serde_json::Map<String, serde_json::Value> =
            self.summary.iter().map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("plain value"))).collect();
        let doc = serde_json::json!({
            "experiment": self.experiment,
            "params": params,
            "columns": self.columns,
            "rows": self.rows,
            "summary": summary,
            "violations": self.violations,
        });
        serde_json::to_string_pretty(&doc).expect("plain document") + "\n"
    }

    /// Writes the report and returns the paths written. CSV goes to `path` plus a
    /// `.summary.csv` sibling; JSON goes to `path` alone.
    pub fn write(&self, path: &Path, format: super::config::Format, plot: bool) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        match format {
            super::config::Format::Csv => {
                let (rows, summary) = self.to_csv()?;
                std::fs::write(path, rows)?;
                let summary_path = sibling(path, "summary.csv");
                std::fs::write(&summary_path, summary)?;
                written.extend([path.to_path_buf(), summary_path]);
            }
            super::config::Format::Json => {
                std::fs::write(path, self.to_json())?;
                written.push(path.to_path_buf());
            }
        }
        if plot {
            if let Some(spec) = &self.plot {
                let svg = sibling(path, "svg");
                self.write_svg(spec, &svg)?;
                written.push(svg);
            }
        }
        Ok(written)
    }

    fn series(&self, spec: &PlotSpec) -> Result<Vec<Series>> {
        let col = |name: &str| self.column(name).ok_or_else(|| Error::InvariantViolation(format!("no column {name}")));
        let (xi, yi) = (col(&spec.x)?, col(&spec.y)?);
        let si = spec.series.as_deref().map(col).transpose()?;
        let mut out: Vec<Series> = Vec::new();
        for row in &self.rows {
            let (Some(x), Some(y)) = (row[xi].as_f64(), row[yi].as_f64()) else { continue };
            if !(x.is_finite() && y.is_finite()) || (spec.log_y && y <= 0.0) {
                continue;
            }
            let key = si.map(|i| format!("{}={}", self.columns[i], row[i].render())).unwrap_or_default();
            let y = if spec.log_y { y.log10() } else { y };
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, pts)) => pts.push((x, y)),
                None => out.push((key, vec![(x, y)])),
            }
        }
        Ok(out)
    }

    fn write_svg(&self, spec: &PlotSpec, path: &Path) -> Result<()> {
        let series = self.series(spec)?;
        let pts = series.iter().flat_map(|(_, p)| p.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in pts {
            (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| if hi > lo { (hi - lo) * 0.05 } else { 0.5 };
        let (px, py) = (pad(x0, x1), pad(y0, y1));
        let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
            let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
            root.fill(&WHITE)?;
            let y_label = if spec.log_y { format!("log10 {}", spec.y) } else { spec.y.clone() };
            let mut chart = ChartBuilder::on(&root)
                .caption(&self.experiment, ("sans-serif", 20))
                .margin(10)
                .x_label_area_size(40)
                .y_label_area_size(60)
                .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))?;
            chart.configure_mesh().x_desc(spec.x.as_str()).y_desc(y_label).draw()?;
            for (i, (name, pts)) in series.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                chart
                    .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
                    .label(name.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
                chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
            }
            if series.len() > 1 {
                chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
            }
            root.present()?;
            Ok(())
        };
        draw().map_err(|e| Error::Io(e.to_string()))
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo", vec![("m".into(), "2".into())], &["x", "y", "label"]);
        r.push(vec![1usize.into(), 0.5.into(), "a,b".into()]);
        r.push(vec![2usize.into(), 1e-20.into(), "c".into()]);
        r.summarize("max", 0.5);
        r.check(false, "demo violation");
        r
    }

    #[test]
    fn csv_quotes_and_formats() {
        let (rows, summary) = sample().to_csv().unwrap();
        assert_eq!(rows, "x,y,label\n1,0.5,\"a,b\"\n2,1e-20,c\n");
        assert!(summary.contains("param.m,2\n"));
        assert!(summary.contains("violation,demo violation\n"));
    }

    #[test]
    fn json_is_stable() {
        let a = sample().to_json();
        assert_eq!(a, sample().to_json());
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["rows"][0][2], "a,b");
        assert_eq!(v["summary"]["max"], 0.5);
    }
}
