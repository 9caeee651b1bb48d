//! Run reports: a provenance header, per-configuration rows, optional summary
//! rows and the best-over-layers row, rendered as JSON, aligned text or CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        Ok(InputFile {
            path: path.display().to_string(),
            sha256: hex::encode(hasher.finalize()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<InputFile>,
}

impl Provenance {
    pub fn new(subcommand: &str, seed: u64, config: Value, inputs: Vec<InputFile>) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            seed,
            config,
            inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub label: String,
    pub layer: Option<usize>,
    pub values: BTreeMap<String, f64>,
}

impl Row {
    pub fn new(label: impl Into<String>, layer: Option<usize>) -> Self {
        Row {
            label: label.into(),
            layer,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub provenance: Provenance,
    pub task: String,
    /// Value maximized by the best row, if any.
    pub metric: Option<String>,
    pub rows: Vec<Row>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub summary: Vec<Row>,
    pub best: Option<Row>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl Report {
    pub fn new(provenance: Provenance, task: &str, metric: Option<&str>) -> Self {
        Report {
            provenance,
            task: task.to_string(),
            metric: metric.map(str::to_string),
            rows: Vec::new(),
            summary: Vec::new(),
            best: None,
            details: Value::Null,
        }
    }

    /// Picks the best row by `metric` among the summary rows when present,
    /// otherwise among the rows. Ties keep the earliest row.
    pub fn finish(mut self) -> Self {
        if let Some(metric) = &self.metric {
            let pool = if self.summary.is_empty() {
                &self.rows
            } else {
                &self.summary
            };
            let mut best: Option<&Row> = None;
            for r in pool {
                let Some(&v) = r.values.get(metric) else { continue };
                if best.is_none_or(|b| v > b.values[metric]) {
                    best = Some(r);
                }
            }
            self.best = best.map(|b| Row {
                label: format!("best ({})", b.label),
                ..b.clone()
            });
        }
        self
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self)?;
                s.push('\n');
                Ok(s)
            }
            Format::Text => Ok(self.render_text()?),
            Format::Csv => self.render_csv(),
        }
    }

    fn value_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = Vec::new();
        for r in self.rows.iter().chain(&self.summary).chain(self.best.iter()) {
            for k in r.values.keys() {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys.sort();
        keys
    }

    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let keys = self.value_keys();
        let header: Vec<String> = ["label", "layer"]
            .iter()
            .map(|s| s.to_string())
            .chain(keys.iter().cloned())
            .collect();
        let cells = |r: &Row| -> Vec<String> {
            let mut v = vec![
                r.label.clone(),
                r.layer.map_or_else(|| "-".to_string(), |l| l.to_string()),
            ];
            for k in &keys {
                v.push(r.values.get(k).map_or_else(|| "-".to_string(), |x| x.to_string()));
            }
            v
        };
        let body = self
            .rows
            .iter()
            .chain(&self.summary)
            .chain(self.best.iter())
            .map(cells)
            .collect();
        (header, body)
    }

    fn render_text(&self) -> Result<String> {
        let (header, body) = self.table();
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        writeln!(out, "# provenance: {}", serde_json::to_string(&self.provenance)?).unwrap();
        writeln!(out, "# task: {}", self.task).unwrap();
        let line = |out: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
        };
        line(&mut out, &header);
        for row in &body {
            line(&mut out, row);
        }
        Ok(out)
    }

    fn render_csv(&self) -> Result<String> {
        let (header, body) = self.table();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        for row in &body {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn report() -> Report {
        let mut r = Report::new(
            Provenance::new("retrieve", 42, json!({"source": "mean"}), vec![]),
            "retrieval",
            Some("accuracy"),
        );
        for layer in 0..12 {
            r.rows.push(Row::new("cs->en", Some(layer)).with("accuracy", (layer as f64 * 0.37).sin().abs()));
        }
        r.finish()
    }

    #[test]
    fn best_row_is_the_maximum() {
        let r = report();
        assert_eq!(r.rows.len(), 12);
        let best = r.best.as_ref().unwrap();
        let max = r.rows.iter().map(|x| x.values["accuracy"]).fold(f64::MIN, f64::max);
        assert_eq!(best.values["accuracy"], max);
        assert!(best.label.starts_with("best"));
    }

    #[test]
    fn formats_agree_on_numbers() {
        let r = report();
        let json: Value = serde_json::from_str(&r.render(Format::Json).unwrap()).unwrap();
        let json_vals: Vec<f64> = json["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|row| row["values"]["accuracy"].as_f64().unwrap())
            .collect();
        let text = r.render(Format::Text).unwrap();
        let text_vals: Vec<f64> = text
            .lines()
            .skip(3)
            .take(12)
            .map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap())
            .collect();
        assert_eq!(json_vals, text_vals);
        let csv = r.render(Format::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + 12 + 1);
    }
}
