//! Per-seed metric rows and their CSV encoding.
//!
//! Files start with a version line, then a header row. Floats are written in
//! scientific notation with 17 significant digits so they read back exactly;
//! missing values are `nan` and the last column names why.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const METRICS_VERSION: &str = "# crossq-metrics v1";

/// Columns before the per-layer block.
pub const FIXED_COLUMNS: [&str; 14] = [
    "env_step",
    "grad_step",
    "episode_return",
    "qbias_mean",
    "qbias_std",
    "qbias_normalized",
    "qbias_mc_return",
    "alpha",
    "critic_loss",
    "actor_loss",
    "alpha_loss",
    "entropy",
    "resets",
    "wallclock_s",
];

/// Weight statistics of one critic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMetric {
    pub name: String,
    pub norm: f64,
    pub elr: f64,
}

/// Everything recorded at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub env_step: u64,
    /// Critic updates so far.
    pub grad_step: u64,
    /// Mean return of the deterministic policy.
    pub episode_return: f64,
    pub qbias_mean: f64,
    pub qbias_std: f64,
    pub qbias_normalized: f64,
    pub qbias_mc_return: f64,
    pub alpha: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub entropy: f64,
    /// Network resets so far.
    pub resets: u64,
    pub wallclock_s: f64,
    pub layers: Vec<LayerMetric>,
    /// `(column, reason)` for every NaN field.
    pub nan_reasons: Vec<(String, String)>,
}

pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn header(layer_names: &[String]) -> String {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    cols.extend(layer_names.iter().map(|n| format!("norm.{n}")));
    cols.extend(layer_names.iter().map(|n| format!("elr.{n}")));
    cols.push("nan_reason".into());
    format!("{METRICS_VERSION}\n{}\n", cols.join(","))
}

impl MetricRecord {
    fn floats(&self) -> [(&'static str, f64); 11] {
        [
            ("episode_return", self.episode_return),
            ("qbias_mean", self.qbias_mean),
            ("qbias_std", self.qbias_std),
            ("qbias_normalized", self.qbias_normalized),
            ("qbias_mc_return", self.qbias_mc_return),
            ("alpha", self.alpha),
            ("critic_loss", self.critic_loss),
            ("actor_loss", self.actor_loss),
            ("alpha_loss", self.alpha_loss),
            ("entropy", self.entropy),
            ("wallclock_s", self.wallclock_s),
        ]
    }

    /// Gives every NaN field without an explicit reason the reason `unexpected`.
    pub fn complete_reasons(&mut self) {
        let mut missing: Vec<String> = self
            .floats()
            .iter()
            .filter(|(_, v)| v.is_nan())
            .map(|(n, _)| n.to_string())
            .collect();
        for l in &self.layers {
            if l.norm.is_nan() {
                missing.push(format!("norm.{}", l.name));
            }
            if l.elr.is_nan() {
                missing.push(format!("elr.{}", l.name));
            }
        }
        for col in missing {
            if !self.nan_reasons.iter().any(|(c, _)| *c == col) {
                self.nan_reasons.push((col, "unexpected".into()));
            }
        }
    }

    pub fn to_row(&self) -> String {
        let f = format_float;
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.env_step,
            self.grad_step,
            f(self.episode_return),
            f(self.qbias_mean),
            f(self.qbias_std),
            f(self.qbias_normalized),
            f(self.qbias_mc_return),
            f(self.alpha),
            f(self.critic_loss),
            f(self.actor_loss),
            f(self.alpha_loss),
            f(self.entropy),
            self.resets,
            f(self.wallclock_s),
        );
        for l in &self.layers {
            let _ = write!(s, ",{}", f(l.norm));
        }
        for l in &self.layers {
            let _ = write!(s, ",{}", f(l.elr));
        }
        let reasons: Vec<String> = self.nan_reasons.iter().map(|(c, r)| format!("{c}:{r}")).collect();
        let _ = writeln!(s, ",{}", reasons.join(";"));
        s
    }
}

/// A parsed CSV written by this module or the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub version: String,
    /// Further `#` lines after the version line, without the marker.
    pub notes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let version = lines
            .next()
            .filter(|l| l.starts_with("# "))
            .ok_or_else(|| Error::contract("missing version line"))?
            .to_string();
        let mut notes = Vec::new();
        let mut columns = None;
        let mut rows = Vec::new();
        for line in lines {
            if let Some(note) = line.strip_prefix('#') {
                notes.push(note.trim().to_string());
            } else if columns.is_none() {
                columns = Some(line.split(',').map(str::to_string).collect::<Vec<_>>());
            } else if !line.is_empty() {
                rows.push(line.split(',').map(str::to_string).collect());
            }
        }
        let columns = columns.ok_or_else(|| Error::contract("missing header row"))?;
        if let Some(i) = rows.iter().position(|r: &Vec<String>| r.len() != columns.len()) {
            return Err(Error::contract(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                rows[i].len(),
                columns.len()
            )));
        }
        Ok(Self {
            version,
            notes,
            columns,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::contract(format!("{}: {e}", path.display())))
    }

    pub fn index(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::contract(format!("no column `{column}`")))
    }

    pub fn floats(&self, column: &str) -> Result<Vec<f64>> {
        let i = self.index(column)?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<f64>()
                    .map_err(|_| Error::contract(format!("`{}` in column {column} is not a number", r[i])))
            })
            .collect()
    }

    pub fn steps(&self) -> Result<Vec<u64>> {
        let i = self.index("env_step")?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<u64>()
                    .map_err(|_| Error::contract(format!("`{}` is not a step count", r[i])))
            })
            .collect()
    }
}
