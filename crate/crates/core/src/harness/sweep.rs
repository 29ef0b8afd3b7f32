use std::path::PathBuf;
use std::str::FromStr;

use crate::rl::Variant;
use crate::{Error, Result};

use super::config::RunConfig;
use super::plot::plot_files;
use super::runner::{run_experiment, ExperimentOutcome};

pub const COMPARISON_FILE: &str = "comparison.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Utd,
    Variant,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Utd => "utd",
            SweepAxis::Variant => "variant",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "utd" => Ok(SweepAxis::Utd),
            "variant" => Ok(SweepAxis::Variant),
            _ => Err(format!("unknown sweep axis `{s}` (expected utd or variant)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub runs: Vec<(String, ExperimentOutcome)>,
    pub comparison: Option<PathBuf>,
}

/// One configuration per value, each in `<output>/<axis>_<value>`.
pub fn sweep_configs(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<(String, RunConfig)>> {
    let mut issues = Vec::new();
    if values.is_empty() {
        issues.push("sweep needs at least one value".to_string());
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for v in values {
        if !seen.insert(v.as_str()) {
            issues.push(format!("sweep value `{v}` repeated"));
            continue;
        }
        let mut c = base.clone();
        match axis {
            SweepAxis::Utd => match v.parse::<usize>() {
                Ok(u) => c.agent.utd = u,
                Err(_) => {
                    issues.push(format!("utd value `{v}` is not a whole number"));
                    continue;
                }
            },
            SweepAxis::Variant => match v.parse::<Variant>() {
                Ok(x) => c.agent.variant = x,
                Err(e) => {
                    issues.push(e);
                    continue;
                }
            },
        }
        let tag = format!("{}_{v}", axis.name());
        c.name = tag.clone();
        c.output = base.output.join(&tag);
        issues.extend(c.issues().into_iter().map(|i| format!("{tag}: {i}")));
        out.push((tag, c));
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    Ok(out)
}

/// Runs every value of the axis, then plots their aggregate curves together.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<SweepOutcome> {
    let configs = sweep_configs(base, axis, values)?;
    let mut runs = Vec::new();
    for (tag, c) in &configs {
        runs.push((tag.clone(), run_experiment(c)?));
    }
    let aggregates: Option<Vec<PathBuf>> = runs.iter().map(|(_, r)| r.aggregate.clone()).collect();
    let comparison = match aggregates {
        Some(files) if base.total_env_steps > 0 => {
            let out = base.output_dir().join(COMPARISON_FILE);
            plot_files(&files, &out)?;
            Some(out)
        }
        _ => None,
    };
    Ok(SweepOutcome { runs, comparison })
}
