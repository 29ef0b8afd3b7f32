use std::fmt::Write as _;
use std::path::Path;

use crate::diagnostics::AggregateCurve;
use crate::{Error, Result};

use super::metrics::{format_float, Table, METRICS_VERSION};

pub const AGGREGATE_VERSION: &str = "# crossq-aggregate v1";

pub fn render_aggregate(curve: &AggregateCurve) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{AGGREGATE_VERSION}");
    let _ = writeln!(s, "# label: {}", curve.label);
    let _ = writeln!(s, "# scope: {}", curve.scope);
    let _ = writeln!(s, "env_step,iqm,lower,upper,seeds,level");
    for i in 0..curve.steps.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            curve.steps[i],
            format_float(curve.iqm[i]),
            format_float(curve.lower[i]),
            format_float(curve.upper[i]),
            curve.seeds,
            format_float(curve.level)
        );
    }
    s
}

/// Writes the curve unless the file already holds exactly this content.
pub fn write_aggregate(curve: &AggregateCurve, path: &Path) -> Result<()> {
    let text = render_aggregate(curve);
    if std::fs::read_to_string(path).is_ok_and(|old| old == text) {
        return Ok(());
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn note<'a>(t: &'a Table, key: &str) -> Option<&'a str> {
    t.notes
        .iter()
        .find_map(|n| n.strip_prefix(key)?.strip_prefix(':'))
        .map(str::trim)
}

/// Reads an aggregate file, or a single-seed metrics file as a curve with a
/// zero-width band labelled by its file stem.
pub fn read_curve(path: &Path) -> Result<AggregateCurve> {
    let t = Table::read(path)?;
    let steps = t.steps()?;
    let stem = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    if t.version == AGGREGATE_VERSION {
        let seeds = t.floats("seeds")?.first().copied().unwrap_or(0.0) as usize;
        let level = t.floats("level")?.first().copied().unwrap_or(f64::NAN);
        let label = match (note(&t, "label"), path.parent().and_then(Path::file_name)) {
            (Some(l), _) => l.to_string(),
            (None, Some(p)) => p.to_string_lossy().into_owned(),
            (None, None) => stem,
        };
        Ok(AggregateCurve {
            label,
            scope: note(&t, "scope").unwrap_or("").to_string(),
            level,
            seeds,
            steps,
            iqm: t.floats("iqm")?,
            lower: t.floats("lower")?,
            upper: t.floats("upper")?,
        })
    } else if t.version == METRICS_VERSION {
        let r = t.floats("episode_return")?;
        Ok(AggregateCurve {
            label: stem,
            scope: String::new(),
            level: f64::NAN,
            seeds: 1,
            steps,
            iqm: r.clone(),
            lower: r.clone(),
            upper: r,
        })
    } else {
        Err(Error::contract(format!(
            "{}: unrecognised file version `{}`",
            path.display(),
            t.version
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_round_trips() {
        let curve = AggregateCurve {
            label: "utd_2".into(),
            scope: "pointmass".into(),
            level: 0.95,
            seeds: 3,
            steps: vec![0, 100],
            iqm: vec![-1.5, 0.1],
            lower: vec![-2.0, 0.0],
            upper: vec![-1.0, 0.3],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aggregate.csv");
        write_aggregate(&curve, &path).unwrap();
        assert_eq!(read_curve(&path).unwrap(), curve);
    }
}
