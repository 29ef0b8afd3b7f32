//! Learning-curve plots as standalone SVG.
//!
//! Output depends only on the curves: coordinates are printed with fixed
//! precision and styles are assigned by curve index.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diagnostics::AggregateCurve;
use crate::{Error, Result};

use super::aggregate::read_curve;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const DASHES: [&str; 5] = ["none", "8 4", "2 3", "10 3 2 3", "4 4"];

/// Stroke colour and dash pattern of curve `i`; no two of the first 40 share both.
pub fn style(i: usize) -> (&'static str, &'static str) {
    (COLORS[i % COLORS.len()], DASHES[(i + i / COLORS.len()) % DASHES.len()])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rounded tick spacing giving roughly `n` intervals over `span`.
fn tick_step(span: f64, n: f64) -> f64 {
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(hi - lo, 5.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = lo.abs().max(1.0) * 0.5;
        (lo - pad, hi + pad)
    }
}

/// Splits a series into runs of finite points.
fn segments(steps: &[u64], ys: &[f64]) -> Vec<Vec<(f64, f64)>> {
    let mut out = vec![Vec::new()];
    for (&s, &y) in steps.iter().zip(ys) {
        if y.is_finite() {
            out.last_mut().expect("non-empty").push((s as f64, y));
        } else if !out.last().expect("non-empty").is_empty() {
            out.push(Vec::new());
        }
    }
    out.retain(|s| !s.is_empty());
    out
}

/// IQM lines with confidence bands, one legend entry per curve.
pub fn render_svg(curves: &[AggregateCurve], y_label: &str) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::contract("nothing to plot: no curves"));
    }
    let xr = range(curves.iter().flat_map(|c| c.steps.iter().map(|&s| s as f64)));
    let yr = range(
        curves
            .iter()
            .flat_map(|c| c.iqm.iter().chain(&c.lower).chain(&c.upper).copied()),
    );
    let (Some(xr), Some(yr)) = (xr, yr) else {
        return Err(Error::contract("nothing to plot: no finite points"));
    };
    let (x0, x1) = widen(xr);
    let (y0, y1) = widen(yr);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##
    );
    for t in ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + ph,
            TOP + ph + 16.0,
            label(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">environment steps</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (i, c) in curves.iter().enumerate() {
        let (color, _) = style(i);
        let lo = segments(&c.steps, &c.lower);
        let hi = segments(&c.steps, &c.upper);
        for (l, h) in lo.iter().zip(&hi) {
            if l.len() != h.len() || l.len() < 2 {
                continue;
            }
            let mut pts: Vec<String> = l.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            pts.extend(h.iter().rev().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))));
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                pts.join(" ")
            );
        }
    }
    for (i, c) in curves.iter().enumerate() {
        let (color, dash) = style(i);
        for seg in segments(&c.steps, &c.iqm) {
            let pts: Vec<String> = seg.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2" stroke-dasharray="{dash}"/>"#,
                pts.join(" ")
            );
        }
    }
    let lx = WIDTH - RIGHT + 16.0;
    for (i, c) in curves.iter().enumerate() {
        let (color, dash) = style(i);
        let y = TOP + 12.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2" stroke-dasharray="{dash}"/><text x="{:.2}" y="{:.2}">{} (n={})</text>"#,
            lx + 28.0,
            lx + 34.0,
            y + 4.0,
            escape(&c.label),
            c.seeds
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Plots aggregate or metrics CSV files into `out`.
pub fn plot_files(inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::contract("nothing to plot: no input files"));
    }
    let curves = inputs.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>>>()?;
    let svg = render_svg(&curves, "evaluation return (IQM)")?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
