//! Static SVG charts for sweep results.
//!
//! Output depends only on the input rows, so re-rendering from the CSV files
//! reproduces the files written by a sweep byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{DetailRow, ReportRow};
use crate::Result;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const TICKS: usize = 5;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn spanning(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            return Axis { lo: lo - 0.5, hi: hi + 0.5 };
        }
        let pad = (hi - lo) * 0.05;
        Axis { lo: lo - pad, hi: hi + pad }
    }

    fn tick(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (TICKS - 1) as f64
    }

    /// Position along a plot side of length `SIZE - 2 * MARGIN`.
    fn scale(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo) * (SIZE - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn px(x: &Axis, v: f64) -> f64 {
    MARGIN + x.scale(v)
}

fn py(y: &Axis, v: f64) -> f64 {
    SIZE - MARGIN - y.scale(v)
}

fn frame(title: &str, x_label: &str, y_label: &str, x: &Axis, y: &Axis) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, SIZE - MARGIN, SIZE - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for i in 0..TICKS {
        let (tx, ty) = (x.tick(i), y.tick(i));
        let (cx, cy) = (px(x, tx), py(y, ty));
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.2}" y1="{y0:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/><text x="{cx:.2}" y="{:.2}" text-anchor="middle">{tx:.3}</text>"##,
            y0 + 4.0,
            y0 + 16.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{cy:.2}" x2="{x0:.2}" y2="{cy:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{ty:.3}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            cy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        escape(y_label)
    );
    s
}

/// Actual (x) against estimated (y) values with a `y = x` reference line.
pub fn scatter_svg(title: &str, points: &[(f64, f64)]) -> String {
    let all = || points.iter().flat_map(|&(a, e)| [a, e]);
    let axis = Axis::spanning(all());
    let axis2 = Axis::spanning(all());
    let mut s = frame(title, "actual", "estimated", &axis, &axis2);
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-dasharray="4 3"/>"##,
        px(&axis, axis.lo),
        py(&axis2, axis.lo),
        px(&axis, axis.hi),
        py(&axis2, axis.hi)
    );
    for &(a, e) in points {
        if a.is_finite() && e.is_finite() {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#1f77b4" fill-opacity="0.6"/>"##,
                px(&axis, a),
                py(&axis2, e)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Mean tau (y) against the unjudged fraction (x).
pub fn tau_chart_svg(title: &str, points: &[(f64, f64)]) -> String {
    let x = Axis { lo: 0.0, hi: 1.0 };
    let y_min = points.iter().map(|p| p.1).fold(0.0f64, f64::min);
    let y = Axis { lo: y_min, hi: 1.0 };
    let mut s = frame(title, "unjudged rate", "Kendall tau", &x, &y);
    let path: Vec<String> = points
        .iter()
        .map(|&(u, t)| format!("{:.2},{:.2}", px(&x, u), py(&y, t)))
        .collect();
    if !path.is_empty() {
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            path.join(" ")
        );
    }
    for &(u, t) in points {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
            px(&x, u),
            py(&y, t)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn file_stem(metric: &str, estimator: &str) -> String {
    format!("{metric}_{estimator}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes one scatter plot (lowest rate, first repetition) and one tau
/// chart per metric and estimator. Returns the written paths, sorted.
pub fn render_plots(report: &[ReportRow], details: &[DetailRow], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut taus: BTreeMap<(&str, &str), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in report {
        let per_rate = taus.entry((&r.metric, &r.estimator)).or_default();
        let values = per_rate.entry(r.rate.to_bits()).or_default();
        if let Some(t) = r.tau {
            values.push(t);
        }
    }
    let mut written = Vec::new();
    for ((metric, estimator), per_rate) in &taus {
        let mut points: Vec<(f64, f64)> = per_rate
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(bits, v)| (1.0 - f64::from_bits(*bits), v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path = dir.join(format!("tau_{}.svg", file_stem(metric, estimator)));
        std::fs::write(&path, tau_chart_svg(&format!("{metric} / {estimator}"), &points))?;
        written.push(path);
    }

    let mut scatter: BTreeMap<(&str, &str), (f64, usize, Vec<(f64, f64)>)> = BTreeMap::new();
    for d in details {
        let key = (d.metric.as_str(), d.estimator.as_str());
        let entry = scatter.entry(key).or_insert((d.rate, d.repetition, Vec::new()));
        if (d.rate, d.repetition) < (entry.0, entry.1) {
            *entry = (d.rate, d.repetition, Vec::new());
        }
        if (d.rate, d.repetition) == (entry.0, entry.1) {
            if let Some(e) = d.estimated {
                entry.2.push((d.actual, e));
            }
        }
    }
    for ((metric, estimator), (rate, rep, points)) in &scatter {
        let path = dir.join(format!("scatter_{}.svg", file_stem(metric, estimator)));
        let title = format!("{metric} / {estimator} (rate {rate}, repetition {rep})");
        std::fs::write(&path, scatter_svg(&title, points))?;
        written.push(path);
    }
    written.sort();
    Ok(written)
}
