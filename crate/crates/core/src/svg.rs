//! Minimal log-log line plots as standalone SVG files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 480.0;
const H: f64 = 360.0;
const M: f64 = 48.0;

/// Writes `y` against `x` on log axes. Non-positive points are dropped.
pub fn write_loglog(path: &Path, title: &str, x: &[f64], y: &[f64]) -> Result<()> {
    std::fs::write(path, render_loglog(title, x, y)?)?;
    Ok(())
}

pub fn render_loglog(title: &str, x: &[f64], y: &[f64]) -> Result<String> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.log10(), b.log10())).collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!("{} plottable points", pts.len())));
    }
    let (x0, x1) = bounds(pts.iter().map(|p| p.0));
    let (y0, y1) = bounds(pts.iter().map(|p| p.1));
    let sx = |v: f64| M + (v - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * M, H - 2.0 * M);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, M / 2.0, escape(title));
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">1e{v:.2}</text>"#, sx(v), H - M + 16.0);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{v:.2}</text>"#, M - 4.0, sy(v) + 4.0);
    }
    let line: Vec<String> = pts.iter().map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b))).collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, line.join(" "));
    for (a, b) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue"/>"#, sx(*a), sy(*b));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_non_positive_points() {
        let s = render_loglog("a < b", &[0.1, 1.0, 0.0], &[1.0, 10.0, 5.0]).unwrap();
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("a &lt; b"));
        assert!(render_loglog("t", &[1.0], &[1.0]).is_err());
    }
}
