//! Overlay plots of simulated runs as plain SVG: water level on the left
//! axis, rain intensity hanging from the top on an inverted right axis.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{PondError, Result};
use crate::hmdp::Trajectory;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;
/// Spacing of the time ticks [min].
pub const TIME_TICK: f64 = 360.0;

const COLOURS: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

pub struct PlotSpec<'a> {
    pub title: &'a str,
    pub horizon: f64,
    /// Level of the emergency overflow [cm], drawn as a dashed line.
    pub max_level: f64,
}

/// Renders the runs into one SVG document. Numbers are printed with fixed
/// precision so equal inputs give identical bytes.
pub fn render_svg(spec: &PlotSpec<'_>, runs: &[Trajectory]) -> String {
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |t: f64| LEFT + pw * (t / spec.horizon).clamp(0.0, 1.0);
    let y = |w: f64| TOP + ph * (1.0 - (w / spec.max_level).clamp(0.0, 1.0));
    let rain_max = runs.iter().flat_map(|r| r.rows.iter().map(|row| row.rain)).fold(0.0, f64::max);
    let rain_top = if rain_max > 0.0 { nice_ceiling(rain_max * 2.0) } else { 1.0 };
    // rain axis grows downwards from the top edge
    let yr = |r: f64| TOP + ph * (r / rain_top).clamp(0.0, 1.0);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, escape(spec.title))
        .unwrap();

    let mut t = 0.0;
    while t <= spec.horizon + 1e-9 {
        let xt = x(t);
        writeln!(s, r##"<line x1="{xt:.1}" y1="{TOP:.1}" x2="{xt:.1}" y2="{:.1}" stroke="#e0e0e0"/>"##, TOP + ph).unwrap();
        writeln!(s, r#"<text x="{xt:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#, TOP + ph + 15.0).unwrap();
        t += TIME_TICK;
    }
    for k in 0..=6 {
        let w = spec.max_level * k as f64 / 6.0;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{w:.0}</text>"#, LEFT - 6.0, y(w) + 4.0).unwrap();
        let r = rain_top * k as f64 / 6.0;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}">{r:.4}</text>"#, LEFT + pw + 6.0, yr(r) + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time [min]</text>"#, LEFT + pw / 2.0, HEIGHT - 8.0).unwrap();
    writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">water level w [cm]</text>"#,
        TOP + ph / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text transform="translate({:.1} {:.1}) rotate(90)" text-anchor="middle">rain [mm/min]</text>"#,
        WIDTH - 12.0,
        TOP + ph / 2.0
    )
    .unwrap();
    writeln!(s, r##"<rect x="{LEFT:.1}" y="{TOP:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#333"/>"##).unwrap();
    writeln!(
        s,
        r##"<line x1="{LEFT:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#d62728" stroke-dasharray="6 4"/>"##,
        y(spec.max_level),
        LEFT + pw
    )
    .unwrap();

    for (i, run) in runs.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let mut rain = String::new();
        let mut prev = 0.0;
        write!(rain, "{:.2},{:.2}", x(0.0), yr(0.0)).unwrap();
        for row in &run.rows {
            if row.rain != prev {
                write!(rain, " {:.2},{:.2}", x(row.t), yr(prev)).unwrap();
                prev = row.rain;
            }
            write!(rain, " {:.2},{:.2}", x(row.t), yr(row.rain)).unwrap();
        }
        writeln!(s, r#"<polyline points="{rain}" fill="none" stroke="{colour}" stroke-opacity="0.35"/>"#).unwrap();
        let level: Vec<String> = run.rows.iter().map(|r| format!("{:.2},{:.2}", x(r.t), y(r.w))).collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.3"/>"#, level.join(" ")).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn save_svg(path: &Path, spec: &PlotSpec<'_>, runs: &[Trajectory]) -> Result<()> {
    std::fs::write(path, render_svg(spec, runs)).map_err(|e| PondError::io(path, e))
}

/// Smallest value of the form {1, 2, 5}·10^k at or above `v`.
fn nice_ceiling(v: f64) -> f64 {
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|c| *c >= v - 1e-12).unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
