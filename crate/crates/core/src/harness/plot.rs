use std::fmt::Write as _;
use std::path::Path;

use super::output::write_atomic;
use super::{ExperimentResults, PlotAxis};
use crate::error::{Error, Result};
use crate::fmt_sig17;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn x_value(axis: PlotAxis, t: u64, t_prime: u64, sim_seconds: f64) -> f64 {
    match axis {
        PlotAxis::TPrime => t_prime as f64,
        PlotAxis::T => t as f64,
        PlotAxis::SimSeconds => sim_seconds,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Log-log SVG of the mean of `metric`, one polyline per curve with the
/// legend in curve order. Each polyline carries its exact data points in a
/// `data-points` attribute. Non-positive values are skipped.
pub fn render_svg(results: &ExperimentResults, metric: &str, axis: PlotAxis, title: Option<&str>) -> Result<String> {
    let m = results
        .metric_index(metric)
        .ok_or_else(|| Error::Config(format!("results have no metric {metric:?}")))?;
    let series: Vec<(&str, Vec<(f64, f64)>)> = results
        .curves
        .iter()
        .map(|c| {
            let pts = c
                .points
                .iter()
                .map(|p| (x_value(axis, p.t, p.t_prime, p.sim_seconds), p.stats[m].mean))
                .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
                .collect();
            (c.label.as_str(), pts)
        })
        .collect();
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::EmptyResults);
    }
    let (lx0, lx1) = (x0.log10().floor(), x1.log10().ceil().max(x0.log10().floor() + 1.0));
    let (ly0, ly1) = (y0.log10().floor(), y1.log10().ceil().max(y0.log10().floor() + 1.0));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x.log10() - lx0) / (lx1 - lx0) * pw;
    let py = |y: f64| TOP + (ly1 - y.log10()) / (ly1 - ly0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let heading = title.map_or_else(|| format!("{} ({metric})", results.experiment), str::to_string);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&heading)
    );
    for k in lx0 as i32..=lx1 as i32 {
        let x = px(10f64.powi(k));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{k}</text>"##,
            TOP + ph,
            TOP + ph + 18.0
        );
    }
    for k in ly0 as i32..=ly1 as i32 {
        let y = py(10f64.powi(k));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{k}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let x_label = match axis {
        PlotAxis::TPrime => "samples arrived t'",
        PlotAxis::T => "iteration t",
        PlotAxis::SimSeconds => "simulated seconds",
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(metric)
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let data: Vec<String> = pts.iter().map(|&(x, y)| format!("{} {}", fmt_sig17(x), fmt_sig17(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" data-label="{}" data-points="{}" points="{}"/>"#,
            escape(label),
            data.join(";"),
            coords.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(
    results: &ExperimentResults,
    metric: &str,
    axis: PlotAxis,
    title: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let svg = render_svg(results, metric, axis, title)?;
    write_atomic(path.as_ref(), svg.as_bytes())
}
