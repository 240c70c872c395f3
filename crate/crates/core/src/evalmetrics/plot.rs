//! Static SVG line charts of training-log series.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::pipeline::log::LogRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Every loss series in `records` of the given phase, keyed by loss name.
pub fn loss_series(records: &[LogRecord], phase: &str) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.phase == phase) {
        for (k, v) in &r.losses {
            if v.is_finite() {
                series
                    .entry(k.clone())
                    .or_default()
                    .push((r.iteration as f64, *v));
            }
        }
    }
    series
}

/// Line chart with a log-scaled y axis when values span more than two
/// decades.
pub fn line_chart_svg(title: &str, series: &BTreeMap<String, Vec<(f64, f64)>>) -> String {
    let points = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let log_y = y0 > 0.0 && y1 / y0 > 100.0;
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let (ly0, ly1) = if y0.is_finite() {
        (ty(y0), ty(y1))
    } else {
        (0.0, 1.0)
    };
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0).max(1e-12) * (WIDTH - 2.0 * MARGIN);
    let sy =
        |y: f64| HEIGHT - MARGIN - (ty(y) - ly0) / (ly1 - ly0).max(1e-12) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="20" font-size="14">{title}</text>"#
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{MARGIN} {MARGIN} V{b} H{r}" stroke="black" fill="none"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    if y0.is_finite() {
        let _ = writeln!(svg, r#"<text x="4" y="{}">{y1:.3e}</text>"#, MARGIN + 4.0);
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{}">{y0:.3e}</text>"#,
            HEIGHT - MARGIN
        );
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN}" y="{}">{x0}</text>"#,
            HEIGHT - MARGIN + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{x1}</text>"#,
            WIDTH - MARGIN,
            HEIGHT - MARGIN + 16.0
        );
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.2"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN + 4.0 - 120.0,
            MARGIN + 14.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
