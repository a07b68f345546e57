//! Minimal SVG line plots (PR curves, loss curves) and scale overlays.

use std::fmt::Write;

use crate::eval::PrCurve;
use crate::grid::{Grid, ScaleMap};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Axes {
    /// Ranges covering every point of `series`.
    pub fn fit(x_label: &str, y_label: &str, series: &[Series]) -> Self {
        let pts = || series.iter().flat_map(|s| s.points.iter());
        let span = |f: fn(&(f64, f64)) -> f64| {
            let lo = pts().map(f).fold(f64::INFINITY, f64::min);
            let hi = pts().map(f).fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        };
        Axes {
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range: span(|p| p.0),
            y_range: span(|p| p.1),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn line_plot_svg(series: &[Series], axes: &Axes) -> String {
    let (x0, x1) = axes.x_range;
    let (y0, y1) = axes.y_range;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (gx, gy) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            out,
            "<line x1=\"{a:.1}\" y1=\"{b:.1}\" x2=\"{a:.1}\" y2=\"{c:.1}\" stroke=\"#ddd\"/><text x=\"{a:.1}\" y=\"{d:.1}\" text-anchor=\"middle\">{gx:.3}</text>",
            a = px(gx),
            b = py(y0),
            c = py(y1),
            d = py(y0) + 14.0
        );
        let _ = writeln!(
            out,
            "<line x1=\"{a:.1}\" y1=\"{b:.1}\" x2=\"{c:.1}\" y2=\"{b:.1}\" stroke=\"#ddd\"/><text x=\"{d:.1}\" y=\"{e:.1}\" text-anchor=\"end\">{gy:.3}</text>",
            a = px(x0),
            b = py(gy),
            c = px(x1),
            d = px(x0) - 4.0,
            e = py(gy) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0,
        escape(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{:.1}" text-anchor="middle" transform="rotate(-90 12 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&axes.y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * i as f64,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Precision against recall on the unit square, one series per curve.
pub fn pr_plot_svg(curves: &[(String, &PrCurve)]) -> String {
    let series: Vec<Series> = curves
        .iter()
        .map(|(label, c)| Series {
            label: format!("{label} (F={:.3})", c.best_f),
            points: c.points.iter().map(|p| (p.recall, p.precision)).collect(),
        })
        .collect();
    let axes = Axes {
        x_label: "recall".into(),
        y_label: "precision".into(),
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
    };
    line_plot_svg(&series, &axes)
}

/// Blue (small) to red (large) ramp for a scale relative to `max_scale`.
pub fn scale_color(scale: f32, max_scale: f32) -> [u8; 3] {
    let t = (scale / max_scale.max(1e-6)).clamp(0.0, 1.0);
    let r = (255.0 * t) as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
    let b = (255.0 * (1.0 - t)) as u8;
    [r, g, b]
}

/// RGB overlay: the dimmed gray image with skeleton pixels colored by
/// predicted scale. Row-major, three bytes per pixel.
pub fn scale_overlay(
    image: &Grid<u8>,
    skeleton: &Grid<bool>,
    scale: &ScaleMap,
    max_scale: f32,
) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(image.data.len() * 3);
    for (j, &v) in image.data.iter().enumerate() {
        if skeleton.data[j] {
            rgb.extend_from_slice(&scale_color(scale.data[j], max_scale));
        } else {
            let d = v / 2 + 32;
            rgb.extend_from_slice(&[d, d, d]);
        }
    }
    rgb
}
