//! Minimal deterministic SVG line plots.
//!
//! Hand-rolled on purpose: the plots are simple polyline overlays with
//! axes, tick labels and a legend, and the output must be byte-stable for
//! a fixed input (no timestamps, fixed float formatting).

use std::fs;
use std::path::Path;

use crate::error::SimError;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 56.0;

/// Colors follow the reference figure: nominal blue, attacked red,
/// estimate orange.
pub const COLOR_NOMINAL: &str = "#1f77b4";
pub const COLOR_ATTACKED: &str = "#d62728";
pub const COLOR_ESTIMATE: &str = "#ff7f0e";
pub const COLOR_EXTRA: &str = "#2ca02c";

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let (x_min, x_max, y_min, y_max) = self.bounds();
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
        let sy = |y: f64| HEIGHT - MARGIN_B - (y - y_min) / (y_max - y_min) * plot_h;

        let mut out = String::with_capacity(16 * 1024);
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
             text-anchor=\"middle\">{}</text>\n",
            WIDTH / 2.0,
            xml_escape(&self.title)
        ));

        // Axes box and ticks.
        out.push_str(&format!(
            "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
             fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n"
        ));
        for (frac, value) in ticks(x_min, x_max) {
            let x = MARGIN_L + frac * plot_w;
            out.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
                HEIGHT - MARGIN_B,
                HEIGHT - MARGIN_B + 5.0
            ));
            out.push_str(&format!(
                "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
                 text-anchor=\"middle\">{}</text>\n",
                HEIGHT - MARGIN_B + 18.0,
                tick_label(value)
            ));
        }
        for (frac, value) in ticks(y_min, y_max) {
            let y = HEIGHT - MARGIN_B - frac * plot_h;
            out.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_L}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
                MARGIN_L - 5.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
                 text-anchor=\"end\">{}</text>\n",
                MARGIN_L - 8.0,
                y + 4.0,
                tick_label(value)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
             text-anchor=\"middle\">{}</text>\n",
            MARGIN_L + plot_w / 2.0,
            HEIGHT - 12.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
             text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            xml_escape(&self.y_label)
        ));

        // Series polylines (decimated to keep files small).
        for s in &self.series {
            let pts = decimate(&s.points, 4000);
            let mut path = String::with_capacity(pts.len() * 16);
            for (i, (x, y)) in pts.iter().enumerate() {
                if i > 0 {
                    path.push(' ');
                }
                path.push_str(&format!("{:.2},{:.2}", sx(*x), sy(*y)));
            }
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{path}\"/>\n",
                s.color
            ));
        }

        // Legend.
        let legend_x = MARGIN_L + 12.0;
        let mut legend_y = MARGIN_T + 16.0;
        for s in &self.series {
            out.push_str(&format!(
                "<line x1=\"{legend_x}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
                 stroke=\"{}\" stroke-width=\"2\"/>\n",
                legend_y - 4.0,
                legend_x + 26.0,
                legend_y - 4.0,
                s.color
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{legend_y:.1}\" font-family=\"sans-serif\" \
                 font-size=\"12\">{}</text>\n",
                legend_x + 32.0,
                xml_escape(&s.label)
            ));
            legend_y += 18.0;
        }

        out.push_str("</svg>\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        fs::write(path, self.to_svg()).map_err(|e| SimError::io(path, e))
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for s in &self.series {
            for (x, y) in &s.points {
                x_min = x_min.min(*x);
                x_max = x_max.max(*x);
                y_min = y_min.min(*y);
                y_max = y_max.max(*y);
            }
        }
        if !x_min.is_finite() || x_min == x_max {
            x_min -= 1.0;
            x_max = x_min + 2.0;
        }
        if !y_min.is_finite() || y_min == y_max {
            y_min -= 1.0;
            y_max = y_min + 2.0;
        }
        // 5% padding on y.
        let pad = (y_max - y_min) * 0.05;
        (x_min, x_max, y_min - pad, y_max + pad)
    }
}

fn ticks(min: f64, max: f64) -> Vec<(f64, f64)> {
    let n = 6;
    (0..n)
        .map(|i| {
            let frac = i as f64 / (n - 1) as f64;
            (frac, min + frac * (max - min))
        })
        .collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn decimate(points: &[(f64, f64)], max_points: usize) -> Vec<(f64, f64)> {
    if points.len() <= max_points {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(max_points);
    let mut out: Vec<(f64, f64)> =
        points.iter().step_by(stride).copied().collect();
    if let Some(last) = points.last() {
        if out.last() != Some(last) {
            out.push(*last);
        }
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
