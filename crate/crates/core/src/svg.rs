//! Hand-rolled SVG rendering for the two debugging artifacts: HTER-vs-
//! fraction curve panels and saliency overlays. The CSVs are the real
//! output contract; these exist so a run can be eyeballed without plotting
//! tooling. Everything is pure string assembly with fixed-precision
//! formatting, so output bytes are deterministic.

use std::collections::BTreeMap;

use crate::audit::CurveRow;
use crate::perturb::EvalCurve;
use crate::saliency::SaliencyMap;
use crate::synth::IMAGE_SIDE;
use crate::tensor::Tensor;

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 360.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 44.0;

#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub color: &'static str,
}

const GROUP_A_COLOR: &str = "#2c7fb8";
const GROUP_B_COLOR: &str = "#e6550d";
const NORMALIZED_COLOR: &str = "#d62728";

impl PlotSeries {
    pub fn from_curve(curve: &EvalCurve) -> PlotSeries {
        let role = (curve.group, curve.normalized);
        let (label, dashed, color) = match role {
            (crate::synth::Group::A, false) => ("group A".to_string(), false, GROUP_A_COLOR),
            (_, false) => ("group B".to_string(), false, GROUP_B_COLOR),
            (_, true) => ("group B normalized".to_string(), true, NORMALIZED_COLOR),
        };
        PlotSeries {
            label,
            points: curve
                .fractions
                .iter()
                .zip(&curve.hter_values)
                .map(|(f, h)| (*f, *h))
                .collect(),
            dashed,
            color,
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// One panel: axes, tick labels, the given series as polylines (dashed
/// where flagged), and a legend row under the title.
pub fn curve_panel_svg(title: &str, series: &[PlotSeries]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let x_max = xs.iter().copied().fold(0.0_f64, f64::max).max(1e-9);
    let y_min = ys.iter().copied().fold(0.0_f64, f64::min);
    let y_max = ys.iter().copied().fold(0.0_f64, f64::max).max(1e-9) * 1.08;
    let span_y = (y_max - y_min).max(1e-9);

    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x / x_max) * plot_w;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y_min) / span_y) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" \
         viewBox=\"0 0 {PANEL_W} {PANEL_H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"18\" font-size=\"13\">{}</text>\n",
        MARGIN_L,
        xml_escape(title)
    ));

    // axes
    out.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(PANEL_H - MARGIN_B)
    ));
    out.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        fmt(MARGIN_L),
        fmt(PANEL_H - MARGIN_B),
        fmt(PANEL_W - MARGIN_R),
        fmt(PANEL_H - MARGIN_B)
    ));

    // ticks: 5 on each axis
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = t * x_max;
        let yv = y_min + t * span_y;
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(px(xv)),
            fmt(PANEL_H - MARGIN_B + 16.0),
            fmt(xv)
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_L - 6.0),
            fmt(py(yv) + 4.0),
            fmt(yv)
        ));
        out.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fmt(MARGIN_L),
            fmt(py(yv)),
            fmt(PANEL_W - MARGIN_R),
            fmt(py(yv))
        ));
    }
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">fraction of pixels</text>\n",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(PANEL_H - 8.0)
    ));
    out.push_str(&format!(
        "  <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">HTER</text>\n",
        fmt(MARGIN_T + plot_h / 2.0),
        fmt(MARGIN_T + plot_h / 2.0)
    ));

    // series
    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{},{}", fmt(px(*x)), fmt(py(*y))))
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        out.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"{} points=\"{}\"/>\n",
            s.color,
            dash,
            pts.join(" ")
        ));
        for (x, y) in &s.points {
            out.push_str(&format!(
                "  <circle cx=\"{}\" cy=\"{}\" r=\"2.2\" fill=\"{}\"/>\n",
                fmt(px(*x)),
                fmt(py(*y)),
                s.color
            ));
        }
    }

    // legend along the top-right
    let mut lx = PANEL_W - MARGIN_R - 150.0;
    for s in series {
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        out.push_str(&format!(
            "  <line x1=\"{}\" y1=\"26\" x2=\"{}\" y2=\"26\" stroke=\"{}\" stroke-width=\"1.8\"{}/>\n",
            fmt(lx),
            fmt(lx + 16.0),
            s.color,
            dash
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"30\" font-size=\"9\">{}</text>\n",
            fmt(lx + 19.0),
            xml_escape(&s.label)
        ));
        lx += 50.0;
    }

    out.push_str("</svg>\n");
    out
}

/// Groups parsed CSV rows into (panel name, svg) pairs, one panel per
/// (model, explainer, mode), series ordered raw A, raw B, normalized B.
pub fn panels_from_rows(rows: &[CurveRow]) -> Vec<(String, String)> {
    let mut panels: BTreeMap<(String, String, String), Vec<&CurveRow>> = BTreeMap::new();
    for row in rows {
        panels
            .entry((row.model_tag.clone(), row.explainer.clone(), row.mode.clone()))
            .or_default()
            .push(row);
    }
    panels
        .into_iter()
        .map(|((model, explainer, mode), rows)| {
            let mut series = Vec::new();
            for (group, normalized, label, dashed, color) in [
                ("A", false, "group A", false, GROUP_A_COLOR),
                ("B", false, "group B", false, GROUP_B_COLOR),
                ("B", true, "group B normalized", true, NORMALIZED_COLOR),
            ] {
                let points: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.group == group && r.normalized == normalized)
                    .map(|r| (r.fraction, r.hter))
                    .collect();
                if !points.is_empty() {
                    series.push(PlotSeries {
                        label: label.to_string(),
                        points,
                        dashed,
                        color,
                    });
                }
            }
            let title = format!("{model} {explainer} {mode}");
            let name = format!("{model}_{explainer}_{mode}");
            (name, curve_panel_svg(&title, &series))
        })
        .collect()
}

/// Grayscale image with the saliency map blended on top in red; cell
/// opacity follows the normalized map value.
pub fn saliency_overlay_svg(image: &Tensor, map: &SaliencyMap) -> String {
    let cell = 12.0;
    let side = IMAGE_SIDE as f64 * cell;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side}\" height=\"{side}\" \
         viewBox=\"0 0 {side} {side}\" shape-rendering=\"crispEdges\">\n"
    ));
    let pixels = image.values();
    let heat = map.map.values();
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let v = pixels[y * IMAGE_SIDE + x].clamp(0.0, 1.0);
            let gray = (v * 255.0).round() as u8;
            out.push_str(&format!(
                "  <rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({gray},{gray},{gray})\"/>\n",
                fmt(x as f64 * cell),
                fmt(y as f64 * cell)
            ));
        }
    }
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let h = heat[y * IMAGE_SIDE + x];
            if h > 0.0 {
                out.push_str(&format!(
                    "  <rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"#ff2a00\" fill-opacity=\"{}\"/>\n",
                    fmt(x as f64 * cell),
                    fmt(y as f64 * cell),
                    format_args!("{:.3}", h * 0.55)
                ));
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
