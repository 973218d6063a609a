use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{read_metrics_jsonl, EpochMetrics, RunFiles, TrainConfig};

/// Plottable `metrics.jsonl` fields.
pub const PLOT_METRICS: [&str; 5] = ["mean_loss", "bootstrap_ratio", "nn_top1", "second_nn_top1", "embed_std"];

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn metric_value(m: &EpochMetrics, metric: &str) -> Option<f64> {
    match metric {
        "mean_loss" => Some(m.mean_loss),
        "bootstrap_ratio" => Some(m.bootstrap_ratio),
        "nn_top1" => m.nn_top1,
        "second_nn_top1" => m.second_nn_top1,
        "embed_std" => Some(m.embed_std),
        _ => None,
    }
}

/// One run's curve. Epochs with a null value are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    /// Reads `metric` from a metrics file. The legend comes from a sibling
    /// `config.json` when present, else from the directory name.
    pub fn load(path: &Path, metric: &str) -> Result<Self> {
        if !PLOT_METRICS.contains(&metric) {
            return Err(Error::Config {
                field: "metric",
                reason: format!("unknown metric {metric:?}; available: {}", PLOT_METRICS.join(", ")),
            });
        }
        let metrics = read_metrics_jsonl(path)?;
        if metrics.is_empty() {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                message: "no epochs to plot".into(),
            });
        }
        let points = metrics
            .iter()
            .filter_map(|m| metric_value(m, metric).map(|v| (m.epoch as f64, v)))
            .filter(|(_, v)| v.is_finite())
            .collect();
        let dir = path.parent().unwrap_or(Path::new("."));
        let label = std::fs::read(dir.join(RunFiles::CONFIG))
            .ok()
            .and_then(|b| serde_json::from_slice::<TrainConfig>(&b).ok())
            .map(|c| format!("{} τ={}", c.pair_mode.flag(), c.tau))
            .unwrap_or_else(|| {
                dir.file_name()
                    .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
            });
        Ok(Self { label, points })
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG with one polyline per series and a legend.
pub fn render_svg(series: &[PlotSeries], metric: &str) -> Result<String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::config("metric", format!("{metric} has no values in the given files")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(metric)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 18.0,
            xv.round()
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    for (n, ser) in series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * n as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
