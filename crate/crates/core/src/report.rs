//! Report files: atomic writes, CSV tables and SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{Comparison, EvalReport, GeneralizationCurve, Histogram};
use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub bucket: String,
    pub min_visits: u64,
    pub max_visits: u64,
    pub states: usize,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Parses CSV produced by the functions in this module.
pub fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Report(e.to_string()))
}

pub fn histogram_csv(h: &Histogram) -> Result<String> {
    to_csv(h.bins().into_iter().map(|(lo, hi, count)| HistogramRow { lo, hi, count }))
}

pub fn curve_csv(c: &GeneralizationCurve) -> Result<String> {
    to_csv(c.buckets.iter().map(|b| CurveRow {
        bucket: b.label.clone(),
        min_visits: b.min_visits,
        max_visits: b.max_visits,
        states: b.states,
        mean_error: b.mean_error,
    }))
}

pub fn metrics_csv(r: &EvalReport) -> Result<String> {
    to_csv(r.metrics().into_iter().map(|(m, value, _)| MetricRow { metric: m.to_string(), value }))
}

pub fn comparison_csv(c: &Comparison) -> Result<String> {
    to_csv(&c.rows)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn finite_max(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn frame(title: &str, y_max: f64) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>
<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>
"#,
        WIDTH / 2.0,
        xml_escape(title),
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        HEIGHT - MARGIN,
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y_of(v, y_max);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 6.0, y + 4.0, fmt_tick(v));
    }
    s
}

fn fmt_tick(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn y_of(v: f64, y_max: f64) -> f64 {
    let v = if v.is_finite() { v.clamp(0.0, y_max) } else { 0.0 };
    HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * v / y_max
}

/// One bar per label; values are clamped to be non-negative.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> Result<String> {
    if labels.len() != values.len() {
        return Err(Error::Report(format!("{} labels for {} values", labels.len(), values.len())));
    }
    let y_max = finite_max(values.iter().copied());
    let mut s = frame(title, y_max);
    let slot = (WIDTH - 2.0 * MARGIN) / values.len().max(1) as f64;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = MARGIN + slot * i as f64;
        let y = y_of(v, y_max);
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {v}</title></rect>"#,
            x + slot * 0.1,
            slot * 0.8,
            HEIGHT - MARGIN - y,
            COLORS[0],
            xml_escape(label),
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            x + slot / 2.0,
            HEIGHT - MARGIN + 14.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One polyline per series over shared x labels.
pub fn line_chart_svg(title: &str, x_labels: &[String], series: &[(String, Vec<f64>)]) -> Result<String> {
    if let Some((name, _)) = series.iter().find(|(_, ys)| ys.len() != x_labels.len()) {
        return Err(Error::Report(format!("series `{name}` does not match the {} x labels", x_labels.len())));
    }
    let y_max = finite_max(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let mut s = frame(title, y_max);
    let n = x_labels.len();
    let x_of = |i: usize| {
        if n <= 1 {
            WIDTH / 2.0
        } else {
            MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n - 1) as f64
        }
    };
    for (i, label) in x_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            x_of(i),
            HEIGHT - MARGIN + 14.0,
            xml_escape(label)
        );
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = ys.iter().enumerate().map(|(i, &y)| format!("{:.1},{:.1}", x_of(i), y_of(y, y_max))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0,
            MARGIN + 16.0 * k as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes CSV tables and SVG charts for one report into `dir`; returns the paths.
pub fn render_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let stem = sanitize(&report.label);
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };
    put(format!("{stem}-metrics.csv"), metrics_csv(report)?)?;
    if let Some(v) = &report.value_error {
        put(format!("{stem}-value-error.csv"), histogram_csv(&v.histogram)?)?;
        put(format!("{stem}-signed-error.csv"), histogram_csv(&v.signed_histogram)?)?;
        let (labels, values) = histogram_series(&v.histogram);
        put(
            format!("{stem}-value-error.svg"),
            bar_chart_svg(&format!("{}: squared value error", report.label), &labels, &values)?,
        )?;
    }
    if let Some(c) = &report.generalization_curve {
        put(format!("{stem}-generalization.csv"), curve_csv(c)?)?;
        let labels: Vec<String> = c.buckets.iter().map(|b| b.label.clone()).collect();
        let ys: Vec<f64> = c.buckets.iter().map(|b| b.mean_error).collect();
        put(
            format!("{stem}-generalization.svg"),
            line_chart_svg(
                &format!("{}: mean error by training visits", report.label),
                &labels,
                &[(report.label.clone(), ys)],
            )?,
        )?;
    }
    Ok(written)
}

/// Writes the comparison table and one bar chart per metric into `dir`.
pub fn render_comparison(reports: &[EvalReport], comparison: &Comparison, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("comparison.csv");
    write_atomic(&path, comparison_csv(comparison)?.as_bytes())?;
    written.push(path);
    let labels: Vec<String> = reports.iter().map(|r| r.label.clone()).collect();
    let metric_names: Vec<&str> = reports[0].metrics().into_iter().map(|m| m.0).collect();
    for name in metric_names {
        let values: Option<Vec<f64>> =
            reports.iter().map(|r| r.metrics().into_iter().find(|m| m.0 == name).map(|m| m.1)).collect();
        if let Some(values) = values {
            let path = dir.join(format!("compare-{}.svg", sanitize(name)));
            write_atomic(&path, bar_chart_svg(name, &labels, &values)?.as_bytes())?;
            written.push(path);
        }
    }
    let curves: Option<Vec<&GeneralizationCurve>> = reports.iter().map(|r| r.generalization_curve.as_ref()).collect();
    if let Some(curves) = curves {
        let labels: Vec<String> = crate::analysis::VISIT_BUCKETS
            .iter()
            .map(|b| b.0.to_string())
            .filter(|l| curves.iter().all(|c| c.buckets.iter().any(|b| &b.label == l)))
            .collect();
        let series: Vec<(String, Vec<f64>)> = reports
            .iter()
            .zip(&curves)
            .map(|(r, c)| {
                let ys = labels.iter().map(|l| c.buckets.iter().find(|b| &b.label == l).map_or(0.0, |b| b.mean_error)).collect();
                (r.label.clone(), ys)
            })
            .collect();
        let path = dir.join("compare-generalization.svg");
        write_atomic(&path, line_chart_svg("mean error by training visits", &labels, &series)?.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

fn histogram_series(h: &Histogram) -> (Vec<String>, Vec<f64>) {
    h.bins().into_iter().map(|(lo, _, c)| (format!("{lo:.2}"), c as f64)).unzip()
}

fn sanitize(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect();
    if s.is_empty() {
        "report".into()
    } else {
        s
    }
}
