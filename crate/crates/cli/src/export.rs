//! CSV / JSON / SVG writers. Everything is formatted deterministically so the
//! same inputs give byte-identical files.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use overtone_core::{AxisKind, Spectrum, TimeTrace};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// Where and how to write a result.
#[derive(Debug, Clone)]
pub struct Sink {
    /// `None` writes to stdout.
    pub path: Option<PathBuf>,
    pub format: Format,
}

impl Sink {
    pub fn new(path: Option<PathBuf>, format: Option<Format>) -> Self {
        let inferred = path.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()).and_then(|e| match e {
            "json" => Some(Format::Json),
            "svg" => Some(Format::Svg),
            "csv" => Some(Format::Csv),
            _ => None,
        });
        Self { format: format.or(inferred).unwrap_or(Format::Csv), path }
    }

    pub fn is_stdout(&self) -> bool {
        self.path.is_none()
    }

    pub fn write(&self, bytes: &[u8]) -> Result<(), CliError> {
        match &self.path {
            Some(p) => write_file(p, bytes),
            None => std::io::stdout().write_all(bytes).map_err(|e| CliError::io("<stdout>", e)),
        }
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// A column pair in laboratory units, ready for CSV or SVG.
#[derive(Debug, Clone)]
pub struct Series {
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

/// Laboratory unit of an axis: (column label, SI value per unit).
pub fn axis_unit(kind: AxisKind) -> (&'static str, f64) {
    match kind {
        AxisKind::Frequency => ("frequency_mhz", TAU * 1e6),
        AxisKind::Field => ("field_mt", 1e-3),
        AxisKind::NutationRate => ("nutation_mhz", TAU * 1e6),
        AxisKind::Time => ("time_us", 1e-6),
    }
}

/// Gaussian smoothing with standard deviation `sigma` bins, truncated at 5σ.
pub fn smooth(values: &[f64], sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return values.to_vec();
    }
    let reach = (5.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-reach..=reach).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, k) in (-reach..=reach).enumerate() {
                let src = i + k;
                if (0..n).contains(&src) {
                    acc += kernel[j] * values[src as usize];
                }
            }
            acc / norm
        })
        .collect()
}

/// Smooth a spectrum with a Gaussian of standard deviation `sigma` given in
/// laboratory axis units (MHz, mT, µs).
pub fn smooth_spectrum(s: &Spectrum, sigma: f64) -> Spectrum {
    if !(sigma > 0.0) {
        return s.clone();
    }
    let (_, unit) = axis_unit(s.axis_kind);
    let bins = sigma * unit / s.axis.width();
    let mut out = s.clone();
    out.intensity = smooth(&s.intensity, bins);
    out.normalized = false;
    out.with_meta("smoothing_sigma_lab_units", sigma)
}

pub fn spectrum_series(s: &Spectrum) -> Series {
    let (label, unit) = axis_unit(s.axis_kind);
    Series {
        x_label: label.into(),
        y_label: "intensity".into(),
        x: s.centers().iter().map(|c| c / unit).collect(),
        // densities are per laboratory unit so they still integrate to one
        y: s.intensity.iter().map(|v| v * unit).collect(),
        metadata: s.metadata.clone(),
    }
}

pub fn trace_series(t: &TimeTrace, y_label: &str, time_unit: (&str, f64), metadata: BTreeMap<String, String>) -> Series {
    Series {
        x_label: time_unit.0.into(),
        y_label: y_label.into(),
        x: t.times.iter().map(|v| v / time_unit.1).collect(),
        y: t.values.clone(),
        metadata,
    }
}

fn num(v: f64) -> String {
    format!("{v:.15e}")
}

pub fn to_csv(s: &Series) -> String {
    let mut out = String::new();
    for (k, v) in &s.metadata {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "{},{}", s.x_label, s.y_label);
    for (x, y) in s.x.iter().zip(&s.y) {
        let _ = writeln!(out, "{},{}", num(*x), num(*y));
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|mut s| {
        s.push('\n');
        s
    })
    .map_err(|e| CliError::Config(format!("JSON encoding failed: {e}")))
}

/// Polyline plot with labelled axes and five ticks per axis.
pub fn to_svg(s: &Series, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 80.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 60.0;
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = range(&s.x);
    let (y0, y1) = range(&s.y);
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(out, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(out, r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black"/>"#, px(xv), H - B, H - B + 5.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, px(xv), H - B + 20.0, tick(xv));
        let _ = writeln!(out, r#"<line x1="{}" y1="{1:.2}" x2="{L}" y2="{1:.2}" stroke="black"/>"#, L - 5.0, py(yv));
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, L - 8.0, py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (L + W - R) / 2.0, H - 15.0, escape(&s.x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (T + H - B) / 2.0,
        escape(&s.y_label)
    );
    let points: Vec<String> = s.x.iter().zip(&s.y).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
    let _ = writeln!(out, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.join(" "));
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two numeric columns read back from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub header: Option<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Parse a two-column CSV as written by `to_csv`: `#` lines are skipped and a
/// single non-numeric first row is taken as the header.
pub fn parse_csv(text: &str) -> Result<Columns, String> {
    let mut cols = Columns { header: None, x: Vec::new(), y: Vec::new() };
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (a, b) = (fields.next().unwrap_or(""), fields.next().unwrap_or(""));
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(a), Ok(b)) => {
                cols.x.push(a);
                cols.y.push(b);
            }
            _ if cols.header.is_none() && cols.x.is_empty() => cols.header = Some(line.to_string()),
            _ => return Err(format!("line {}: expected two numbers, got `{line}`", n + 1)),
        }
    }
    Ok(cols)
}
