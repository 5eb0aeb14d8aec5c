//! The `plot` command: static SVG figures from the CSV outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use crate::error::CliError;
use crate::output::write_atomic;

pub const MAX_SCATTER_SETS: usize = 5;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    Scatter2d,
    MisfitTrace,
    SpreadTrace,
    ZetaBars,
}

/// A parsed numeric CSV file.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::Usage(format!("{}: {msg}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let headers: Vec<String> = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let row = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
            rows.push(row);
        }
        if headers.is_empty() || rows.is_empty() {
            return Err(bad("no data rows".into()));
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    fn column_at(&self, i: usize) -> Result<Vec<f64>, CliError> {
        if i >= self.headers.len() {
            return Err(CliError::Usage(format!("column {i} out of range ({} columns)", self.headers.len())));
        }
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// A data-to-pixel map over a padded bounding box.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_y: bool,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone, log_y: bool) -> Self {
        let range = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let x = range(&mut xs.clone());
        let y = if log_y {
            let (lo, hi) = range(&mut ys.filter(|v| *v > 0.0).map(f64::log10));
            (lo, hi)
        } else {
            range(&mut ys.clone())
        };
        Self { x, y, log_y }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.log10() } else { y };
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Svg {
    body: String,
    legend: Vec<(String, &'static str)>,
}

impl Svg {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(body, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(body, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title));
        Self { body, legend: Vec::new() }
    }

    fn axes(&mut self, f: &Frame, x_label: &str, y_label: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(self.body, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let s = k as f64 / 4.0;
            let xv = f.x.0 + s * (f.x.1 - f.x.0);
            let yv = f.y.0 + s * (f.y.1 - f.y.0);
            let yv_label = if f.log_y { 10f64.powf(yv) } else { yv };
            let px = f.px(xv);
            let py = b - s * (b - t);
            let _ = writeln!(self.body, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle" font-size="11">{xv:.3}</text>"#, b + 16.0);
            let _ = writeln!(self.body, r#"<text x="{:.1}" y="{py:.1}" text-anchor="end" font-size="11">{yv_label:.3e}</text>"#, l - 4.0);
        }
        let _ = writeln!(self.body, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(x_label));
        let _ = writeln!(
            self.body,
            r#"<text x="16" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        );
    }

    fn points(&mut self, f: &Frame, xs: &[f64], ys: &[f64], color: &'static str, label: &str) {
        let _ = writeln!(self.body, r#"<g fill="{color}" fill-opacity="0.5">"#);
        for (x, y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(self.body, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, f.px(*x), f.py(*y));
            }
        }
        self.body.push_str("</g>\n");
        self.legend.push((label.to_string(), color));
    }

    fn line(&mut self, f: &Frame, xs: &[f64], ys: &[f64], color: &'static str, label: &str) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!f.log_y || **y > 0.0))
            .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
            .collect();
        let _ = writeln!(self.body, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        self.legend.push((label.to_string(), color));
    }

    fn bar(&mut self, f: &Frame, x0: f64, x1: f64, y: f64, color: &'static str) {
        let base = f.py(0.0_f64.clamp(f.y.0, f.y.1));
        let top = f.py(y);
        let (lo, hi) = (base.min(top), base.max(top));
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.2}" y="{lo:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            f.px(x0),
            f.px(x1) - f.px(x0),
            hi - lo
        );
    }

    fn finish(mut self) -> String {
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = MARGIN + 8.0 + 16.0 * i as f64;
            let x = WIDTH - MARGIN - 140.0;
            let _ = writeln!(
                self.body,
                r#"<g class="legend-entry"><rect x="{x}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{:.1}" font-size="12">{}</text></g>"#,
                y - 9.0,
                x + 14.0,
                y,
                escape(label)
            );
        }
        self.legend.clear();
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n{}</svg>\n",
            self.body
        )
    }
}

/// Input files with their legend labels.
#[derive(Debug, Clone)]
pub struct PlotInput {
    pub path: PathBuf,
    pub label: String,
}

impl PlotInput {
    /// Label defaults to the file stem.
    pub fn new(path: PathBuf, label: Option<String>) -> Self {
        let label = label.unwrap_or_else(|| path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()));
        Self { path, label }
    }
}

fn require(t: &Table, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
    t.column(name).ok_or_else(|| CliError::Usage(format!("{}: no column {name}", path.display())))
}

/// Renders one plot to an SVG string.
pub fn render(kind: PlotKind, inputs: &[PlotInput], columns: (usize, usize)) -> Result<String, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("no input files".into()));
    }
    let tables: Vec<Table> = inputs.iter().map(|i| Table::read(&i.path)).collect::<Result<_, _>>()?;
    match kind {
        PlotKind::Scatter2d => {
            if inputs.len() > MAX_SCATTER_SETS {
                return Err(CliError::Usage(format!("scatter2d takes at most {MAX_SCATTER_SETS} point sets")));
            }
            let sets: Vec<(Vec<f64>, Vec<f64>)> = tables.iter().map(|t| Ok((t.column_at(columns.0)?, t.column_at(columns.1)?))).collect::<Result<_, CliError>>()?;
            let frame = Frame::fit(sets.iter().flat_map(|s| s.0.iter().copied()), sets.iter().flat_map(|s| s.1.iter().copied()), false);
            let mut svg = Svg::new("Ensemble scatter");
            svg.axes(&frame, &tables[0].headers[columns.0], &tables[0].headers[columns.1]);
            for (i, ((xs, ys), input)) in sets.iter().zip(inputs).enumerate() {
                svg.points(&frame, xs, ys, COLORS[i], &input.label);
            }
            Ok(svg.finish())
        }
        PlotKind::MisfitTrace => {
            let series: Vec<(Vec<f64>, Vec<f64>)> = tables
                .iter()
                .zip(inputs)
                .map(|(t, i)| Ok((require(t, "step", &i.path)?, require(t, "mean_misfit", &i.path)?)))
                .collect::<Result<_, CliError>>()?;
            lines("Mean data misfit", "step", "mean misfit", &series, inputs, true)
        }
        PlotKind::SpreadTrace => {
            let mut series = Vec::new();
            let mut labels = Vec::new();
            for (t, input) in tables.iter().zip(inputs) {
                let time = require(t, "t", &input.path)?;
                for (c, name) in t.headers.iter().enumerate().filter(|(_, h)| h.as_str() != "t") {
                    series.push((time.clone(), t.column_at(c)?));
                    labels.push(PlotInput {
                        path: input.path.clone(),
                        label: format!("{} {name}", input.label),
                    });
                }
            }
            lines("Ensemble spread", "t", "spread", &series, &labels, true)
        }
        PlotKind::ZetaBars => {
            let sets: Vec<Vec<f64>> = tables.iter().zip(inputs).map(|(t, i)| require(t, "zeta", &i.path)).collect::<Result<_, _>>()?;
            let n = sets.iter().map(Vec::len).max().unwrap_or(0);
            let frame = Frame {
                x: (-0.5, n as f64 - 0.5),
                y: {
                    let lo = sets.iter().flatten().fold(0.0f64, |a, &b| a.min(b));
                    let hi = sets.iter().flatten().fold(1.0f64, |a, &b| a.max(b));
                    (lo - 0.05, hi + 0.05)
                },
                log_y: false,
            };
            let mut svg = Svg::new("Posterior variance reduction");
            svg.axes(&frame, "mode k", "zeta");
            let width = 0.8 / sets.len() as f64;
            for (s, (zeta, input)) in sets.iter().zip(inputs).enumerate() {
                let color = COLORS[s % COLORS.len()];
                for (k, z) in zeta.iter().enumerate() {
                    let x0 = k as f64 - 0.4 + s as f64 * width;
                    svg.bar(&frame, x0, x0 + width, *z, color);
                }
                svg.legend.push((input.label.clone(), color));
            }
            Ok(svg.finish())
        }
    }
}

fn lines(title: &str, xl: &str, yl: &str, series: &[(Vec<f64>, Vec<f64>)], inputs: &[PlotInput], log_y: bool) -> Result<String, CliError> {
    let frame = Frame::fit(series.iter().flat_map(|s| s.0.iter().copied()), series.iter().flat_map(|s| s.1.iter().copied()), log_y);
    let mut svg = Svg::new(title);
    svg.axes(&frame, xl, yl);
    for (i, ((xs, ys), input)) in series.iter().zip(inputs).enumerate() {
        svg.line(&frame, xs, ys, COLORS[i % COLORS.len()], &input.label);
    }
    Ok(svg.finish())
}

pub fn plot(kind: PlotKind, inputs: &[PlotInput], columns: (usize, usize), out: &Path) -> Result<(), CliError> {
    let svg = render(kind, inputs, columns)?;
    write_atomic(out, svg.as_bytes())
}
