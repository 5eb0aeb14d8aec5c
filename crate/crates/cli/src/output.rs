//! Atomic file output and the CSV layouts shared by the commands.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use eks_core::diagnostics::{spread_metric, SpreadWeights};
use eks_core::samplers::StepStats;
use eks_core::Ensemble;

use crate::error::CliError;

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Collects the files of one command so they can be reported together.
#[derive(Debug, Default)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        write_atomic(&path, contents.as_bytes())?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

fn header(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

fn row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// One row per vector, columns `u0, u1, …`.
pub fn vectors_csv<'a>(vectors: impl IntoIterator<Item = nalgebra::DVectorView<'a, f64>>, dim: usize) -> String {
    let mut out = header("u", dim);
    out.push('\n');
    for v in vectors {
        out.push_str(&row(v.iter().copied()));
        out.push('\n');
    }
    out
}

pub fn ensemble_csv(e: &Ensemble) -> String {
    vectors_csv(e.particles().column_iter().map(|c| c.into()), e.dim())
}

pub fn chain_csv(samples: &[DVector<f64>], dim: usize) -> String {
    vectors_csv(samples.iter().map(|s| s.as_view()), dim)
}

/// Per-step particle trace.
pub struct TraceCsv {
    text: String,
    rows: usize,
}

impl TraceCsv {
    pub fn new(dim: usize) -> Self {
        Self {
            text: format!("step,t,dt,mean_misfit,mean_misfit_reg,cov_trace,degenerate,{}\n", header("mean", dim)),
            rows: 0,
        }
    }

    pub fn push(&mut self, s: &StepStats) {
        let _ = writeln!(
            self.text,
            "{},{:e},{:e},{:e},{:e},{:e},{},{}",
            s.step,
            s.t,
            s.dt,
            s.mean_misfit,
            s.mean_misfit_reg,
            s.cov_trace,
            u8::from(s.degenerate),
            row(s.mean.iter().copied())
        );
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Spread metrics over time. The `H^{-2}` columns appear for KL-parametrised
/// problems and the truth columns when a truth is known.
pub struct MetricsCsv {
    text: String,
    h_minus_two: Option<SpreadWeights>,
    truth: Option<DVector<f64>>,
}

impl MetricsCsv {
    pub fn new(h_minus_two: Option<SpreadWeights>, truth: Option<DVector<f64>>) -> Self {
        let mut cols = vec!["t"];
        if h_minus_two.is_some() {
            cols.push("d_h_minus_two_mean");
            if truth.is_some() {
                cols.push("d_h_minus_two_truth");
            }
        }
        cols.push("d_l2_mean");
        if truth.is_some() {
            cols.push("d_l2_truth");
        }
        Self {
            text: cols.join(",") + "\n",
            h_minus_two,
            truth,
        }
    }

    pub fn push(&mut self, t: f64, e: &Ensemble) -> Result<(), CliError> {
        let mean = e.mean();
        let unit = SpreadWeights::unit(e.dim());
        let mut values = vec![t];
        if let Some(w) = &self.h_minus_two {
            values.push(spread_metric(e, &mean, w)?);
            if let Some(truth) = &self.truth {
                values.push(spread_metric(e, truth, w)?);
            }
        }
        values.push(spread_metric(e, &mean, &unit)?);
        if let Some(truth) = &self.truth {
            values.push(spread_metric(e, truth, &unit)?);
        }
        self.text.push_str(&row(values));
        self.text.push('\n');
        Ok(())
    }

    pub fn into_string(self) -> String {
        self.text
    }
}
