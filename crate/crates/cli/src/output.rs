//! Output plumbing shared by all subcommands: hashed header comments on
//! every text artifact, the JSON run manifest, and small statistics used by
//! the convergence summaries.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Context stamped into every output file: artifact version, experiment
/// name, effective config hash and master seed.
pub struct RunStamp {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
}

impl RunStamp {
    pub fn header_comment(&self) -> String {
        format!(
            "# roughsko v{} experiment={} config={} seed={}",
            ARTIFACT_VERSION,
            self.experiment,
            &self.config_hash[..16],
            self.seed
        )
    }
}

/// Open a text artifact under `dir`, stamping the header comment first.
pub fn create_stamped(dir: &Path, name: &str, stamp: &RunStamp) -> anyhow::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "{}", stamp.header_comment())?;
    Ok(w)
}

#[derive(Serialize)]
pub struct GuardEvent {
    pub scope: String,
    pub message: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub experiment: String,
    pub config_path: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub samples: usize,
    pub elapsed_ms: u64,
    pub guard_events: Vec<GuardEvent>,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(path)
    }
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Least-squares slope of y against x.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return f64::NAN;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    num / den
}

/// Aggregate rows of a conversion table into per-exponent summaries and the
/// fitted slope of log2 median absolute residual against the exponent.
pub struct ConvergenceSummary {
    /// (n_coarse, count, median |residual|, mean |residual|, rms residual)
    pub rows: Vec<(u32, usize, f64, f64, f64)>,
    pub slope_log2_median: f64,
}

pub fn summarize_residuals(per_exponent: &BTreeMap<u32, Vec<f64>>) -> ConvergenceSummary {
    let mut rows = Vec::new();
    for (&n, residuals) in per_exponent {
        let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let count = abs.len();
        let med = median(&abs);
        let mean = abs.iter().sum::<f64>() / count as f64;
        let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / count as f64).sqrt();
        rows.push((n, count, med, mean, rms));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.2.max(f64::MIN_POSITIVE).log2()).collect();
    let slope = fitted_slope(&xs, &ys);
    ConvergenceSummary { rows, slope_log2_median: slope }
}
