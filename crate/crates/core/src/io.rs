//! Run configuration, CSV/JSON serialization of histograms and tomography
//! series, manifests with content digests, and the output-directory lock.
//!
//! All numeric output uses Rust's shortest round-trip float formatting, so a
//! fixed config and seed produce byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::WeightedAverage;
use crate::error::{Error, Result};
use crate::polarization::{basis_pairs, pair_index, DensityMatrix, PolarizationLabel};
use crate::sim::{CascadeParams, HistogramKind, HistogramSet, TimeGrid};
use crate::tomography::TomographyResult;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tomography block of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySettings {
    /// Sliding-window width in ps.
    pub window_width: f64,
    /// Window step in ps.
    pub window_step: f64,
    /// Monte-Carlo repetitions per window (0 disables error bars).
    #[serde(default = "default_mc_reps")]
    pub mc_repetitions: usize,
}

fn default_mc_reps() -> usize {
    1000
}

/// Analysis block of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Width of the t=0-centered peak window in ps.
    #[serde(default = "default_peak_width")]
    pub peak_width: f64,
    /// Lifetime-fit start in ps; defaults to 2x the IRF FWHM.
    #[serde(default)]
    pub lifetime_fit_start: Option<f64>,
}

fn default_peak_width() -> f64 {
    200.0
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            peak_width: default_peak_width(),
            lifetime_fit_start: None,
        }
    }
}

/// Complete run configuration; a single JSON document. The seed is mandatory
/// so no run ever depends on wall-clock entropy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: CascadeParams,
    pub tomography: TomographySettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.tomography.window_width > 0.0) {
            return Err(Error::parameter("tomography.window_width", "must be > 0"));
        }
        if !(self.tomography.window_step > 0.0) {
            return Err(Error::parameter("tomography.window_step", "must be > 0"));
        }
        if !(self.analysis.peak_width > 0.0) {
            return Err(Error::parameter("analysis.peak_width", "must be > 0"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted) JSON encoding; stable under
    /// field reordering in the input file.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        // serde_json maps are ordered, so this encoding is canonical
        sha256_hex(serde_json::to_string(&value).expect("value serializes").as_bytes())
    }

    pub fn lifetime_fit_start(&self) -> f64 {
        self.analysis
            .lifetime_fit_start
            .unwrap_or(2.0 * self.params.irf_fwhm)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        path: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        sha256: sha256_hex(&bytes),
    })
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_seconds: f64,
    /// Free-form notes, e.g. how window boundaries snapped to bin edges.
    #[serde(default)]
    pub notes: Vec<String>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    write_json(&path, manifest)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

const HIST_HEADER: &str = "basis_x,basis_xx,bin_start_ps,counts";

/// Writes the 36-series histogram CSV (`basis_x,basis_xx,bin_start_ps,counts`,
/// pair-major, bins ascending).
pub fn write_histograms_csv(path: &Path, hist: &HistogramSet) -> Result<()> {
    let mut out = String::new();
    out.push_str(HIST_HEADER);
    out.push('\n');
    for (i, j) in basis_pairs() {
        let series = hist.series(i, j);
        for (k, c) in series.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i.as_str(),
                j.as_str(),
                hist.grid.bin_start(k),
                c
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Metadata sidecar of a histogram CSV. The `params` object mirrors the
/// `CascadeParams` field names one-to-one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramMetadata {
    pub params: CascadeParams,
    pub kind: HistogramKind,
    /// Inferred true-pair count per basis pair, reported so downstream
    /// consumers can scale against it.
    pub n0: f64,
}

/// Sidecar path convention: `expected.csv` -> `expected.meta.json`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "histograms".into());
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_histogram_metadata(csv_path: &Path, hist: &HistogramSet) -> Result<PathBuf> {
    let path = metadata_path(csv_path);
    write_json(
        &path,
        &HistogramMetadata {
            params: hist.params.clone(),
            kind: hist.kind,
            n0: hist.params.n0(),
        },
    )?;
    Ok(path)
}

/// Reads a histogram CSV plus its metadata sidecar back into a
/// `HistogramSet`, with row/column diagnostics on malformed input.
pub fn read_histograms_csv(csv_path: &Path) -> Result<HistogramSet> {
    let meta_path = metadata_path(csv_path);
    let meta_text = fs::read_to_string(&meta_path)?;
    let meta: HistogramMetadata = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Validation(format!("{}: {e}", meta_path.display())))?;
    meta.params.validate()?;

    let text = fs::read_to_string(csv_path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == HIST_HEADER => {}
        other => {
            return Err(Error::Validation(format!(
                "line 1: expected header `{HIST_HEADER}`, got `{}`",
                other.map(|(_, l)| l).unwrap_or("")
            )))
        }
    }

    let mut starts: Vec<Vec<f64>> = vec![Vec::new(); 36];
    let mut counts: Vec<Vec<f64>> = vec![Vec::new(); 36];
    for (lineno, line) in lines {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Validation(format!(
                "line {row}: expected 4 columns, got {}",
                fields.len()
            )));
        }
        let bx = PolarizationLabel::parse(fields[0])
            .map_err(|_| Error::Validation(format!("line {row}, column basis_x: `{}`", fields[0])))?;
        let bxx = PolarizationLabel::parse(fields[1]).map_err(|_| {
            Error::Validation(format!("line {row}, column basis_xx: `{}`", fields[1]))
        })?;
        let t: f64 = fields[2].parse().map_err(|_| {
            Error::Validation(format!("line {row}, column bin_start_ps: `{}`", fields[2]))
        })?;
        let c: f64 = fields[3].parse().map_err(|_| {
            Error::Validation(format!("line {row}, column counts: `{}`", fields[3]))
        })?;
        if c < 0.0 || !c.is_finite() {
            return Err(Error::Validation(format!(
                "line {row}: negative or non-finite count {c}"
            )));
        }
        let idx = pair_index(bx, bxx);
        starts[idx].push(t);
        counts[idx].push(c);
    }

    let mut reference: Option<(usize, &[f64])> = None;
    for (idx, (i, j)) in basis_pairs().enumerate() {
        if starts[idx].is_empty() {
            return Err(Error::Validation(format!(
                "missing basis pair ({},{})",
                i.as_str(),
                j.as_str()
            )));
        }
        match reference {
            None => reference = Some((idx, &starts[idx])),
            Some((_, r)) => {
                if r != starts[idx].as_slice() {
                    return Err(Error::Validation(format!(
                        "basis pair ({},{}) has a different time grid than the first pair",
                        i.as_str(),
                        j.as_str()
                    )));
                }
            }
        }
    }
    let grid = TimeGrid::from_bin_starts(reference.expect("checked nonempty").1)?;
    HistogramSet::new(grid, meta.params, meta.kind, counts)
}

const TOMO_HEADER: &str = "window_center_ps,concurrence,c_low,c_high,total_counts";

pub fn write_tomography_csv(path: &Path, series: &[TomographyResult]) -> Result<()> {
    let mut out = String::new();
    out.push_str(TOMO_HEADER);
    out.push('\n');
    for w in series {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            w.window_center, w.concurrence, w.concurrence_low, w.concurrence_high, w.total_counts
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// One reconstructed window read back from a tomography CSV (the density
/// matrices live in per-window JSON files).
#[derive(Debug, Clone, Copy)]
pub struct WindowSummary {
    pub window_center: f64,
    pub concurrence: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub total_counts: f64,
}

pub fn read_tomography_csv(path: &Path) -> Result<Vec<WindowSummary>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == TOMO_HEADER => {}
        other => {
            return Err(Error::Validation(format!(
                "line 1: expected header `{TOMO_HEADER}`, got `{}`",
                other.map(|(_, l)| l).unwrap_or("")
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Validation(format!(
                "line {row}: expected 5 columns, got {}",
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 5];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f.parse().map_err(|_| {
                Error::Validation(format!("line {row}, column {}: `{f}`", k + 1))
            })?;
        }
        out.push(WindowSummary {
            window_center: vals[0],
            concurrence: vals[1],
            c_low: vals[2],
            c_high: vals[3],
            total_counts: vals[4],
        });
    }
    Ok(out)
}

/// Density matrix as two nested 4x4 real arrays (row-major, basis order
/// HH, HV, VH, VV).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoDocument {
    pub window_center_ps: f64,
    pub re: [[f64; 4]; 4],
    pub im: [[f64; 4]; 4],
}

impl RhoDocument {
    pub fn new(window_center_ps: f64, rho: &DensityMatrix) -> Self {
        let mut re = [[0.0; 4]; 4];
        let mut im = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                re[r][c] = rho.matrix()[(r, c)].re;
                im[r][c] = rho.matrix()[(r, c)].im;
            }
        }
        RhoDocument {
            window_center_ps,
            re,
            im,
        }
    }

    pub fn to_density_matrix(&self) -> Result<DensityMatrix> {
        let m = nalgebra::Matrix4::from_fn(|r, c| {
            crate::polarization::C64::new(self.re[r][c], self.im[r][c])
        });
        DensityMatrix::new(m)
    }
}

/// Curve CSV used by the analysis reports (`t_ps,concurrence,c_low,c_high`).
pub fn write_curve_csv(path: &Path, series: &[TomographyResult]) -> Result<()> {
    let mut out = String::from("t_ps,concurrence,c_low,c_high\n");
    for w in series {
        out.push_str(&format!(
            "{},{},{},{}\n",
            w.window_center, w.concurrence, w.concurrence_low, w.concurrence_high
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Long-format CSV combining several scenarios for plotting.
pub fn write_long_csv(path: &Path, curves: &[(String, Vec<TomographyResult>)]) -> Result<()> {
    let mut out = String::from("scenario,t_ps,concurrence,c_low,c_high\n");
    for (name, series) in curves {
        for w in series {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                name, w.window_center, w.concurrence, w.concurrence_low, w.concurrence_high
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Scalar estimate with error, as emitted in summary JSON documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Summary JSON written by the analysis and pipeline commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub peak_concurrence: f64,
    pub peak_concurrence_low: f64,
    pub peak_concurrence_high: f64,
    pub max_window_concurrence: f64,
    pub weighted_average_concurrence: f64,
    pub weighted_average_low: f64,
    pub weighted_average_high: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_x_ps: Option<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fss_frequency_mhz: Option<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n0: Option<f64>,
}

impl SummaryDocument {
    pub fn from_parts(
        peak: &WeightedAverage,
        max_window: f64,
        average: &WeightedAverage,
    ) -> Self {
        SummaryDocument {
            peak_concurrence: peak.value,
            peak_concurrence_low: peak.low,
            peak_concurrence_high: peak.high,
            max_window_concurrence: max_window,
            weighted_average_concurrence: average.value,
            weighted_average_low: average.low,
            weighted_average_high: average.high,
            tau_x_ps: None,
            fss_frequency_mhz: None,
            n0: None,
        }
    }
}

/// Exclusive lock on an output directory; concurrent invocations on the same
/// directory fail fast instead of interleaving writes. Removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".qd-cascade.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Validation(
                format!(
                    "output directory is locked by another run ({}); remove the lock file if stale",
                    path.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
