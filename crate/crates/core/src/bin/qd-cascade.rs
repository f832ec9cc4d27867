//! Command-line front end: simulate coincidence histograms, reconstruct
//! windowed density matrices, run the physics analysis, sweep scenario
//! variants, or chain everything as one pipeline.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 I/O error,
//! 4 fit or optimizer non-convergence.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use qd_cascade::analysis::{
    fit_fss, fit_lifetime, max_window_concurrence, oscillation_series, peak_concurrence,
    scenario_compare, weighted_average_concurrence, ScenarioSpec, WeightedAverage,
};
use qd_cascade::io::{
    file_digest, metadata_path, read_histograms_csv, read_tomography_csv, write_curve_csv,
    write_histogram_metadata, write_histograms_csv, write_json, write_long_csv, write_manifest,
    write_tomography_csv, DirLock, Estimate, FileDigest, Manifest, RhoDocument, RunConfig,
    SummaryDocument, WindowSummary, ARTIFACT_VERSION,
};
use qd_cascade::sim::{expected_histograms, sample_histograms, CascadeParams, HistogramSet};
use qd_cascade::tomography::{windowed_tomography, ConcurrenceSeries, TomographyOptions};
use qd_cascade::{Error, Result};

#[derive(Parser)]
#[command(name = "qd-cascade", version, about = "Cascade photon-pair simulator and tomography toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides config `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expected (and Poisson-sampled) coincidence histograms.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Skip the Poisson-sampled histograms.
        #[arg(long)]
        expected_only: bool,
    },
    /// Windowed maximum-likelihood tomography of a histogram CSV.
    Reconstruct {
        #[command(flatten)]
        common: CommonArgs,
        /// Histogram CSV (with its `.meta.json` sidecar next to it).
        #[arg(long)]
        histograms: PathBuf,
        /// Window width,step in ps (overrides config).
        #[arg(long, value_parser = parse_windows)]
        windows: Option<(f64, f64)>,
    },
    /// Lifetime/FSS fits and concurrence summary from prior outputs.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        histograms: PathBuf,
        /// Tomography series CSV from `reconstruct`.
        #[arg(long)]
        tomography: PathBuf,
    },
    /// Run the pipeline for several parameter variants and compare.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep specification (JSON with a `variants` list of overrides).
        #[arg(long)]
        sweep: PathBuf,
    },
    /// simulate -> reconstruct -> analyze in one run.
    Pipeline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        expected_only: bool,
        #[arg(long, value_parser = parse_windows)]
        windows: Option<(f64, f64)>,
    },
}

fn parse_windows(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected `width_ps,step_ps`".into());
    }
    let w: f64 = parts[0].trim().parse().map_err(|_| "bad width")?;
    let st: f64 = parts[1].trim().parse().map_err(|_| "bad step")?;
    if w <= 0.0 || st <= 0.0 {
        return Err("width and step must be > 0".into());
    }
    Ok((w, st))
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter { .. } | Error::InvalidState(_) | Error::Validation(_) => 2,
        Error::Io(_) => 3,
        Error::Json(_) => 2,
        Error::Fit(_) | Error::NonConvergence { .. } => 4,
    }
}

struct Run {
    config: RunConfig,
    out: PathBuf,
    started: Instant,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
}

impl Run {
    fn new(common: &CommonArgs) -> Result<Self> {
        let mut config = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        let out = common
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| {
                Error::parameter("out", "no output directory (use --out or config `output_dir`)")
            })?;
        let inputs = vec![file_digest(&common.config)?];
        Ok(Run {
            config,
            out,
            started: Instant::now(),
            inputs,
            outputs: Vec::new(),
            notes: Vec::new(),
        })
    }

    fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(file_digest(path)?);
        Ok(())
    }

    fn track(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn finish(self, command: &str) -> Result<()> {
        let mut outputs = Vec::new();
        for p in &self.outputs {
            outputs.push(file_digest(p)?);
        }
        let manifest = Manifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            command: command.to_string(),
            config_hash: self.config.config_hash(),
            seed: self.config.seed,
            inputs: self.inputs,
            outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
            notes: self.notes,
        };
        write_manifest(&self.out, &manifest)?;
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            expected_only,
        } => {
            let mut run = Run::new(&common)?;
            let _lock = DirLock::acquire(&run.out)?;
            do_simulate(&mut run, expected_only)?;
            run.finish("simulate")
        }
        Command::Reconstruct {
            common,
            histograms,
            windows,
        } => {
            let mut run = Run::new(&common)?;
            let _lock = DirLock::acquire(&run.out)?;
            run.add_input(&histograms)?;
            run.add_input(&metadata_path(&histograms))?;
            let hist = read_histograms_csv(&histograms)?;
            do_reconstruct(&mut run, &hist, windows)?;
            run.finish("reconstruct")
        }
        Command::Analyze {
            common,
            histograms,
            tomography,
        } => {
            let mut run = Run::new(&common)?;
            let _lock = DirLock::acquire(&run.out)?;
            run.add_input(&histograms)?;
            run.add_input(&tomography)?;
            let hist = read_histograms_csv(&histograms)?;
            let windows = read_tomography_csv(&tomography)?;
            do_analyze(&mut run, &hist, &windows)?;
            run.finish("analyze")
        }
        Command::Sweep { common, sweep } => {
            let mut run = Run::new(&common)?;
            let _lock = DirLock::acquire(&run.out)?;
            run.add_input(&sweep)?;
            do_sweep(&mut run, &sweep)?;
            run.finish("sweep")
        }
        Command::Pipeline {
            common,
            expected_only,
            windows,
        } => {
            let mut run = Run::new(&common)?;
            let _lock = DirLock::acquire(&run.out)?;
            let hist = do_simulate(&mut run, expected_only)?;
            let series = do_reconstruct(&mut run, &hist, windows)?;
            do_analyze_in_memory(&mut run, &hist, &series)?;
            run.finish("pipeline")
        }
    }
}

fn do_simulate(run: &mut Run, expected_only: bool) -> Result<HistogramSet> {
    let hist = expected_histograms(&run.config.params)?;
    let csv = run.out.join("expected.csv");
    write_histograms_csv(&csv, &hist)?;
    let meta = write_histogram_metadata(&csv, &hist)?;
    run.track(csv);
    run.track(meta);
    if !expected_only {
        let sampled = sample_histograms(&hist, run.config.seed)?;
        let csv = run.out.join("sampled.csv");
        write_histograms_csv(&csv, &sampled)?;
        let meta = write_histogram_metadata(&csv, &sampled)?;
        run.track(csv);
        run.track(meta);
    }
    run.notes
        .push(format!("n0 (inferred true pairs per basis pair) = {}", run.config.params.n0()));
    Ok(hist)
}

fn tomography_options(config: &RunConfig, g2_xx: f64, windows: Option<(f64, f64)>) -> TomographyOptions {
    let (width, step) = windows.unwrap_or((
        config.tomography.window_width,
        config.tomography.window_step,
    ));
    let mut opts = TomographyOptions::new(width, step, g2_xx, config.seed);
    opts.mc_repetitions = config.tomography.mc_repetitions;
    opts
}

fn do_reconstruct(
    run: &mut Run,
    hist: &HistogramSet,
    windows: Option<(f64, f64)>,
) -> Result<ConcurrenceSeries> {
    let opts = tomography_options(&run.config, hist.params.g2_xx, windows);
    let series = windowed_tomography(hist, &opts)?;
    if series.windows.is_empty() {
        return Err(Error::Validation(
            "no window produced a reconstruction".into(),
        ));
    }
    let csv = run.out.join("concurrence.csv");
    write_tomography_csv(&csv, &series.windows)?;
    run.track(csv);
    for (k, w) in series.windows.iter().enumerate() {
        let path = run.out.join(format!("rho_{k:04}.json"));
        write_json(&path, &RhoDocument::new(w.window_center, &w.rho))?;
        run.track(path);
    }
    run.notes.push(format!(
        "windows of width {} ps snap to {} ps bin edges",
        opts.window_width,
        hist.grid.bin_width()
    ));
    Ok(series)
}

fn quadrature_average(windows: &[WindowSummary]) -> Result<WeightedAverage> {
    let total: f64 = windows.iter().map(|w| w.total_counts).sum();
    if windows.is_empty() || total <= 0.0 {
        return Err(Error::Validation(
            "weighted average needs windows with counts".into(),
        ));
    }
    let value = windows
        .iter()
        .map(|w| w.concurrence * w.total_counts)
        .sum::<f64>()
        / total;
    // per-window sigma from the stored 2-sigma band, combined in quadrature
    let var: f64 = windows
        .iter()
        .map(|w| {
            let sigma = (w.c_high - w.c_low) / 4.0;
            (w.total_counts * sigma / total).powi(2)
        })
        .sum();
    let half = 2.0 * var.sqrt();
    Ok(WeightedAverage {
        value,
        low: (value - half).clamp(0.0, 1.0),
        high: (value + half).clamp(0.0, 1.0),
    })
}

fn fits_for(hist: &HistogramSet, config: &RunConfig) -> (Option<Estimate>, Option<Estimate>) {
    let tau = fit_lifetime(hist, config.lifetime_fit_start())
        .ok()
        .filter(|f| f.std_error.is_finite())
        .map(|f| Estimate {
            value: f.value,
            std_error: f.std_error,
        });
    let fss = fit_fss(&oscillation_series(hist))
        .ok()
        .filter(|f| f.std_error.is_finite())
        .map(|f| Estimate {
            value: f.value,
            std_error: f.std_error,
        });
    (tau, fss)
}

fn do_analyze(run: &mut Run, hist: &HistogramSet, windows: &[WindowSummary]) -> Result<()> {
    let half = run.config.analysis.peak_width / 2.0;
    let span: Vec<WindowSummary> = windows
        .iter()
        .filter(|w| w.window_center.abs() <= half)
        .cloned()
        .collect();
    if span.is_empty() {
        return Err(Error::Validation(format!(
            "no window centers inside the {} ps peak span",
            run.config.analysis.peak_width
        )));
    }
    let peak = quadrature_average(&span)?;
    let max_window = windows
        .iter()
        .map(|w| w.concurrence)
        .fold(f64::NEG_INFINITY, f64::max);
    let average = quadrature_average(windows)?;
    let (tau, fss) = fits_for(hist, &run.config);

    let summary = SummaryDocument {
        peak_concurrence: peak.value,
        peak_concurrence_low: peak.low,
        peak_concurrence_high: peak.high,
        max_window_concurrence: max_window,
        weighted_average_concurrence: average.value,
        weighted_average_low: average.low,
        weighted_average_high: average.high,
        tau_x_ps: tau,
        fss_frequency_mhz: fss,
        n0: Some(hist.params.n0()),
    };
    let path = run.out.join("summary.json");
    write_json(&path, &summary)?;
    run.track(path);

    let curve = run.out.join("curve.csv");
    let mut text = String::from("t_ps,concurrence,c_low,c_high\n");
    for w in windows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            w.window_center, w.concurrence, w.c_low, w.c_high
        ));
    }
    std::fs::write(&curve, text)?;
    run.track(curve);
    Ok(())
}

fn do_analyze_in_memory(
    run: &mut Run,
    hist: &HistogramSet,
    series: &ConcurrenceSeries,
) -> Result<()> {
    let peak = peak_concurrence(series, run.config.analysis.peak_width)?;
    let max_window = max_window_concurrence(&series.windows)
        .ok_or_else(|| Error::Validation("empty concurrence series".into()))?;
    let average = weighted_average_concurrence(series)?;
    let (tau, fss) = fits_for(hist, &run.config);

    let mut summary = SummaryDocument::from_parts(&peak, max_window, &average);
    summary.tau_x_ps = tau;
    summary.fss_frequency_mhz = fss;
    summary.n0 = Some(hist.params.n0());
    let path = run.out.join("summary.json");
    write_json(&path, &summary)?;
    run.track(path);

    let curve = run.out.join("curve.csv");
    write_curve_csv(&curve, &series.windows)?;
    run.track(curve);
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    variants: Vec<SweepVariant>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepVariant {
    name: String,
    #[serde(default)]
    overrides: serde_json::Map<String, serde_json::Value>,
}

fn apply_overrides(
    base: &CascadeParams,
    overrides: &serde_json::Map<String, serde_json::Value>,
) -> Result<CascadeParams> {
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("params serialize to an object");
    for (key, v) in overrides {
        if !obj.contains_key(key) {
            return Err(Error::Validation(format!(
                "unknown override key `{key}` (not a CascadeParams field)"
            )));
        }
        obj.insert(key.clone(), v.clone());
    }
    let params: CascadeParams = serde_json::from_value(value)
        .map_err(|e| Error::Validation(format!("override produced invalid params: {e}")))?;
    params.validate()?;
    Ok(params)
}

fn do_sweep(run: &mut Run, sweep_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(sweep_path)?;
    let spec: SweepSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", sweep_path.display())))?;
    if spec.variants.is_empty() {
        return Err(Error::Validation("sweep spec lists no variants".into()));
    }
    let mut scenarios = Vec::new();
    for (idx, variant) in spec.variants.iter().enumerate() {
        let params = apply_overrides(&run.config.params, &variant.overrides)?;
        let mut tomo = tomography_options(&run.config, params.g2_xx, None);
        tomo.seed = run.config.seed.wrapping_add(idx as u64);
        scenarios.push(ScenarioSpec {
            name: variant.name.clone(),
            params,
            tomography: tomo,
            peak_width: run.config.analysis.peak_width,
        });
    }
    let outcomes = scenario_compare(&scenarios)?;

    let mut curves = Vec::new();
    let mut table = String::from("scenario,peak,max_window,weighted_average,status\n");
    for outcome in &outcomes {
        match &outcome.result {
            Ok(summary) => {
                let dir = run.out.join(&outcome.name);
                std::fs::create_dir_all(&dir)?;
                let curve = dir.join("curve.csv");
                write_curve_csv(&curve, &summary.series.windows)?;
                run.track(curve);
                let sdoc = SummaryDocument::from_parts(
                    &summary.peak,
                    summary.max_window_concurrence,
                    &summary.average,
                );
                let spath = dir.join("summary.json");
                write_json(&spath, &sdoc)?;
                run.track(spath);
                table.push_str(&format!(
                    "{},{},{},{},ok\n",
                    outcome.name,
                    summary.peak.value,
                    summary.max_window_concurrence,
                    summary.average.value
                ));
                curves.push((outcome.name.clone(), summary.series.windows.clone()));
            }
            Err(message) => {
                run.notes
                    .push(format!("variant `{}` failed: {message}", outcome.name));
                table.push_str(&format!("{},,,,failed\n", outcome.name));
            }
        }
    }
    let combined = run.out.join("scenarios.csv");
    write_long_csv(&combined, &curves)?;
    run.track(combined);
    let table_path = run.out.join("summary_table.csv");
    std::fs::write(&table_path, table)?;
    run.track(table_path);
    Ok(())
}
