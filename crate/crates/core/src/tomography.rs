//! Windowed maximum-likelihood reconstruction of the two-photon density
//! matrix from 36-basis coincidence counts, with Monte-Carlo error bars.
//!
//! The density matrix is parametrized as rho = T^dag T / tr(T^dag T) with T
//! lower-triangular (16 real parameters), so every iterate is PSD and unit
//! trace by construction. The Poisson log-likelihood is maximized by BFGS
//! with an analytic gradient; per-setting normalizations are estimated from
//! the four orthogonal outcomes of each of the nine analyzer settings.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::{minimize_bfgs, OptimOptions};
use crate::polarization::{
    basis_pairs, concurrence, mix_uncorrelated, projector_state, DensityMatrix,
    PolarizationLabel, C64,
};
use crate::sim::{derive_rng, HistogramSet};

/// Coincidence totals of one time window, indexed in `basis_pairs` order.
#[derive(Debug, Clone, Copy)]
pub struct WindowCounts {
    pub window_center: f64,
    pub window_width: f64,
    pub counts: [f64; 36],
}

impl WindowCounts {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Sums the counts of every bin whose center falls in
/// [center - width/2, center + width/2); window boundaries therefore snap to
/// bin edges.
pub fn window_counts(hist: &HistogramSet, center: f64, width: f64) -> Result<WindowCounts> {
    if !(width > 0.0) {
        return Err(Error::parameter(
            "window_width",
            format!("must be > 0, got {width}"),
        ));
    }
    let lo = center - width / 2.0;
    let hi = center + width / 2.0;
    let bins: Vec<usize> = (0..hist.grid.len())
        .filter(|k| {
            let c = hist.grid.bin_center(*k);
            c >= lo && c < hi
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::Validation(format!(
            "window [{lo}, {hi}) ps does not overlap the histogram grid"
        )));
    }
    let mut counts = [0.0; 36];
    for (idx, slot) in counts.iter_mut().enumerate() {
        let series = hist.series_by_index(idx);
        *slot = bins.iter().map(|k| series[*k]).sum();
    }
    Ok(WindowCounts {
        window_center: center,
        window_width: width,
        counts,
    })
}

/// Tuning knobs of the likelihood maximization.
#[derive(Debug, Clone)]
pub struct MleOptions {
    /// Flat per-outcome background entering the likelihood as
    /// mu_ij = N_set tr(Pi_ij rho) + b. The reproduction pipeline runs with
    /// b = 0: the measurement it models does not background-correct, which is
    /// exactly what makes dark counts degrade the late-time state.
    pub background: f64,
    pub max_iterations: usize,
    pub tol_rel_ll: f64,
    pub tol_grad: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            background: 0.0,
            max_iterations: 100_000,
            tol_rel_ll: 1e-10,
            tol_grad: 1e-8,
        }
    }
}

/// Full output of one likelihood maximization.
#[derive(Debug, Clone)]
pub struct MleSolution {
    pub rho: DensityMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// The 16 Cholesky parameters at the optimum (reusable as a warm start).
    pub t_params: [f64; 16],
    /// Log-likelihood per accepted iteration (monotone non-decreasing).
    pub ll_trace: Vec<f64>,
}

/// Maximum-likelihood density matrix from one window of 36 counts.
pub fn mle_reconstruct(wc: &WindowCounts) -> Result<DensityMatrix> {
    Ok(mle_solve(wc, &MleOptions::default(), None)?.rho)
}

struct MleProblem {
    /// Projector vectors |ij> in pair order.
    states: Vec<Vector4<C64>>,
    counts: [f64; 36],
    /// Per-setting normalization, indexed 3*basis(i) + basis(j).
    n_set: [f64; 9],
    background: f64,
}

fn setting_index(i: PolarizationLabel, j: PolarizationLabel) -> usize {
    3 * i.basis() + j.basis()
}

impl MleProblem {
    fn new(wc: &WindowCounts, background: f64) -> Result<Self> {
        if wc.total() <= 0.0 {
            return Err(Error::Validation(
                "window has no counts, cannot reconstruct".into(),
            ));
        }
        let mut n_set = [0.0; 9];
        for (idx, (i, j)) in basis_pairs().enumerate() {
            n_set[setting_index(i, j)] += wc.counts[idx];
        }
        for n in n_set.iter_mut() {
            *n = (*n - 4.0 * background).max(0.0);
        }
        if n_set.iter().all(|n| *n <= 0.0) {
            return Err(Error::Validation(
                "all setting normalizations vanish after background subtraction".into(),
            ));
        }
        let states = basis_pairs()
            .map(|(i, j)| *projector_state(i, j).vector())
            .collect();
        Ok(MleProblem {
            states,
            counts: wc.counts,
            n_set,
            background,
        })
    }

    fn setting_of(idx: usize) -> usize {
        3 * ((idx / 6) / 2) + (idx % 6) / 2
    }

    /// Poisson log-likelihood of the state encoded by the 16 parameters.
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        let t = t_from_params(x);
        let a = t.adjoint() * t;
        let tau = a.trace().re;
        if !(tau > 0.0) || !tau.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut ll = 0.0;
        for (idx, v) in self.states.iter().enumerate() {
            let n_s = self.n_set[Self::setting_of(idx)];
            let p = expectation(&a, v) / tau;
            let mu = n_s * p + self.background;
            let n = self.counts[idx];
            if n > 0.0 {
                ll += n * mu.max(1e-300).ln();
            }
            ll -= mu;
        }
        ll
    }

    /// Analytic gradient of the log-likelihood w.r.t. the 16 parameters.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let t = t_from_params(x);
        let a = t.adjoint() * t;
        let tau = a.trace().re;
        let mut grad = vec![0.0; 16];
        for (idx, v) in self.states.iter().enumerate() {
            let n_s = self.n_set[Self::setting_of(idx)];
            if n_s <= 0.0 && self.counts[idx] <= 0.0 {
                continue;
            }
            let p = expectation(&a, v) / tau;
            let mu = (n_s * p + self.background).max(1e-300);
            let c = n_s * (self.counts[idx] / mu - 1.0);
            if c == 0.0 {
                continue;
            }
            let w = t * v; // T|ij>
            for (k, (row, col, imag)) in PARAM_SLOTS.iter().enumerate() {
                let e = if *imag { C64::new(0.0, 1.0) } else { C64::new(1.0, 0.0) };
                // d(v^dag A v) = 2 Re[conj(w_row) e v_col]
                let dquad = 2.0 * (w[*row].conj() * e * v[*col]).re;
                // d(tr A) = 2 Re[conj(T_rowcol) e]
                let dtrace = 2.0 * (t[(*row, *col)].conj() * e).re;
                grad[k] += c * (dquad - p * dtrace) / tau;
            }
        }
        grad
    }
}

/// Parameter layout: 4 real diagonal entries, then (re, im) for the six
/// strictly-lower entries in row-major order.
const PARAM_SLOTS: [(usize, usize, bool); 16] = [
    (0, 0, false),
    (1, 1, false),
    (2, 2, false),
    (3, 3, false),
    (1, 0, false),
    (1, 0, true),
    (2, 0, false),
    (2, 0, true),
    (2, 1, false),
    (2, 1, true),
    (3, 0, false),
    (3, 0, true),
    (3, 1, false),
    (3, 1, true),
    (3, 2, false),
    (3, 2, true),
];

fn t_from_params(x: &[f64]) -> Matrix4<C64> {
    let mut t = Matrix4::zeros();
    for (k, (row, col, imag)) in PARAM_SLOTS.iter().enumerate() {
        if *imag {
            t[(*row, *col)] += C64::new(0.0, x[k]);
        } else {
            t[(*row, *col)] += C64::new(x[k], 0.0);
        }
    }
    t
}

fn params_from_t(t: &Matrix4<C64>) -> [f64; 16] {
    let mut x = [0.0; 16];
    for (k, (row, col, imag)) in PARAM_SLOTS.iter().enumerate() {
        x[k] = if *imag {
            t[(*row, *col)].im
        } else {
            t[(*row, *col)].re
        };
    }
    x
}

fn rho_from_params(x: &[f64]) -> Matrix4<C64> {
    let t = t_from_params(x);
    let a = t.adjoint() * t;
    let tau = a.trace().re;
    a.map(|v| v / C64::new(tau, 0.0))
}

fn expectation(a: &Matrix4<C64>, v: &Vector4<C64>) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for r in 0..4 {
        for c in 0..4 {
            acc += v[r].conj() * a[(r, c)] * v[c];
        }
    }
    acc.re
}

/// Product-Pauli Hermitian basis F_k = (sigma_a (x) sigma_b)/2, orthonormal
/// under the trace inner product; used by the linear-inversion initializer.
fn pauli_product_basis() -> Vec<Matrix4<C64>> {
    let i0 = C64::new(0.0, 0.0);
    let r1 = C64::new(1.0, 0.0);
    let im = C64::new(0.0, 1.0);
    let paulis = [
        nalgebra::Matrix2::new(r1, i0, i0, r1),
        nalgebra::Matrix2::new(i0, r1, r1, i0),
        nalgebra::Matrix2::new(i0, -im, im, i0),
        nalgebra::Matrix2::new(r1, i0, i0, -r1),
    ];
    let mut basis = Vec::with_capacity(16);
    for a in &paulis {
        for b in &paulis {
            let mut m = Matrix4::zeros();
            for r in 0..4 {
                for c in 0..4 {
                    m[(r, c)] = a[(r / 2, c / 2)] * b[(r % 2, c % 2)] * C64::new(0.5, 0.0);
                }
            }
            basis.push(m);
        }
    }
    basis
}

/// Direct linear inversion of the measured frequencies, projected onto the
/// PSD cone; used to seed the likelihood maximization.
fn linear_inversion_init(problem: &MleProblem) -> Matrix4<C64> {
    let basis = pauli_product_basis();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (idx, v) in problem.states.iter().enumerate() {
        let n_s = problem.n_set[MleProblem::setting_of(idx)];
        if n_s <= 0.0 {
            continue;
        }
        let p_hat = ((problem.counts[idx] - problem.background) / n_s).max(0.0);
        let mut row = Vec::with_capacity(16);
        for f in &basis {
            row.push(expectation(f, v));
        }
        rows.push(row);
        rhs.push(p_hat);
    }
    let fallback = Matrix4::identity().map(|v: C64| v * C64::new(0.25, 0.0));
    if rows.len() < 16 {
        return fallback;
    }
    let m = DMatrix::from_fn(rows.len(), 16, |r, c| rows[r][c]);
    let y = DVector::from_vec(rhs);
    let normal = m.transpose() * &m;
    let target = m.transpose() * y;
    let Some(sol) = normal.lu().solve(&target) else {
        return fallback;
    };
    let mut rho = Matrix4::zeros();
    for (k, f) in basis.iter().enumerate() {
        rho += f.map(|v| v * C64::new(sol[k], 0.0));
    }
    // project to PSD, renormalize, blend toward 1/4 so the Cholesky seed is PD
    let dm = DensityMatrix::new_unchecked(rho);
    let clamped = match dm.clamp_psd() {
        Ok(c) => c,
        Err(_) => return fallback,
    };
    let eps = 1e-3;
    clamped.matrix().map(|v| v * C64::new(1.0 - eps, 0.0)) + fallback.map(|v| v * C64::new(eps, 0.0))
}

/// Lower-triangular T with T^dag T = rho (reverse-order Cholesky).
fn reverse_cholesky(rho: &Matrix4<C64>) -> Option<Matrix4<C64>> {
    // J rho J = M M^dag  =>  rho = (J M^dag J)^dag (J M^dag J) with J M^dag J
    // lower-triangular.
    let mut flipped = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            flipped[(r, c)] = rho[(3 - r, 3 - c)];
        }
    }
    let chol = flipped.cholesky()?;
    let m = chol.l();
    let madj = m.adjoint();
    let mut t = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            t[(r, c)] = madj[(3 - r, 3 - c)];
        }
    }
    Some(t)
}

/// Runs the likelihood maximization for one window.
///
/// `warm_start` reuses a previous solution's parameters (the Monte-Carlo
/// resampling loop starts every repetition from the central fit).
pub fn mle_solve(
    wc: &WindowCounts,
    opts: &MleOptions,
    warm_start: Option<&[f64; 16]>,
) -> Result<MleSolution> {
    let problem = MleProblem::new(wc, opts.background)?;
    let x0: [f64; 16] = match warm_start {
        Some(x) => *x,
        None => {
            let rho0 = linear_inversion_init(&problem);
            let t0 = reverse_cholesky(&rho0).unwrap_or_else(|| {
                Matrix4::identity().map(|v: C64| v * C64::new(0.5, 0.0))
            });
            params_from_t(&t0)
        }
    };

    let f = |x: &[f64]| -problem.log_likelihood(x);
    let g = |x: &[f64]| {
        problem
            .gradient(x)
            .into_iter()
            .map(|v| -v)
            .collect::<Vec<f64>>()
    };
    let result = minimize_bfgs(
        f,
        g,
        &x0,
        &OptimOptions {
            max_iterations: opts.max_iterations,
            tol_rel: opts.tol_rel_ll,
            tol_grad: opts.tol_grad,
        },
    );

    let rho = DensityMatrix::new_unchecked(rho_from_params(&result.x));
    if !result.converged && result.iterations >= opts.max_iterations {
        return Err(Error::NonConvergence {
            iterations: result.iterations,
            grad_norm: result.grad_norm,
            best: Some(Box::new(rho)),
        });
    }
    let mut t_params = [0.0; 16];
    t_params.copy_from_slice(&result.x);
    Ok(MleSolution {
        rho,
        log_likelihood: -result.value,
        iterations: result.iterations,
        grad_norm: result.grad_norm,
        t_params,
        ll_trace: result.trace.iter().map(|v| -v).collect(),
    })
}

/// One reconstructed window of the concurrence evolution.
#[derive(Debug, Clone)]
pub struct TomographyResult {
    pub window_center: f64,
    /// State after the g2 admixture.
    pub rho: DensityMatrix,
    pub concurrence: f64,
    pub concurrence_low: f64,
    pub concurrence_high: f64,
    pub total_counts: f64,
}

/// Monte-Carlo repetitions of one window, kept so downstream averages can
/// propagate errors without re-fitting.
#[derive(Debug, Clone, Default)]
pub struct McSamples {
    pub concurrence: Vec<f64>,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConcurrenceSeries {
    pub windows: Vec<TomographyResult>,
    pub mc: Vec<McSamples>,
}

#[derive(Debug, Clone)]
pub struct TomographyOptions {
    pub window_width: f64,
    pub window_step: f64,
    pub g2_xx: f64,
    pub mc_repetitions: usize,
    pub seed: u64,
    pub mle: MleOptions,
}

impl TomographyOptions {
    pub fn new(window_width: f64, window_step: f64, g2_xx: f64, seed: u64) -> Self {
        TomographyOptions {
            window_width,
            window_step,
            g2_xx,
            mc_repetitions: 1000,
            seed,
            mle: MleOptions::default(),
        }
    }
}

fn mc_bounds(central: f64, samples: &[f64]) -> (f64, f64) {
    if samples.len() < 2 {
        return (central, central);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let low = (mean - 2.0 * sd).clamp(0.0, 1.0).min(central);
    let high = (mean + 2.0 * sd).clamp(0.0, 1.0).max(central);
    (low, high)
}

fn run_mc(
    wc: &WindowCounts,
    g2_xx: f64,
    repetitions: usize,
    seed: u64,
    window_tag: u64,
    mle: &MleOptions,
    warm: &[f64; 16],
) -> McSamples {
    let reps: Vec<Option<(f64, f64)>> = (0..repetitions as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derive_rng(seed, window_tag, rep);
            let mut resampled = *wc;
            // Clone of the window with Poisson-resampled counts.
            let mut counts = wc.counts;
            for c in counts.iter_mut() {
                *c = if *c <= 0.0 {
                    0.0
                } else {
                    Poisson::new(*c).expect("positive mean").sample(&mut rng)
                };
            }
            resampled.counts = counts;
            let total = resampled.total();
            let sol = mle_solve(&resampled, mle, Some(warm)).ok()?;
            let mixed = mix_uncorrelated(&sol.rho, g2_xx).ok()?;
            let c = concurrence(&mixed).ok()?;
            Some((c, total))
        })
        .collect();
    let mut out = McSamples::default();
    for r in reps.into_iter().flatten() {
        out.concurrence.push(r.0);
        out.weight.push(r.1);
    }
    out
}

/// Poisson-resampling error bounds for one window: mean +- 2 sigma over the
/// repetitions, clipped to [0,1]. Deterministic for a fixed seed; a window
/// without counts yields the uninformative bounds (0, 1).
pub fn monte_carlo_errors(
    wc: &WindowCounts,
    g2_xx: f64,
    repetitions: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if repetitions < 2 {
        return Err(Error::parameter(
            "repetitions",
            format!("need at least 2, got {repetitions}"),
        ));
    }
    if wc.total() <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let opts = MleOptions::default();
    let central = mle_solve(wc, &opts, None)?;
    let mixed = mix_uncorrelated(&central.rho, g2_xx)?;
    let c = concurrence(&mixed)?;
    let tag = wc.window_center.to_bits();
    let samples = run_mc(wc, g2_xx, repetitions, seed, tag, &opts, &central.t_params);
    Ok(mc_bounds(c, &samples.concurrence))
}

/// Reconstructs one window end to end: MLE, g2 admixture, concurrence and
/// Monte-Carlo bounds.
pub fn reconstruct_window(
    wc: &WindowCounts,
    opts: &TomographyOptions,
    window_tag: u64,
) -> Result<(TomographyResult, McSamples)> {
    let central = mle_solve(wc, &opts.mle, None)?;
    let mixed = mix_uncorrelated(&central.rho, opts.g2_xx)?;
    let c = concurrence(&mixed)?;
    let samples = if opts.mc_repetitions >= 2 {
        run_mc(
            wc,
            opts.g2_xx,
            opts.mc_repetitions,
            opts.seed,
            window_tag,
            &opts.mle,
            &central.t_params,
        )
    } else {
        McSamples::default()
    };
    let (low, high) = mc_bounds(c, &samples.concurrence);
    Ok((
        TomographyResult {
            window_center: wc.window_center,
            rho: mixed,
            concurrence: c,
            concurrence_low: low,
            concurrence_high: high,
            total_counts: wc.total(),
        },
        samples,
    ))
}

/// Slides fixed-width windows across the histogram grid and reconstructs each
/// one. Windows that carry no usable counts are skipped rather than aborting
/// the series.
pub fn windowed_tomography(
    hist: &HistogramSet,
    opts: &TomographyOptions,
) -> Result<ConcurrenceSeries> {
    if !(opts.window_width > 0.0) || !(opts.window_step > 0.0) {
        return Err(Error::parameter(
            "window",
            "width and step must be > 0".to_string(),
        ));
    }
    let mut centers = Vec::new();
    let mut center = hist.grid.start() + opts.window_width / 2.0;
    let end = hist.grid.end() + 1e-9;
    while center + opts.window_width / 2.0 <= end {
        centers.push(center);
        center += opts.window_step;
    }

    let per_window: Vec<Option<(TomographyResult, McSamples)>> = centers
        .par_iter()
        .enumerate()
        .map(|(idx, c)| {
            let wc = window_counts(hist, *c, opts.window_width).ok()?;
            reconstruct_window(&wc, opts, idx as u64).ok()
        })
        .collect();

    let mut windows = Vec::new();
    let mut mc = Vec::new();
    for entry in per_window.into_iter().flatten() {
        windows.push(entry.0);
        mc.push(entry.1);
    }
    Ok(ConcurrenceSeries { windows, mc })
}

/// Pre-pulse background estimate for ingested data: mean counts per bin at
/// t < -3 * IRF FWHM, where no signal can exist.
pub fn estimate_background_prepulse(hist: &HistogramSet) -> Option<f64> {
    let cutoff = -3.0 * hist.params.irf_fwhm;
    let bins: Vec<usize> = (0..hist.grid.len())
        .filter(|k| hist.grid.bin_center(*k) < cutoff)
        .collect();
    if bins.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for idx in 0..36 {
        let series = hist.series_by_index(idx);
        total += bins.iter().map(|k| series[*k]).sum::<f64>();
    }
    Some(total / (36.0 * bins.len() as f64))
}

/// Builds synthetic window counts mu_ij = N tr(Pi_ij rho) + b for tests and
/// oracle checks.
pub fn expected_window_counts(rho: &DensityMatrix, n_per_setting: f64, b: f64) -> WindowCounts {
    let mut counts = [0.0; 36];
    for (idx, (i, j)) in basis_pairs().enumerate() {
        let v = projector_state(i, j);
        counts[idx] = n_per_setting * rho.expectation(&v) + b;
    }
    WindowCounts {
        window_center: 0.0,
        window_width: 1.0,
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{bell_phi, PolarizationLabel::*};
    use crate::sim::{expected_histograms, paper_apd_params};
    use approx::assert_abs_diff_eq;

    #[test]
    fn gradient_matches_finite_differences() {
        let rho = DensityMatrix::werner(0.8).unwrap();
        let wc = expected_window_counts(&rho, 5000.0, 0.3);
        let problem = MleProblem::new(&wc, 0.3).unwrap();
        let x: Vec<f64> = (0..16).map(|k| 0.3 + 0.05 * k as f64).collect();
        let analytic = problem.gradient(&x);
        let f = |x: &[f64]| problem.log_likelihood(x);
        let numeric = crate::optim::numeric_grad(&f, &x);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert_abs_diff_eq!(a, n, epsilon = 1e-3 * (1.0 + n.abs()));
        }
    }

    #[test]
    fn mle_recovers_phi_plus_exactly() {
        let rho = DensityMatrix::from_pure(&bell_phi(1).unwrap()).unwrap();
        let wc = expected_window_counts(&rho, 1e6, 0.0);
        let rec = mle_reconstruct(&wc).unwrap();
        assert!(rec.trace_distance(&rho) < 1e-3, "td {}", rec.trace_distance(&rho));
        assert_abs_diff_eq!(concurrence(&rec).unwrap(), 1.0, epsilon = 5e-3);
    }

    #[test]
    fn mle_isotropic_counts_give_maximally_mixed() {
        let wc = WindowCounts {
            window_center: 0.0,
            window_width: 1.0,
            counts: [250.0; 36],
        };
        let rec = mle_reconstruct(&wc).unwrap();
        let id = DensityMatrix::identity_quarter();
        assert!(rec.trace_distance(&id) < 1e-3);
    }

    #[test]
    fn mle_recovers_werner_concurrence() {
        let rho = DensityMatrix::werner(0.9).unwrap();
        let wc = expected_window_counts(&rho, 1e6, 0.0);
        let rec = mle_reconstruct(&wc).unwrap();
        assert_abs_diff_eq!(concurrence(&rec).unwrap(), 0.85, epsilon = 0.01);
    }

    #[test]
    fn mle_output_is_psd_unit_trace() {
        let rho = DensityMatrix::werner(0.5).unwrap();
        let wc = expected_window_counts(&rho, 313.0, 0.0);
        let sol = mle_solve(&wc, &MleOptions::default(), None).unwrap();
        let ev = sol.rho.eigenvalues();
        assert!(ev[0] >= -1e-12, "min eigenvalue {}", ev[0]);
        assert!((sol.rho.trace().re - 1.0).abs() < 1e-12);
        assert!(sol.rho.trace().im.abs() < 1e-12);
    }

    #[test]
    fn mle_likelihood_trace_is_monotone() {
        let rho = DensityMatrix::werner(0.7).unwrap();
        let wc = expected_window_counts(&rho, 4000.0, 0.1);
        let sol = mle_solve(
            &wc,
            &MleOptions {
                background: 0.1,
                ..MleOptions::default()
            },
            None,
        )
        .unwrap();
        for pair in sol.ll_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9);
        }
    }

    #[test]
    fn mle_with_background_term_removes_flat_floor() {
        let rho = DensityMatrix::from_pure(&bell_phi(1).unwrap()).unwrap();
        let b = 20.0;
        let wc = expected_window_counts(&rho, 1e4, b);
        // ignoring the background mixes in white noise
        let naive = mle_reconstruct(&wc).unwrap();
        assert!(concurrence(&naive).unwrap() < 0.995);
        // modelling it recovers the pure state
        let sol = mle_solve(
            &wc,
            &MleOptions {
                background: b,
                ..MleOptions::default()
            },
            None,
        )
        .unwrap();
        assert!(sol.rho.trace_distance(&rho) < 1e-3);
    }

    #[test]
    fn mle_reconstruction_consistency_improves_with_counts() {
        let rho = DensityMatrix::werner(0.9).unwrap();
        let mut dists = Vec::new();
        for n in [1e3, 1e4, 1e6] {
            let wc = expected_window_counts(&rho, n, 0.0);
            let rec = mle_reconstruct(&wc).unwrap();
            dists.push(rec.trace_distance(&rho));
        }
        // noiseless expected counts: error is dominated by optimizer
        // tolerance, all should be small and the largest-N one smallest
        assert!(dists[2] <= dists[0] + 1e-6, "{dists:?}");
        assert!(dists.iter().all(|d| *d < 1e-2));
    }

    #[test]
    fn mle_predicted_counts_reproduce_input() {
        let rho = DensityMatrix::werner(0.6).unwrap();
        let wc = expected_window_counts(&rho, 1e5, 0.0);
        let rec = mle_reconstruct(&wc).unwrap();
        let predicted = expected_window_counts(&rec, 1e5, 0.0);
        for (a, b) in wc.counts.iter().zip(predicted.counts.iter()) {
            if *a > 1.0 {
                assert!(((a - b) / a).abs() < 1e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn window_counts_partition_and_totals() {
        let mut p = paper_apd_params();
        p.window_end = 2000.0;
        let hist = expected_histograms(&p).unwrap();
        let full = window_counts(&hist, 500.0, 1e6).unwrap();
        for (idx, (i, j)) in basis_pairs().enumerate() {
            let s: f64 = hist.series(i, j).iter().sum();
            assert_abs_diff_eq!(full.counts[idx], s, epsilon = 1e-9);
        }
        let a = window_counts(&hist, 0.0, 400.0).unwrap();
        let b = window_counts(&hist, 400.0, 400.0).unwrap();
        let joint = window_counts(&hist, 200.0, 800.0).unwrap();
        for k in 0..36 {
            assert_abs_diff_eq!(a.counts[k] + b.counts[k], joint.counts[k], epsilon = 1e-9);
        }
        assert!(window_counts(&hist, 1e9, 100.0).is_err());
    }

    #[test]
    fn window_fraction_of_exponential() {
        // [-50, 50) window holds 1 - exp(-50/847) of the HH signal
        let mut p = paper_apd_params();
        p.irf_fwhm = 0.0;
        p.dark_rate_x = 0.0;
        p.dark_rate_xx = 0.0;
        p.bin_width = 2.0;
        p.window_start = -500.0;
        p.window_end = 8000.0;
        let hist = expected_histograms(&p).unwrap();
        let wc = window_counts(&hist, 0.0, 100.0).unwrap();
        let idx = crate::polarization::pair_index(H, H);
        let total: f64 = hist.series(H, H).iter().sum();
        let frac = wc.counts[idx] / total;
        let expect = 1.0 - (-50.0f64 / 847.0).exp();
        assert_abs_diff_eq!(expect, 0.0574, epsilon = 2e-4);
        assert_abs_diff_eq!(frac, expect, epsilon = 1e-3);
    }

    #[test]
    fn monte_carlo_determinism_and_scaling() {
        let rho = DensityMatrix::werner(0.9).unwrap();
        let wc = expected_window_counts(&rho, 300.0, 0.0);
        let b1 = monte_carlo_errors(&wc, 0.0, 60, 5).unwrap();
        let b2 = monte_carlo_errors(&wc, 0.0, 60, 5).unwrap();
        assert_eq!(b1, b2);

        let wc_big = expected_window_counts(&rho, 30_000.0, 0.0);
        let b_big = monte_carlo_errors(&wc_big, 0.0, 60, 5).unwrap();
        let width_small = b1.1 - b1.0;
        let width_big = b_big.1 - b_big.0;
        // x100 counts shrink the interval by about x10 (within 30%)
        let ratio = width_small / width_big;
        assert!((7.0..=13.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn monte_carlo_zero_counts_degenerate() {
        let wc = WindowCounts {
            window_center: 0.0,
            window_width: 1.0,
            counts: [0.0; 36],
        };
        assert_eq!(monte_carlo_errors(&wc, 0.0, 10, 1).unwrap(), (0.0, 1.0));
        assert!(monte_carlo_errors(&wc, 0.0, 1, 1).is_err());
    }

    #[test]
    fn windowed_tomography_pure_state_near_unity() {
        // delta IRF, no dark counts, zero FSS: every populated window is Phi+
        let mut p = paper_apd_params();
        p.fss_frequency = 0.0;
        p.irf_fwhm = 0.0;
        p.dark_rate_x = 0.0;
        p.dark_rate_xx = 0.0;
        p.g2_xx = 0.0;
        p.window_end = 3000.0;
        let hist = expected_histograms(&p).unwrap();
        let mut opts = TomographyOptions::new(100.0, 100.0, 0.0, 11);
        opts.mc_repetitions = 0;
        let series = windowed_tomography(&hist, &opts).unwrap();
        assert!(!series.windows.is_empty());
        for w in &series.windows {
            if w.total_counts >= 1e3 {
                assert!(w.concurrence > 0.995, "C={} at {}", w.concurrence, w.window_center);
            }
        }
    }

    #[test]
    fn g2_mixing_monotone_on_identical_counts() {
        let mut p = paper_apd_params();
        p.window_end = 2000.0;
        let hist = expected_histograms(&p).unwrap();
        let mut last = f64::INFINITY;
        for g2 in [0.0, 0.05, 0.1, 0.2] {
            let mut opts = TomographyOptions::new(100.0, 100.0, g2, 3);
            opts.mc_repetitions = 0;
            let series = windowed_tomography(&hist, &opts).unwrap();
            let w = series
                .windows
                .iter()
                .find(|w| (w.window_center - 450.0).abs() < 1.0)
                .unwrap();
            assert!(w.concurrence <= last + 1e-9);
            last = w.concurrence;
        }
    }

    #[test]
    fn prepulse_background_estimate() {
        let p = paper_apd_params();
        let hist = expected_histograms(&p).unwrap();
        let est = estimate_background_prepulse(&hist).unwrap();
        let truth = crate::sim::accidental_background(&p);
        assert!((est - truth).abs() / truth < 1e-2, "est {est} truth {truth}");
    }
}
