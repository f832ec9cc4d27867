//! Forward model of the biexciton-exciton cascade: expected and
//! Poisson-sampled coincidence histograms in all 36 basis pairs, including
//! detector timing jitter and dark-count accidentals.

use nalgebra::Matrix4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{
    basis_pairs, pair_index, projector_state, PolarizationLabel, TwoPhotonState, C64,
};

/// Physical and detection parameters of one simulated measurement run.
///
/// Units follow the conventions of the input files: times in ps, rates in
/// 1/s, frequencies in MHz, integration time in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeParams {
    /// Fine structure splitting delta/h in MHz.
    pub fss_frequency: f64,
    /// Exciton lifetime in ps.
    pub tau_x: f64,
    /// Biexciton multiphoton probability g^(2)_XX(0), mixed in after MLE.
    pub g2_xx: f64,
    /// Exciton g^(2)_X(0); accepted for completeness, unused by the forward
    /// model (treated as zero).
    pub g2_x: f64,
    /// Dark count rate of the X detector in 1/s.
    pub dark_rate_x: f64,
    /// Dark count rate of the XX detector in 1/s.
    pub dark_rate_xx: f64,
    /// Detector response FWHM in ps; 0 means a delta response.
    pub irf_fwhm: f64,
    /// Laser repetition rate in MHz.
    pub rep_rate: f64,
    /// Per-basis X singles rate in counts/s.
    pub rate_x: f64,
    /// Per-basis XX singles rate in counts/s.
    pub rate_xx: f64,
    /// Integration time per basis pair in s.
    pub integration_time: f64,
    /// Histogram bin width in ps (may be refined internally, see
    /// [`CascadeParams::effective_bin_width`]).
    pub bin_width: f64,
    /// Histogram start in ps.
    pub window_start: f64,
    /// Histogram end in ps.
    pub window_end: f64,
    /// Optional phenomenological coherence decay time T2 in ps; `None` means
    /// dephasing-free.
    #[serde(default)]
    pub dephasing_time: Option<f64>,
}

impl CascadeParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::parameter(name, format!("must be > 0, got {v}")))
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::parameter(name, format!("must be >= 0, got {v}")))
            }
        };
        pos("tau_x", self.tau_x)?;
        pos("bin_width", self.bin_width)?;
        pos("rep_rate", self.rep_rate)?;
        pos("integration_time", self.integration_time)?;
        nonneg("fss_frequency", self.fss_frequency)?;
        nonneg("irf_fwhm", self.irf_fwhm)?;
        nonneg("dark_rate_x", self.dark_rate_x)?;
        nonneg("dark_rate_xx", self.dark_rate_xx)?;
        nonneg("rate_x", self.rate_x)?;
        nonneg("rate_xx", self.rate_xx)?;
        for (name, g) in [("g2_xx", self.g2_xx), ("g2_x", self.g2_x)] {
            if !(0.0..=1.0).contains(&g) || !g.is_finite() {
                return Err(Error::parameter(name, format!("must be in [0,1], got {g}")));
            }
        }
        if !(self.window_end > self.window_start) {
            return Err(Error::parameter(
                "window_end",
                format!(
                    "must exceed window_start ({} <= {})",
                    self.window_end, self.window_start
                ),
            ));
        }
        if let Some(t2) = self.dephasing_time {
            pos("dephasing_time", t2)?;
        }
        Ok(())
    }

    /// True-pair count per basis pair inferred from the singles rates:
    /// N0 = rate_x * rate_xx / rep_rate * integration_time.
    pub fn n0(&self) -> f64 {
        self.rate_x * self.rate_xx / (self.rep_rate * 1e6) * self.integration_time
    }

    /// Bin width actually used by the forward model. The requested width is
    /// subdivided until at least 7 samples cover the IRF FWHM, which keeps
    /// the discrete convolution unbiased for fast detectors (e.g. 16 ps ->
    /// 4 ps for a 30 ps SNSPD response).
    pub fn effective_bin_width(&self) -> f64 {
        if self.irf_fwhm > 0.0 && self.bin_width * 7.0 > self.irf_fwhm {
            let k = (7.0 * self.bin_width / self.irf_fwhm).ceil();
            self.bin_width / k
        } else {
            self.bin_width
        }
    }
}

/// Uniform time grid; bins are [start + k*w, start + (k+1)*w).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: f64,
    bin_width: f64,
    len: usize,
}

impl TimeGrid {
    pub fn from_bounds(start: f64, end: f64, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(Error::parameter(
                "bin_width",
                format!("must be > 0, got {bin_width}"),
            ));
        }
        if !(end > start) {
            return Err(Error::parameter("window_end", "must exceed window_start"));
        }
        let len = ((end - start) / bin_width).round().max(1.0) as usize;
        Ok(TimeGrid {
            start,
            bin_width,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.bin_width * self.len as f64
    }

    pub fn bin_start(&self, k: usize) -> f64 {
        self.start + self.bin_width * k as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.bin_start(k) + 0.5 * self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.bin_center(k)).collect()
    }

    /// Builds a grid from explicit bin starts, checking uniform spacing.
    pub fn from_bin_starts(starts: &[f64]) -> Result<Self> {
        if starts.len() < 2 {
            return Err(Error::Validation("grid needs at least two bins".into()));
        }
        let w = starts[1] - starts[0];
        if !(w > 0.0) {
            return Err(Error::Validation("grid not increasing".into()));
        }
        for (k, pair) in starts.windows(2).enumerate() {
            if ((pair[1] - pair[0]) - w).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "grid not uniform at bin {k}: spacing {} vs {}",
                    pair[1] - pair[0],
                    w
                )));
            }
        }
        Ok(TimeGrid {
            start: starts[0],
            bin_width: w,
            len: starts.len(),
        })
    }
}

/// Whether histogram values are deterministic expectations or integer
/// Poisson samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramKind {
    Expected,
    Sampled,
}

/// Coincidence counts per (X basis, XX basis) pair per time bin: exactly 36
/// series sharing one grid, plus the generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSet {
    pub grid: TimeGrid,
    pub params: CascadeParams,
    pub kind: HistogramKind,
    counts: Vec<Vec<f64>>,
}

impl HistogramSet {
    pub fn new(
        grid: TimeGrid,
        params: CascadeParams,
        kind: HistogramKind,
        counts: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if counts.len() != 36 {
            return Err(Error::Validation(format!(
                "expected 36 series, got {}",
                counts.len()
            )));
        }
        for (idx, series) in counts.iter().enumerate() {
            if series.len() != grid.len() {
                return Err(Error::Validation(format!(
                    "series {idx} has {} bins, grid has {}",
                    series.len(),
                    grid.len()
                )));
            }
            if let Some(v) = series.iter().find(|v| **v < 0.0 || !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "series {idx} contains invalid count {v}"
                )));
            }
        }
        Ok(HistogramSet {
            grid,
            params,
            kind,
            counts,
        })
    }

    pub fn series(&self, i: PolarizationLabel, j: PolarizationLabel) -> &[f64] {
        &self.counts[pair_index(i, j)]
    }

    pub fn series_by_index(&self, idx: usize) -> &[f64] {
        &self.counts[idx]
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }
}

/// Cascade state at delay t after the biexciton photon:
/// (|HH> + exp(-i 2 pi f t)|VV>)/sqrt(2) for t >= 0, zero for t < 0.
pub fn two_photon_state(t_ps: f64, fss_frequency_mhz: f64) -> TwoPhotonState {
    if t_ps < 0.0 {
        return TwoPhotonState::zero();
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let phase = -2.0 * std::f64::consts::PI * fss_frequency_mhz * 1e-6 * t_ps;
    TwoPhotonState::new([
        C64::new(s, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(s, phase),
    ])
}

/// Cascade density matrix at delay t, with the optional phenomenological
/// coherence decay exp(-t/T2) applied to the HH-VV off-diagonal.
fn cascade_density(t_ps: f64, params: &CascadeParams) -> Option<Matrix4<C64>> {
    if t_ps < 0.0 {
        return None;
    }
    let psi = two_photon_state(t_ps, params.fss_frequency);
    let mut m = psi.outer();
    if let Some(t2) = params.dephasing_time {
        let damp = C64::new((-t_ps / t2).exp(), 0.0);
        m[(0, 3)] *= damp;
        m[(3, 0)] *= damp;
    }
    Some(m)
}

/// Pre-convolution coincidence probability density (1/ps):
/// |<ij|Psi(t)>|^2 * exp(-t/tau)/tau for t >= 0, zero otherwise.
pub fn coincidence_density(
    i: PolarizationLabel,
    j: PolarizationLabel,
    t_ps: f64,
    params: &CascadeParams,
) -> f64 {
    let Some(rho) = cascade_density(t_ps, params) else {
        return 0.0;
    };
    let v = projector_state(i, j);
    let vv = v.vector();
    let mut proj = C64::new(0.0, 0.0);
    for r in 0..4 {
        for c in 0..4 {
            proj += vv[r].conj() * rho[(r, c)] * vv[c];
        }
    }
    let decay = (-t_ps / params.tau_x).exp() / params.tau_x;
    proj.re.max(0.0) * decay
}

/// Normalized symmetric Gaussian kernel with sigma = fwhm / (2 sqrt(2 ln 2)),
/// truncated at +-5 sigma, sampled on the grid spacing.
pub fn gaussian_irf(fwhm_ps: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    if !(fwhm_ps > 0.0) {
        return Err(Error::parameter(
            "irf_fwhm",
            format!("must be > 0, got {fwhm_ps}"),
        ));
    }
    let sigma = fwhm_to_sigma(fwhm_ps);
    let w = grid.bin_width();
    let half = (5.0 * sigma / w).ceil() as i64;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64 * w;
            (-(t * t) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    Ok(kernel)
}

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Discrete linear convolution with a centered kernel, evaluated on the
/// signal's own grid with zero extension.
pub fn convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let center = kernel.len() / 2;
    let n = signal.len();
    let mut out = vec![0.0; n];
    for (ki, kv) in kernel.iter().enumerate() {
        if *kv == 0.0 {
            continue;
        }
        let shift = ki as i64 - center as i64;
        for (oi, o) in out.iter_mut().enumerate() {
            let si = oi as i64 - shift;
            if si >= 0 && (si as usize) < n {
                *o += kv * signal[si as usize];
            }
        }
    }
    out
}

/// Flat accidental-coincidence background per bin from dark counts, identical
/// for all 36 series.
pub fn accidental_background(params: &CascadeParams) -> f64 {
    accidental_background_for_bin(params, params.effective_bin_width())
}

fn accidental_background_for_bin(params: &CascadeParams, bin_width_ps: f64) -> f64 {
    (params.dark_rate_x * params.rate_xx
        + params.dark_rate_xx * params.rate_x
        + params.dark_rate_x * params.dark_rate_xx)
        * (bin_width_ps * 1e-12)
        * params.integration_time
}

/// Deterministic expected histograms: for each basis pair,
/// counts[bin] = N0 * (density * IRF)(t_bin) * bin_width + B_acc.
pub fn expected_histograms(params: &CascadeParams) -> Result<HistogramSet> {
    params.validate()?;
    let bw = params.effective_bin_width();
    let grid = TimeGrid::from_bounds(params.window_start, params.window_end, bw)?;
    let centers = grid.centers();
    let kernel = if params.irf_fwhm > 0.0 {
        Some(gaussian_irf(params.irf_fwhm, &grid)?)
    } else {
        None
    };
    let n0 = params.n0();
    let b_acc = accidental_background_for_bin(params, bw);

    let pairs: Vec<(PolarizationLabel, PolarizationLabel)> = basis_pairs().collect();
    let counts: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|(i, j)| {
            let density: Vec<f64> = centers
                .iter()
                .map(|t| coincidence_density(*i, *j, *t, params))
                .collect();
            let smeared = match &kernel {
                Some(k) => convolve(&density, k),
                None => density,
            };
            smeared
                .into_iter()
                .map(|d| n0 * d * bw + b_acc)
                .collect()
        })
        .collect();

    HistogramSet::new(grid, params.clone(), HistogramKind::Expected, counts)
}

/// Order-independent stream derivation: one RNG per (seed, a, b) triple.
pub fn derive_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ a) ^ b))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent Poisson sample of every bin; one seed-derived stream per basis
/// pair, so parallel execution order cannot change the output.
pub fn sample_histograms(expected: &HistogramSet, seed: u64) -> Result<HistogramSet> {
    let counts: Vec<Vec<f64>> = (0..36u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = derive_rng(seed, 0x5a6d, idx);
            expected
                .series_by_index(idx as usize)
                .iter()
                .map(|mean| {
                    if *mean <= 0.0 {
                        0.0
                    } else {
                        Poisson::new(*mean).expect("positive mean").sample(&mut rng)
                    }
                })
                .collect()
        })
        .collect();
    HistogramSet::new(
        expected.grid.clone(),
        expected.params.clone(),
        HistogramKind::Sampled,
        counts,
    )
}

#[cfg(test)]
pub fn paper_apd_params() -> CascadeParams {
    CascadeParams {
        fss_frequency: 795.52,
        tau_x: 847.0,
        g2_xx: 0.1,
        g2_x: 0.0,
        dark_rate_x: 36.3,
        dark_rate_xx: 18.2,
        irf_fwhm: 190.0,
        rep_rate: 76.2,
        rate_x: 71e3,
        rate_xx: 8e3,
        integration_time: 370.0,
        bin_width: 16.0,
        window_start: -1000.0,
        window_end: 5000.0,
        dephasing_time: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use PolarizationLabel::{A, D, H, L, R, V};

    #[test]
    fn state_at_zero_delay_is_phi_plus() {
        let psi = two_photon_state(0.0, 795.52);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = psi.amplitudes();
        assert_abs_diff_eq!(a[0].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn state_zero_fss_is_stationary() {
        let psi = two_photon_state(1234.5, 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = psi.amplitudes();
        assert_abs_diff_eq!(a[0].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn state_half_period_flips_sign() {
        // half period of 795.52 MHz is ~628.5 ps
        let f = 795.52;
        let t = 0.5e6 / f;
        let a = two_photon_state(t, f).amplitudes();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(a[3].re, -s, epsilon = 1e-9);
        assert_abs_diff_eq!(a[3].im, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn state_negative_time_is_zero() {
        assert_eq!(two_photon_state(-1.0, 795.52).norm_sqr(), 0.0);
    }

    #[test]
    fn density_orthogonal_projection_vanishes() {
        let p = paper_apd_params();
        for t in [0.0, 100.0, 500.0, 2000.0] {
            assert_abs_diff_eq!(coincidence_density(H, V, t, &p), 0.0, epsilon = 1e-18);
        }
    }

    #[test]
    fn density_hh_at_zero() {
        let p = paper_apd_params();
        assert_abs_diff_eq!(
            coincidence_density(H, H, 0.0, &p),
            0.5 / p.tau_x,
            epsilon = 1e-12
        );
    }

    #[test]
    fn density_hh_plus_vv_integrates_to_one() {
        // midpoint quadrature of the full decay envelope
        let p = paper_apd_params();
        let h = 0.5;
        let mut total = 0.0;
        let mut t = 0.5 * h;
        while t < 20.0 * p.tau_x {
            total += (coincidence_density(H, H, t, &p) + coincidence_density(V, V, t, &p)) * h;
            t += h;
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn irf_kernel_properties() {
        let grid = TimeGrid::from_bounds(0.0, 1000.0, 16.0).unwrap();
        let k = gaussian_irf(190.0, &grid).unwrap();
        let sum: f64 = k.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        assert_eq!(k.len() % 2, 1);
        for idx in 0..k.len() / 2 {
            assert_abs_diff_eq!(k[idx], k[k.len() - 1 - idx], epsilon = 1e-15);
        }
        assert_abs_diff_eq!(fwhm_to_sigma(190.0), 80.69, epsilon = 0.01);
        assert!(gaussian_irf(0.0, &grid).is_err());
        assert!(gaussian_irf(-5.0, &grid).is_err());
    }

    #[test]
    fn convolve_delta_is_identity() {
        let sig = vec![0.0, 1.0, 3.0, 0.5, 0.0];
        let out = convolve(&sig, &[0.0, 1.0, 0.0]);
        for (a, b) in sig.iter().zip(out.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn convolve_constant_away_from_edges() {
        let sig = vec![2.5; 100];
        let kernel = {
            let grid = TimeGrid::from_bounds(0.0, 100.0, 1.0).unwrap();
            gaussian_irf(5.0, &grid).unwrap()
        };
        let out = convolve(&sig, &kernel);
        let margin = kernel.len();
        for v in &out[margin..100 - margin] {
            assert_abs_diff_eq!(*v, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolve_preserves_area_for_contained_signal() {
        // pulse fully inside the window
        let mut sig = vec![0.0; 400];
        for (k, v) in sig.iter_mut().enumerate().skip(150).take(60) {
            *v = ((k - 150) as f64 * 0.2).sin().abs() + 0.3;
        }
        let grid = TimeGrid::from_bounds(0.0, 400.0, 1.0).unwrap();
        let kernel = gaussian_irf(8.0, &grid).unwrap();
        let out = convolve(&sig, &kernel);
        let a: f64 = sig.iter().sum();
        let b: f64 = out.iter().sum();
        assert!(((a - b) / a).abs() < 1e-6);
    }

    #[test]
    fn accidental_background_arithmetic() {
        let p = paper_apd_params();
        // (36.3*8e3 + 18.2*71e3 + 36.3*18.2) * 16e-12 * 370
        let expect = (36.3 * 8e3 + 18.2 * 71e3 + 36.3 * 18.2) * 16e-12 * 370.0;
        assert_abs_diff_eq!(accidental_background(&p), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 9.37e-3, epsilon = 5e-5);

        let mut quiet = p.clone();
        quiet.dark_rate_x = 0.0;
        quiet.dark_rate_xx = 0.0;
        assert_eq!(accidental_background(&quiet), 0.0);

        let mut doubled = p.clone();
        doubled.integration_time *= 2.0;
        assert_abs_diff_eq!(
            accidental_background(&doubled),
            2.0 * accidental_background(&p),
            epsilon = 1e-15
        );
    }

    #[test]
    fn effective_bin_width_refinement() {
        let p = paper_apd_params();
        assert_eq!(p.effective_bin_width(), 16.0); // 190 ps IRF: unchanged
        let mut snspd = p.clone();
        snspd.irf_fwhm = 30.0;
        assert_abs_diff_eq!(snspd.effective_bin_width(), 4.0, epsilon = 1e-12);
        let mut delta = p;
        delta.irf_fwhm = 0.0;
        assert_eq!(delta.effective_bin_width(), 16.0);
    }

    #[test]
    fn expected_histograms_symmetries() {
        let mut p = paper_apd_params();
        p.fss_frequency = 0.0;
        p.dark_rate_x = 0.0;
        p.dark_rate_xx = 0.0;
        let hist = expected_histograms(&p).unwrap();
        for v in hist.series(H, V) {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
        for (a, b) in hist.series(H, H).iter().zip(hist.series(V, V)) {
            if *a > 0.0 {
                assert!(((a - b) / a).abs() < 1e-9);
            } else {
                assert_abs_diff_eq!(*b, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn expected_histograms_causality_with_delta_irf() {
        let mut p = paper_apd_params();
        p.irf_fwhm = 0.0;
        p.dark_rate_x = 0.0;
        p.dark_rate_xx = 0.0;
        let hist = expected_histograms(&p).unwrap();
        for (i, j) in basis_pairs() {
            for (k, v) in hist.series(i, j).iter().enumerate() {
                if hist.grid.bin_center(k) < 0.0 {
                    assert_eq!(*v, 0.0, "signal before t=0 at bin {k}");
                }
            }
        }
    }

    #[test]
    fn expected_histograms_total_pair_count() {
        // over >= 10 tau the signal sums to N0 (the IRF preserves area)
        let mut p = paper_apd_params();
        p.dark_rate_x = 0.0;
        p.dark_rate_xx = 0.0;
        p.window_start = -2000.0;
        p.window_end = 10.0 * p.tau_x;
        let hist = expected_histograms(&p).unwrap();
        let bases = [[H, V], [D, A], [R, L]];
        for bx in bases {
            for bxx in bases {
                let mut total = 0.0;
                for i in bx {
                    for j in bxx {
                        total += hist.series(i, j).iter().sum::<f64>();
                    }
                }
                assert!(
                    ((total - p.n0()) / p.n0()).abs() < 1e-4,
                    "setting total {total} vs N0 {}",
                    p.n0()
                );
            }
        }
    }

    #[test]
    fn setting_sums_agree_across_all_nine_settings() {
        let p = paper_apd_params();
        let hist = expected_histograms(&p).unwrap();
        let bases = [[H, V], [D, A], [R, L]];
        let mut reference: Option<Vec<f64>> = None;
        for bx in bases {
            for bxx in bases {
                let mut sum = vec![0.0; hist.grid.len()];
                for i in bx {
                    for j in bxx {
                        for (acc, v) in sum.iter_mut().zip(hist.series(i, j)) {
                            *acc += v;
                        }
                    }
                }
                match &reference {
                    None => reference = Some(sum),
                    Some(r) => {
                        for (a, b) in r.iter().zip(sum.iter()) {
                            let scale = a.abs().max(1e-30);
                            assert!(
                                ((a - b) / scale).abs() < 1e-9,
                                "setting sums diverge: {a} vs {b}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oscillation_contrast_matches_gaussian_damping() {
        // flat-region contrast of (RL+LR)-(RR+LL) normalized by the sum is
        // exp(-(2 pi f sigma)^2 / 2) = 0.922 for 795.52 MHz and 190 ps FWHM
        let mut p = paper_apd_params();
        p.dark_rate_x = 0.0;
        p.dark_rate_xx = 0.0;
        let hist = expected_histograms(&p).unwrap();
        let rl = hist.series(R, L);
        let lr = hist.series(L, R);
        let rr = hist.series(R, R);
        let ll = hist.series(L, L);
        let mut contrast_max: f64 = 0.0;
        for k in 0..hist.grid.len() {
            let t = hist.grid.bin_center(k);
            if !(1500.0..=3500.0).contains(&t) {
                continue;
            }
            let num = (rl[k] + lr[k]) - (rr[k] + ll[k]);
            let den = (rl[k] + lr[k]) + (rr[k] + ll[k]);
            contrast_max = contrast_max.max((num / den).abs());
        }
        let sigma = fwhm_to_sigma(190.0);
        let omega_sigma = 2.0 * std::f64::consts::PI * 795.52e-6 * sigma;
        let expect = (-omega_sigma * omega_sigma / 2.0).exp();
        assert_abs_diff_eq!(expect, 0.922, epsilon = 0.001);
        assert_abs_diff_eq!(contrast_max, expect, epsilon = 0.01);
    }

    #[test]
    fn sampling_determinism_and_moments() {
        let mut p = paper_apd_params();
        p.window_end = 2000.0;
        let hist = expected_histograms(&p).unwrap();
        let s1 = sample_histograms(&hist, 42).unwrap();
        let s2 = sample_histograms(&hist, 42).unwrap();
        assert_eq!(s1, s2);
        let s3 = sample_histograms(&hist, 43).unwrap();
        assert_ne!(s1, s3);
        for (i, j) in basis_pairs() {
            for v in s1.series(i, j) {
                assert_eq!(v.fract(), 0.0);
                assert!(*v >= 0.0);
            }
        }
    }

    #[test]
    fn sampling_mean_of_constant_histogram() {
        // mean-100 Poisson over 10^4 bins: empirical mean within [99.6, 100.4]
        let p = paper_apd_params();
        let grid = TimeGrid::from_bounds(0.0, 10_000.0, 1.0).unwrap();
        let counts = vec![vec![100.0; grid.len()]; 36];
        let hist = HistogramSet::new(grid, p, HistogramKind::Expected, counts).unwrap();
        let sampled = sample_histograms(&hist, 7).unwrap();
        let series = sampled.series(H, H);
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        assert!((99.6..=100.4).contains(&mean), "mean {mean}");
    }

    #[test]
    fn sampling_zero_expectation_stays_zero() {
        let p = paper_apd_params();
        let grid = TimeGrid::from_bounds(0.0, 100.0, 1.0).unwrap();
        let counts = vec![vec![0.0; grid.len()]; 36];
        let hist = HistogramSet::new(grid, p, HistogramKind::Expected, counts).unwrap();
        let sampled = sample_histograms(&hist, 1).unwrap();
        assert_eq!(sampled.total_counts(), 0.0);
    }
}
