//! Polarization and two-qubit state algebra.
//!
//! Fixes the single-photon basis conventions, builds the 36 measurement
//! projectors, and provides the density-matrix predicates, the Wootters
//! concurrence and the uncorrelated-light admixture map.

use nalgebra::{Complex, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const I: C64 = C64::new(0.0, 1.0);

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// One of the six analyzer settings: three mutually unbiased orthogonal pairs
/// {H,V}, {D,A}, {R,L}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolarizationLabel {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl PolarizationLabel {
    pub const ALL: [PolarizationLabel; 6] = [
        PolarizationLabel::H,
        PolarizationLabel::V,
        PolarizationLabel::D,
        PolarizationLabel::A,
        PolarizationLabel::R,
        PolarizationLabel::L,
    ];

    /// Index into [`Self::ALL`].
    pub fn index(self) -> usize {
        match self {
            PolarizationLabel::H => 0,
            PolarizationLabel::V => 1,
            PolarizationLabel::D => 2,
            PolarizationLabel::A => 3,
            PolarizationLabel::R => 4,
            PolarizationLabel::L => 5,
        }
    }

    /// The orthogonal partner within the same analyzer basis.
    pub fn orthogonal(self) -> PolarizationLabel {
        match self {
            PolarizationLabel::H => PolarizationLabel::V,
            PolarizationLabel::V => PolarizationLabel::H,
            PolarizationLabel::D => PolarizationLabel::A,
            PolarizationLabel::A => PolarizationLabel::D,
            PolarizationLabel::R => PolarizationLabel::L,
            PolarizationLabel::L => PolarizationLabel::R,
        }
    }

    /// Analyzer basis index: 0 = {H,V}, 1 = {D,A}, 2 = {R,L}.
    pub fn basis(self) -> usize {
        self.index() / 2
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolarizationLabel::H => "H",
            PolarizationLabel::V => "V",
            PolarizationLabel::D => "D",
            PolarizationLabel::A => "A",
            PolarizationLabel::R => "R",
            PolarizationLabel::L => "L",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "H" => Ok(PolarizationLabel::H),
            "V" => Ok(PolarizationLabel::V),
            "D" => Ok(PolarizationLabel::D),
            "A" => Ok(PolarizationLabel::A),
            "R" => Ok(PolarizationLabel::R),
            "L" => Ok(PolarizationLabel::L),
            other => Err(Error::Validation(format!(
                "unknown polarization label `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for PolarizationLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All 36 ordered (X analyzer, XX analyzer) basis pairs, in row-major
/// {H,V,D,A,R,L} x {H,V,D,A,R,L} order.
pub fn basis_pairs() -> impl Iterator<Item = (PolarizationLabel, PolarizationLabel)> {
    PolarizationLabel::ALL
        .into_iter()
        .flat_map(|i| PolarizationLabel::ALL.into_iter().map(move |j| (i, j)))
}

/// Flat index of a basis pair in `basis_pairs` order.
pub fn pair_index(i: PolarizationLabel, j: PolarizationLabel) -> usize {
    6 * i.index() + j.index()
}

/// Single-photon polarization state, unit norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector(Vector2<C64>);

impl JonesVector {
    pub fn new(a_h: C64, a_v: C64) -> Result<Self> {
        let norm2 = a_h.norm_sqr() + a_v.norm_sqr();
        if (norm2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!(
                "Jones vector norm^2 = {norm2}, expected 1"
            )));
        }
        Ok(JonesVector(Vector2::new(a_h, a_v)))
    }

    pub fn components(&self) -> (C64, C64) {
        (self.0[0], self.0[1])
    }

    pub fn vector(&self) -> &Vector2<C64> {
        &self.0
    }
}

/// Fixed Jones-vector convention for the six labels.
///
/// Circular polarizations are pinned to R = (H - iV)/sqrt(2) and
/// L = (H + iV)/sqrt(2) so that (|RL> + |LR>)/sqrt(2) = (|HH> + |VV>)/sqrt(2).
pub fn jones_vector(label: PolarizationLabel) -> JonesVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (a, b) = match label {
        PolarizationLabel::H => (re(1.0), re(0.0)),
        PolarizationLabel::V => (re(0.0), re(1.0)),
        PolarizationLabel::D => (re(s), re(s)),
        PolarizationLabel::A => (re(s), re(-s)),
        PolarizationLabel::R => (re(s), -I * s),
        PolarizationLabel::L => (re(s), I * s),
    };
    JonesVector(Vector2::new(a, b))
}

/// Two-photon amplitude over the ordered basis (HH, HV, VH, VV); the first
/// slot is the X photon, the second the XX photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonState(Vector4<C64>);

impl TwoPhotonState {
    pub fn new(amplitudes: [C64; 4]) -> Self {
        TwoPhotonState(Vector4::from_row_slice(&amplitudes))
    }

    pub fn zero() -> Self {
        TwoPhotonState(Vector4::zeros())
    }

    /// Product state |i>|j> of two single-photon states.
    pub fn product(x: &JonesVector, xx: &JonesVector) -> Self {
        let (a0, a1) = x.components();
        let (b0, b1) = xx.components();
        TwoPhotonState(Vector4::new(a0 * b0, a0 * b1, a1 * b0, a1 * b1))
    }

    pub fn amplitudes(&self) -> [C64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn vector(&self) -> &Vector4<C64> {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Inner product <self|other>.
    pub fn inner(&self, other: &TwoPhotonState) -> C64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// |psi><psi| as an (unvalidated) 4x4 matrix; trace equals the squared norm.
    pub fn outer(&self) -> Matrix4<C64> {
        let mut m = Matrix4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = self.0[r] * self.0[c].conj();
            }
        }
        m
    }
}

/// Bell states Phi+- between which the cascade state oscillates.
///
/// `bell_phi(1)` is (|HH> + |VV>)/sqrt(2) = (|RL> + |LR>)/sqrt(2);
/// `bell_phi(-1)` is (|HH> - |VV>)/sqrt(2) = (|RR> + |LL>)/sqrt(2).
pub fn bell_phi(sign: i32) -> Result<TwoPhotonState> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match sign {
        1 => Ok(TwoPhotonState::new([re(s), re(0.0), re(0.0), re(s)])),
        -1 => Ok(TwoPhotonState::new([re(s), re(0.0), re(0.0), re(-s)])),
        other => Err(Error::parameter("sign", format!("must be +-1, got {other}"))),
    }
}

/// 4x4 complex Hermitian, PSD, trace-1 two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(Matrix4<C64>);

impl DensityMatrix {
    /// Validates Hermiticity and unit trace at 1e-6 and positivity down to
    /// the -1e-9 eigenvalue floor.
    pub fn new(m: Matrix4<C64>) -> Result<Self> {
        for r in 0..4 {
            for c in 0..4 {
                if (m[(r, c)] - m[(c, r)].conj()).norm() > 1e-6 {
                    return Err(Error::InvalidState(format!(
                        "matrix not Hermitian at ({r},{c})"
                    )));
                }
            }
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
            return Err(Error::InvalidState(format!(
                "trace = {tr}, expected 1"
            )));
        }
        let dm = DensityMatrix(m);
        let min = dm.eigenvalues()[0];
        if min < -1e-9 {
            return Err(Error::InvalidState(format!(
                "smallest eigenvalue {min:.3e} below -1e-9"
            )));
        }
        Ok(dm)
    }

    /// Caller guarantees the invariants (e.g. MLE output, which is PSD and
    /// unit trace by construction).
    pub fn new_unchecked(m: Matrix4<C64>) -> Self {
        DensityMatrix(m)
    }

    pub fn from_pure(psi: &TwoPhotonState) -> Result<Self> {
        let n = psi.norm_sqr();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!(
                "pure state norm^2 = {n}, expected 1"
            )));
        }
        Ok(DensityMatrix(psi.outer()))
    }

    /// Maximally mixed two-qubit state 1/4.
    pub fn identity_quarter() -> Self {
        DensityMatrix(Matrix4::identity().map(|x: C64| x * re(0.25)))
    }

    /// Werner state p |Phi+><Phi+| + (1-p) 1/4.
    pub fn werner(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::parameter("p", format!("must be in [0,1], got {p}")));
        }
        let phi = DensityMatrix::from_pure(&bell_phi(1)?)?;
        let id = DensityMatrix::identity_quarter();
        Ok(DensityMatrix(
            phi.0.map(|x| x * re(p)) + id.0.map(|x| x * re(1.0 - p)),
        ))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Ascending real eigenvalues of the Hermitian part.
    pub fn eigenvalues(&self) -> [f64; 4] {
        hermitian_eigen(&self.0).0
    }

    /// Expectation <psi|rho|psi> for a (not necessarily normalized) vector.
    pub fn expectation(&self, psi: &TwoPhotonState) -> f64 {
        let v = psi.vector();
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                acc += v[r].conj() * self.0[(r, c)] * v[c];
            }
        }
        acc.re
    }

    /// Clamps eigenvalues in [-1e-9, 0) to zero and renormalizes the trace.
    pub fn clamp_psd(&self) -> Result<Self> {
        let (mut vals, vecs) = hermitian_eigen(&self.0);
        for v in vals.iter_mut() {
            if *v < -1e-9 {
                return Err(Error::InvalidState(format!(
                    "eigenvalue {v:.3e} below -1e-9 clamp floor"
                )));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let total: f64 = vals.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidState("all eigenvalues zero".into()));
        }
        let mut m = Matrix4::zeros();
        for k in 0..4 {
            let col = vecs.column(k);
            let w = re(vals[k] / total);
            for r in 0..4 {
                for c in 0..4 {
                    m[(r, c)] += w * col[r] * col[c].conj();
                }
            }
        }
        Ok(DensityMatrix(m))
    }

    /// Hermitian PSD square root.
    pub fn sqrt_psd(&self) -> Matrix4<C64> {
        let (vals, vecs) = hermitian_eigen(&self.0);
        let mut m = Matrix4::zeros();
        for k in 0..4 {
            let col = vecs.column(k);
            let w = re(vals[k].max(0.0).sqrt());
            for r in 0..4 {
                for c in 0..4 {
                    m[(r, c)] += w * col[r] * col[c].conj();
                }
            }
        }
        m
    }

    /// Trace distance 0.5 * ||rho - sigma||_1.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let (ev, _) = hermitian_eigen(&(self.0 - other.0));
        0.5 * ev.iter().map(|v| v.abs()).sum::<f64>()
    }
}

fn hermitian_part(m: &Matrix4<C64>) -> Matrix4<C64> {
    let mut h = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            h[(r, c)] = (m[(r, c)] + m[(c, r)].conj()) * re(0.5);
        }
    }
    h
}

/// Cyclic complex Jacobi eigendecomposition of the Hermitian part of `m`:
/// eigenvalues ascending, matching eigenvector columns. Iterates to machine
/// precision, which the 1e-9 concurrence accuracy contract needs (generic
/// symmetric solvers leave ~1e-8 residuals on degenerate spectra).
fn hermitian_eigen(m: &Matrix4<C64>) -> ([f64; 4], Matrix4<C64>) {
    let mut a = hermitian_part(m);
    let mut v: Matrix4<C64> = Matrix4::identity();
    let scale = a.iter().map(|x| x.norm_sqr()).sum::<f64>().max(1e-300);
    for _ in 0..60 {
        let off: f64 = (0..4)
            .flat_map(|p| ((p + 1)..4).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].norm_sqr())
            .sum();
        if off <= scale * 1e-32 {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                // unitary = diag(e^{i phi/2}, e^{-i phi/2}) * real rotation,
                // which zeroes a_pq = r e^{i phi}
                let half = (apq / re(r)).sqrt();
                let theta = 0.5 * (2.0 * r).atan2(a[(q, q)].re - a[(p, p)].re);
                let (s, c) = theta.sin_cos();
                let mut u: Matrix4<C64> = Matrix4::identity();
                u[(p, p)] = half * re(c);
                u[(p, q)] = half * re(s);
                u[(q, p)] = half.conj() * re(-s);
                u[(q, q)] = half.conj() * re(c);
                a = u.adjoint() * a * u;
                v *= u;
            }
        }
        a = hermitian_part(&a);
    }
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap());
    let mut vals = [0.0; 4];
    let mut vecs = Matrix4::zeros();
    for (k, &src) in order.iter().enumerate() {
        vals[k] = a[(src, src)].re;
        for r in 0..4 {
            vecs[(r, k)] = v[(r, src)];
        }
    }
    (vals, vecs)
}

/// Measurement projector |ij><ij| where `i` addresses the X analyzer and `j`
/// the XX analyzer.
pub fn projector(i: PolarizationLabel, j: PolarizationLabel) -> DensityMatrix {
    let psi = TwoPhotonState::product(&jones_vector(i), &jones_vector(j));
    DensityMatrix(psi.outer())
}

/// Projector vector |ij> (used directly for expectation values).
pub fn projector_state(i: PolarizationLabel, j: PolarizationLabel) -> TwoPhotonState {
    TwoPhotonState::product(&jones_vector(i), &jones_vector(j))
}

/// sigma_y (x) sigma_y in the (HH, HV, VH, VV) basis: the spin-flip matrix.
fn spin_flip() -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    m[(0, 3)] = re(-1.0);
    m[(1, 2)] = re(1.0);
    m[(2, 1)] = re(1.0);
    m[(3, 0)] = re(-1.0);
    m
}

/// Wootters concurrence C(rho) = max(0, l1 - l2 - l3 - l4), with l_k the
/// decreasingly ordered square roots of the eigenvalues of rho * rho~ and
/// rho~ = (sy (x) sy) rho* (sy (x) sy).
///
/// The eigenvalues are obtained from the Hermitian matrix
/// sqrt(rho) rho~ sqrt(rho), which shares the spectrum of rho * rho~ but keeps
/// full accuracy for the degenerate eigenvalues of Werner-like states.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    // re-validate at the documented 1e-6 tolerance
    let checked = DensityMatrix::new(*rho.matrix())?;
    let clamped = checked.clamp_psd()?;

    let y = spin_flip();
    let conj = clamped.0.map(|x| x.conj());
    let rho_tilde = y * conj * y;
    let s = clamped.sqrt_psd();
    let m = s * rho_tilde * s;
    let mut lambdas: Vec<f64> = hermitian_eigen(&m)
        .0
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let c = lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3];
    Ok(c.clamp(0.0, 1.0))
}

/// Uncorrelated-light admixture (1 - g2) rho + g2/4 * 1 modelling a finite
/// biexciton g^(2)(0).
pub fn mix_uncorrelated(rho: &DensityMatrix, g2: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&g2) || !g2.is_finite() {
        return Err(Error::parameter(
            "g2",
            format!("must be in [0,1], got {g2}"),
        ));
    }
    let mixed =
        rho.0.map(|x| x * re(1.0 - g2)) + Matrix4::identity().map(|x: C64| x * re(g2 / 4.0));
    Ok(DensityMatrix(mixed))
}
