//! Small dense quasi-Newton minimizer used by the likelihood fits.
//!
//! BFGS with Armijo backtracking; objective values never increase across
//! accepted iterations, which the tomography contract relies on.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Relative objective improvement below which we stop.
    pub tol_rel: f64,
    /// Gradient infinity-norm below which we stop.
    pub tol_grad: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iterations: 100_000,
            tol_rel: 1e-10,
            tol_grad: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value per accepted iteration (monotone non-increasing).
    pub trace: Vec<f64>,
}

/// Minimizes `f` starting from `x0`. `grad` must return the gradient of `f`.
pub fn minimize_bfgs<F, G>(f: F, grad: G, x0: &[f64], opts: &OptimOptions) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut g = DVector::from_vec(grad(x.as_slice()));
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![fx];
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let gnorm = g.amax();
        if gnorm < opts.tol_grad {
            converged = true;
            break;
        }

        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            // curvature estimate went bad; restart from steepest descent
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }

        // Armijo backtracking
        let slope = dir.dot(&g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * alpha;
            let fn_ = f(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fn_));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            // no descent along this direction at any step length
            break;
        };

        let gn = DVector::from_vec(grad(xn.as_slice()));
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-14 * s.norm() * yv.norm() {
            // BFGS inverse-Hessian update
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            let term = (&s * s.transpose()) * (rho * (1.0 + rho * yhy));
            let cross = (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h = h + term - cross;
        }

        let improvement = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        g = gn;
        fx = fn_;
        trace.push(fx);
        if improvement < opts.tol_rel {
            converged = true;
            break;
        }
    }

    OptimResult {
        grad_norm: g.amax(),
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        converged,
        trace,
    }
}

/// Central finite-difference gradient.
pub fn numeric_grad<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central finite-difference Hessian, used for standard errors from the
/// likelihood curvature.
pub fn numeric_hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let f0 = f(x);
    let hs: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut xp = x.to_vec();
    for a in 0..n {
        for b in a..n {
            let v = if a == b {
                xp[a] = x[a] + hs[a];
                let fpp = f(&xp);
                xp[a] = x[a] - hs[a];
                let fmm = f(&xp);
                xp[a] = x[a];
                (fpp - 2.0 * f0 + fmm) / (hs[a] * hs[a])
            } else {
                xp[a] = x[a] + hs[a];
                xp[b] = x[b] + hs[b];
                let fpp = f(&xp);
                xp[b] = x[b] - hs[b];
                let fpm = f(&xp);
                xp[a] = x[a] - hs[a];
                let fmm = f(&xp);
                xp[b] = x[b] + hs[b];
                let fmp = f(&xp);
                xp[a] = x[a];
                xp[b] = x[b];
                (fpp - fpm - fmp + fmm) / (4.0 * hs[a] * hs[b])
            };
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    hess
}
