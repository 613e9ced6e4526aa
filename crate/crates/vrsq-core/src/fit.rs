//! Least-squares solvers: weighted linear fits through a column-scaled QR,
//! and a Levenberg-Marquardt loop for small nonlinear models.

use crate::error::{invalid, Error, Result};
use crate::math;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub params: Vec<f64>,
    /// Parameter covariance `(A^T W A)^-1`, row-major.
    pub cov: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
}

impl LinearFit {
    pub fn sigma(&self, i: usize) -> f64 {
        let n = self.params.len();
        math::sqrt(self.cov[i * n + i].max(0.0))
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.params.len() + j]
    }
}

/// Weighted linear least squares. `rows[i]` is the design row for `y[i]`;
/// `w[i]` is the inverse variance of `y[i]`.
pub fn weighted_linear_lsq(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<LinearFit> {
    let n = y.len();
    if n == 0 || rows.len() != n || w.len() != n {
        return Err(invalid("design, data and weights must have equal non-zero length"));
    }
    let p = rows[0].len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(invalid("ragged design matrix"));
    }
    if n < p {
        return Err(Error::RankDeficient);
    }
    let mut a = DMatrix::<f64>::zeros(n, p);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        if !(w[i] >= 0.0) {
            return Err(invalid("weights must be non-negative"));
        }
        let sw = math::sqrt(w[i]);
        for j in 0..p {
            a[(i, j)] = rows[i][j] * sw;
        }
        b[i] = y[i] * sw;
    }
    // scale columns to unit norm so polynomial designs stay well conditioned
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let s = a.column(j).norm();
        if s == 0.0 {
            return Err(Error::RankDeficient);
        }
        scale[j] = s;
        for i in 0..n {
            a[(i, j)] /= s;
        }
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let rmax = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-12 * rmax) {
        return Err(Error::RankDeficient);
    }
    let qtb = qr.q().transpose() * &b;
    let sol = r.solve_upper_triangular(&qtb).ok_or(Error::RankDeficient)?;
    let rinv = r.solve_upper_triangular(&DMatrix::identity(p, p)).ok_or(Error::RankDeficient)?;
    let cov_s = &rinv * rinv.transpose();
    let mut params = vec![0.0; p];
    let mut cov = vec![0.0; p * p];
    for i in 0..p {
        params[i] = sol[i] / scale[i];
        for j in 0..p {
            cov[i * p + j] = cov_s[(i, j)] / (scale[i] * scale[j]);
        }
    }
    let resid = &a * &sol - &b;
    Ok(LinearFit { params, cov, chi2: resid.norm_squared(), dof: n - p })
}

/// Weighted polynomial fit `y = sum_k c_k x^k`, `k = 0..=degree`.
pub fn polyfit(x: &[f64], y: &[f64], w: &[f64], degree: usize) -> Result<LinearFit> {
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|&xi| {
            let mut r = Vec::with_capacity(degree + 1);
            let mut t = 1.0;
            for _ in 0..=degree {
                r.push(t);
                t *= xi;
            }
            r
        })
        .collect();
    weighted_linear_lsq(&rows, y, w)
}

/// A model with analytic gradient for Levenberg-Marquardt.
pub trait Model {
    fn n_params(&self) -> usize;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    /// Writes d(eval)/dp into `grad` and returns the model value.
    fn eval_grad(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative step / chi2 tolerance for convergence.
    pub tol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 200, tol: 1e-10, lambda0: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// `(J^T W J)^-1` at the solution, row-major; empty if singular.
    pub cov: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn normal_eqs<M: Model>(m: &M, x: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let np = m.n_params();
    let mut jtj = DMatrix::<f64>::zeros(np, np);
    let mut jtr = DVector::<f64>::zeros(np);
    let mut g = vec![0.0; np];
    let mut chi2 = 0.0;
    for i in 0..x.len() {
        let f = m.eval_grad(x[i], p, &mut g);
        let r = y[i] - f;
        chi2 += w[i] * r * r;
        for a in 0..np {
            jtr[a] += w[i] * g[a] * r;
            for b in a..np {
                jtj[(a, b)] += w[i] * g[a] * g[b];
            }
        }
    }
    for a in 0..np {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    (jtj, jtr, chi2)
}

fn chi2_of<M: Model>(m: &M, x: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| {
            let r = yi - m.eval(xi, p);
            wi * r * r
        })
        .sum()
}

fn invert_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    // symmetric diagonal scaling before Cholesky
    let d: Vec<f64> = (0..n).map(|i| math::sqrt(a[(i, i)])).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]));
    let inv = s.cholesky()?.inverse();
    let out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (d[i] * d[j]));
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Weighted nonlinear least squares by Levenberg-Marquardt with Marquardt's
/// diagonal scaling.
pub fn levenberg_marquardt<M: Model>(m: &M, x: &[f64], y: &[f64], w: &[f64], p0: &[f64], opts: LmOptions) -> Result<LmResult> {
    let np = m.n_params();
    if p0.len() != np || x.len() != y.len() || y.len() != w.len() {
        return Err(invalid("parameter or data length mismatch"));
    }
    if x.len() < np {
        return Err(Error::Fit(alloc::format!("{} points for {} parameters", x.len(), np)));
    }
    let mut p = p0.to_vec();
    let mut lambda = opts.lambda0;
    let (mut jtj, mut jtr, mut chi2) = normal_eqs(m, x, y, w, &p);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..np {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let step = match a.clone().cholesky() {
                Some(c) => c.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let c2 = chi2_of(m, x, y, w, &trial);
            if c2.is_finite() && c2 <= chi2 {
                let small_step = step.iter().zip(&p).all(|(s, q)| s.abs() <= opts.tol * (q.abs() + opts.tol));
                let small_gain = (chi2 - c2) <= opts.tol * chi2.max(1e-300);
                p = trial;
                let ne = normal_eqs(m, x, y, w, &p);
                jtj = ne.0;
                jtr = ne.1;
                chi2 = ne.2;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at any damping: at a minimum to precision
            converged = true;
            break;
        }
    }
    let cov = match invert_spd(&jtj) {
        Some(inv) => inv.iter().copied().collect::<Vec<f64>>(),
        None => {
            converged = false;
            Vec::new()
        }
    };
    // nalgebra stores column-major; jtj is symmetric so the order is moot
    Ok(LmResult { params: p, cov, chi2, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyfit_exact_recovery() {
        let x: Vec<f64> = (0..13).map(|i| i as f64 * 5e4).collect();
        let y: Vec<f64> = x.iter().map(|m| 0.97 - 5.5e-7 * m - 1.0e-12 * m * m).collect();
        let f = polyfit(&x, &y, &vec![1.0; x.len()], 2).unwrap();
        assert!((f.params[0] - 0.97).abs() < 1e-10);
        assert!((f.params[1] + 5.5e-7).abs() < 1e-10 * 5.5e-7 * 1e3);
        assert!((f.params[2] + 1.0e-12).abs() < 1e-10 * 1e-12 * 1e3);
    }

    #[test]
    fn rank_deficient_detected() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(polyfit(&x, &y, &[1.0; 4], 1).unwrap_err(), Error::RankDeficient);
    }

    struct Exp;
    impl Model for Exp {
        fn n_params(&self) -> usize {
            2
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] * math::exp(-p[1] * x)
        }
        fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
            let e = math::exp(-p[1] * x);
            g[0] = e;
            g[1] = -p[0] * x * e;
            p[0] * e
        }
    }

    #[test]
    fn lm_recovers_exponential() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&t| 3.0 * math::exp(-1.7 * t)).collect();
        let r = levenberg_marquardt(&Exp, &x, &y, &vec![1.0; 30], &[1.0, 0.5], LmOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.params[0] - 3.0).abs() < 1e-8 && (r.params[1] - 1.7).abs() < 1e-8);
    }
}
