//! Estimation pipeline: noise-budget closure, Bayesian conditioning,
//! conditional variances, projection-noise and contrast fits, and the
//! spectroscopic-gain metrics.

use crate::error::{invalid, Error, Result};
use crate::fit;
use crate::math;
use crate::stats;
use alloc::vec::Vec;

/// Variances in population units squared.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseBudget {
    /// Projection noise `P = N/4`.
    pub projection_var: f64,
    /// Readout noise `m` of one `J_z` measurement.
    pub readout_var: f64,
    /// Technical noise `c` of one `J_z` measurement.
    pub classical_var: f64,
}

impl NoiseBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.projection_var >= 0.0 && self.readout_var >= 0.0 && self.classical_var >= 0.0) {
            return Err(invalid("noise budget entries must be non-negative"));
        }
        Ok(())
    }

    /// Budget for `n` atoms with `m` and `c` given as fractions of `P`.
    pub fn scaled(n: f64, m_frac: f64, c_frac: f64) -> Self {
        let p = n / 4.0;
        NoiseBudget { projection_var: p, readout_var: m_frac * p, classical_var: c_frac * p }
    }

    /// `T = P + m + c`.
    pub fn total(&self) -> f64 {
        self.projection_var + self.readout_var + self.classical_var
    }

    /// Posterior-mean weight `P / (P + m + c)`.
    pub fn weight(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.projection_var / t
        } else {
            1.0
        }
    }

    /// Gaussian-model `Var(J_z2 - w J_z1)` with the posterior weight.
    pub fn predicted_var_diff(&self) -> f64 {
        let p = self.projection_var;
        let n = self.readout_var + self.classical_var;
        let w = self.weight();
        (1.0 - w) * (1.0 - w) * p + w * w * n + n
    }
}

/// Solve `{T - 1/T = var_diff, var_diff - m = var_cond}` in units of `P`
/// for the readout and classical noise, `T = 1 + m + c`.
pub fn solve_budget(var_diff_ratio: f64, var_cond_ratio: f64) -> Result<NoiseBudget> {
    if !(var_diff_ratio > 0.0) || !(var_cond_ratio >= 0.0) || var_cond_ratio > var_diff_ratio {
        return Err(invalid("need var_diff > 0 and 0 <= var_cond <= var_diff"));
    }
    let t = 0.5 * (var_diff_ratio + math::sqrt(var_diff_ratio * var_diff_ratio + 4.0));
    let m = var_diff_ratio - var_cond_ratio;
    let c = t - 1.0 - m;
    if c < 0.0 {
        return Err(invalid("targets imply a negative classical noise"));
    }
    Ok(NoiseBudget { projection_var: 1.0, readout_var: m, classical_var: c })
}

pub fn bayes_estimate(jz1_measured: f64, budget: &NoiseBudget) -> f64 {
    bayes_estimate_with_prior(jz1_measured, budget, 0.0)
}

/// Posterior mean for a Gaussian prior centred on `prior_mean`.
pub fn bayes_estimate_with_prior(jz1_measured: f64, budget: &NoiseBudget, prior_mean: f64) -> f64 {
    let w = budget.weight();
    prior_mean + w * (jz1_measured - prior_mean)
}

/// Least-squares weight `Cov(jz1, jz2) / Var(jz1)`.
pub fn empirical_weight(trials: &[(f64, f64)]) -> f64 {
    let a: Vec<f64> = trials.iter().map(|t| t.0).collect();
    let b: Vec<f64> = trials.iter().map(|t| t.1).collect();
    stats::covariance(&a, &b) / stats::variance(&a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum WeightMode {
    #[default]
    Model,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionalVariance {
    pub weight: f64,
    /// `Var(jz2 - w jz1) / P`.
    pub var_diff: f64,
    /// `(Var(jz2 - w jz1) - m) / P`.
    pub var_cond: f64,
    pub var_diff_db: f64,
    pub var_cond_db: f64,
    pub n_trials: usize,
}

pub fn conditional_variance(trials: &[(f64, f64)], budget: &NoiseBudget, mode: WeightMode) -> Result<ConditionalVariance> {
    budget.validate()?;
    if trials.len() < 1000 {
        return Err(Error::InsufficientData { needed: 1000, got: trials.len() });
    }
    if !(budget.projection_var > 0.0) {
        return Err(invalid("projection variance must be positive"));
    }
    let w = match mode {
        WeightMode::Model => budget.weight(),
        WeightMode::Empirical => empirical_weight(trials),
    };
    let d: Vec<f64> = trials.iter().map(|&(a, b)| b - w * a).collect();
    let v = stats::variance(&d);
    let p = budget.projection_var;
    let var_diff = v / p;
    let var_cond = (v - budget.readout_var) / p;
    Ok(ConditionalVariance {
        weight: w,
        var_diff,
        var_cond,
        var_diff_db: math::db(var_diff),
        var_cond_db: math::db(var_cond),
        n_trials: trials.len(),
    })
}

/// Readout variance `m` from pairs of splittings of the same population:
/// the variance of `(Omega_2^2 - Omega_1^2) / (8 g^2)`.
pub fn calibrate_measurement_noise(pairs: &[(f64, f64)], g_eff: f64) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: pairs.len() });
    }
    if !(g_eff > 0.0) {
        return Err(invalid("g_eff must be positive"));
    }
    let k = 8.0 * g_eff * g_eff;
    let d: Vec<f64> = pairs.iter().map(|&(a, b)| (b * b - a * a) / k).collect();
    Ok(stats::variance(&d))
}

/// Same calibration from populations directly: `Var((N2 - N1) / 2)`.
pub fn calibrate_from_populations(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: pairs.len() });
    }
    let d: Vec<f64> = pairs.iter().map(|&(a, b)| 0.5 * (b - a)).collect();
    Ok(stats::variance(&d))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionFit {
    pub constant: f64,
    pub linear: f64,
    pub quadratic: f64,
    /// Linear coefficient over 1/4.
    pub ratio: f64,
    pub ratio_sigma: f64,
}

/// Quadratic fit of `Var(J_z)` against atom number, weighted by the
/// Gaussian sampling error of each variance.
pub fn projection_fit(n_values: &[f64], variances: &[f64], trials_per_point: usize) -> Result<ProjectionFit> {
    if n_values.len() != variances.len() {
        return Err(invalid("atom numbers and variances differ in length"));
    }
    if n_values.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n_values.len() });
    }
    let lo = n_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = n_values.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || hi < 10.0 * lo {
        return Err(invalid("atom numbers must be positive and span at least a decade"));
    }
    let w: Vec<f64> = variances
        .iter()
        .map(|&v| {
            let s = stats::variance_std_error(v.abs().max(1e-300), trials_per_point);
            1.0 / (s * s)
        })
        .collect();
    let f = fit::polyfit(n_values, variances, &w, 2)?;
    Ok(ProjectionFit {
        constant: f.params[0],
        linear: f.params[1],
        quadratic: f.params[2],
        ratio: f.params[1] / 0.25,
        ratio_sigma: f.sigma(1) / 0.25,
    })
}

/// Wineland-type gains in dB: `C_f^2 / (C_i * ratio)` for the directly
/// observed and the readout-subtracted variance ratios.
pub fn squeezing_metrics(c_i: f64, c_f: f64, var_diff_ratio: f64, var_cond_ratio: f64) -> Result<(f64, f64)> {
    for c in [c_i, c_f] {
        if !(c > 0.0 && c <= 1.0) {
            return Err(invalid("contrasts must lie in (0, 1]"));
        }
    }
    if !(var_diff_ratio > 0.0 && var_cond_ratio > 0.0) {
        return Err(invalid("variance ratios must be positive"));
    }
    let g = |r: f64| math::db(c_f * c_f / (c_i * r));
    Ok((g(var_diff_ratio), g(var_cond_ratio)))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SqueezingReport {
    pub var_diff_db: f64,
    pub var_cond_db: f64,
    pub contrast_i: f64,
    pub contrast_f: f64,
    pub zeta_direct_db: f64,
    pub zeta_inferred_db: f64,
    pub n_trials: usize,
    pub weight: f64,
    pub budget: NoiseBudget,
}

pub fn squeezing_report(
    trials: &[(f64, f64)],
    budget: &NoiseBudget,
    mode: WeightMode,
    contrast_i: f64,
    contrast_f: f64,
) -> Result<SqueezingReport> {
    let cv = conditional_variance(trials, budget, mode)?;
    let (zd, zi) = squeezing_metrics(contrast_i, contrast_f, cv.var_diff, cv.var_cond)?;
    Ok(SqueezingReport {
        var_diff_db: cv.var_diff_db,
        var_cond_db: cv.var_cond_db,
        contrast_i,
        contrast_f,
        zeta_direct_db: zd,
        zeta_inferred_db: zi,
        n_trials: cv.n_trials,
        weight: cv.weight,
        budget: *budget,
    })
}

/// `Var(J_z2 - w J_z1)` after a rotation by `psi` about the mean spin,
/// with `v_y` the variance of the rotated-in quadrature, `noise` the
/// readout plus technical variance of one `J_z` measurement and
/// `loss_var` the variance added by atom loss before the rotation.
pub fn backaction_oracle(psi: f64, projection: f64, w: f64, v_y: f64, noise: f64, loss_var: f64) -> f64 {
    let c = math::cos(psi);
    let s = math::sin(psi);
    (c - w) * (c - w) * projection + s * s * v_y + w * w * noise + noise + c * c * loss_var
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContrastFit {
    pub c_i: f64,
    pub k1: f64,
    pub k2: f64,
    pub sigma_c_i: f64,
    pub sigma_k1: f64,
    pub sigma_k2: f64,
    /// Row-major covariance of `(C_i, k1, k2)`.
    pub cov: Vec<f64>,
}

/// Least-squares fit of `C(M) = C_i - k1 M - k2 M^2`.
pub fn contrast_fit(points: &[(f64, f64)]) -> Result<ContrastFit> {
    let mut ms: Vec<f64> = points.iter().map(|p| p.0).collect();
    ms.sort_by(f64::total_cmp);
    ms.dedup();
    if ms.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: ms.len() });
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let f = fit::polyfit(&x, &y, &alloc::vec![1.0; x.len()], 2)?;
    // residual scale: contrast points carry no individual error bars
    let s2 = if f.dof > 0 { f.chi2 / f.dof as f64 } else { 0.0 };
    let cov: Vec<f64> = f.cov.iter().map(|v| v * s2).collect();
    let sd = |i: usize| math::sqrt(cov[i * 3 + i].max(0.0));
    let mut cov_signed = cov.clone();
    for i in 0..3 {
        for j in 0..3 {
            let s = if (i == 0) != (j == 0) { -1.0 } else { 1.0 };
            cov_signed[i * 3 + j] = s * cov[i * 3 + j];
        }
    }
    Ok(ContrastFit {
        c_i: f.params[0],
        k1: -f.params[1],
        k2: -f.params[2],
        sigma_c_i: sd(0),
        sigma_k1: sd(1),
        sigma_k2: sd(2),
        cov: cov_signed,
    })
}

/// Fringe visibility from `N_up(phase) = a + b cos(phase) + c sin(phase)`:
/// returns `(a, sqrt(b^2 + c^2) / a)`.
pub fn fringe_contrast(phases: &[f64], n_up: &[f64]) -> Result<(f64, f64)> {
    if phases.len() != n_up.len() || phases.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: phases.len().min(n_up.len()) });
    }
    let rows: Vec<Vec<f64>> = phases.iter().map(|&p| alloc::vec![1.0, math::cos(p), math::sin(p)]).collect();
    let f = fit::weighted_linear_lsq(&rows, n_up, &alloc::vec![1.0; n_up.len()])?;
    let a = f.params[0];
    if !(a > 0.0) {
        return Err(Error::Fit("fringe offset is not positive".into()));
    }
    Ok((a, math::hypot(f.params[1], f.params[2]) / a))
}

/// Penalty in dB of estimating the phase from a destructively read
/// sub-ensemble holding `extract_fraction` of the atoms, relative to the
/// collective conditional variance ratio.
pub fn sampled_measurement_gain(extract_fraction: f64, var_cond_ratio: f64) -> Result<f64> {
    if !(extract_fraction > 0.0 && extract_fraction <= 1.0) {
        return Err(invalid("extract fraction must lie in (0, 1]"));
    }
    if !(var_cond_ratio > 0.0) {
        return Err(invalid("variance ratio must be positive"));
    }
    Ok(math::db(1.0 / (extract_fraction * var_cond_ratio)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_closure() {
        let b = solve_budget(0.55, 0.324).unwrap();
        assert!((b.readout_var - 0.226).abs() < 1e-12);
        assert!((b.classical_var - 0.0861).abs() < 1e-3);
        let t = b.total();
        // independent scalar oracle: T solves T^2 - 0.55 T - 1 = 0
        assert!((t * t - 0.55 * t - 1.0).abs() < 1e-12);
        assert!((t - 1.312).abs() < 1e-3);
        assert!((b.predicted_var_diff() - 0.55).abs() < 1e-12);
        assert!(solve_budget(0.3, 0.5).is_err());
    }

    #[test]
    fn bayes_examples() {
        let b = NoiseBudget { projection_var: 1.0, readout_var: 0.5, classical_var: 0.5 };
        assert_eq!(bayes_estimate(10.0, &b), 5.0);
        let b0 = NoiseBudget { readout_var: 0.0, classical_var: 0.0, ..b };
        assert_eq!(bayes_estimate(10.0, &b0), 10.0);
        let big = NoiseBudget { readout_var: 1e300, ..b };
        assert!(bayes_estimate(10.0, &big).abs() < 1e-290);
        assert_eq!(bayes_estimate_with_prior(10.0, &b, 2.0), 6.0);
    }

    #[test]
    fn metrics_examples() {
        let (a, _) = squeezing_metrics(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(a.abs() < 1e-12);
        let (d, i) = squeezing_metrics(0.97, 0.82, 0.55, 0.324).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
        assert!((i - 3.3).abs() < 0.05, "{i}");
        assert!(squeezing_metrics(0.0, 0.8, 1.0, 1.0).is_err());
    }

    #[test]
    fn gain_examples() {
        assert!(sampled_measurement_gain(1.0, 1.0).unwrap().abs() < 1e-12);
        assert!((sampled_measurement_gain(0.15, 0.324).unwrap() - 13.1).abs() < 0.05);
        assert!((sampled_measurement_gain(0.5, 1.0).unwrap() - 3.0103).abs() < 1e-4);
        assert!(sampled_measurement_gain(0.0, 1.0).is_err());
    }

    #[test]
    fn calibration_examples() {
        let pairs = [(3e8, 3e8), (2.9e8, 2.9e8), (3.1e8, 3.1e8)];
        assert_eq!(calibrate_measurement_noise(&pairs, 253e3).unwrap(), 0.0);
        assert!(calibrate_measurement_noise(&pairs[..1], 253e3).is_err());
        // splitting of N atoms: 2 g sqrt(N); (O2^2 - O1^2)/(8g^2) = (N2 - N1)/2
        let g = 253e3;
        let om = |n: f64| 2.0 * g * n.sqrt();
        let pairs = [(om(100.0), om(104.0)), (om(100.0), om(96.0))];
        let m = calibrate_measurement_noise(&pairs, g).unwrap();
        assert!((m - 8.0).abs() < 1e-6);
        assert_eq!(calibrate_from_populations(&[(100.0, 104.0), (100.0, 96.0)]).unwrap(), 8.0);
    }

    #[test]
    fn contrast_fit_exact() {
        let pts: Vec<(f64, f64)> = (0..13)
            .map(|i| {
                let m = i as f64 * 5e4;
                (m, 0.97 - 5.5e-7 * m - 1.0e-12 * m * m)
            })
            .collect();
        let f = contrast_fit(&pts).unwrap();
        assert!((f.c_i - 0.97).abs() < 1e-10);
        assert!((f.k1 / 5.5e-7 - 1.0).abs() < 1e-10);
        assert!((f.k2 / 1.0e-12 - 1.0).abs() < 1e-10);
        assert!(contrast_fit(&pts[..3]).is_err());
    }

    #[test]
    fn fringe_recovers_visibility() {
        let ph: Vec<f64> = (0..16).map(|i| i as f64 * 2.0 * math::PI / 16.0).collect();
        let y: Vec<f64> = ph.iter().map(|p| 3e5 * (1.0 + 0.8 * math::cos(p - 0.3))).collect();
        let (a, c) = fringe_contrast(&ph, &y).unwrap();
        assert!((a - 3e5).abs() < 1e-6 && (c - 0.8).abs() < 1e-12);
    }

    #[test]
    fn oracle_limits() {
        // no rotation, perfect weight: only readout noise and losses
        assert!((backaction_oracle(0.0, 1.0, 1.0, 100.0, 0.1, 0.02) - 0.22).abs() < 1e-12);
        let top = backaction_oracle(math::PI / 2.0, 1.0, 0.8, 100.0, 0.1, 0.02);
        assert!((top - (0.64 + 100.0 + 0.064 + 0.1)).abs() < 1e-9);
    }
}
