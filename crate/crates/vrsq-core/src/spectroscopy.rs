//! Vacuum Rabi doublet: linear-response transmission, shot-noise-limited
//! probe sweeps, doublet fitting and population readout.

use crate::cavity::CavityConfig;
use crate::error::{invalid, Error, Result};
use crate::fit::{self, LmOptions, Model};
use crate::math;
use alloc::vec::Vec;
use nalgebra::Complex;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepConfig {
    /// Width of each of the two frequency windows, Hz.
    pub span: f64,
    pub duration: f64,
    /// Probe photons spent on one splitting sweep.
    pub photons: f64,
    pub detection_efficiency: f64,
    /// Total frequency bins, split evenly between the two windows.
    pub points: usize,
    /// Atom minus bare-cavity detuning, Hz.
    pub detuning_ac: f64,
    /// Up-state population the windows are centred on.
    pub expected_n_up: f64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.span > 0.0) || !(self.photons > 0.0) {
            return Err(invalid("sweep span and photon number must be positive"));
        }
        if !(self.detection_efficiency > 0.0 && self.detection_efficiency <= 1.0) {
            return Err(invalid("detection efficiency must lie in (0, 1]"));
        }
        if self.points < 16 || self.points % 2 != 0 {
            return Err(invalid("need an even number of at least 16 frequency points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTrace {
    pub freq: Vec<f64>,
    pub power: Vec<u64>,
    pub model_power: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplittingFit {
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub fwhm: f64,
    pub splitting: f64,
    pub sigma_splitting: f64,
    pub converged: bool,
    pub chi2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedModes {
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub fwhm: f64,
}

impl DressedModes {
    pub fn splitting(&self) -> f64 {
        self.omega_plus - self.omega_minus
    }
}

/// Collective coupling `Omega = sqrt(n_up) 2 g`.
pub fn collective_splitting(n_up: f64, g_eff: f64) -> f64 {
    math::sqrt(n_up.max(0.0)) * 2.0 * g_eff
}

pub fn dressed_modes(n_up: f64, g_eff: f64, detuning_ac: f64, cfg: &CavityConfig) -> DressedModes {
    let om = collective_splitting(n_up, g_eff);
    let r = math::sqrt(om * om + detuning_ac * detuning_ac);
    DressedModes {
        omega_plus: 0.5 * (detuning_ac + r),
        omega_minus: 0.5 * (detuning_ac - r),
        fwhm: 0.5 * (cfg.kappa + cfg.gamma_atom),
    }
}

/// Steady-state cavity and atomic amplitudes for a weak probe at `f` Hz
/// from the bare cavity, normalised so the empty cavity transmits 1.
fn response(f: f64, n_up: f64, g_eff: f64, detuning_ac: f64, cfg: &CavityConfig) -> (Complex<f64>, Complex<f64>) {
    let big_g = math::sqrt(n_up.max(0.0)) * g_eff;
    let atom = Complex::new(0.5 * cfg.gamma_atom, -(f - detuning_ac));
    let denom = Complex::new(0.5 * cfg.kappa, -f) + Complex::new(big_g * big_g, 0.0) / atom;
    let a = Complex::new(1.0, 0.0) / denom;
    let b = Complex::new(0.0, -big_g) * a / atom;
    (a, b)
}

/// Intensity transmission of the coupled system.
pub fn transmission(f: f64, n_up: f64, g_eff: f64, detuning_ac: f64, cfg: &CavityConfig) -> f64 {
    let (a, _) = response(f, n_up, g_eff, detuning_ac, cfg);
    0.25 * cfg.kappa * cfg.kappa * a.norm_sqr()
}

/// Fractions of photon loss through free-space scattering and through the
/// cavity, at probe frequency `f`; they sum to one.
pub fn loss_partition(f: f64, n_up: f64, g_eff: f64, detuning_ac: f64, cfg: &CavityConfig) -> (f64, f64) {
    let (a, b) = response(f, n_up, g_eff, detuning_ac, cfg);
    let atomic = cfg.gamma_atom * b.norm_sqr();
    let cavity = cfg.kappa * a.norm_sqr();
    let tot = atomic + cavity;
    if tot <= 0.0 {
        return (0.0, 1.0);
    }
    (atomic / tot, cavity / tot)
}

/// Bin-centre frequencies of the two sweep windows.
pub fn sweep_frequencies(sweep: &SweepConfig, g_eff: f64, cfg: &CavityConfig) -> Vec<f64> {
    let modes = dressed_modes(sweep.expected_n_up, g_eff, sweep.detuning_ac, cfg);
    let per = sweep.points / 2;
    let step = sweep.span / per as f64;
    let mut out = Vec::with_capacity(sweep.points);
    for centre in [modes.omega_minus, modes.omega_plus] {
        let start = centre - 0.5 * sweep.span + 0.5 * step;
        for i in 0..per {
            out.push(start + step * i as f64);
        }
    }
    out
}

/// Noiseless expected detected counts per bin.
pub fn model_trace(n_up: f64, g_eff: f64, sweep: &SweepConfig, cfg: &CavityConfig) -> (Vec<f64>, Vec<f64>) {
    let freq = sweep_frequencies(sweep, g_eff, cfg);
    let per_bin = sweep.photons / sweep.points as f64;
    let model = freq
        .iter()
        .map(|&f| sweep.detection_efficiency * per_bin * transmission(f, n_up, g_eff, sweep.detuning_ac, cfg))
        .collect();
    (freq, model)
}

pub fn synthesize_sweep<R: Rng + ?Sized>(
    n_up: f64,
    g_eff: f64,
    sweep: &SweepConfig,
    cfg: &CavityConfig,
    rng: &mut R,
) -> SpectrumTrace {
    let (freq, model_power) = model_trace(n_up, g_eff, sweep, cfg);
    let power =
        model_power.iter().map(|&lam| if lam > 0.0 { Poisson::new(lam).unwrap().sample(rng) as u64 } else { 0 }).collect();
    SpectrumTrace { freq, power, model_power }
}

/// Two Lorentzians with a common width on a flat baseline.
/// Parameters: [c1, c2, fwhm, a1, a2, baseline].
struct Doublet;

impl Model for Doublet {
    fn n_params(&self) -> usize {
        6
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let l = |c: f64| {
            let u = 2.0 * (x - c) / p[2];
            1.0 / (1.0 + u * u)
        };
        p[5] + p[3] * l(p[0]) + p[4] * l(p[1])
    }

    fn eval_grad(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let w = p[2];
        let mut val = p[5];
        g[2] = 0.0;
        for (k, amp) in [(0usize, p[3]), (1usize, p[4])] {
            let d = x - p[k];
            let u = 2.0 * d / w;
            let l = 1.0 / (1.0 + u * u);
            let l2 = l * l;
            val += amp * l;
            g[3 + k] = l;
            // dl/dc = 8 d / w^2 * l^2, dl/dw = 8 d^2 / w^3 * l^2
            g[k] = amp * 8.0 * d / (w * w) * l2;
            g[2] += amp * 8.0 * d * d / (w * w * w) * l2;
        }
        g[5] = 1.0;
        val
    }
}

/// One peak guess per window; the windows are separated by the largest
/// frequency gap.
fn initial_guess(freq: &[f64], y: &[f64]) -> [f64; 6] {
    let n = y.len();
    let split = (1..n).max_by(|&i, &j| (freq[i] - freq[i - 1]).abs().total_cmp(&(freq[j] - freq[j - 1]).abs())).unwrap_or(n / 2);
    let base = y.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let peak = |lo: usize, hi: usize| {
        let i = (lo..hi).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(lo);
        let half = 0.5 * (y[i] + base);
        let (mut l, mut h) = (i, i);
        while l > lo && y[l - 1] > half {
            l -= 1;
        }
        while h + 1 < hi && y[h + 1] > half {
            h += 1;
        }
        (i, (freq[h] - freq[l]).abs())
    };
    let (ia, wa) = peak(0, split);
    let (ib, wb) = peak(split, n);
    let step = (freq[1] - freq[0]).abs();
    let width = (0.5 * (wa + wb) + step).max(2.0 * step);
    let (a, b) = if freq[ia] <= freq[ib] { (ia, ib) } else { (ib, ia) };
    [freq[a], freq[b], width, y[a] - base, y[b] - base, base]
}

pub fn fit_splitting(trace: &SpectrumTrace) -> Result<SplittingFit> {
    let n = trace.freq.len();
    if n < 16 || trace.power.len() != n {
        return Err(Error::Fit(alloc::format!("need at least 8 points per resonance, got {n} in total")));
    }
    if trace.power.iter().all(|&c| c == 0) {
        return Err(Error::Fit("trace contains no counts".into()));
    }
    let y: Vec<f64> = trace.power.iter().map(|&c| c as f64).collect();
    let p0 = initial_guess(&trace.freq, &y);
    let opts = LmOptions::default();
    // pass 1: Neyman weights; pass 2: weights from the pass-1 model
    let w1: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    let r1 = fit::levenberg_marquardt(&Doublet, &trace.freq, &y, &w1, &p0, opts)?;
    let w2: Vec<f64> = trace.freq.iter().map(|&f| 1.0 / Doublet.eval(f, &r1.params).max(0.5)).collect();
    let r = fit::levenberg_marquardt(&Doublet, &trace.freq, &y, &w2, &r1.params, opts)?;
    let p = &r.params;
    let (hi, lo, ihi, ilo) = if p[1] >= p[0] { (p[1], p[0], 1, 0) } else { (p[0], p[1], 0, 1) };
    let (fmin, fmax) = trace.freq.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &f| (a.min(f), b.max(f)));
    let inside = |c: f64| c >= fmin && c <= fmax;
    let converged = r1.converged && r.converged && p[2].abs() > 0.0 && p[2].abs() < fmax - fmin && inside(p[0]) && inside(p[1]);
    let sigma = if r.cov.len() == 36 {
        let v = |i: usize, j: usize| r.cov[i * 6 + j];
        math::sqrt((v(ihi, ihi) + v(ilo, ilo) - 2.0 * v(ihi, ilo)).max(0.0))
    } else {
        f64::NAN
    };
    Ok(SplittingFit {
        omega_plus: hi,
        omega_minus: lo,
        fwhm: p[2].abs(),
        splitting: hi - lo,
        sigma_splitting: sigma,
        converged: converged && sigma.is_finite() && sigma > 0.0,
        chi2: r.chi2,
    })
}

/// `n_up = (splitting / 2g)^2` with first-order error propagation.
pub fn population_from_splitting(fit: &SplittingFit, g_eff: f64) -> Result<(f64, f64)> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let r = fit.splitting / (2.0 * g_eff);
    Ok((r * r, 2.0 * r * fit.sigma_splitting / (2.0 * g_eff)))
}

/// Intracavity-photon-weighted share of probe photons lost to free space
/// over the sweep frequencies.
pub fn scattered_fraction(sweep: &SweepConfig, n_up: f64, g_eff: f64, cfg: &CavityConfig) -> f64 {
    let freq = sweep_frequencies(sweep, g_eff, cfg);
    let (mut num, mut den) = (0.0, 0.0);
    for f in freq {
        let (a, _) = response(f, n_up, g_eff, sweep.detuning_ac, cfg);
        let weight = a.norm_sqr();
        num += weight * loss_partition(f, n_up, g_eff, sweep.detuning_ac, cfg).0;
        den += weight;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
