//! Cavity mode geometry, atom-cloud sampling and effective coupling.
//!
//! Frequencies and rates are cyclic (Hz). `g0_peak` and `g_eff` are half of
//! the corresponding single-atom vacuum Rabi frequencies.

use crate::error::{invalid, Error, Result};
use crate::math::{self, Vec3, C_LIGHT, PI};
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Boltzmann constant over Planck constant, Hz/K.
pub const KB_OVER_H: f64 = 1.380_649e-23 / 6.626_070_15e-34;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CavityConfig {
    pub fsr: f64,
    pub finesse: f64,
    pub lambda_probe: f64,
    pub lambda_lattice: f64,
    pub g0_peak: f64,
    pub w0: f64,
    pub z_r: f64,
    pub kappa: f64,
    pub gamma_atom: f64,
}

impl CavityConfig {
    /// Build a config whose derived fields (`z_r`, `w0`, `kappa`) follow
    /// from the measured mode spacing.
    pub fn from_spacing(
        fsr: f64,
        spacing_01: f64,
        finesse: f64,
        lambda_probe: f64,
        lambda_lattice: f64,
        g0_peak: f64,
        gamma_atom: f64,
    ) -> Result<Self> {
        if !(finesse > 0.0) {
            return Err(invalid("finesse must be positive"));
        }
        let geo = geometry_from_mode_spacings(fsr, spacing_01, lambda_probe)?;
        Ok(CavityConfig {
            fsr,
            finesse,
            lambda_probe,
            lambda_lattice,
            g0_peak,
            w0: geo.w0,
            z_r: geo.z_r,
            kappa: fsr / finesse,
            gamma_atom,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        if rel(self.kappa, self.fsr / self.finesse) > 1e-9 {
            return Err(invalid("kappa must equal fsr / finesse"));
        }
        if rel(self.w0, waist_from_rayleigh(self.lambda_probe, self.z_r)) > 1e-9 {
            return Err(invalid("w0 inconsistent with z_r and lambda_probe"));
        }
        if !(self.gamma_atom >= 0.0) || !(self.g0_peak > 0.0) {
            return Err(invalid("gamma_atom must be >= 0 and g0_peak > 0"));
        }
        Ok(())
    }

    pub fn k_probe(&self) -> f64 {
        2.0 * PI / self.lambda_probe
    }

    pub fn waist_at(&self, z: f64) -> f64 {
        let u = z / self.z_r;
        self.w0 * math::sqrt(1.0 + u * u)
    }
}

pub fn waist_from_rayleigh(lambda: f64, z_r: f64) -> f64 {
    math::sqrt(lambda * z_r / PI)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeGeometry {
    pub length: f64,
    pub mirror_radius: f64,
    pub gouy_phase: f64,
    pub z_r: f64,
    pub w0: f64,
}

/// Symmetric two-mirror cavity geometry from the fundamental to first
/// transverse mode spacing.
pub fn geometry_from_mode_spacings(fsr: f64, spacing_01: f64, lambda_probe: f64) -> Result<ModeGeometry> {
    if !(fsr > 0.0) || !(lambda_probe > 0.0) {
        return Err(invalid("fsr and lambda must be positive"));
    }
    if !(spacing_01 > 0.0 && spacing_01 < fsr) {
        return Err(invalid(alloc::format!("mode spacing {spacing_01} Hz outside (0, fsr)")));
    }
    let length = C_LIGHT / (2.0 * fsr);
    let gouy = PI * spacing_01 / fsr;
    let one_minus = math::cos(gouy);
    // cos(gouy) = 1 - L/R
    let denom = 1.0 - one_minus;
    let mirror_radius = length / denom;
    if !(mirror_radius > length / 2.0) {
        return Err(Error::Geometry(alloc::format!(
            "mirror radius {mirror_radius:.4e} m does not exceed L/2 = {:.4e} m",
            length / 2.0
        )));
    }
    let z_r = 0.5 * length * math::sqrt((2.0 * mirror_radius - length) / length);
    Ok(ModeGeometry { length, mirror_radius, gouy_phase: gouy, z_r, w0: waist_from_rayleigh(lambda_probe, z_r) })
}

/// Mode spacing implied by a symmetric cavity of given length and mirror radius.
pub fn spacing_from_geometry(fsr: f64, length: f64, mirror_radius: f64) -> f64 {
    fsr * math::acos(1.0 - length / mirror_radius) / PI
}

/// Check a measured second-order spacing against twice the first, modulo FSR.
pub fn second_spacing_consistent(fsr: f64, spacing_01: f64, spacing_02: f64, tol: f64) -> bool {
    let predicted = (2.0 * spacing_01) % fsr;
    (predicted - spacing_02).abs() <= tol
}

/// Single-atom coupling `g(r)` (half the local vacuum Rabi frequency).
pub fn mode_coupling(position: Vec3, cfg: &CavityConfig) -> f64 {
    let w = cfg.waist_at(position.z);
    let r2 = position.x * position.x + position.y * position.y;
    cfg.g0_peak * (cfg.w0 / w) * math::exp(-r2 / (w * w)) * math::sin(cfg.k_probe() * position.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AtomCloud {
    pub n_total: f64,
    pub sigma_z: f64,
    pub x_rms: f64,
    pub y_rms: f64,
    pub z_site_rms: f64,
    pub temp_radial: f64,
    /// Lattice depth, Hz.
    pub trap_depth: f64,
    /// Axial offset of the cloud centre from the mode waist, m.
    #[cfg_attr(feature = "serde", serde(default))]
    pub center_offset: f64,
}

impl AtomCloud {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_z >= 0.0 && self.x_rms >= 0.0 && self.z_site_rms >= 0.0;
        if !ok || self.n_total <= 0.0 {
            return Err(invalid("cloud extents must be non-negative and n_total positive"));
        }
        if (self.x_rms - self.y_rms).abs() > 1e-12 * self.x_rms.max(1e-30) {
            return Err(invalid("cloud must be cylindrically symmetric (x_rms = y_rms)"));
        }
        Ok(())
    }

    pub fn trap_depth_kelvin(&self) -> f64 {
        self.trap_depth / KB_OVER_H
    }

    /// Thermal radial extent in a harmonic approximation of a Gaussian
    /// lattice beam with waist `w_lattice`.
    pub fn thermal_radial_rms(&self, w_lattice: f64) -> f64 {
        0.5 * w_lattice * math::sqrt(self.temp_radial / self.trap_depth_kelvin())
    }
}

/// Sample atom positions: Gaussian site occupation on the lattice, thermal
/// jitter inside each well, Gaussian radial distribution.
///
/// The probe phase `k z` at each site is whatever the incommensurate lattice
/// spacing gives; over thousands of wells it covers [0, 2pi) uniformly.
pub fn sample_atom_positions<R: Rng + ?Sized>(cloud: &AtomCloud, cfg: &CavityConfig, n: usize, rng: &mut R) -> Vec<Vec3> {
    let spacing = cfg.lambda_lattice / 2.0;
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let za: f64 = n01.sample(rng);
        let site = math::round(za * cloud.sigma_z / spacing);
        let jz: f64 = n01.sample(rng);
        let xr: f64 = n01.sample(rng);
        let yr: f64 = n01.sample(rng);
        out.push(Vec3::new(xr * cloud.x_rms, yr * cloud.y_rms, cloud.center_offset + site * spacing + jz * cloud.z_site_rms));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectiveParams {
    pub n_eff_fraction: f64,
    pub g_eff: f64,
    /// Relative 1-sigma error of `n_eff_fraction`.
    pub mc_error: f64,
    /// Relative 1-sigma error of `g_eff`.
    pub g_eff_error: f64,
}

/// Moment matching from a list of single-atom couplings with weights.
///
/// With `a = g^2` and `b = g^4` averaged over atoms:
/// `N/N_tot = <a>^2/<b>` and `g_eff^2 = <b>/<a>`. Errors come from the delta
/// method on the sample covariance of (a, b).
pub fn effective_params_weighted(couplings: &[f64], weights: &[f64]) -> Result<EffectiveParams> {
    if couplings.is_empty() || couplings.len() != weights.len() {
        return Err(invalid("need a non-empty coupling list with matching weights"));
    }
    let (mut w, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&g, &p) in couplings.iter().zip(weights) {
        let a = g * g;
        let b = a * a;
        w += p;
        sa += p * a;
        sb += p * b;
        saa += p * a * a;
        sbb += p * b * b;
        sab += p * a * b;
    }
    if !(w > 0.0) || !(sb > 0.0) {
        return Err(invalid("couplings are all zero"));
    }
    let (ma, mb) = (sa / w, sb / w);
    let va = (saa / w - ma * ma).max(0.0);
    let vb = (sbb / w - mb * mb).max(0.0);
    let cab = sab / w - ma * mb;
    let n = couplings.len() as f64;
    let ra = va / (ma * ma);
    let rb = vb / (mb * mb);
    let rab = cab / (ma * mb);
    let frac_rel = math::sqrt(((4.0 * ra + rb - 4.0 * rab) / n).max(0.0));
    let g_rel = 0.5 * math::sqrt(((ra + rb - 2.0 * rab) / n).max(0.0));
    Ok(EffectiveParams { n_eff_fraction: ma * ma / mb, g_eff: math::sqrt(mb / ma), mc_error: frac_rel, g_eff_error: g_rel })
}

pub fn effective_params(positions: &[Vec3], cfg: &CavityConfig) -> Result<EffectiveParams> {
    if positions.is_empty() {
        return Err(invalid("empty position list"));
    }
    let gs: Vec<f64> = positions.iter().map(|p| mode_coupling(*p, cfg)).collect();
    let ws = alloc::vec![1.0; gs.len()];
    effective_params_weighted(&gs, &ws)
}
