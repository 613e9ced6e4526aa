//! Collective pseudo-spin in the Gaussian tangent-plane approximation.
//!
//! Conventions: latitude `theta` is measured from the equator, north
//! (`+z`) is spin up, and `J_z = (N_up - N_down)/2`. A rotation
//! `R[psi, phi, theta]` turns right-handed by `psi` about the unit axis
//! `(cos(theta) sin(phi), -cos(theta) cos(phi), sin(theta))`, so `phi = 0`
//! is the `-y` axis and `R[pi/2, 0, 0]` carries the south pole to `+x`.
//!
//! Fluctuations live on a tangent frame that is carried along by every
//! rotation; quadratures are read back in the local (north, east) basis.

use crate::error::{invalid, Result};
use crate::math::{self, Vec3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Minimum `cos(latitude)` for which the local north direction is used.
const POLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rotation {
    pub psi: f64,
    pub phi_axis: f64,
    pub theta_axis: f64,
}

impl Rotation {
    pub const fn new(psi: f64, phi_axis: f64, theta_axis: f64) -> Self {
        Rotation { psi, phi_axis, theta_axis }
    }

    pub fn axis(&self) -> Vec3 {
        let c = math::cos(self.theta_axis);
        Vec3::new(c * math::sin(self.phi_axis), -c * math::cos(self.phi_axis), math::sin(self.theta_axis))
    }

    pub fn inverse(&self) -> Rotation {
        Rotation { psi: -self.psi, ..*self }
    }

    /// Combine two rotations about the same axis.
    pub fn compose_coaxial(&self, other: &Rotation) -> Rotation {
        Rotation { psi: self.psi + other.psi, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CollectiveSpinState {
    pub n_eff: f64,
    pub mean_dir: Vec3,
    pub contrast: f64,
    /// Contrast right after preparation.
    pub contrast_initial: f64,
    /// Probe photons absorbed since preparation.
    pub probe_dose: f64,
    /// Unit tangent vector transported with the mean; second axis is
    /// `frame x mean_dir`.
    frame: Vec3,
    /// Fluctuation components on (frame, frame x mean).
    fluct: [f64; 2],
    /// Covariance on the same basis: [s11, s22, s12].
    cov: [f64; 3],
}

fn local_north(m: Vec3, fallback: Vec3) -> Vec3 {
    let t = Vec3::Z - m * m.z;
    let n = t.norm();
    if n < POLE_EPS {
        fallback
    } else {
        t * (1.0 / n)
    }
}

fn any_perpendicular(m: Vec3) -> Vec3 {
    let t = Vec3::Z - m * m.z;
    if t.norm() > 1e-6 {
        return t.normalized();
    }
    (Vec3::X - m * m.x).normalized()
}

impl CollectiveSpinState {
    /// Noise-free coherent state: quadrature variances set, fluctuations zero.
    pub fn coherent(n_eff: f64, direction: Vec3, contrast: f64) -> Result<Self> {
        if !(n_eff > 0.0) {
            return Err(invalid(alloc::format!("n_eff must be positive, got {n_eff}")));
        }
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid("direction must be a unit vector"));
        }
        if !(0.0..=1.0).contains(&contrast) || contrast == 0.0 {
            return Err(invalid(alloc::format!("contrast must lie in (0, 1], got {contrast}")));
        }
        let mean = direction.normalized();
        let v = 1.0 / (n_eff * contrast * contrast);
        Ok(CollectiveSpinState {
            n_eff,
            mean_dir: mean,
            contrast,
            contrast_initial: contrast,
            probe_dose: 0.0,
            frame: any_perpendicular(mean),
            fluct: [0.0, 0.0],
            cov: [v, v, 0.0],
        })
    }

    /// Second tangent axis of the transported frame.
    fn frame2(&self) -> Vec3 {
        self.frame.cross(self.mean_dir)
    }

    /// 2x2 orthogonal map from frame coordinates to (north, east).
    fn to_local(&self) -> [[f64; 2]; 2] {
        let n = local_north(self.mean_dir, self.frame);
        let e = n.cross(self.mean_dir);
        let f2 = self.frame2();
        [[self.frame.dot(n), f2.dot(n)], [self.frame.dot(e), f2.dot(e)]]
    }

    pub fn fluct_theta(&self) -> f64 {
        let a = self.to_local();
        a[0][0] * self.fluct[0] + a[0][1] * self.fluct[1]
    }

    pub fn fluct_phi(&self) -> f64 {
        let a = self.to_local();
        a[1][0] * self.fluct[0] + a[1][1] * self.fluct[1]
    }

    /// Local covariance `(var_theta, var_phi, cov_theta_phi)`.
    pub fn local_cov(&self) -> (f64, f64, f64) {
        let a = self.to_local();
        let [s11, s22, s12] = self.cov;
        let vt = a[0][0] * a[0][0] * s11 + 2.0 * a[0][0] * a[0][1] * s12 + a[0][1] * a[0][1] * s22;
        let vp = a[1][0] * a[1][0] * s11 + 2.0 * a[1][0] * a[1][1] * s12 + a[1][1] * a[1][1] * s22;
        let c = a[0][0] * a[1][0] * s11 + (a[0][0] * a[1][1] + a[0][1] * a[1][0]) * s12 + a[0][1] * a[1][1] * s22;
        (vt, vp, c)
    }

    pub fn var_theta(&self) -> f64 {
        self.local_cov().0
    }

    pub fn var_phi(&self) -> f64 {
        self.local_cov().1
    }

    /// Determinant of the quadrature covariance; basis independent.
    pub fn uncertainty_product(&self) -> f64 {
        let [s11, s22, s12] = self.cov;
        s11 * s22 - s12 * s12
    }

    /// Minimum allowed `sqrt(det)`: `1/(n_eff C)` in angle units.
    pub fn heisenberg_bound(&self) -> f64 {
        1.0 / (self.n_eff * self.contrast)
    }

    pub fn satisfies_uncertainty(&self, tol: f64) -> bool {
        let b = self.heisenberg_bound();
        self.uncertainty_product() >= b * b * (1.0 - tol)
    }

    /// Replace the local quadratures, keeping the mean direction.
    pub fn set_local(&mut self, d_theta: f64, d_phi: f64) {
        let a = self.to_local();
        // inverse of an orthogonal matrix is its transpose
        self.fluct = [a[0][0] * d_theta + a[1][0] * d_phi, a[0][1] * d_theta + a[1][1] * d_phi];
    }

    pub fn set_local_cov(&mut self, var_theta: f64, var_phi: f64, cov: f64) {
        let a = self.to_local();
        let (b00, b01, b10, b11) = (a[0][0], a[1][0], a[0][1], a[1][1]);
        self.cov = [
            b00 * b00 * var_theta + 2.0 * b00 * b01 * cov + b01 * b01 * var_phi,
            b10 * b10 * var_theta + 2.0 * b10 * b11 * cov + b11 * b11 * var_phi,
            b00 * b10 * var_theta + (b00 * b11 + b01 * b10) * cov + b01 * b11 * var_phi,
        ];
    }

    /// Latitude of the mean plus the polar fluctuation.
    pub fn theta_total(&self) -> f64 {
        self.mean_dir.latitude() + self.fluct_theta()
    }

    /// `(n_up, n_down)`; pure bookkeeping.
    pub fn populations(&self) -> (f64, f64) {
        let up = 0.5 * self.n_eff * (1.0 + self.contrast * math::sin(self.theta_total()));
        (up, self.n_eff - up)
    }

    pub fn jz(&self) -> f64 {
        let (u, d) = self.populations();
        0.5 * (u - d)
    }

    /// Rotate mean and frame by `angle` about a unit `axis`.
    pub fn rotate_about(&mut self, axis: Vec3, angle: f64) {
        let m = self.mean_dir.rotated(axis, angle).normalized();
        let f = self.frame.rotated(axis, angle);
        let f = (f - m * f.dot(m)).normalized();
        self.mean_dir = m;
        self.frame = f;
    }

    /// Move the mean towards north by `delta` radians of latitude.
    pub fn shift_latitude(&mut self, delta: f64) {
        let n = local_north(self.mean_dir, self.frame);
        let axis = self.mean_dir.cross(n);
        self.rotate_about(axis, delta);
    }

    /// Scale the polar quadrature and the mean latitude displacement so that
    /// `J_z` is preserved when the contrast changes to `new_contrast`.
    pub fn set_contrast_conserving_jz(&mut self, new_contrast: f64) {
        let n = self.n_eff;
        self.set_length_conserving_jz(n, new_contrast);
    }

    /// Change atom number and contrast while keeping `J_z` fixed; the
    /// azimuthal quadrature is untouched.
    pub fn set_length_conserving_jz(&mut self, new_n_eff: f64, new_contrast: f64) {
        let new_c = new_contrast.clamp(0.0, 1.0);
        if new_c <= 0.0 || new_n_eff <= 0.0 {
            self.contrast = new_c;
            self.n_eff = new_n_eff.max(0.0);
            return;
        }
        let f = (self.n_eff * self.contrast) / (new_n_eff * new_c);
        let jz_sin = math::sin(self.theta_total()) * f;
        let (vt, vp, c) = self.local_cov();
        let (dt, dp) = (self.fluct_theta(), self.fluct_phi());
        let target_total = math::asin(jz_sin.clamp(-1.0, 1.0));
        let new_dt = dt * f;
        let lat = self.mean_dir.latitude();
        self.shift_latitude(target_total - new_dt - lat);
        self.contrast = new_c;
        self.n_eff = new_n_eff;
        self.set_local(new_dt, dp);
        self.set_local_cov(vt * f * f, vp, c * f);
    }

    /// Add `delta` to `J_z` by tilting the mean latitude.
    pub fn shift_jz(&mut self, delta: f64) {
        let tot = self.theta_total();
        let s = (math::sin(tot) + 2.0 * delta / (self.n_eff * self.contrast)).clamp(-1.0, 1.0);
        self.shift_latitude(math::asin(s) - tot);
    }

    /// Kalman update of the polar quadrature after a readout whose noise
    /// variance in angle units is `meas_var`.
    pub fn condition_theta(&mut self, meas_var: f64) {
        let (vt, vp, c) = self.local_cov();
        let s = vt + meas_var;
        if s <= 0.0 {
            return;
        }
        self.set_local_cov(vt - vt * vt / s, vp - c * c / s, c - vt * c / s);
    }

    /// Add `draw` to the azimuthal fluctuation and `var` to its variance.
    pub fn kick_phi(&mut self, draw: f64, var: f64) {
        let (dt, dp) = (self.fluct_theta(), self.fluct_phi());
        let (vt, vp, c) = self.local_cov();
        self.set_local(dt, dp + draw);
        self.set_local_cov(vt, vp + var, c);
    }
}

/// Fresh coherent spin state with sampled quadratures.
///
/// Each quadrature is drawn with variance `1/(n_eff C^2)`, which keeps
/// `Var(J_z) = n_eff/4` for any contrast.
pub fn prepare_css<R: Rng + ?Sized>(n_eff: f64, direction: Vec3, contrast: f64, rng: &mut R) -> Result<CollectiveSpinState> {
    let mut s = CollectiveSpinState::coherent(n_eff, direction, contrast)?;
    let sd = math::sqrt(s.cov[0]);
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    s.fluct = [a * sd, b * sd];
    Ok(s)
}

/// Apply a nominal rotation.
pub fn rotate(state: &CollectiveSpinState, r: &Rotation) -> CollectiveSpinState {
    let mut s = state.clone();
    s.rotate_about(r.axis(), r.psi);
    s
}

/// `(n_up, n_down)` of a state.
pub fn populations(state: &CollectiveSpinState) -> (f64, f64) {
    state.populations()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn south(n: f64) -> CollectiveSpinState {
        CollectiveSpinState::coherent(n, -Vec3::Z, 1.0).unwrap()
    }

    #[test]
    fn half_pi_from_south_reaches_plus_x() {
        let s = rotate(&south(10.0), &Rotation::new(PI / 2.0, 0.0, 0.0));
        assert!((s.mean_dir - Vec3::X).norm() < 1e-15);
    }

    #[test]
    fn opposite_pi_pulses_return() {
        let s = rotate(&south(10.0), &Rotation::new(PI / 2.0, 0.0, 0.0));
        let t = rotate(&rotate(&s, &Rotation::new(PI, PI / 2.0, 0.0)), &Rotation::new(PI, -PI / 2.0, 0.0));
        assert!((t.mean_dir - s.mean_dir).norm() < 1e-14);
    }

    #[test]
    fn rotation_about_mean_mixes_quadratures() {
        let mut s = CollectiveSpinState::coherent(100.0, Vec3::X, 1.0).unwrap();
        s.set_local_cov(0.2, 3.0, 0.0);
        for psi in [0.0, 0.3, PI / 4.0, 1.2, PI / 2.0] {
            let r = rotate(&s, &Rotation::new(psi, PI / 2.0, 0.0));
            let want = math::cos(psi).powi(2) * 0.2 + math::sin(psi).powi(2) * 3.0;
            assert!((r.var_theta() - want).abs() < 1e-12, "psi={psi}");
        }
    }

    #[test]
    fn populations_examples() {
        let (u, d) = south(50.0).populations();
        assert!(u.abs() < 1e-12 && (d - 50.0).abs() < 1e-12);
        let mut e = CollectiveSpinState::coherent(7.0e5, Vec3::X, 1.0).unwrap();
        let (u, d) = e.populations();
        assert!((u - 3.5e5).abs() < 1e-6 && (d - 3.5e5).abs() < 1e-6);
        e.set_local(1.195e-3, 0.0);
        let (u, d) = e.populations();
        assert!((u - d - 836.5).abs() < 0.1);
    }

    #[test]
    fn css_variance_and_jz_scale() {
        let s = CollectiveSpinState::coherent(4.0, Vec3::X, 1.0).unwrap();
        assert!((s.var_theta() - 0.25).abs() < 1e-15);
        // Delta J_z = (n/2) * Delta theta
        let n = 7.0e5;
        let d = 0.5 * n * math::sqrt(1.0 / n);
        assert!((d - 418.33).abs() < 0.01);
    }

    #[test]
    fn sampled_css_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 7.0e5;
        let k = 10_000;
        let mut acc = 0.0;
        for _ in 0..k {
            let s = prepare_css(n, Vec3::X, 1.0, &mut rng).unwrap();
            acc += s.fluct_theta().powi(2);
        }
        let rms = math::sqrt(acc / k as f64);
        assert!((rms / 1.195e-3 - 1.0).abs() < 0.02, "rms={rms}");
    }

    #[test]
    fn rejects_nonpositive_atoms() {
        assert!(CollectiveSpinState::coherent(0.0, Vec3::X, 1.0).is_err());
        assert!(prepare_css(-1.0, Vec3::X, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn contrast_change_keeps_jz() {
        let mut s = CollectiveSpinState::coherent(7.0e5, Vec3::X, 0.97).unwrap();
        s.set_local(1e-3, 2e-3);
        s.shift_latitude(2e-4);
        let jz = s.jz();
        let det = s.uncertainty_product() * (s.n_eff * s.contrast).powi(2);
        s.set_contrast_conserving_jz(0.8);
        assert!((s.jz() - jz).abs() < 1e-6 * jz.abs());
        assert!((s.fluct_phi() - 2e-3).abs() < 1e-15);
        let det2 = s.uncertainty_product() * (s.n_eff * s.contrast).powi(2);
        assert!((det2 / det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kalman_shrinks_theta_only() {
        let mut s = CollectiveSpinState::coherent(1.0e4, Vec3::X, 1.0).unwrap();
        let v0 = s.var_theta();
        s.condition_theta(v0);
        assert!((s.var_theta() - v0 / 2.0).abs() < 1e-18);
        assert!((s.var_phi() - v0).abs() < 1e-18);
    }
}
