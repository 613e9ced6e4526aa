//! Probe-induced contrast loss, Raman atom loss and measurement back-action.

use crate::error::{invalid, Result};
use crate::math;
use crate::spin::CollectiveSpinState;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeImpact {
    /// Probe photons M of this application.
    pub photons: f64,
    /// Photons scattered into free space, M_sc.
    pub scattered: f64,
    /// k1, contrast loss per photon.
    pub contrast_factor_linear: f64,
    /// k2, contrast loss per photon squared.
    pub contrast_factor_quad: f64,
    /// Probability that a free-space scatter removes the atom from the clock states.
    pub raman_branch: f64,
    /// Azimuthal variance added by the last back-action kick.
    pub backaction_var_added: f64,
}

impl ProbeImpact {
    pub fn new(photons: f64, scatter_fraction: f64, k1: f64, k2: f64, raman_branch: f64) -> Self {
        ProbeImpact {
            photons,
            scattered: math::round(photons * scatter_fraction),
            contrast_factor_linear: k1,
            contrast_factor_quad: k2,
            raman_branch,
            backaction_var_added: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.raman_branch) {
            return Err(invalid("raman branching must lie in [0, 1]"));
        }
        if self.photons < 0.0 || self.scattered < 0.0 || self.scattered > self.photons {
            return Err(invalid("need 0 <= scattered <= photons"));
        }
        if self.backaction_var_added < 0.0 {
            return Err(invalid("negative back-action variance"));
        }
        Ok(())
    }

    pub fn scatter_fraction(&self) -> f64 {
        if self.photons > 0.0 {
            self.scattered / self.photons
        } else {
            0.0
        }
    }
}

/// `C(M) = C_i - k1 M - k2 M^2`, floored at zero.
pub fn contrast_after(c_initial: f64, k1: f64, k2: f64, dose: f64) -> f64 {
    (c_initial - k1 * dose - k2 * dose * dose).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecoherenceFlags {
    /// The contrast model went negative and was clamped to zero.
    pub contrast_clamped: bool,
}

/// Apply the contrast-loss model and Raman loss for one probe application.
///
/// Contrast follows the polynomial in the cumulative photon dose since
/// preparation, so splitting a measurement into several sweeps does not
/// change the total loss. `J_z` is preserved by the contrast change; Raman
/// losses come out of the up population only.
pub fn apply_probe_decoherence<R: Rng + ?Sized>(
    state: &CollectiveSpinState,
    impact: &ProbeImpact,
    rng: &mut R,
) -> (CollectiveSpinState, DecoherenceFlags) {
    let mut s = state.clone();
    let mut flags = DecoherenceFlags::default();
    if impact.photons <= 0.0 {
        return (s, flags);
    }
    s.probe_dose += impact.photons;
    let raw = s.contrast_initial
        - impact.contrast_factor_linear * s.probe_dose
        - impact.contrast_factor_quad * s.probe_dose * s.probe_dose;
    if raw <= 0.0 {
        flags.contrast_clamped = true;
    }
    let target = raw.max(0.0).min(s.contrast);

    let lost = if impact.raman_branch > 0.0 && impact.scattered >= 1.0 {
        let n = impact.scattered as u64;
        let (up, _) = s.populations();
        let l = Binomial::new(n, impact.raman_branch).unwrap().sample(rng) as f64;
        l.min(up.max(0.0))
    } else {
        0.0
    };
    let n_new = s.n_eff - lost;
    s.set_length_conserving_jz(n_new, target);
    if lost > 0.0 && s.contrast > 0.0 {
        // atoms left |up>, so J_z drops by half the loss beyond the shrink
        s.shift_jz(-0.5 * lost);
    }
    (s, flags)
}

/// Expected up population after `photons` probe photons (deterministic form).
pub fn raman_splitting_decay(n_up: f64, photons: f64, impact: &ProbeImpact) -> f64 {
    (n_up - impact.raman_branch * impact.scatter_fraction() * photons).max(0.0)
}

/// Per-photon contrast loss if every scattered photon collapses one spin.
///
/// With inhomogeneous coupling the scattering rate and the measured
/// coherence are both weighted by `g^2`, so the loss per scatter is
/// `<g^4>/(N_tot <g^2>^2) = 1/N_eff`.
pub fn predict_k1(n_eff: f64, scatter_fraction: f64) -> Result<f64> {
    if !(n_eff > 0.0) {
        return Err(invalid("n_eff must be positive"));
    }
    Ok(scatter_fraction / n_eff)
}

/// Raise the azimuthal variance so that the covariance determinant equals
/// `bound^2 / q_total`, adding the matching Gaussian draw to `phi`.
///
/// Returns the kicked state and the variance that was added.
pub fn backaction_kick<R: Rng + ?Sized>(
    state: &CollectiveSpinState,
    photons: f64,
    q_total: f64,
    rng: &mut R,
) -> Result<(CollectiveSpinState, f64)> {
    if !(q_total > 0.0 && q_total <= 1.0) {
        return Err(invalid(alloc::format!("q_total must lie in (0, 1], got {q_total}")));
    }
    let mut s = state.clone();
    if photons <= 0.0 || s.contrast <= 0.0 {
        return Ok((s, 0.0));
    }
    let b = s.heisenberg_bound();
    let (vt, vp, c) = s.local_cov();
    let target = (b * b / q_total + c * c) / vt;
    let add = target - vp;
    if add <= 0.0 {
        return Ok((s, 0.0));
    }
    let draw = Normal::new(0.0, math::sqrt(add)).unwrap().sample(rng);
    s.kick_phi(draw, add);
    Ok((s, add))
}

/// Additive technical phase noise on the azimuthal quadrature.
pub fn technical_phase_noise<R: Rng + ?Sized>(state: &mut CollectiveSpinState, var: f64, rng: &mut R) {
    if var > 0.0 {
        let draw = Normal::new(0.0, math::sqrt(var)).unwrap().sample(rng);
        state.kick_phi(draw, var);
    }
}
