//! Single-trial protocols shared by the command-line runner and the tests.
//!
//! Each function consumes one random stream and returns the quantities a
//! scan needs from that trial; looping, seeding and statistics live with
//! the caller.

use crate::analysis::NoiseBudget;
use crate::cavity::CavityConfig;
use crate::error::{invalid, Result};
use crate::math::{self, Vec3, PI};
use crate::sequence::{self, ProbeModel, PulseSequence, Readout, RotationNoiseModel, SequenceStep, TrialRecord};
use crate::spectroscopy::{self, SweepConfig};
use crate::spin::{self, CollectiveSpinState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Independent stream for trial `trial` of scan point `point`.
pub fn trial_rng(master_seed: u64, point: u64, trial: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(master_seed ^ trial);
    r.set_stream(point);
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct Physics {
    pub cavity: CavityConfig,
    pub g_eff: f64,
    pub n_eff: f64,
    pub contrast_initial: f64,
    /// Probe sweep; `photons` is the budget of one sweep.
    pub sweep: SweepConfig,
    pub k1: f64,
    pub k2: f64,
    pub raman_branch: f64,
    /// `M_sc / M` of the sweep.
    pub scatter_fraction: f64,
    pub q_total: f64,
    pub technical_phase_var: f64,
    /// Readout noise of one `J_z` measurement in units of `N/4`.
    pub readout_frac: f64,
    /// Technical noise of one `J_z` measurement in units of `N/4`.
    pub classical_frac: f64,
    pub rotation_noise: RotationNoiseModel,
    /// Apply the rotation-noise model inside the measurement protocols.
    pub rotation_noise_in_protocols: bool,
}

impl Default for Physics {
    /// Apparatus values at `N = 7e5`; the detection and back-action
    /// efficiencies are tuned so the readout noise is `0.226 N/4` and the
    /// back-action plateau sits at 21.4 dB.
    fn default() -> Self {
        let cavity =
            CavityConfig::from_spacing(7.828e9, 2257e6, 710.0, 795e-9, 823e-9, 303.5e3, 5.75e6).expect("default cavity is valid");
        Physics {
            cavity,
            g_eff: 253.6e3,
            n_eff: 7e5,
            contrast_initial: 0.97,
            sweep: SweepConfig {
                span: 16e6,
                duration: 71e-6,
                photons: 0.95e5,
                detection_efficiency: 0.36,
                points: 64,
                detuning_ac: 0.0,
                expected_n_up: 3.5e5,
            },
            k1: 5.5e-7,
            k2: 1.0e-12,
            raman_branch: 0.5,
            scatter_fraction: 0.343,
            q_total: 0.0193,
            technical_phase_var: 0.0,
            readout_frac: 0.226,
            classical_frac: 0.086,
            rotation_noise: RotationNoiseModel::default(),
            rotation_noise_in_protocols: false,
        }
    }
}

impl Physics {
    pub fn validate(&self) -> Result<()> {
        self.cavity.validate()?;
        self.sweep.validate()?;
        self.rotation_noise.validate()?;
        if !(self.n_eff > 0.0) || !(self.g_eff > 0.0) {
            return Err(invalid("n_eff and g_eff must be positive"));
        }
        if !(self.contrast_initial > 0.0 && self.contrast_initial <= 1.0) {
            return Err(invalid("initial contrast must lie in (0, 1]"));
        }
        if !(self.q_total > 0.0 && self.q_total <= 1.0) {
            return Err(invalid("q_total must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.raman_branch) || !(0.0..=1.0).contains(&self.scatter_fraction) {
            return Err(invalid("raman branching and scatter fraction must lie in [0, 1]"));
        }
        if !(self.readout_frac >= 0.0 && self.classical_frac >= 0.0) {
            return Err(invalid("noise budget fractions must be non-negative"));
        }
        Ok(())
    }

    /// Scatter fraction implied by the sweep and cavity model.
    pub fn model_scatter_fraction(&self) -> f64 {
        spectroscopy::scattered_fraction(&self.sweep, 0.5 * self.n_eff, self.g_eff, &self.cavity)
    }

    pub fn projection_var(&self) -> f64 {
        0.25 * self.n_eff
    }

    pub fn budget(&self) -> NoiseBudget {
        NoiseBudget::scaled(self.n_eff, self.readout_frac, self.classical_frac)
    }

    pub fn noise(&self) -> RotationNoiseModel {
        if self.rotation_noise_in_protocols {
            self.rotation_noise
        } else {
            RotationNoiseModel { phase_offsets: [0.0; 3], ..RotationNoiseModel::noiseless() }
        }
    }

    /// Full probe: swept readout, decoherence, conditioning and back-action.
    pub fn swept_probe(&self) -> ProbeModel {
        let sweep = SweepConfig { expected_n_up: 0.5 * self.n_eff, ..self.sweep };
        ProbeModel { readout: Readout::Swept { sweep, cavity: self.cavity, g_eff: self.g_eff }, ..self.ideal_readout_probe() }
    }

    /// Probe side effects of the full probe with a perfect readout.
    pub fn ideal_readout_probe(&self) -> ProbeModel {
        let p = self.projection_var();
        ProbeModel {
            readout: Readout::Ideal,
            photons: self.sweep.photons,
            scatter_fraction: self.scatter_fraction,
            k1: self.k1,
            k2: self.k2,
            raman_branch: self.raman_branch,
            q_total: self.q_total,
            // one readout of a population: twice the J_z-level noise
            conditioning_var: 2.0 * (self.readout_frac + self.classical_frac) * p,
            backaction: true,
            technical_phase_var: self.technical_phase_var,
        }
    }

    /// Variance of the Raman loss of one sweep.
    pub fn loss_var_per_sweep(&self) -> f64 {
        let n = math::round(self.sweep.photons * self.scatter_fraction);
        n * self.raman_branch * (1.0 - self.raman_branch)
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CollectiveSpinState> {
        spin::prepare_css(self.n_eff, -Vec3::Z, self.contrast_initial, rng)
    }
}

fn run<R: Rng + ?Sized>(
    phys: &Physics,
    seq: &PulseSequence,
    init: &CollectiveSpinState,
    probe: &ProbeModel,
    rng: &mut R,
) -> Result<(TrialRecord, CollectiveSpinState)> {
    sequence::run_sequence(seq, init, &phys.noise(), probe, rng)
}

fn label<'a>(rec: &'a TrialRecord, l: &str) -> &'a sequence::Measurement {
    rec.get(l).expect("label present in sequence")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezeTrial {
    pub jz1: f64,
    pub jz2: f64,
    /// Contrast after the first `J_z` measurement.
    pub contrast_f: f64,
    /// Variance of the azimuthal quadrature before the second measurement,
    /// in population units.
    pub v_y: f64,
    /// Smallest covariance determinant over the squared bound seen in the trial.
    pub min_uncertainty_ratio: f64,
    pub flagged: bool,
}

/// Two `J_z` measurements with an optional rotation `psi` in between.
pub fn squeeze_trial<R: Rng + ?Sized>(phys: &Physics, psi: f64, rng: &mut R) -> Result<SqueezeTrial> {
    let seq = sequence::backaction_sequence(psi);
    let init = phys.initial_state(rng)?;
    let (rec, _) = run(phys, &seq, &init, &phys.swept_probe(), rng)?;
    let c =
        Normal::new(0.0, math::sqrt(phys.classical_frac * phys.projection_var())).map_err(|_| invalid("bad classical noise"))?;
    let (u1, d1, d2, u2) = (label(&rec, "U1"), label(&rec, "D1"), label(&rec, "D2"), label(&rec, "U2"));
    let jz1 = 0.5 * (u1.n_up_measured - d1.n_up_measured) + c.sample(rng);
    let jz2 = 0.5 * (u2.n_up_measured - d2.n_up_measured) + c.sample(rng);
    let nc = d1.n_eff_after * d1.contrast_after;
    let min_ratio = rec.measurements.iter().map(|m| m.uncertainty_ratio).fold(f64::INFINITY, f64::min);
    Ok(SqueezeTrial {
        jz1,
        jz2,
        contrast_f: d1.contrast_after,
        v_y: 0.25 * nc * nc * d1.var_phi_after,
        min_uncertainty_ratio: min_ratio,
        flagged: rec.flagged || !jz1.is_finite() || !jz2.is_finite(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTrial {
    pub omega1: f64,
    pub omega2: f64,
    pub n1: f64,
    pub n2: f64,
    pub flagged: bool,
}

/// pi/2 followed by two readouts of the same population.
pub fn calibration_trial<R: Rng + ?Sized>(phys: &Physics, rng: &mut R) -> Result<CalibrationTrial> {
    let init = phys.initial_state(rng)?;
    let (rec, _) = run(phys, &sequence::calibration_sequence(), &init, &phys.swept_probe(), rng)?;
    let (a, b) = (label(&rec, "N1"), label(&rec, "N2"));
    Ok(CalibrationTrial {
        omega1: a.splitting,
        omega2: b.splitting,
        n1: a.n_up_measured,
        n2: b.n_up_measured,
        flagged: rec.flagged,
    })
}

/// `J_z` at the first readout of `seq` for `n_atoms`, with a perfect
/// readout and no probe side effects.
pub fn projection_trial<R: Rng + ?Sized>(phys: &Physics, seq: &PulseSequence, n_atoms: f64, rng: &mut R) -> Result<f64> {
    let init = spin::prepare_css(n_atoms, -Vec3::Z, phys.contrast_initial, rng)?;
    let (rec, _) = run(phys, seq, &init, &ProbeModel::ideal(), rng)?;
    let m = rec.measurements.first().ok_or_else(|| invalid("sequence has no measurement"))?;
    Ok(m.n_up_measured - 0.5 * n_atoms)
}

/// `Omega_up - Omega_down` for a fresh equatorial state read out perfectly.
pub fn splitting_difference_trial<R: Rng + ?Sized>(phys: &Physics, rng: &mut R) -> Result<f64> {
    let seq = PulseSequence::new(
        "up-down",
        alloc::vec![
            SequenceStep::pulse(PI / 2.0, 0.0, Some(1), None),
            SequenceStep::measure("up"),
            SequenceStep::pulse(PI, PI / 2.0, Some(2), None),
            SequenceStep::measure("down"),
        ],
    );
    let init = phys.initial_state(rng)?;
    let (rec, _) = run(phys, &seq, &init, &ProbeModel::ideal(), rng)?;
    let om = |n: f64| 2.0 * phys.g_eff * math::sqrt(n.max(0.0));
    Ok(om(label(&rec, "up").n_up_measured) - om(label(&rec, "down").n_up_measured))
}

/// Final up population of the fringe sequence after a total probe dose
/// `photons`, split evenly between the two middle readouts.
pub fn fringe_trial<R: Rng + ?Sized>(phys: &Physics, photons: f64, phase: f64, rng: &mut R) -> Result<f64> {
    let seq = sequence::fringe_sequence(0.5 * photons, phase);
    let init = phys.initial_state(rng)?;
    let probe = ProbeModel { backaction: false, conditioning_var: 0.0, ..phys.ideal_readout_probe() };
    let (rec, _) = run(phys, &seq, &init, &probe, rng)?;
    Ok(label(&rec, "Nfinal").n_up_measured)
}

/// Change of the second readout's `J_z` caused by scaling every pulse after
/// the first measurement by `1 + pi_error`, with back-action on; common
/// random numbers isolate the leaked part.
pub fn leakage_trial<R: Rng + ?Sized>(phys: &Physics, seq: &PulseSequence, pi_error: f64, rng: &mut R) -> Result<f64> {
    let mut biased = seq.clone();
    let first = seq.steps.iter().position(|s| matches!(s, SequenceStep::Measure { .. })).unwrap_or(0);
    for s in biased.steps.iter_mut().skip(first) {
        if let SequenceStep::Pulse(p) = s {
            p.rotation.psi *= 1.0 + pi_error;
        }
    }
    let seed: u64 = rng.random();
    let probe = phys.ideal_readout_probe();
    let last = |q: &PulseSequence| -> Result<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let init = phys.initial_state(&mut r)?;
        let (rec, _) = run(phys, q, &init, &probe, &mut r)?;
        Ok(rec.measurements.last().map(|m| m.jz_true).unwrap_or(0.0))
    };
    Ok(last(&biased)? - last(seq)?)
}
