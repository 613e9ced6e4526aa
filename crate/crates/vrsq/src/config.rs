//! Run configuration: TOML sections with defaults, `--set` overrides and
//! conversion to the core model types.

use serde::{Deserialize, Serialize};
use std::fmt;
use vrsq_core::analysis::NoiseBudget;
use vrsq_core::cavity::{AtomCloud, CavityConfig};
use vrsq_core::experiment::Physics;
use vrsq_core::sequence::RotationNoiseModel;
use vrsq_core::spectroscopy::SweepConfig;

/// The shipped default configuration, with provenance comments.
pub const DEFAULT_TOML: &str = include_str!("../config/default.toml");

#[derive(Debug)]
pub enum ConfigError {
    /// Malformed file; `line` is 1-based when known.
    Parse { line: Option<usize>, message: String },
    /// A `--set` override that names no field or carries a bad value.
    Override(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse { line: Some(l), message } => write!(f, "line {l}: {message}"),
            ConfigError::Parse { line: None, message } => write!(f, "{message}"),
            ConfigError::Override(m) => write!(f, "--set: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub output_dir: String,
    pub svg: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 42, threads: 0, output_dir: "vrsq-out".into(), svg: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavitySection {
    pub fsr: f64,
    pub spacing_01: f64,
    pub spacing_02: f64,
    pub finesse: f64,
    pub lambda_probe: f64,
    pub lambda_lattice: f64,
    pub g0_peak: f64,
    pub gamma_atom: f64,
}

impl Default for CavitySection {
    fn default() -> Self {
        CavitySection {
            fsr: 7.828e9,
            spacing_01: 2257e6,
            spacing_02: 4515e6,
            finesse: 710.0,
            lambda_probe: 795e-9,
            lambda_lattice: 823e-9,
            g0_peak: 303.5e3,
            gamma_atom: 5.75e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSection {
    pub n_total: f64,
    pub sigma_z: f64,
    pub x_rms: f64,
    pub y_rms: f64,
    pub z_site_rms: f64,
    pub temp_radial: f64,
    pub trap_depth: f64,
    pub center_offset: f64,
}

impl Default for CloudSection {
    fn default() -> Self {
        CloudSection {
            n_total: 1.05e6,
            sigma_z: 0.84e-3,
            x_rms: 10e-6,
            y_rms: 10e-6,
            z_site_rms: 24e-9,
            temp_radial: 25e-6,
            trap_depth: 7.4e6,
            center_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomsSection {
    pub n_eff: f64,
    pub g_eff: f64,
    pub contrast_initial: f64,
}

impl Default for AtomsSection {
    fn default() -> Self {
        AtomsSection { n_eff: 7e5, g_eff: 253.6e3, contrast_initial: 0.97 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub span: f64,
    pub duration: f64,
    pub photons: f64,
    pub detection_efficiency: f64,
    pub points: usize,
    pub detuning_ac: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { span: 16e6, duration: 71e-6, photons: 0.95e5, detection_efficiency: 0.36, points: 64, detuning_ac: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub k1: f64,
    pub k2: f64,
    pub raman_branch: f64,
    pub scatter_fraction: f64,
    pub q_total: f64,
    pub technical_phase_var: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            k1: 5.5e-7,
            k2: 1.0e-12,
            raman_branch: 0.5,
            scatter_fraction: 0.343,
            q_total: 0.0193,
            technical_phase_var: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    /// Readout noise `m` of one `J_z` measurement, in units of `N/4`.
    pub readout_frac: f64,
    /// Technical noise `c` of one `J_z` measurement, in units of `N/4`.
    pub classical_frac: f64,
    pub prior_mean: f64,
    pub empirical_weight: bool,
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection { readout_frac: 0.226, classical_frac: 0.086, prior_mean: 0.0, empirical_weight: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationNoiseSection {
    pub eps_common_rms: f64,
    pub eps_diff_rms: f64,
    pub phase_jitter_rms: f64,
    pub detuning_slow_rms: f64,
    pub detuning_fast_rms: f64,
    pub rabi_frequency: f64,
    pub phase_offsets: [f64; 3],
    /// Also apply this model inside the measurement protocols.
    pub in_protocols: bool,
}

impl Default for RotationNoiseSection {
    fn default() -> Self {
        let m = RotationNoiseModel::default();
        RotationNoiseSection {
            eps_common_rms: m.eps_common_rms,
            eps_diff_rms: m.eps_diff_rms,
            phase_jitter_rms: m.phase_jitter_rms,
            detuning_slow_rms: m.detuning_slow_rms,
            detuning_fast_rms: m.detuning_fast_rms,
            rabi_frequency: m.rabi_frequency,
            phase_offsets: m.phase_offsets,
            in_protocols: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingRun {
    pub samples: usize,
}

impl Default for CouplingRun {
    fn default() -> Self {
        CouplingRun { samples: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionRun {
    pub n: Vec<f64>,
    pub trials: usize,
    pub sequence: String,
}

impl Default for ProjectionRun {
    fn default() -> Self {
        ProjectionRun { n: vec![1e4, 1e5, 7e5], trials: 10_000, sequence: "table2-a".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqueezeRun {
    pub trials: usize,
}

impl Default for SqueezeRun {
    fn default() -> Self {
        SqueezeRun { trials: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackactionRun {
    pub points: usize,
    pub trials: usize,
    /// Calibration trials used to measure the readout noise for the oracle.
    pub calibration_trials: usize,
}

impl Default for BackactionRun {
    fn default() -> Self {
        BackactionRun { points: 13, trials: 1000, calibration_trials: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastRun {
    pub max_photons: f64,
    pub points: usize,
    pub phases: usize,
}

impl Default for ContrastRun {
    fn default() -> Self {
        ContrastRun { max_photons: 6e5, points: 13, phases: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationRun {
    pub trials: usize,
    /// Deliberate pi-pulse length error for the leakage check.
    pub leakage_error: f64,
    pub leakage_trials: usize,
}

impl Default for RotationRun {
    fn default() -> Self {
        RotationRun { trials: 20_000, leakage_error: 0.01, leakage_trials: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetRun {
    pub var_diff_db: f64,
    pub var_cond_db: f64,
}

impl Default for BudgetRun {
    fn default() -> Self {
        BudgetRun { var_diff_db: -2.6, var_cond_db: -4.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub cavity: CavitySection,
    pub cloud: CloudSection,
    pub atoms: AtomsSection,
    pub sweep: SweepSection,
    pub probe: ProbeSection,
    pub budget: BudgetSection,
    pub rotation_noise: RotationNoiseSection,
    pub calibrate_coupling: CouplingRun,
    pub projection_scan: ProjectionRun,
    pub squeeze: SqueezeRun,
    pub backaction_scan: BackactionRun,
    pub contrast_scan: ContrastRun,
    pub rotation_noise_run: RotationRun,
    pub solve_budget: BudgetRun,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `section.key=value`; the value is read as a TOML literal and
    /// falls back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) =
            assignment.split_once('=').ok_or_else(|| ConfigError::Override(format!("expected key=value, got `{assignment}`")))?;
        let key = key.trim();
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| ConfigError::Override(format!("unknown key `{key}`")))?;
        }
        if slot.is_table() {
            return Err(ConfigError::Override(format!("`{key}` is a section, not a value")));
        }
        let mut value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        // integers written for float fields
        match (&*slot, &value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => value = toml::Value::Float(*i as f64),
            (toml::Value::Array(a), toml::Value::Array(b)) if a.iter().all(|v| v.is_float()) => {
                value = toml::Value::Array(
                    b.iter().map(|v| v.as_integer().map(|i| toml::Value::Float(i as f64)).unwrap_or_else(|| v.clone())).collect(),
                )
            }
            _ => {}
        }
        *slot = value;
        *self =
            root.try_into().map_err(|e: toml::de::Error| ConfigError::Override(format!("`{key}`: {}", e.message().trim())))?;
        Ok(())
    }

    pub fn cavity(&self) -> vrsq_core::Result<CavityConfig> {
        let c = &self.cavity;
        CavityConfig::from_spacing(c.fsr, c.spacing_01, c.finesse, c.lambda_probe, c.lambda_lattice, c.g0_peak, c.gamma_atom)
    }

    pub fn cloud(&self) -> AtomCloud {
        let c = &self.cloud;
        AtomCloud {
            n_total: c.n_total,
            sigma_z: c.sigma_z,
            x_rms: c.x_rms,
            y_rms: c.y_rms,
            z_site_rms: c.z_site_rms,
            temp_radial: c.temp_radial,
            trap_depth: c.trap_depth,
            center_offset: c.center_offset,
        }
    }

    pub fn rotation_noise(&self) -> RotationNoiseModel {
        let r = &self.rotation_noise;
        RotationNoiseModel {
            eps_common_rms: r.eps_common_rms,
            eps_diff_rms: r.eps_diff_rms,
            phase_jitter_rms: r.phase_jitter_rms,
            detuning_slow_rms: r.detuning_slow_rms,
            detuning_fast_rms: r.detuning_fast_rms,
            rabi_frequency: r.rabi_frequency,
            phase_offsets: r.phase_offsets,
        }
    }

    pub fn budget(&self) -> NoiseBudget {
        NoiseBudget::scaled(self.atoms.n_eff, self.budget.readout_frac, self.budget.classical_frac)
    }

    pub fn physics(&self) -> vrsq_core::Result<Physics> {
        let s = &self.sweep;
        let p = &self.probe;
        let phys = Physics {
            cavity: self.cavity()?,
            g_eff: self.atoms.g_eff,
            n_eff: self.atoms.n_eff,
            contrast_initial: self.atoms.contrast_initial,
            sweep: SweepConfig {
                span: s.span,
                duration: s.duration,
                photons: s.photons,
                detection_efficiency: s.detection_efficiency,
                points: s.points,
                detuning_ac: s.detuning_ac,
                expected_n_up: 0.5 * self.atoms.n_eff,
            },
            k1: p.k1,
            k2: p.k2,
            raman_branch: p.raman_branch,
            scatter_fraction: p.scatter_fraction,
            q_total: p.q_total,
            technical_phase_var: p.technical_phase_var,
            readout_frac: self.budget.readout_frac,
            classical_frac: self.budget.classical_frac,
            rotation_noise: self.rotation_noise(),
            rotation_noise_in_protocols: self.rotation_noise.in_protocols,
        };
        phys.validate()?;
        Ok(phys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_code_defaults() {
        let parsed = RunConfig::from_toml(DEFAULT_TOML).unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn defaults_match_core_physics() {
        assert_eq!(RunConfig::default().physics().unwrap(), Physics::default());
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "[run]\nseed = 1\n\n[atoms]\nn_eff = \"many\"\n";
        match RunConfig::from_toml(text) {
            Err(ConfigError::Parse { line: Some(5), .. }) => {}
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml("[atoms]\nbogus = 1\n") {
            Err(ConfigError::Parse { line: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.set("squeeze.trials=500").unwrap();
        c.set("atoms.n_eff=100000").unwrap();
        c.set("projection_scan.n=[1e4, 20000]").unwrap();
        c.set("projection_scan.sequence=table2-b").unwrap();
        assert_eq!(c.squeeze.trials, 500);
        assert_eq!(c.atoms.n_eff, 1e5);
        assert_eq!(c.projection_scan.n, vec![1e4, 2e4]);
        assert_eq!(c.projection_scan.sequence, "table2-b");
        assert!(c.set("atoms.nope=1").is_err());
        assert!(c.set("atoms=1").is_err());
        assert!(c.set("squeeze.trials=lots").is_err());
        assert!(c.set("no_equals_sign").is_err());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
