//! Subcommand implementations. Each returns a [`RunOutput`]; writing files
//! is left to the caller.

use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt;

use vrsq_core::analysis::{self, WeightMode};
use vrsq_core::cavity::{self, CavityConfig};
use vrsq_core::decoherence;
use vrsq_core::experiment::{self, trial_rng, Physics};
use vrsq_core::math::{db, from_db, Vec3};
use vrsq_core::sequence::{self, AddedNoise, NoiseChannel, RotationNoiseModel};
use vrsq_core::spectroscopy;
use vrsq_core::stats;

use crate::config::RunConfig;
use crate::output::{Plot, RunOutput, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CalibrateGeometry,
    CalibrateCoupling,
    ProjectionScan,
    Squeeze,
    BackactionScan,
    ContrastScan,
    RotationNoise,
    SolveBudget,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::CalibrateGeometry,
        Command::CalibrateCoupling,
        Command::ProjectionScan,
        Command::Squeeze,
        Command::BackactionScan,
        Command::ContrastScan,
        Command::RotationNoise,
        Command::SolveBudget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::CalibrateGeometry => "calibrate-geometry",
            Command::CalibrateCoupling => "calibrate-coupling",
            Command::ProjectionScan => "projection-scan",
            Command::Squeeze => "squeeze",
            Command::BackactionScan => "backaction-scan",
            Command::ContrastScan => "contrast-scan",
            Command::RotationNoise => "rotation-noise",
            Command::SolveBudget => "solve-budget",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Debug)]
pub enum CommandError {
    Physics { context: String, source: vrsq_core::Error },
    ThreadPool(String),
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandError::Physics { context, source } => write!(f, "{context}: {source}"),
            CommandError::ThreadPool(m) => write!(f, "cannot start worker pool: {m}"),
        }
    }
}

impl std::error::Error for CommandError {}

trait Context<T> {
    fn ctx(self, context: &str) -> Result<T, CommandError>;
}

impl<T> Context<T> for vrsq_core::Result<T> {
    fn ctx(self, context: &str) -> Result<T, CommandError> {
        self.map_err(|source| CommandError::Physics { context: context.into(), source })
    }
}

type Outcome = Result<RunOutput, CommandError>;

// Stream ids: stage in the high 32 bits, scan point in the low.
const STAGE_COUPLING: u64 = 1;
const STAGE_PROJECTION: u64 = 2;
const STAGE_SPLITTING: u64 = 3;
const STAGE_SQUEEZE: u64 = 4;
const STAGE_CALIBRATION: u64 = 5;
const STAGE_BACKACTION: u64 = 6;
const STAGE_CONTRAST: u64 = 7;
const STAGE_ROTATION: u64 = 8;
const STAGE_LEAKAGE: u64 = 9;

fn stream(stage: u64, point: usize) -> u64 {
    (stage << 32) | point as u64
}

/// Run `f(trial)` for every trial on the current pool, results in trial order.
fn par_trials<T, F>(n: usize, f: F) -> vrsq_core::Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> vrsq_core::Result<T> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Run `cmd` on a pool of `cfg.run.threads` workers (0: all cores).
pub fn execute(cmd: Command, cfg: &RunConfig) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build()
        .map_err(|e| CommandError::ThreadPool(e.to_string()))?;
    pool.install(|| dispatch(cmd, cfg))
}

fn dispatch(cmd: Command, cfg: &RunConfig) -> Outcome {
    match cmd {
        Command::CalibrateGeometry => calibrate_geometry(cfg),
        Command::SolveBudget => solve_budget(cfg),
        Command::CalibrateCoupling => calibrate_coupling(cfg),
        _ => {
            let phys = cfg.physics().ctx("configuration")?;
            match cmd {
                Command::ProjectionScan => projection_scan(cfg, &phys),
                Command::Squeeze => squeeze(cfg, &phys),
                Command::BackactionScan => backaction_scan(cfg, &phys),
                Command::ContrastScan => contrast_scan(cfg, &phys),
                Command::RotationNoise => rotation_noise(cfg, &phys),
                _ => unreachable!(),
            }
        }
    }
}

fn calibrate_geometry(cfg: &RunConfig) -> Outcome {
    let c = &cfg.cavity;
    let geo = cavity::geometry_from_mode_spacings(c.fsr, c.spacing_01, c.lambda_probe).ctx("mode spacings")?;
    let cav = cfg.cavity().ctx("cavity")?;
    let fwhm = spectroscopy::dressed_modes(0.5 * cfg.atoms.n_eff, cfg.atoms.g_eff, 0.0, &cav).fwhm;
    let predicted_02 = (2.0 * c.spacing_01) % c.fsr;
    let consistent = cavity::second_spacing_consistent(c.fsr, c.spacing_01, c.spacing_02, 0.01 * c.spacing_02);

    let mut out = RunOutput::new("calibrate-geometry");
    let mut t = Table::new("geometry", &["quantity", "value", "unit"]);
    let rows: [(&str, f64, &str); 9] = [
        ("length", geo.length, "m"),
        ("mirror_radius", geo.mirror_radius, "m"),
        ("gouy_phase", geo.gouy_phase, "rad"),
        ("z_r", geo.z_r, "m"),
        ("w0", geo.w0, "m"),
        ("kappa", cav.kappa, "Hz"),
        ("dressed_fwhm", fwhm, "Hz"),
        ("spacing_02_predicted", predicted_02, "Hz"),
        ("spacing_02_measured", c.spacing_02, "Hz"),
    ];
    for (q, v, u) in rows {
        t.push(vec![q.into(), v.into(), u.into()]);
        out.note(q, v);
    }
    out.note("spacing_02_consistent", consistent);
    out.tables.push(t);
    Ok(out)
}

/// Axial-only coupling grid: an atom on axis at every probe phase near the
/// waist, evenly weighted.
pub fn axial_oracle(cav: &CavityConfig, points: usize) -> vrsq_core::Result<cavity::EffectiveParams> {
    let k = cav.k_probe();
    let g: Vec<f64> =
        (0..points).map(|j| cavity::mode_coupling(Vec3::new(0.0, 0.0, 2.0 * PI * j as f64 / (points as f64 * k)), cav)).collect();
    cavity::effective_params_weighted(&g, &vec![1.0; g.len()])
}

const COUPLING_BLOCK: usize = 10_000;

fn calibrate_coupling(cfg: &RunConfig) -> Outcome {
    let cav = cfg.cavity().ctx("cavity")?;
    let cloud = cfg.cloud();
    cloud.validate().ctx("cloud")?;
    let n = cfg.calibrate_coupling.samples;
    if n == 0 {
        return Err(vrsq_core::Error::InsufficientData { needed: 1, got: 0 }).ctx("calibrate_coupling.samples");
    }
    let blocks = n.div_ceil(COUPLING_BLOCK);
    let seed = cfg.run.seed;
    let couplings: Vec<Vec<f64>> = par_trials(blocks, |b| {
        let size = COUPLING_BLOCK.min(n - b as usize * COUPLING_BLOCK);
        let mut rng = trial_rng(seed, stream(STAGE_COUPLING, 0), b);
        let pos = cavity::sample_atom_positions(&cloud, &cav, size, &mut rng);
        Ok(pos.iter().map(|&p| cavity::mode_coupling(p, &cav)).collect())
    })
    .ctx("sampling")?;
    let g: Vec<f64> = couplings.into_iter().flatten().collect();
    let eff = cavity::effective_params_weighted(&g, &vec![1.0; g.len()]).ctx("moment matching")?;
    let axial = axial_oracle(&cav, 4096).ctx("axial grid")?;
    let axial_frac_err = (axial.n_eff_fraction - 2.0 / 3.0).abs();
    let axial_g_err = (axial.g_eff / (0.75f64.sqrt() * cav.g0_peak) - 1.0).abs();

    let mut out = RunOutput::new("calibrate-coupling");
    let mut t = Table::new("coupling", &["quantity", "value", "sigma"]);
    let frac_sigma = eff.mc_error * eff.n_eff_fraction;
    let two_g_sigma = 2.0 * eff.g_eff_error * eff.g_eff;
    t.push(vec!["n_eff_fraction".into(), eff.n_eff_fraction.into(), frac_sigma.into()]);
    t.push(vec!["two_g_eff_hz".into(), (2.0 * eff.g_eff).into(), two_g_sigma.into()]);
    t.push(vec!["n_eff".into(), (eff.n_eff_fraction * cloud.n_total).into(), (frac_sigma * cloud.n_total).into()]);
    t.push(vec!["axial_fraction".into(), axial.n_eff_fraction.into(), 0.0.into()]);
    t.push(vec!["axial_two_g_hz".into(), (2.0 * axial.g_eff).into(), 0.0.into()]);
    out.tables.push(t);
    out.note("samples", n);
    out.note("n_eff_fraction", eff.n_eff_fraction);
    out.note("n_eff_fraction_sigma", frac_sigma);
    out.note("two_g_eff_hz", 2.0 * eff.g_eff);
    out.note("two_g_eff_sigma_hz", two_g_sigma);
    out.note("n_eff", eff.n_eff_fraction * cloud.n_total);
    out.note("axial_fraction", axial.n_eff_fraction);
    out.note("axial_g_over_g0", axial.g_eff / cav.g0_peak);
    out.note("axial_fraction_abs_error", axial_frac_err);
    out.note("axial_g_rel_error", axial_g_err);
    Ok(out)
}

fn projection_scan(cfg: &RunConfig, phys: &Physics) -> Outcome {
    let run = &cfg.projection_scan;
    let seq = sequence::lookup(&run.sequence).ctx("projection_scan.sequence")?;
    let seed = cfg.run.seed;
    let mut variances = Vec::with_capacity(run.n.len());
    let mut out = RunOutput::new("projection-scan");
    let mut t = Table::new("projection_scan", &["n_atoms", "trials", "var_jz", "var_jz_sigma", "var_over_projection"]);
    for (i, &n) in run.n.iter().enumerate() {
        let jz = par_trials(run.trials, |k| {
            experiment::projection_trial(phys, &seq, n, &mut trial_rng(seed, stream(STAGE_PROJECTION, i), k))
        })
        .ctx("projection trial")?;
        let v = stats::variance(&jz);
        t.push(vec![
            n.into(),
            run.trials.into(),
            v.into(),
            stats::variance_std_error(v, run.trials).into(),
            (v / (0.25 * n)).into(),
        ]);
        variances.push(v);
    }
    let fit = analysis::projection_fit(&run.n, &variances, run.trials).ctx("projection fit")?;
    out.tables.push(t);

    let d = par_trials(run.trials, |k| {
        experiment::splitting_difference_trial(phys, &mut trial_rng(seed, stream(STAGE_SPLITTING, 0), k))
    })
    .ctx("splitting trial")?;
    let rms = stats::variance(&d).sqrt();
    let expected = 2f64.sqrt() * phys.g_eff;

    out.note("sequence", &run.sequence);
    out.note("trials", run.trials);
    out.note("fit_constant", fit.constant);
    out.note("fit_linear", fit.linear);
    out.note("fit_quadratic", fit.quadratic);
    out.note("linear_ratio", fit.ratio);
    out.note("linear_ratio_sigma", fit.ratio_sigma);
    out.note("splitting_diff_rms_hz", rms);
    out.note("splitting_diff_expected_hz", expected);
    out.note("splitting_diff_rel_error", rms / expected - 1.0);
    let pts: Vec<(f64, f64)> = run.n.iter().zip(&variances).map(|(&n, &v)| (n, v)).collect();
    let line: Vec<(f64, f64)> = run.n.iter().map(|&n| (n, 0.25 * n)).collect();
    out.plots.push(Plot {
        name: "projection_scan".into(),
        title: "Projection noise".into(),
        x_label: "atom number".into(),
        y_label: "Var(J_z)".into(),
        series: vec![("simulated".into(), pts, false), ("N/4".into(), line, true)],
    });
    Ok(out)
}

fn squeeze(cfg: &RunConfig, phys: &Physics) -> Outcome {
    let seed = cfg.run.seed;
    let trials = par_trials(cfg.squeeze.trials, |k| {
        experiment::squeeze_trial(phys, 0.0, &mut trial_rng(seed, stream(STAGE_SQUEEZE, 0), k))
    })
    .ctx("squeeze trial")?;
    let budget = phys.budget();
    let prior = cfg.budget.prior_mean;
    let mode = if cfg.budget.empirical_weight { WeightMode::Empirical } else { WeightMode::Model };

    let mut t = Table::new("squeeze_trials", &["trial", "jz1", "jz2", "jz1_estimate", "contrast_f", "flagged"]);
    for (k, s) in trials.iter().enumerate() {
        let est = analysis::bayes_estimate_with_prior(s.jz1, &budget, prior);
        t.push(vec![k.into(), s.jz1.into(), s.jz2.into(), est.into(), s.contrast_f.into(), s.flagged.into()]);
    }
    let kept: Vec<_> = trials.iter().filter(|s| !s.flagged).collect();
    let pairs: Vec<(f64, f64)> = kept.iter().map(|s| (s.jz1 - prior, s.jz2 - prior)).collect();
    let c_f = stats::mean(&kept.iter().map(|s| s.contrast_f).collect::<Vec<_>>());
    let rep = analysis::squeezing_report(&pairs, &budget, mode, phys.contrast_initial, c_f).ctx("squeezing report")?;
    let w_emp = analysis::empirical_weight(&pairs);

    let mut out = RunOutput::new("squeeze");
    let mut r = Table::new("squeeze_report", &["quantity", "value"]);
    let rows: [(&str, f64); 9] = [
        ("var_diff_db", rep.var_diff_db),
        ("var_cond_db", rep.var_cond_db),
        ("zeta_direct_db", rep.zeta_direct_db),
        ("zeta_inferred_db", rep.zeta_inferred_db),
        ("contrast_i", rep.contrast_i),
        ("contrast_f", rep.contrast_f),
        ("weight", rep.weight),
        ("weight_empirical", w_emp),
        ("kept_trials", rep.n_trials as f64),
    ];
    for (q, v) in rows {
        r.push(vec![q.into(), v.into()]);
        out.note(q, v);
    }
    out.note("flagged_trials", trials.len() - kept.len());
    out.note("weight_mode", if cfg.budget.empirical_weight { "empirical" } else { "model" });
    out.tables.push(t);
    out.tables.push(r);
    Ok(out)
}

fn backaction_scan(cfg: &RunConfig, phys: &Physics) -> Outcome {
    let run = &cfg.backaction_scan;
    if run.points < 2 {
        return Err(vrsq_core::Error::InsufficientData { needed: 2, got: run.points }).ctx("backaction_scan.points");
    }
    let seed = cfg.run.seed;
    let p = phys.projection_var();

    // repeated readout of one population calibrates m
    let cal = par_trials(run.calibration_trials, |k| {
        experiment::calibration_trial(phys, &mut trial_rng(seed, stream(STAGE_CALIBRATION, 0), k))
    })
    .ctx("calibration trial")?;
    let pairs: Vec<(f64, f64)> = cal.iter().filter(|c| !c.flagged).map(|c| (c.n1, c.n2)).collect();
    let m_cal = analysis::calibrate_from_populations(&pairs).ctx("readout calibration")?;
    let loss_var = phys.loss_var_per_sweep();
    let m = m_cal - 0.25 * loss_var;
    let c = phys.classical_frac * p;
    let noise = m + c;
    let w = p / (p + noise);

    let mut t = Table::new(
        "backaction_scan",
        &[
            "psi",
            "trials",
            "var_db",
            "var_sigma_db",
            "oracle_db",
            "min_uncertainty_db",
            "v_y_over_projection",
            "min_uncertainty_ratio",
        ],
    );
    let (mut solid, mut oracle_pts, mut dashed) = (Vec::new(), Vec::new(), Vec::new());
    let mut worst_z: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    let mut plateau = (f64::INFINITY, f64::NAN);
    for i in 0..run.points {
        let psi = PI * i as f64 / (run.points - 1) as f64;
        let tr = par_trials(run.trials, |k| {
            experiment::squeeze_trial(phys, psi, &mut trial_rng(seed, stream(STAGE_BACKACTION, i), k))
        })
        .ctx("back-action trial")?;
        let kept: Vec<_> = tr.iter().filter(|s| !s.flagged).collect();
        if kept.len() < 2 {
            return Err(vrsq_core::Error::InsufficientData { needed: 2, got: kept.len() })
                .ctx("back-action trials kept by the contrast cut");
        }
        let d: Vec<f64> = kept.iter().map(|s| s.jz2 - w * s.jz1).collect();
        let v = stats::variance(&d);
        let sv = stats::variance_std_error(v, d.len());
        let v_y = stats::mean(&kept.iter().map(|s| s.v_y).collect::<Vec<_>>());
        let ratio = kept.iter().map(|s| s.min_uncertainty_ratio).fold(f64::INFINITY, f64::min);
        let o = analysis::backaction_oracle(psi, p, w, v_y, noise, 0.5 * loss_var);
        let o_min = analysis::backaction_oracle(psi, p, w, v_y * phys.q_total, noise, 0.5 * loss_var);
        worst_z = worst_z.max((v - o).abs() / sv);
        min_ratio = min_ratio.min(ratio);
        if (psi - PI / 2.0).abs() < plateau.0 {
            plateau = ((psi - PI / 2.0).abs(), db(v / p));
        }
        let vdb = db(v / p);
        t.push(vec![
            psi.into(),
            d.len().into(),
            vdb.into(),
            (10.0 / std::f64::consts::LN_10 * sv / v).into(),
            db(o / p).into(),
            db(o_min / p).into(),
            (v_y / p).into(),
            ratio.into(),
        ]);
        solid.push((psi, vdb));
        oracle_pts.push((psi, db(o / p)));
        dashed.push((psi, db(o_min / p)));
    }

    let mut out = RunOutput::new("backaction-scan");
    out.tables.push(t);
    out.note("readout_var_calibrated_over_projection", m_cal / p);
    out.note("readout_var_over_projection", m / p);
    out.note("weight", w);
    out.note("plateau_db", plateau.1);
    out.note("max_oracle_deviation_sigma", worst_z);
    out.note("min_uncertainty_ratio", min_ratio);
    out.plots.push(Plot {
        name: "backaction_scan".into(),
        title: "Back-action vs rotation angle".into(),
        x_label: "psi (rad)".into(),
        y_label: "Var(J_z2 - w J_z1) / (N/4) (dB)".into(),
        series: vec![
            ("simulated".into(), solid, false),
            ("quadrature model".into(), oracle_pts, false),
            ("minimum uncertainty".into(), dashed, true),
        ],
    });
    Ok(out)
}

fn contrast_scan(cfg: &RunConfig, phys: &Physics) -> Outcome {
    let run = &cfg.contrast_scan;
    if run.points < 4 || run.phases < 3 {
        return Err(vrsq_core::Error::InsufficientData { needed: 4, got: run.points.min(run.phases) }).ctx("contrast_scan grid");
    }
    let seed = cfg.run.seed;
    let phases: Vec<f64> = (0..run.phases).map(|j| 2.0 * PI * j as f64 / run.phases as f64).collect();
    let mut fringes = Table::new("contrast_fringes", &["photons", "phase", "n_up"]);
    let mut scan = Table::new("contrast_scan", &["photons", "contrast", "model_contrast"]);
    let mut pts = Vec::with_capacity(run.points);
    for i in 0..run.points {
        let m = run.max_photons * i as f64 / (run.points - 1) as f64;
        let n_up = par_trials(run.phases, |j| {
            experiment::fringe_trial(phys, m, phases[j as usize], &mut trial_rng(seed, stream(STAGE_CONTRAST, i), j))
        })
        .ctx("fringe trial")?;
        for (ph, n) in phases.iter().zip(&n_up) {
            fringes.push(vec![m.into(), (*ph).into(), (*n).into()]);
        }
        let (_, c) = analysis::fringe_contrast(&phases, &n_up).ctx("fringe fit")?;
        let model = decoherence::contrast_after(phys.contrast_initial, phys.k1, phys.k2, m);
        scan.push(vec![m.into(), c.into(), model.into()]);
        pts.push((m, c));
    }
    let fit = analysis::contrast_fit(&pts).ctx("contrast fit")?;
    let frac = phys.model_scatter_fraction();
    let k1_pred = decoherence::predict_k1(phys.n_eff, frac).ctx("k1 prediction")?;

    let mut out = RunOutput::new("contrast-scan");
    out.tables.push(scan);
    out.tables.push(fringes);
    out.note("c_i", fit.c_i);
    out.note("k1", fit.k1);
    out.note("k1_sigma", fit.sigma_k1);
    out.note("k2", fit.k2);
    out.note("k2_sigma", fit.sigma_k2);
    out.note("model_scatter_fraction", frac);
    out.note("predicted_k1", k1_pred);
    let curve: Vec<(f64, f64)> = pts.iter().map(|&(m, _)| (m, fit.c_i - fit.k1 * m - fit.k2 * m * m)).collect();
    out.plots.push(Plot {
        name: "contrast_scan".into(),
        title: "Contrast vs probe photons".into(),
        x_label: "probe photons".into(),
        y_label: "contrast".into(),
        series: vec![("simulated".into(), pts, false), ("quadratic fit".into(), curve, true)],
    });
    Ok(out)
}

fn mc_rms(
    seq: &sequence::PulseSequence,
    noise: &RotationNoiseModel,
    trials: usize,
    seed: u64,
    point: usize,
) -> vrsq_core::Result<f64> {
    let s = par_trials(trials, |k| {
        let v = sequence::mc_added_noise_samples(seq, noise, 1, &mut trial_rng(seed, stream(STAGE_ROTATION, point), k))?;
        Ok(v[0])
    })?;
    Ok(stats::rms(&s))
}

fn rotation_noise(cfg: &RunConfig, phys: &Physics) -> Outcome {
    let run = &cfg.rotation_noise_run;
    if run.trials < 1000 {
        return Err(vrsq_core::Error::InsufficientData { needed: 1000, got: run.trials }).ctx("rotation_noise_run.trials");
    }
    let seed = cfg.run.seed;
    let noise = phys.rotation_noise;
    let n_ref = phys.n_eff;
    let mut t =
        Table::new("rotation_noise", &["sequence", "channel", "analytic_rms", "mc_rms", "analytic_db", "mc_db", "rel_diff"]);
    let mut out = RunOutput::new("rotation-noise");
    let mut point = 0;
    for name in sequence::ROTATION_TABLE {
        let seq = sequence::lookup(name).ctx(name)?;
        let an = sequence::analytic_added_noise(&seq, &noise).ctx(name)?;
        let mut row = |label: &str, a: f64, model: &RotationNoiseModel, point: usize| -> Result<(), CommandError> {
            let m = mc_rms(&seq, model, run.trials, seed, point).ctx(name)?;
            let rel = if a > 0.0 { m / a - 1.0 } else { f64::NAN };
            t.push(vec![
                name.into(),
                label.into(),
                a.into(),
                m.into(),
                AddedNoise::db(a, n_ref).into(),
                AddedNoise::db(m, n_ref).into(),
                rel.into(),
            ]);
            Ok(())
        };
        for ch in NoiseChannel::ALL {
            row(ch.name(), an.channel(ch), &noise.only(ch), point)?;
            point += 1;
        }
        row("total", an.total, &noise, point)?;
        point += 1;
        out.note(&format!("{name}_total_db"), AddedNoise::db(an.total, n_ref));
    }
    out.tables.push(t);

    let p = phys.projection_var();
    let mut leak = Table::new("leakage", &["sequence", "pi_error", "trials", "leak_var_over_projection", "leak_db"]);
    for (i, name) in [sequence::TABLE2_A, sequence::TABLE2_B].into_iter().enumerate() {
        let seq = sequence::lookup(name).ctx(name)?;
        let d = par_trials(run.leakage_trials, |k| {
            experiment::leakage_trial(phys, &seq, run.leakage_error, &mut trial_rng(seed, stream(STAGE_LEAKAGE, i), k))
        })
        .ctx("leakage trial")?;
        // a pi-length error also shifts the mean; only the spread is leaked noise
        let r = stats::variance(&d) / p;
        leak.push(vec![name.into(), run.leakage_error.into(), run.leakage_trials.into(), r.into(), db(r).into()]);
        out.note(&format!("{name}_leakage_db"), db(r));
    }
    out.tables.push(leak);
    Ok(out)
}

fn solve_budget(cfg: &RunConfig) -> Outcome {
    let b = &cfg.solve_budget;
    let nb = analysis::solve_budget(from_db(b.var_diff_db), from_db(b.var_cond_db)).ctx("budget closure")?;
    let mut out = RunOutput::new("solve-budget");
    let mut t =
        Table::new("budget", &["var_diff_db", "var_cond_db", "readout_frac", "classical_frac", "weight", "check_var_diff_db"]);
    let check = db(nb.predicted_var_diff());
    t.push(vec![
        b.var_diff_db.into(),
        b.var_cond_db.into(),
        nb.readout_var.into(),
        nb.classical_var.into(),
        nb.weight().into(),
        check.into(),
    ]);
    out.tables.push(t);
    out.note("readout_frac", nb.readout_var);
    out.note("classical_frac", nb.classical_var);
    out.note("weight", nb.weight());
    out.note("check_var_diff_db", check);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Command::ALL {
            assert_eq!(Command::from_name(c.name()), Some(c));
        }
        assert_eq!(Command::from_name("nope"), None);
    }

    #[test]
    fn axial_grid_matches_closed_form() {
        let cav = RunConfig::default().cavity().unwrap();
        let a = axial_oracle(&cav, 4096).unwrap();
        assert!((a.n_eff_fraction - 2.0 / 3.0).abs() < 1e-3);
        assert!((a.g_eff / (0.75f64.sqrt() * cav.g0_peak) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn budget_closure_recovers_defaults() {
        let out = execute(Command::SolveBudget, &RunConfig::default()).unwrap();
        assert!((out.number("readout_frac").unwrap() - 0.226).abs() < 2e-3);
        assert!((out.number("classical_frac").unwrap() - 0.086).abs() < 2e-3);
    }

    #[test]
    fn stream_ids_do_not_collide() {
        assert_ne!(stream(STAGE_SQUEEZE, 0), stream(STAGE_BACKACTION, 0));
        assert_ne!(stream(STAGE_CONTRAST, 1), stream(STAGE_CONTRAST, 2));
    }
}
