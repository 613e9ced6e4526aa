use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vrsq_core::cavity::{self, CavityConfig};
use vrsq_core::decoherence::{self, ProbeImpact};
use vrsq_core::math::{self, Vec3, PI};
use vrsq_core::sequence::{self, NoiseChannel, RotationNoiseModel};
use vrsq_core::spectroscopy::{self, SweepConfig};
use vrsq_core::spin::{self, CollectiveSpinState, Rotation};
use vrsq_core::{analysis, fit, stats};

fn cavity() -> CavityConfig {
    CavityConfig::from_spacing(7.828e9, 2257e6, 710.0, 795e-9, 823e-9, 303.5e3, 5.75e6).unwrap()
}

fn state(n: f64, lat: f64, az: f64, c: f64, dt: f64, dp: f64) -> CollectiveSpinState {
    let mut s = CollectiveSpinState::coherent(n, Vec3::from_lat_az(lat, az), c).unwrap();
    s.set_local(dt, dp);
    s
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn same_state(a: &CollectiveSpinState, b: &CollectiveSpinState, tol: f64) -> bool {
    let (ca, cb) = (a.local_cov(), b.local_cov());
    let cov_scale = ca.0.abs().max(ca.1.abs());
    (a.mean_dir - b.mean_dir).norm() < tol
        && (a.fluct_theta() - b.fluct_theta()).abs() < tol
        && (a.fluct_phi() - b.fluct_phi()).abs() < tol
        && (ca.0 - cb.0).abs() < tol * cov_scale
        && (ca.1 - cb.1).abs() < tol * cov_scale
        && (ca.2 - cb.2).abs() < tol * cov_scale
}

prop_compose! {
    fn any_state()(n in 1e3..1e7f64, lat in -1.4..1.4f64, az in -PI..PI, c in 0.1..1.0f64,
                   dt in -1e-3..1e-3f64, dp in -1e-3..1e-3f64) -> CollectiveSpinState {
        state(n, lat, az, c, dt, dp)
    }
}

prop_compose! {
    fn any_rotation()(psi in -2.0 * PI..2.0 * PI, phi in -PI..PI, theta in -1.5..1.5f64) -> Rotation {
        Rotation::new(psi, phi, theta)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn coaxial_rotations_compose(s in any_state(), r1 in any_rotation(), psi2 in -2.0 * PI..2.0 * PI) {
        let r2 = Rotation { psi: psi2, ..r1 };
        let two = spin::rotate(&spin::rotate(&s, &r1), &r2);
        let one = spin::rotate(&s, &r1.compose_coaxial(&r2));
        prop_assert!(same_state(&two, &one, 1e-10));
    }

    #[test]
    fn inverse_and_zero_rotation_are_identity(s in any_state(), r in any_rotation()) {
        let back = spin::rotate(&spin::rotate(&s, &r), &r.inverse());
        prop_assert!(same_state(&back, &s, 1e-10));
        let none = spin::rotate(&s, &Rotation { psi: 0.0, ..r });
        prop_assert!(same_state(&none, &s, 1e-12));
    }

    #[test]
    fn rotations_keep_unit_direction_and_bound(s in any_state(), rs in prop::collection::vec(any_rotation(), 1..6)) {
        let mut t = s.clone();
        for r in &rs {
            t = spin::rotate(&t, r);
            prop_assert!((t.mean_dir.norm() - 1.0).abs() < 1e-12);
            prop_assert!(t.satisfies_uncertainty(1e-9));
            prop_assert!(close(t.uncertainty_product(), s.uncertainty_product(), 1e-9));
        }
    }

    #[test]
    fn probing_never_lowers_uncertainty_product(
        n in 1e4..1e7f64, c in 0.2..1.0f64, excess in 1.0..3.0f64, shrink in 0.01..1.0f64,
        q in 0.01..1.0f64, seed in any::<u64>()
    ) {
        let mut s = state(n, 0.0, 0.3, c, 0.0, 0.0);
        let b = s.heisenberg_bound();
        s.set_local_cov(b * excess, b, 0.0);
        let (vt0, vp0) = (s.var_theta(), s.var_phi());
        let mut m = s.clone();
        // readout noise that leaves a fraction `shrink` of var_theta
        m.condition_theta(vt0 * shrink / (1.0 - shrink).max(1e-12));
        let f = m.var_theta() / vt0;
        let (k, _) = decoherence::backaction_kick(&m, 1e5, q, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let floor = s.uncertainty_product().min(b * b / q);
        prop_assert!(k.uncertainty_product() >= floor * (1.0 - 1e-9));
        prop_assert!(k.satisfies_uncertainty(1e-9));
        if excess * q <= 1.0 {
            prop_assert!(k.uncertainty_product() >= s.uncertainty_product() * (1.0 - 1e-9));
            prop_assert!(k.var_phi() >= vp0 / f * (1.0 - 1e-9));
        }
    }

    #[test]
    fn contrast_never_grows(c in 0.05..1.0f64, m in 0.0..2e6f64, prior in 0.0..5e5f64,
                            k1 in 0.0..1e-6f64, k2 in 0.0..1e-11f64, seed in any::<u64>()) {
        let mut s = state(7e5, 0.0, 0.0, c, 0.0, 0.0);
        s.probe_dose = prior;
        let imp = ProbeImpact::new(m, 0.3, k1, k2, 0.5);
        let (t, _) = decoherence::apply_probe_decoherence(&s, &imp, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(t.contrast <= s.contrast + 1e-15);
        prop_assert!(t.contrast >= 0.0);
    }

    #[test]
    fn two_valued_moments_match_closed_form(ga in 1e3..1e6f64, gb in 1e3..1e6f64, p in 0.01..0.99f64) {
        let e = cavity::effective_params_weighted(&[ga, gb], &[p, 1.0 - p]).unwrap();
        let a = p * ga * ga + (1.0 - p) * gb * gb;
        let b = p * ga.powi(4) + (1.0 - p) * gb.powi(4);
        prop_assert!(close(e.n_eff_fraction, a * a / b, 1e-10));
        prop_assert!(close(e.g_eff, (b / a).sqrt(), 1e-10));
        prop_assert!(e.n_eff_fraction <= 1.0 + 1e-12);
    }

    #[test]
    fn db_round_trip(r in 1e-8..1e8f64) {
        prop_assert!(close(math::from_db(math::db(r)), r, 1e-12));
    }

    #[test]
    fn solved_budget_closes(vd in 0.3..0.9f64, frac in 0.3..0.7f64) {
        let vc = vd * frac;
        if let Ok(b) = analysis::solve_budget(vd, vc) {
            let t = b.total();
            prop_assert!(close(t - 1.0 / t, vd, 1e-10));
            prop_assert!(close(vd - b.readout_var, vc, 1e-10));
        }
    }

    #[test]
    fn polyfit_ignores_point_order(
        pts in prop::collection::vec((-10.0..10.0f64, -5.0..5.0f64, 0.1..2.0f64), 6..20)
            .prop_flat_map(|v| { let n = v.len(); (Just(v.clone()), Just(v).prop_shuffle(), Just(n)) })
    ) {
        let (a, b, _) = pts;
        let unzip = |v: &[(f64, f64, f64)]| {
            (v.iter().map(|p| p.0).collect::<Vec<_>>(), v.iter().map(|p| p.1).collect::<Vec<_>>(), v.iter().map(|p| p.2).collect::<Vec<_>>())
        };
        let (xa, ya, wa) = unzip(&a);
        let (xb, yb, wb) = unzip(&b);
        let (fa, fb) = (fit::polyfit(&xa, &ya, &wa, 2), fit::polyfit(&xb, &yb, &wb, 2));
        if let (Ok(fa), Ok(fb)) = (fa, fb) {
            for i in 0..3 {
                prop_assert!(close(fa.params[i], fb.params[i], 1e-9));
            }
            prop_assert!(close(fa.chi2, fb.chi2, 1e-9));
        }
    }

    #[test]
    fn loss_fractions_sum_to_one(f in -30e6..30e6f64, n_up in 0.0..1e6f64, det in -5e6..5e6f64) {
        let (a, c) = spectroscopy::loss_partition(f, n_up, 253.6e3, det, &cavity());
        prop_assert!((a + c - 1.0).abs() < 1e-9);
        prop_assert!(a >= 0.0 && c >= 0.0);
    }
}

#[test]
fn splitting_is_quadratic_in_detuning() {
    let cfg = cavity();
    let n_up = 3.5e5;
    let om = spectroscopy::collective_splitting(n_up, 253.6e3);
    for r in [0.01, 0.05, 0.1] {
        let d = r * om;
        let shift = spectroscopy::dressed_modes(n_up, 253.6e3, d, &cfg).splitting() - om;
        let want = d * d / (2.0 * om);
        assert!((shift / want - 1.0).abs() < r * r, "{r}: {shift} vs {want}");
    }
}

#[test]
fn css_quadratures_are_isotropic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for _ in 0..20000 {
        let s = spin::prepare_css(7e5, Vec3::X, 0.97, &mut rng).unwrap();
        t.push(s.fluct_theta());
        p.push(s.fluct_phi());
    }
    let (vt, vp) = (stats::variance(&t), stats::variance(&p));
    let se = stats::variance_std_error(vt, t.len()) * 2f64.sqrt();
    assert!((vt - vp).abs() < 3.0 * se, "{vt} {vp}");
}

fn sweep(photons: f64) -> SweepConfig {
    SweepConfig {
        span: 16e6,
        duration: 71e-6,
        photons,
        detection_efficiency: 0.36,
        points: 64,
        detuning_ac: 0.0,
        expected_n_up: 3.5e5,
    }
}

fn fitted(photons: f64, n: usize, seed: u64) -> (f64, f64) {
    let cfg = cavity();
    let sw = sweep(photons);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut om, mut sig) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let tr = spectroscopy::synthesize_sweep(3.5e5, 253.6e3, &sw, &cfg, &mut rng);
        let f = spectroscopy::fit_splitting(&tr).unwrap();
        assert!(f.converged);
        om.push(f.splitting);
        sig.push(f.sigma_splitting);
    }
    (stats::variance(&om).sqrt(), stats::mean(&sig))
}

#[test]
fn reported_splitting_error_is_calibrated() {
    let (scatter, reported) = fitted(0.95e5, 2000, 21);
    assert!((scatter / reported - 1.0).abs() < 0.15, "{scatter} vs {reported}");
}

#[test]
fn splitting_error_scales_as_inverse_root_photons() {
    let (lo, _) = fitted(3e4, 2000, 22);
    let (hi, _) = fitted(3e5, 2000, 23);
    let r = lo / hi;
    assert!((r / 10f64.sqrt() - 1.0).abs() < 0.10, "ratio {r}");
}

#[test]
fn raman_loss_is_binomial() {
    let p_r = 0.3;
    let imp = ProbeImpact::new(1e4, 0.35, 0.0, 0.0, p_r);
    let n = imp.scattered;
    let s = state(7e5, 0.0, 0.0, 0.97, 0.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let lost: Vec<f64> = (0..10000).map(|_| s.n_eff - decoherence::apply_probe_decoherence(&s, &imp, &mut rng).0.n_eff).collect();
    let (m, v) = (stats::mean(&lost), stats::variance(&lost));
    let (em, ev) = (n * p_r, n * p_r * (1.0 - p_r));
    let k = lost.len();
    assert!((m - em).abs() < 3.0 * (ev / k as f64).sqrt(), "mean {m} vs {em}");
    assert!((v - ev).abs() < 3.0 * stats::variance_std_error(ev, k), "var {v} vs {ev}");
}

#[test]
fn channels_add_in_quadrature() {
    let noise = RotationNoiseModel::default();
    for seq in sequence::standard_sequences().into_iter().filter(|s| sequence::ROTATION_TABLE.contains(&s.name.as_str())) {
        let var = |n: &RotationNoiseModel, seed: u64| {
            let x = sequence::mc_added_noise_samples(&seq, n, 20000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
        };
        let total = var(&noise, 41);
        let sum: f64 = NoiseChannel::ALL.iter().enumerate().map(|(i, &c)| var(&noise.only(c), 50 + i as u64)).sum();
        assert!((total / sum - 1.0).abs() < 0.15, "{}: {total} vs {sum}", seq.name);
    }
}

#[test]
fn echo_rows_are_quadratic_in_slow_detuning() {
    for name in [sequence::TABLE1_ROW3, sequence::TABLE1_ROW4] {
        let seq = sequence::lookup(name).unwrap();
        let rms = |d: f64| {
            let n = RotationNoiseModel { detuning_slow_rms: d, ..RotationNoiseModel::noiseless() };
            sequence::mc_added_noise(&seq, &n, 20000, &mut ChaCha8Rng::seed_from_u64(61)).unwrap()
        };
        let (a, b) = (rms(500.0), rms(1000.0));
        assert!((b / a / 4.0 - 1.0).abs() < 0.10, "{name}: {a} {b}");
    }
}
