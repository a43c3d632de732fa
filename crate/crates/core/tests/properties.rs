use std::f64::consts::{FRAC_PI_2, PI};

use mmpos_core::array::{coupling_matrix, perturb_spacing, ArrayModel, CouplingSpec};
use mmpos_core::baseline::{benchmark_precoder, MlAodEstimator, MlGridConfig, PowerAllocationConfig};
use mmpos_core::bounds::{aod_crb, aod_crb_closed_form, peb, position_fim, PositionFisher};
use mmpos_core::channel::{simulate_observation, unit_pilots, GainModel, PrecoderMatrix};
use mmpos_core::scenario::{
    aod_from_position, aod_gradient, sample_aod_training_case, sample_position_training_case, AngularSector, Scenario,
};
use mmpos_core::wrap_angle;
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMBDA: f64 = 0.0107;

fn random_precoder(rng: &mut impl Rng, n: usize, t: usize) -> PrecoderMatrix {
    let f = Array2::from_shape_fn((n, t), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    PrecoderMatrix::normalized(f).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-10.0f64..10.0, 0.5f64..10.0).prop_map(|(x, y)| [x, y])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn orientation_enters_subtractively(p in point(), q in point(), psi in -1.0f64..1.0) {
        prop_assume!((p[0] - q[0]).hypot(p[1] - q[1]) > 1e-3);
        let a = aod_from_position(p, q, psi).unwrap() + psi;
        let b = aod_from_position(p, q, 0.0).unwrap();
        prop_assert!(wrap_angle(a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn aod_gradient_matches_central_differences(p in point(), q in point()) {
        prop_assume!((p[0] - q[0]).hypot(p[1] - q[1]) > 0.5);
        let g = aod_gradient(p, q).unwrap();
        let h = 1e-6;
        for (k, gk) in g.iter().enumerate() {
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let fd = (aod_from_position(hi, q, 0.0).unwrap() - aod_from_position(lo, q, 0.0).unwrap()) / (2.0 * h);
            prop_assert!((fd - gk).abs() <= 1e-6 * gk.abs().max(1e-3), "{fd} vs {gk}");
        }
    }

    #[test]
    fn sampled_aod_cases_are_valid_sectors(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (theta, u) = sample_aod_training_case(
            &mut rng,
            [10f64.to_radians(), 20f64.to_radians()],
            [-60f64.to_radians(), 60f64.to_radians()],
        ).unwrap();
        prop_assert!(u.theta_min() < u.theta_max());
        prop_assert!(u.theta_min() >= -FRAC_PI_2 && u.theta_max() <= FRAC_PI_2);
        prop_assert!(u.contains(theta));
        let w = u.width().to_degrees();
        prop_assert!((10.0 - 1e-9..=20.0 + 1e-9).contains(&w));
    }

    #[test]
    fn sampled_position_cases_are_valid_sectors(seed in any::<u64>()) {
        let sc = Scenario::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, sectors) = sample_position_training_case(&mut rng, &sc).unwrap();
        prop_assert!(sc.prior_region.contains(p));
        for u in &sectors {
            prop_assert!(u.theta_min() < u.theta_max());
            prop_assert!(u.theta_min() >= -FRAC_PI_2 && u.theta_max() <= FRAC_PI_2);
        }
    }

    #[test]
    fn steering_has_unit_modulus_elements(seed in any::<u64>(), theta in -FRAC_PI_2..FRAC_PI_2, n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ideal = ArrayModel::ideal(n, LAMBDA);
        let pos = perturb_spacing(&mut rng, n, LAMBDA / 30.0, LAMBDA).unwrap();
        let perturbed = ArrayModel::with_positions(pos, LAMBDA).unwrap();
        for a in [ideal.steering(theta), perturbed.steering(theta)] {
            prop_assert!((a.iter().map(|z| z.norm_sqr()).sum::<f64>() - n as f64).abs() < 1e-9);
        }
        let mirrored = ideal.steering(-theta);
        for (m, a) in mirrored.iter().zip(ideal.steering(theta).iter()) {
            prop_assert!((m - a.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_derivative_matches_finite_differences(seed in any::<u64>(), theta in -1.4f64..1.4, n in 5usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = perturb_spacing(&mut rng, n, LAMBDA / 100.0, LAMBDA).unwrap();
        let array = ArrayModel::with_positions(pos, LAMBDA).unwrap();
        let array = if seed % 2 == 0 {
            array.with_coupling(coupling_matrix(&CouplingSpec::reference(), n).unwrap()).unwrap()
        } else {
            array
        };
        let h = 1e-6;
        let fd = (array.steering(theta + h) - array.steering(theta - h)).mapv(|z| z / (2.0 * h));
        let d = array.steering_derivative(theta);
        let err = (&fd - &d).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let scale = d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err < 1e-6 * scale, "{err} vs {scale}");
    }

    #[test]
    fn coupling_matrix_is_symmetric_and_banded(n in 6usize..40, mut mags in prop::collection::vec(0.01f64..0.99, 0..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mags.sort_by(|a, b| b.total_cmp(a));
        mags.dedup();
        let c: Vec<Complex64> = std::iter::once(Complex64::new(1.0, 0.0))
            .chain(mags.iter().map(|&m| Complex64::from_polar(m, rng.random_range(-PI..PI))))
            .collect();
        let spec = CouplingSpec::new(c.clone()).unwrap();
        let b = coupling_matrix(&spec, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(b[[i, j]], b[[j, i]]);
                let d = i.abs_diff(j);
                let want = if d < c.len() { c[d] } else { Complex64::new(0.0, 0.0) };
                prop_assert_eq!(b[[i, j]], want);
            }
        }
    }

    #[test]
    fn crb_formulas_agree(seed in any::<u64>(), theta in -1.3f64..1.3, snr in -10.0f64..40.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let array = ArrayModel::ideal(16, LAMBDA);
        let f = random_precoder(&mut rng, 16, 6);
        let s = unit_pilots(6);
        let g = GainModel::draw(&mut rng, snr);
        let a = aod_crb(f.matrix(), theta, g.alpha(), g.noise_var(), &array, s.view()).unwrap();
        let b = aod_crb_closed_form(f.matrix(), theta, g.alpha(), g.noise_var(), &array, s.view()).unwrap();
        prop_assert!(rel(a, b) < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn crb_ignores_gain_phase(seed in any::<u64>(), theta in -1.3f64..1.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let array = ArrayModel::ideal(16, LAMBDA);
        let f = random_precoder(&mut rng, 16, 6);
        let s = unit_pilots(6);
        let crbs: Vec<f64> = (0..10)
            .map(|_| {
                let g = GainModel::draw(&mut rng, 10.0);
                aod_crb(f.matrix(), theta, g.alpha(), g.noise_var(), &array, s.view()).unwrap()
            })
            .collect();
        let lo = crbs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = crbs.iter().cloned().fold(0.0, f64::max);
        prop_assert!((hi - lo) / lo < 1e-10);
    }

    #[test]
    fn adding_a_bearing_never_increases_peb(
        g in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 1e-6f64..1e-2), 3),
    ) {
        let bearings: Vec<([f64; 2], f64)> = g.iter().map(|&(a, b, c)| ([a, b], c)).collect();
        let two = PositionFisher::from_bearings(&bearings[..2]);
        let three = PositionFisher::from_bearings(&bearings);
        if let Ok(p2) = peb(&two) {
            prop_assert!(peb(&three).unwrap() <= p2 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn ml_estimate_ignores_observation_scale(seed in any::<u64>(), mag in 0.01f64..100.0, phase in -PI..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let array = ArrayModel::ideal(16, LAMBDA);
        let u = AngularSector::from_degrees(10.0, 25.0).unwrap();
        let f = random_precoder(&mut rng, 16, 6);
        let s = unit_pilots(6);
        let est = MlAodEstimator::new(f.matrix(), u, array.clone(), s.view(), MlGridConfig::default()).unwrap();
        let g = GainModel::draw(&mut rng, 10.0);
        let obs = simulate_observation(&mut rng, f.matrix(), 0.3, &g, &array, s.view()).unwrap();
        let mut scaled = obs.clone();
        scaled.y.mapv_inplace(|z| z * Complex64::from_polar(mag, phase));
        let a = est.estimate(&obs).unwrap().theta_hat;
        let b = est.estimate(&scaled).unwrap().theta_hat;
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn simulation_is_seed_reproducible(seed in any::<u64>(), theta in -1.3f64..1.3) {
        let array = ArrayModel::ideal(8, LAMBDA);
        let f = random_precoder(&mut ChaCha8Rng::seed_from_u64(seed), 8, 4);
        let s = unit_pilots(4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = GainModel::draw(&mut rng, 5.0);
            simulate_observation(&mut rng, f.matrix(), theta, &g, &array, s.view()).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn power_allocation_dominates_uniform(lo in -60.0f64..40.0, w in 10.0f64..20.0, snr in -5.0f64..30.0) {
        let array = ArrayModel::ideal(32, LAMBDA);
        let u = AngularSector::from_degrees(lo, lo + w).unwrap();
        let out = benchmark_precoder(&u, 20, snr, &array, &PowerAllocationConfig::default()).unwrap();
        prop_assert!(out.worst_case_crb <= out.uniform_worst_case_crb * (1.0 + 1e-12));
    }
}

#[test]
fn two_bs_peb_matches_scenario_fim() {
    let sc = Scenario::default();
    let array = ArrayModel::ideal(sc.n_tx, sc.wavelength);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let precs: Vec<_> = (0..2).map(|_| random_precoder(&mut rng, sc.n_tx, sc.n_transmissions)).collect();
    let gains = vec![GainModel::new(0.0, 20.0); 2];
    let s = unit_pilots(sc.n_transmissions);
    let p = [0.5, 5.0];
    let both = position_fim(&sc, &precs, p, &gains, &[array.clone(), array.clone()], s.view()).unwrap();
    let mut manual = PositionFisher::from_bearings(&[]);
    for b in 0..2 {
        let theta = sc.aod(b, p).unwrap();
        let crb = aod_crb(precs[b].matrix(), theta, gains[b].alpha(), gains[b].noise_var(), &array, s.view()).unwrap();
        manual = manual.add(&PositionFisher::from_bearings(&[(aod_gradient(p, sc.bs_positions[b]).unwrap(), crb)]));
    }
    assert!(rel(peb(&both).unwrap(), peb(&manual).unwrap()) < 1e-12);
}
