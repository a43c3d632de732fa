use mmpos_core::array::ArrayModel;
use mmpos_core::channel::{frobenius_norm, Observation};
use mmpos_core::scenario::{AngularSector, Rect, Scenario};
use mmpos_learn::e2e::{
    aod_decoder_spec, pos_decoder_spec, train_aod_ae, train_pos_ae, AodDecoderNet, BeamformerNet, PosDecoderNet,
    TrainConfig,
};
use ndarray::Array1;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;

fn observation(rng: &mut impl Rng, t: usize, scale: f64) -> Observation {
    Observation {
        y: Array1::from_shape_fn(t, |_| Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))),
        snr_db: 20.0,
        bs_index: 0,
    }
}

fn small_config(seed: u64, snr_db: f64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        snr_db,
        iterations: 40,
        hidden: 8,
        seed,
        ..TrainConfig::default()
    }
}

fn small_scenario() -> Scenario {
    Scenario {
        n_tx: 4,
        n_transmissions: 4,
        ..Scenario::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn learned_precoder_has_unit_norm(seed in 0u64..10_000, lo in -80.0f64..50.0, w in 1.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bf = BeamformerNet::init(&mut rng, 8, 6, 16).unwrap();
        let u = AngularSector::from_degrees(lo, lo + w).unwrap();
        let f = bf.precoder_for(&u).unwrap();
        prop_assert!((frobenius_norm(f.matrix()) - 1.0).abs() < 1e-9);
        prop_assert_eq!(f.matrix().dim(), (8, 6));
        prop_assert_eq!(bf.precoder_for(&u).unwrap(), f);
    }

    #[test]
    fn aod_estimate_stays_within_ninety_degrees(seed in 0u64..10_000, scale in 0.1f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = AodDecoderNet::new(aod_decoder_spec(5, 8).unwrap().init(&mut rng)).unwrap();
        let theta = dec.decode(&observation(&mut rng, 5, scale)).unwrap();
        prop_assert!(theta.abs() <= FRAC_PI_2);
    }
}

#[test]
fn decoder_input_layout_is_real_then_imaginary() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dec = AodDecoderNet::new(aod_decoder_spec(3, 8).unwrap().init(&mut rng)).unwrap();
    let obs = observation(&mut rng, 3, 1.0);
    let swapped = Observation {
        y: obs.y.mapv(|z| Complex64::new(z.im, z.re)),
        ..obs.clone()
    };
    assert_ne!(dec.decode(&obs).unwrap(), dec.decode(&swapped).unwrap());
    assert!(dec.decode(&observation(&mut rng, 4, 1.0)).is_err());
}

#[test]
fn position_decoder_shape_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dec = PosDecoderNet::new(pos_decoder_spec(3, 2, 8).unwrap().init(&mut rng), 2).unwrap();
    let obs = vec![observation(&mut rng, 3, 1.0), observation(&mut rng, 3, 1.0)];
    let p = dec.decode(&obs).unwrap();
    assert_eq!(p.len(), 2);
    assert_eq!(dec.decode(&obs).unwrap(), p);
    assert!(dec.decode(&obs[..1]).is_err());
    assert_eq!(pos_decoder_spec(20, 2, 4).unwrap().input_width(), 80);
}

#[test]
fn aod_training_improves_and_is_deterministic() {
    let arrays = vec![ArrayModel::ideal(4, 0.0107); 2];
    let cfg = small_config(3, 10.0);
    let a = train_aod_ae(&cfg, &arrays, 4, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let b = train_aod_ae(&cfg, &arrays, 4, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    assert_eq!(a.beamformers, b.beamformers);
    assert_eq!(a.decoder, b.decoder);
    assert_eq!(a.log, b.log);
    assert_eq!(a.beamformers.len(), 2);
    assert!(a.log.entries.iter().all(|e| e.loss.is_finite() && e.loss >= 0.0));
    assert!(a.log.final_loss(5).unwrap() <= a.log.initial_loss().unwrap());
}

#[test]
fn position_training_improves_and_is_deterministic() {
    let sc = small_scenario();
    let arrays = vec![ArrayModel::ideal(4, sc.wavelength); 2];
    let cfg = small_config(8, 20.0);
    let a = train_pos_ae(&cfg, &sc, &arrays, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let b = train_pos_ae(&cfg, &sc, &arrays, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    assert_eq!(a.beamformers, b.beamformers);
    assert_eq!(a.decoder, b.decoder);
    assert!(a.log.entries.iter().all(|e| e.loss.is_finite() && e.loss >= 0.0));
    assert!(a.log.final_loss(5).unwrap() <= a.log.initial_loss().unwrap());
}

#[test]
fn position_training_rejects_invisible_region() {
    let sc = Scenario {
        prior_region: Rect::new([-20.0, -3.0], [-19.0, -2.0]).unwrap(),
        ..small_scenario()
    };
    let arrays = vec![ArrayModel::ideal(4, sc.wavelength); 2];
    assert!(train_pos_ae(&small_config(1, 20.0), &sc, &arrays, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn different_seeds_train_differently() {
    let arrays = vec![ArrayModel::ideal(4, 0.0107)];
    let a = train_aod_ae(&small_config(1, 10.0), &arrays, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = train_aod_ae(&small_config(2, 10.0), &arrays, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_ne!(a.decoder, b.decoder);
}
