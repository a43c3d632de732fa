use mmpos_learn::checkpoint::{read_mlp, write_mlp};
use mmpos_learn::mlp::{MlpSpec, OutputActivation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_exact(
        widths in proptest::collection::vec(1usize..12, 2..6),
        tanh in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let act = if tanh { OutputActivation::Tanh } else { OutputActivation::Linear };
        let spec = MlpSpec::from_widths(widths, act).unwrap();
        let net = spec.init(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut buf = Vec::new();
        write_mlp(&mut buf, &net).unwrap();
        let back = read_mlp(&buf[..]).unwrap();
        prop_assert_eq!(back.spec(), net.spec());
        for (a, b) in back.params().iter().zip(net.params()) {
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
