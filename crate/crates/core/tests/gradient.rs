mod common;

use common::{max_gradient_rel_error, random_params, random_symmetric};
use denise::model::{Architecture, SmoothAbs};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn tiny_network_gradient_matches_central_differences() {
    let arch = Architecture::new(4, 2, [3, 3, 3]).unwrap();
    let params = random_params(arch, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = random_symmetric(4, 1.0, &mut rng);
    let target = random_symmetric(4, 1.0, &mut rng);
    let mu = SmoothAbs::new(1e-2).unwrap();
    let err = max_gradient_rel_error(&params, &m, &target, mu, 1e-6);
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn unsupervised_target_is_the_input() {
    let arch = Architecture::new(3, 1, [4, 3, 2]).unwrap();
    let params = random_params(arch, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = random_symmetric(3, 2.0, &mut rng);
    let mu = SmoothAbs::new(1e-2).unwrap();
    assert!(max_gradient_rel_error(&params, &m, &m, mu, 1e-6) <= 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_for_random_shapes(
        n in 2usize..6,
        k in 1usize..3,
        widths in prop::array::uniform3(1usize..5),
        seed in any::<u64>(),
    ) {
        let arch = Architecture::new(n, k, widths).unwrap();
        let params = random_params(arch, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let m = random_symmetric(n, 1.0, &mut rng);
        let target = random_symmetric(n, 1.0, &mut rng);
        let mu = SmoothAbs::new(1e-2).unwrap();
        let err = max_gradient_rel_error(&params, &m, &target, mu, 1e-6);
        prop_assert!(err <= 1e-5, "{}", err);
    }
}
