use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use relight_core::metrics::{fid, fid_infinity_fit, lfid, sylvester_diag, LfidInputs};
use relight_core::scenegen::trial_rng;
use relight_core::EmbeddingSet;

fn gaussian_set(seed: u64, n: usize, d: usize, shift: f64) -> EmbeddingSet {
    let mut rng = trial_rng(seed, 0);
    EmbeddingSet::new(DMatrix::from_fn(n, d, |_, j| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * (1.0 + j as f64 * 0.2) + shift
    }))
    .unwrap()
}

#[test]
fn sylvester_residual_on_random_pairs() {
    for i in 0..10_000u64 {
        let mut rng = trial_rng(1, i);
        let d = rng.random_range(1..=8);
        let c = DVector::from_fn(d, |_, _| rng.random_range(1e-3..10.0));
        let u = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let m = sylvester_diag(&c, &u).unwrap();
        let cm = DMatrix::from_diagonal(&c);
        let residual = &cm * &m + &m * &cm - &cm * &u;
        assert!(residual.amax() <= 1e-12 * (&cm * &u).amax().max(1.0), "pair {i}");
    }
}

#[test]
fn extrapolated_fid_below_finite_values_for_same_distribution() {
    for seed in 0..20 {
        let a = gaussian_set(2 * seed, 600, 4, 0.0);
        let b = gaussian_set(2 * seed + 1, 600, 4, 0.0);
        let fit = fid_infinity_fit(&a, &b, 15, seed).unwrap();
        let max = fit.fids.iter().copied().fold(f64::MIN, f64::max);
        assert!(fit.intercept <= max, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fid_is_symmetric(seed in 0u64..100_000, d in 1usize..6, shift in -1.0f64..1.0) {
        let a = gaussian_set(seed, 40, d, 0.0);
        let b = gaussian_set(seed + 1, 55, d, shift);
        prop_assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() <= 1e-8);
    }

    #[test]
    fn lfid_is_nonnegative(seed in 0u64..100_000, d in 1usize..6, k in 0usize..30, scale in 0.0f64..3.0) {
        let base = gaussian_set(seed, 30, d, 0.0);
        let mut rng = trial_rng(seed, 9);
        let x = base.point(k) + DVector::from_fn(d, |_, _| scale * rng.random_range(-1.0..1.0));
        let v = lfid(&LfidInputs { base_set: &base, index_k: k, relit_point: &x }, 1e-10).unwrap();
        prop_assert!(v >= 0.0);
    }
}
