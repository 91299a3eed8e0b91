use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use relight_core::radiosity::{weighted_norm_with, NormKind, RadiosityField};
use relight_core::scenegen::{random_scene, trial_rng, SceneGenConfig};
use relight_core::Transport;

fn scene_and_emittance(seed: u64) -> (relight_core::Scene, Transport, DVector<f64>) {
    let mut rng = trial_rng(seed, 0);
    let cfg = SceneGenConfig {
        albedo_max: 0.9,
        ..SceneGenConfig::default()
    };
    let scene = random_scene(&mut rng, &cfg).unwrap();
    let e = DVector::from_fn(scene.len(), |_, _| rng.random_range(0.0..2.0));
    let t = Transport::new(&scene).unwrap();
    (scene, t, e)
}

#[test]
fn solution_norm_within_neumann_bound() {
    for seed in 0..1000 {
        let (scene, t, e) = scene_and_emittance(seed);
        let b = t.solve_direct(&RadiosityField::new(e.clone())).unwrap();
        let areas = scene.areas();
        let nb = weighted_norm_with(b.values(), &areas, NormKind::L2).unwrap();
        let ne = weighted_norm_with(&e, &areas, NormKind::L2).unwrap();
        assert!(nb <= ne / (1.0 - scene.max_albedo()) * (1.0 + 1e-12), "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn radiosity_dominates_emittance(seed in 0u64..100_000) {
        let (_, t, e) = scene_and_emittance(seed);
        let b = t.solve_direct(&RadiosityField::new(e.clone())).unwrap();
        let slack = 1e-12 * e.amax();
        for (bi, ei) in b.values().iter().zip(e.iter()) {
            prop_assert!(*bi >= ei - slack);
            prop_assert!(*bi >= -slack);
        }
    }

    #[test]
    fn solution_is_linear_in_emittance(seed in 0u64..100_000, a in 0.0f64..3.0, c in 0.0f64..3.0) {
        let (_, t, e1) = scene_and_emittance(seed);
        let e2 = e1.map(|x| (2.0 - x).abs());
        let solve = |e: DVector<f64>| t.solve_direct(&RadiosityField::new(e)).unwrap().into_values();
        let combined = solve(&e1 * a + &e2 * c);
        let separate = solve(e1.clone()) * a + solve(e2.clone()) * c;
        prop_assert!((&combined - &separate).amax() <= 1e-10 * combined.amax().max(1.0));
    }
}
