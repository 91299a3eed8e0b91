//! Seeded inputs shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use relight_core::conefit::normalize_shading;
use relight_core::egm::SecondMoment;
use relight_core::scenegen::{random_scene_with, trial_rng, SceneGenConfig};
use relight_core::{EmbeddingSet, GeneratorSet, Scene};

pub fn scene(patches: usize) -> Scene {
    let mut rng = trial_rng(1, patches as u64);
    random_scene_with(&mut rng, patches, &SceneGenConfig::default()).expect("benchmark scene")
}

pub fn psd(n: usize) -> SecondMoment {
    let mut rng = trial_rng(2, n as u64);
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    SecondMoment::new(&m * m.transpose()).expect("Gram matrices are PSD")
}

/// A normalized target and `n_g` non-negative generators of length `n`.
pub fn cone_instance(n: usize, n_g: usize) -> (DVector<f64>, GeneratorSet) {
    let mut rng = trial_rng(3, (n * 100 + n_g) as u64);
    let g = DMatrix::from_fn(n, n_g, |_, _| rng.random_range(0.0..1.0));
    let raw = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.5));
    (
        normalize_shading(&raw).expect("positive mean"),
        GeneratorSet::from_matrix(g).expect("valid generators"),
    )
}

pub fn embeddings(n: usize, d: usize, seed: u64) -> EmbeddingSet {
    let mut rng = trial_rng(4, seed);
    EmbeddingSet::new(DMatrix::from_fn(n, d, |_, _| {
        StandardNormal.sample(&mut rng)
    }))
    .expect("finite points")
}
