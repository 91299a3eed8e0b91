//! Seeded random scenes and affine maps for Monte Carlo campaigns.

use nalgebra::{DVector, Quaternion, UnitQuaternion, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{AffinePerturbation, LuminaireModel, Mat3, Patch, Scene, Vec3};
use crate::radiosity::kernel_entries;

/// Independent RNG stream for trial `index` of a campaign seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
pub struct SceneGenConfig {
    pub min_patches: usize,
    pub max_patches: usize,
    pub luminaires: usize,
    pub albedo_min: f64,
    pub albedo_max: f64,
    /// Fraction of patches floating inside the box with random orientation.
    pub floating_fraction: f64,
    /// Reject scenes whose kernel row sums exceed this.
    pub max_row_sum: f64,
    pub dirichlet_alpha: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            min_patches: 4,
            max_patches: 40,
            luminaires: 3,
            albedo_min: 0.1,
            albedo_max: 0.7,
            floating_fraction: 0.2,
            max_row_sum: 0.45,
            dirichlet_alpha: 1.0,
        }
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let q: Vector4<f64> = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(Quaternion::from_vector(q))
        .to_rotation_matrix()
        .into_inner()
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Random `A = R₁ diag(σ) R₂` with singular values in `[s, s·c]` and `c ≤ max_cond`,
/// plus an offset in `[-0.5, 0.5]³`.
pub fn random_affine<R: Rng + ?Sized>(rng: &mut R, max_cond: f64) -> AffinePerturbation {
    let c = rng.random_range(1.0..=max_cond);
    let scale = rng.random_range(0.8..1.25);
    let mid = rng.random_range(1.0..=c);
    let mut sigma = [scale, scale * mid, scale * c];
    // random assignment of singular values to axes
    for i in (1..3).rev() {
        let j = rng.random_range(0..=i);
        sigma.swap(i, j);
    }
    let a = random_rotation(rng) * Mat3::from_diagonal(&Vec3::from(sigma)) * random_rotation(rng);
    let b = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    AffinePerturbation::new(a, b).expect("rotations and positive scalings are nonsingular")
}

/// Random diagonal map with condition number exactly `cond`.
pub fn random_diagonal_affine<R: Rng + ?Sized>(rng: &mut R, cond: f64) -> AffinePerturbation {
    let scale = rng.random_range(0.8..1.25);
    let mut d = [scale, scale * rng.random_range(1.0..=cond), scale * cond];
    for i in (1..3).rev() {
        let j = rng.random_range(0..=i);
        d.swap(i, j);
    }
    let b = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    AffinePerturbation::new(Mat3::from_diagonal(&Vec3::from(d)), b).expect("positive diagonal")
}

// inward-facing unit-cube faces as (corner, a, b) with a × b the inward normal
const FACES: [([f64; 3], [f64; 3], [f64; 3]); 6] = [
    ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
    ([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
    ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
    ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
];

fn random_patch<R: Rng + ?Sized>(rng: &mut R, side: f64, floating: bool, albedo: f64) -> Patch {
    let s_u = side * rng.random_range(0.6..1.0);
    let s_v = side * rng.random_range(0.6..1.0);
    if floating {
        let center = Vec3::from_fn(|_, _| rng.random_range(0.3..0.7));
        let rot = random_rotation(rng);
        Patch::new(center, rot * Vec3::x() * s_u, rot * Vec3::y() * s_v, albedo)
    } else {
        let (corner, a, b) = FACES[rng.random_range(0..FACES.len())];
        let (corner, a, b) = (Vec3::from(corner), Vec3::from(a), Vec3::from(b));
        let center = corner + a * rng.random_range(0.15..0.85) + b * rng.random_range(0.15..0.85);
        // in-plane rotation keeps the normal
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = angle.sin_cos();
        let eu = (a * cos + b * sin) * s_u;
        let ev = (-a * sin + b * cos) * s_v;
        Patch::new(center, eu, ev, albedo)
    }
}

/// A random closed-box scene with `n` patches.
///
/// Wall patches face inward; a fraction float inside the box and can occlude.
/// Patch sizes shrink with `n` so that the kernel stays well below unit norm;
/// candidates whose kernel row sums exceed `cfg.max_row_sum` are redrawn.
pub fn random_scene_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    cfg: &SceneGenConfig,
) -> Result<Scene> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "scene needs at least one patch".into(),
        ));
    }
    let side = (1.5 / n as f64).sqrt().min(0.25);
    for _ in 0..200 {
        let patches: Vec<Patch> = (0..n)
            .map(|_| {
                let floating = rng.random_bool(cfg.floating_fraction);
                let albedo = rng.random_range(cfg.albedo_min..=cfg.albedo_max);
                random_patch(rng, side, floating, albedo)
            })
            .collect();
        let areas: Vec<f64> = patches.iter().map(Patch::area).collect();
        let raw: Vec<DVector<f64>> = (0..cfg.luminaires)
            .map(|_| {
                let mut e = DVector::zeros(n);
                let lit = rng.random_range(1..=n.min(3));
                for _ in 0..lit {
                    e[rng.random_range(0..n)] = rng.random_range(0.5..1.5);
                }
                e
            })
            .collect();
        let (model, _) = LuminaireModel::normalized(raw, cfg.dirichlet_alpha, &areas)?;
        let scene = Scene::new(patches, model)?;
        let k = match kernel_entries(&scene) {
            Ok(k) => k,
            Err(Error::KernelCap { .. }) => continue,
            Err(e) => return Err(e),
        };
        let max_row = k.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
        if max_row <= cfg.max_row_sum {
            return Ok(scene);
        }
    }
    Err(Error::InvalidParameter(format!(
        "could not draw a {n}-patch scene with kernel row sums below {}",
        cfg.max_row_sum
    )))
}

/// Random scene with a patch count drawn from `[cfg.min_patches, cfg.max_patches]`.
pub fn random_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneGenConfig) -> Result<Scene> {
    let n = rng.random_range(cfg.min_patches..=cfg.max_patches);
    random_scene_with(rng, n, cfg)
}
