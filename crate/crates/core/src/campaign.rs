//! Seeded Monte Carlo campaigns over random scenes and perturbations.
//!
//! Trial `i` of a campaign seeded with `s` draws everything from
//! `trial_rng(s, i)`, so results do not depend on thread count or order.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::bounds::{
    kernel_sandwich_check, perturbed_transport, verify_perturbation, BoundTrial,
    PerturbationReport, HOLDS_SLACK,
};
use crate::egm::{
    dirichlet_second_moment, empirical_second_moment, loose_bound, lp_regret_bound,
    radiosity_basis, second_moment, theorem2_regret, to_coefficients, SymmetricDirichlet,
    ThetaSampler, EIGEN_GAP_TOL,
};
use crate::error::{Error, Result};
use crate::geometry::{apply_affine, AffinePerturbation, Scene};
use crate::radiosity::{weighted_norm_with, NormKind, RadiosityField, Transport};
use crate::report::{fmt_f64, CsvRecord};
use crate::scenegen::{random_affine, random_scene, trial_rng, SceneGenConfig};

const MAX_REDRAWS: usize = 100;

/// Which perturbation factors a bound trial varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    All,
    Luminaire,
    Albedo,
    Geometry,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::All => "all",
            Factor::Luminaire => "luminaire",
            Factor::Albedo => "albedo",
            Factor::Geometry => "geometry",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationRanges {
    pub max_cond: f64,
    pub max_eps_e: f64,
    pub max_eps_rho: f64,
}

impl Default for PerturbationRanges {
    fn default() -> Self {
        Self {
            max_cond: 1.2,
            max_eps_e: 0.2,
            max_eps_rho: 0.2,
        }
    }
}

/// Where a campaign's scenes come from.
#[derive(Debug, Clone)]
pub enum SceneSource {
    Fixed(Scene),
    Random(SceneGenConfig),
}

impl SceneSource {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scene> {
        match self {
            SceneSource::Fixed(s) => Ok(s.clone()),
            SceneSource::Random(cfg) => random_scene(rng, cfg),
        }
    }
}

/// Random emittance `Σ θ_i E_i` with Dirichlet weights.
fn random_emittance<R: Rng + ?Sized>(rng: &mut R, scene: &Scene) -> Result<DVector<f64>> {
    let lum = scene.luminaires();
    let theta = SymmetricDirichlet::new(lum.len(), lum.dirichlet_alpha())?.sample(rng);
    lum.mix(&theta)
}

struct Perturbation {
    t: AffinePerturbation,
    delta: Vec<f64>,
    e: RadiosityField,
    e_prime: RadiosityField,
}

fn draw_perturbation<R: Rng + ?Sized>(
    rng: &mut R,
    scene: &Scene,
    factor: Factor,
    ranges: &PerturbationRanges,
) -> Result<Perturbation> {
    let n = scene.len();
    let e = random_emittance(rng, scene)?;
    let vary = |f: Factor| factor == Factor::All || factor == f;

    let e_prime = if vary(Factor::Luminaire) {
        // multiplicative jitter keeps E′ ≥ 0 and ε_E ≤ s
        let s = rng.random_range(0.0..=ranges.max_eps_e);
        e.map(|v| v * (1.0 + rng.random_range(-s..=s)))
    } else {
        e.clone()
    };
    let delta = if vary(Factor::Albedo) {
        let s = rng.random_range(0.0..=ranges.max_eps_rho);
        scene
            .patches()
            .iter()
            .map(|p| {
                let d: f64 = rng.random_range(-s..=s);
                (p.albedo + d).clamp(0.01, 0.99) - p.albedo
            })
            .collect()
    } else {
        vec![0.0; n]
    };
    let t = if vary(Factor::Geometry) {
        random_affine(rng, ranges.max_cond)
    } else {
        AffinePerturbation::identity()
    };
    Ok(Perturbation {
        t,
        delta,
        e: RadiosityField::new(e),
        e_prime: RadiosityField::new(e_prime),
    })
}

/// One bound trial; perturbations that push the transport norm past 1 are redrawn.
fn bound_trial(
    seed: u64,
    trial: u64,
    source: &SceneSource,
    factor: Factor,
    ranges: &PerturbationRanges,
) -> Result<PerturbationReport> {
    let mut rng = trial_rng(seed, trial);
    let scene = source.draw(&mut rng)?;
    for _ in 0..MAX_REDRAWS {
        let p = draw_perturbation(&mut rng, &scene, factor, ranges)?;
        match verify_perturbation(&scene, &p.t, &p.delta, &p.e, &p.e_prime) {
            Err(Error::KernelNorm { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::InvalidParameter(format!(
        "trial {trial}: no admissible perturbation in {MAX_REDRAWS} draws"
    )))
}

/// Combined-bound campaign: every trial varies geometry, albedo and emittance.
pub fn bounds_campaign(
    seed: u64,
    trials: usize,
    source: &SceneSource,
    ranges: &PerturbationRanges,
) -> Result<Vec<BoundTrial>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            Ok(BoundTrial {
                trial,
                report: bound_trial(seed, trial, source, Factor::All, ranges)?,
            })
        })
        .collect()
}

/// A single-factor trial checked against that factor's own bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorTrial {
    pub trial: u64,
    pub factor: Factor,
    pub actual: f64,
    pub bound: f64,
    pub holds: bool,
}

impl CsvRecord for FactorTrial {
    const HEADER: &'static [&'static str] = &["trial", "factor", "actual", "bound", "holds"];

    fn record(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.factor.name().to_string(),
            fmt_f64(self.actual),
            fmt_f64(self.bound),
            self.holds.to_string(),
        ]
    }
}

pub fn factor_campaign(
    seed: u64,
    trials: usize,
    source: &SceneSource,
    factor: Factor,
    ranges: &PerturbationRanges,
) -> Result<Vec<FactorTrial>> {
    if factor == Factor::All {
        return Err(Error::InvalidParameter(
            "use bounds_campaign for combined trials".into(),
        ));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let r = bound_trial(seed, trial, source, factor, ranges)?;
            let lemma = r.lemma_bounds()?;
            let bound = match factor {
                Factor::Luminaire => lemma.luminaire,
                Factor::Albedo => lemma.albedo,
                _ => lemma.geometry,
            };
            Ok(FactorTrial {
                trial,
                factor,
                actual: r.actual_diff,
                bound,
                holds: r.actual_diff <= bound + HOLDS_SLACK,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichTrial {
    pub trial: u64,
    pub cond_c: f64,
    pub holds: bool,
}

impl CsvRecord for SandwichTrial {
    const HEADER: &'static [&'static str] = &["trial", "cond_c", "holds"];

    fn record(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            fmt_f64(self.cond_c),
            self.holds.to_string(),
        ]
    }
}

/// Random scene, random affine map with condition number up to `max_cond`,
/// random non-negative field.
pub fn sandwich_campaign(
    seed: u64,
    trials: usize,
    source: &SceneSource,
    max_cond: f64,
) -> Result<Vec<SandwichTrial>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let scene = source.draw(&mut rng)?;
            let t = random_affine(&mut rng, max_cond);
            let f: Vec<f64> = (0..scene.len())
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            Ok(SandwichTrial {
                trial,
                cond_c: t.condition_number()?,
                holds: kernel_sandwich_check(&scene, &t, &f)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTrial {
    pub trial: u64,
    pub patches: usize,
    pub bounces: usize,
    pub rel_diff: f64,
}

impl CsvRecord for SolverTrial {
    const HEADER: &'static [&'static str] = &["trial", "patches", "bounces", "rel_diff"];

    fn record(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.patches.to_string(),
            self.bounces.to_string(),
            fmt_f64(self.rel_diff),
        ]
    }
}

/// Neumann against direct solves on random scenes and emittances.
pub fn solver_campaign(
    seed: u64,
    trials: usize,
    source: &SceneSource,
    tol: f64,
) -> Result<Vec<SolverTrial>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let scene = source.draw(&mut rng)?;
            let e = RadiosityField::new(random_emittance(&mut rng, &scene)?);
            let t = Transport::new(&scene)?;
            let neumann = t.solve_neumann(&e, tol, crate::radiosity::DEFAULT_MAX_BOUNCES)?;
            let direct = t.solve_direct(&e)?;
            let areas = scene.areas();
            let diff = weighted_norm_with(
                &(neumann.field.values() - direct.values()),
                &areas,
                NormKind::L2,
            )?;
            let norm = weighted_norm_with(direct.values(), &areas, NormKind::L2)?;
            Ok(SolverTrial {
                trial,
                patches: scene.len(),
                bounces: neumann.bounces,
                rel_diff: if norm > 0.0 { diff / norm } else { diff },
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimilarSceneConfig {
    pub scenes: SceneSource,
    pub rank: usize,
    pub min_k: usize,
    pub max_k: usize,
    pub max_cond: f64,
    pub max_eps_rho: f64,
}

impl Default for SimilarSceneConfig {
    fn default() -> Self {
        Self {
            scenes: SceneSource::Random(SceneGenConfig {
                min_patches: 4,
                max_patches: 12,
                ..SceneGenConfig::default()
            }),
            rank: 2,
            min_k: 3,
            max_k: 30,
            max_cond: 1.05,
            max_eps_rho: 0.05,
        }
    }
}

/// One similar-scene regret trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretTrial {
    pub trial: u64,
    pub k_scenes: usize,
    /// `‖C − Ĉ‖²_F`, also the rearrangement budget.
    pub frob_err_sq: f64,
    pub regret: f64,
    pub loose_bound: f64,
    /// Top-`r` form `Σ_{i≤r} λ_i − v`.
    pub lp_bound: f64,
    pub loose_holds: bool,
    pub lp_holds: bool,
    /// Full-sum form `Σ_{i≤N_o} λ_i − v`, logged for comparison.
    pub lp_bound_full_sum: f64,
    /// `N_o² (4δr³ + 3δ²r² + 2δ³r + δ⁴)` with `δ = (ε_ρ + c⁴ − 1)/(1−p)²`, `r = 1/(1−p)`.
    pub sample_error_poly: f64,
    /// Smallest gap between consecutive eigenvalues of `C` among the top `r + 1`.
    pub min_top_gap: f64,
}

impl CsvRecord for RegretTrial {
    const HEADER: &'static [&'static str] = &[
        "trial",
        "k_scenes",
        "frob_err_sq",
        "regret",
        "loose_bound",
        "lp_bound",
        "loose_holds",
        "lp_holds",
        "lp_bound_full_sum",
        "sample_error_poly",
        "min_top_gap",
    ];

    fn record(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.k_scenes.to_string(),
            fmt_f64(self.frob_err_sq),
            fmt_f64(self.regret),
            fmt_f64(self.loose_bound),
            fmt_f64(self.lp_bound),
            self.loose_holds.to_string(),
            self.lp_holds.to_string(),
            fmt_f64(self.lp_bound_full_sum),
            fmt_f64(self.sample_error_poly),
            fmt_f64(self.min_top_gap),
        ]
    }
}

/// Draws a scene `V`, its exact second moment `C`, and an estimate `Ĉ` built
/// from one radiosity sample in each of `k` similar scenes (small affine map
/// plus albedo jitter), all expressed in `V`'s patch basis.
pub fn regret_trial(seed: u64, trial: u64, cfg: &SimilarSceneConfig) -> Result<RegretTrial> {
    let mut rng = trial_rng(seed, trial);
    let r = cfg.rank;
    let mut attempts = 0;
    let (scene, c) = loop {
        attempts += 1;
        if attempts > MAX_REDRAWS {
            return Err(Error::InvalidParameter(format!(
                "trial {trial}: no base scene with a rank-{r} eigengap"
            )));
        }
        let scene = cfg.scenes.draw(&mut rng)?;
        let n_o = scene.len();
        if r == 0 || r >= n_o {
            return Err(Error::InvalidParameter(format!(
                "rank {r} must lie in 1..{n_o}"
            )));
        }
        let lum = scene.luminaires();
        let moment = dirichlet_second_moment(lum.len(), lum.dirichlet_alpha())?;
        let c = second_moment(&radiosity_basis(&scene)?, &moment)?;
        if c.eigvals()[r - 1] - c.eigvals()[r] > EIGEN_GAP_TOL {
            break (scene, c);
        }
    };
    let n_o = scene.len();
    let lum = scene.luminaires();
    let sampler = SymmetricDirichlet::new(lum.len(), lum.dirichlet_alpha())?;
    let areas = scene.areas();
    let k = rng.random_range(cfg.min_k.max(r + 1)..=cfg.max_k.max(r + 1));

    let mut samples = Vec::with_capacity(k);
    let (mut eps_rho, mut cond) = (0.0f64, 1.0f64);
    let mut p = scene.max_albedo();
    let mut draws = 0;
    while samples.len() < k {
        draws += 1;
        if draws > k * MAX_REDRAWS {
            return Err(Error::InvalidParameter(format!(
                "trial {trial}: too many inadmissible similar scenes"
            )));
        }
        let delta: Vec<f64> = scene
            .patches()
            .iter()
            .map(|pt| {
                (pt.albedo + rng.random_range(-cfg.max_eps_rho..=cfg.max_eps_rho)).clamp(0.01, 0.99)
                    - pt.albedo
            })
            .collect();
        let t = random_affine(&mut rng, cfg.max_cond);
        let similar = apply_affine(&scene.with_albedo_delta(&delta)?, &t)?;
        let transport = match perturbed_transport(&similar, &areas) {
            Err(Error::KernelNorm { .. }) => continue,
            other => other?,
        };
        let e = lum.mix(&sampler.sample(&mut rng))?;
        let b = transport.solve_direct(&RadiosityField::new(e))?;
        samples.push(to_coefficients(b.values(), &areas));
        eps_rho = delta.iter().fold(eps_rho, |m, d| m.max(d.abs()));
        cond = cond.max(t.condition_number()?);
        p = p.max(similar.max_albedo());
    }
    let c_hat = empirical_second_moment(&samples)?;
    let frob_err_sq = (c.matrix() - c_hat.matrix()).norm_squared();
    let regret = theorem2_regret(&c, &c_hat, r)?;
    let loose = loose_bound(&c, r)?;
    let l = c.eigvals().as_slice();
    let lp = lp_regret_bound(l, r, frob_err_sq)?;
    let total: f64 = l.iter().sum();
    let top: f64 = l[..r].iter().sum();
    let delta = (eps_rho + cond.powi(4) - 1.0) / (1.0 - p).powi(2);
    let rad = 1.0 / (1.0 - p);
    let poly = (n_o * n_o) as f64
        * (4.0 * delta * rad.powi(3)
            + 3.0 * delta.powi(2) * rad.powi(2)
            + 2.0 * delta.powi(3) * rad
            + delta.powi(4));
    let min_top_gap = l[..=r]
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    Ok(RegretTrial {
        trial,
        k_scenes: k,
        frob_err_sq,
        regret,
        loose_bound: loose,
        lp_bound: lp,
        loose_holds: regret <= loose + 1e-10,
        lp_holds: regret <= lp + 1e-10,
        lp_bound_full_sum: total - (top - lp),
        sample_error_poly: poly,
        min_top_gap,
    })
}

pub fn regret_campaign(
    seed: u64,
    trials: usize,
    cfg: &SimilarSceneConfig,
) -> Result<Vec<RegretTrial>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| regret_trial(seed, trial, cfg))
        .collect()
}

/// Mean `‖Ĉ − C‖²_F` at one sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentScalingPoint {
    pub n_samples: usize,
    pub mean_err_sq: f64,
}

impl CsvRecord for MomentScalingPoint {
    const HEADER: &'static [&'static str] = &["n_samples", "mean_err_sq"];

    fn record(&self) -> Vec<String> {
        vec![self.n_samples.to_string(), fmt_f64(self.mean_err_sq)]
    }
}

/// Empirical second moments from `n` Dirichlet-mixed radiosities of one
/// scene, averaged over `reps` repetitions per sample count.
pub fn moment_scaling(
    scene: &Scene,
    sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<MomentScalingPoint>> {
    let lum = scene.luminaires();
    let basis = radiosity_basis(scene)?;
    let c = second_moment(
        &basis,
        &dirichlet_second_moment(lum.len(), lum.dirichlet_alpha())?,
    )?;
    let sampler = SymmetricDirichlet::new(lum.len(), lum.dirichlet_alpha())?;
    sizes
        .iter()
        .enumerate()
        .map(|(si, &n)| {
            let errs = (0..reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = trial_rng(seed, ((si as u64) << 32) + rep);
                    let samples: Vec<DVector<f64>> = (0..n)
                        .map(|_| basis.coefficients(&sampler.sample(&mut rng)))
                        .collect::<Result<_>>()?;
                    Ok((c.matrix() - empirical_second_moment(&samples)?.matrix()).norm_squared())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(MomentScalingPoint {
                n_samples: n,
                mean_err_sq: errs.iter().sum::<f64>() / reps as f64,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientPoints(format!(
            "need matched pairs, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(
            "log-log fit needs positive values".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn campaigns_are_reproducible() {
        let source = SceneSource::Random(SceneGenConfig::default());
        let a = bounds_campaign(3, 4, &source, &PerturbationRanges::default()).unwrap();
        let b = bounds_campaign(3, 4, &source, &PerturbationRanges::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.report.holds));
    }

    #[test]
    fn two_patch_bound_campaign_holds() {
        let rows = bounds_campaign(
            7,
            20,
            &SceneSource::Fixed(fixtures::two_facing_patches()),
            &PerturbationRanges::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows
            .iter()
            .all(|t| t.report.holds && t.report.cond_c <= 1.2 + 1e-12));
    }

    #[test]
    fn factor_trials_vary_only_their_factor() {
        let source = SceneSource::Fixed(fixtures::open_box());
        let ranges = PerturbationRanges::default();
        for factor in [Factor::Luminaire, Factor::Albedo, Factor::Geometry] {
            let rows = factor_campaign(1, 5, &source, factor, &ranges).unwrap();
            assert!(rows.iter().all(|r| r.holds), "{factor:?}");
        }
        let r = bound_trial(1, 0, &source, Factor::Luminaire, &ranges).unwrap();
        assert_eq!((r.eps_rho, r.cond_c), (0.0, 1.0));
        let r = bound_trial(1, 0, &source, Factor::Geometry, &ranges).unwrap();
        assert_eq!((r.eps_rho, r.eps_e), (0.0, 0.0));
    }

    #[test]
    fn regret_trial_fields_consistent() {
        let t = regret_trial(5, 0, &SimilarSceneConfig::default()).unwrap();
        assert!(t.regret >= -1e-10);
        assert!(t.loose_holds);
        assert!(t.lp_bound <= t.loose_bound + 1e-12);
        assert!(t.k_scenes >= 3);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 1.5).abs() < 1e-12);
    }
}
