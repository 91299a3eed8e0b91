//! Closed-form radiosity perturbation bounds and their empirical checks.
//!
//! All empirical norms are area-weighted L2 on the base scene's patches; the
//! perturbed scene is compared patch-for-patch through the parameter-domain
//! correspondence.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{apply_affine, AffinePerturbation, Scene, Vec3};
use crate::radiosity::{
    kernel_entries, weighted_norm_with, KernelMatrix, NormKind, RadiosityField, Transport,
};
use crate::report::{fmt_f64, CsvRecord};
use crate::scenegen::random_unit;

/// Slack used when comparing an observed difference against its bound.
pub const HOLDS_SLACK: f64 = 1e-9;

fn check_inputs(
    eps_e: f64,
    eps_rho: f64,
    p: f64,
    p_prime: f64,
    cond_c: f64,
    norm_e: f64,
) -> Result<()> {
    for (name, v) in [("p", p), ("p_prime", p_prime)] {
        if !(0.0..1.0).contains(&v) {
            if v >= 1.0 {
                return Err(Error::Divergent(v));
            }
            return Err(Error::InvalidParameter(format!(
                "{name} must lie in [0,1), got {v}"
            )));
        }
    }
    for (name, v) in [("eps_E", eps_e), ("eps_rho", eps_rho), ("norm_E", norm_e)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    if !(cond_c >= 1.0) || !cond_c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "condition number must be >= 1, got {cond_c}"
        )));
    }
    Ok(())
}

/// Combined luminaire + albedo + geometry bound on `‖B_V − B_V′‖`:
///
/// `[ε_E/(1−p) + ε_ρ(1+ε_E)/((1−p)(1−p′)) + (c⁴−1)(1+ε_E)/(1−p′)²]·‖E‖`
pub fn theorem1_bound(
    eps_e: f64,
    eps_rho: f64,
    p: f64,
    p_prime: f64,
    cond_c: f64,
    norm_e: f64,
) -> Result<f64> {
    check_inputs(eps_e, eps_rho, p, p_prime, cond_c, norm_e)?;
    let luminaire = eps_e / (1.0 - p);
    let albedo = eps_rho * (1.0 + eps_e) / ((1.0 - p) * (1.0 - p_prime));
    let geometry = (cond_c.powi(4) - 1.0) * (1.0 + eps_e) / (1.0 - p_prime).powi(2);
    Ok((luminaire + albedo + geometry) * norm_e)
}

/// The three single-factor bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaBounds {
    /// `ε_E‖E‖/(1−p)`
    pub luminaire: f64,
    /// `ε_ρ‖E‖/((1−p)(1−p′))`
    pub albedo: f64,
    /// `(c⁴−1)‖E‖/(1−p)²`
    pub geometry: f64,
}

pub fn lemma_bounds(
    eps_e: f64,
    eps_rho: f64,
    p: f64,
    p_prime: f64,
    cond_c: f64,
    norm_e: f64,
) -> Result<LemmaBounds> {
    check_inputs(eps_e, eps_rho, p, p_prime, cond_c, norm_e)?;
    Ok(LemmaBounds {
        luminaire: eps_e * norm_e / (1.0 - p),
        albedo: eps_rho * norm_e / ((1.0 - p) * (1.0 - p_prime)),
        geometry: (cond_c.powi(4) - 1.0) * norm_e / (1.0 - p).powi(2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationReport {
    pub eps_e: f64,
    pub eps_rho: f64,
    pub p: f64,
    pub p_prime: f64,
    pub cond_c: f64,
    pub norm_e: f64,
    pub actual_diff: f64,
    pub bound: f64,
    pub holds: bool,
}

impl PerturbationReport {
    pub fn lemma_bounds(&self) -> Result<LemmaBounds> {
        lemma_bounds(
            self.eps_e,
            self.eps_rho,
            self.p,
            self.p_prime,
            self.cond_c,
            self.norm_e,
        )
    }
}

/// Perturbs `scene_v` by geometry `t`, albedo offsets and a new emittance,
/// solves both scenes directly and compares the difference against the
/// combined bound.
pub fn verify_perturbation(
    scene_v: &Scene,
    t: &AffinePerturbation,
    albedo_delta: &[f64],
    e: &RadiosityField,
    e_prime: &RadiosityField,
) -> Result<PerturbationReport> {
    let n = scene_v.len();
    if albedo_delta.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: albedo_delta.len(),
        });
    }
    let scene_p = apply_affine(&scene_v.with_albedo_delta(albedo_delta)?, t)?;
    let areas = scene_v.areas();

    let b = Transport::new(scene_v)?.solve_direct(e)?;
    let b_prime = perturbed_transport(&scene_p, &areas)?.solve_direct(e_prime)?;

    let norm_e = weighted_norm_with(e.values(), &areas, NormKind::L2)?;
    let diff_e = weighted_norm_with(&(e.values() - e_prime.values()), &areas, NormKind::L2)?;
    let eps_e = if norm_e > 0.0 { diff_e / norm_e } else { 0.0 };
    let eps_rho = albedo_delta.iter().fold(0.0, |m: f64, d| m.max(d.abs()));
    let p = scene_v.max_albedo();
    let p_prime = scene_p.max_albedo();
    let cond_c = t.condition_number()?;
    let actual_diff = weighted_norm_with(&(b.values() - b_prime.values()), &areas, NormKind::L2)?;
    let bound = if norm_e > 0.0 {
        theorem1_bound(eps_e, eps_rho, p, p_prime, cond_c, norm_e)?
    } else {
        // E = 0: bound degenerates to the luminaire term on ‖E′‖
        diff_e / (1.0 - p)
    };
    Ok(PerturbationReport {
        eps_e,
        eps_rho,
        p,
        p_prime,
        cond_c,
        norm_e,
        actual_diff,
        bound,
        holds: actual_diff <= bound + HOLDS_SLACK,
    })
}

/// Transport of a perturbed scene whose fields are measured with the base
/// scene's areas. The norm condition is checked under those weights.
pub fn perturbed_transport(scene_p: &Scene, base_areas: &[f64]) -> Result<Transport> {
    let entries = kernel_entries(scene_p)?;
    let n = entries.nrows();
    for i in 0..n {
        let row: f64 = entries.row(i).sum();
        if row > 1.0 {
            return Err(Error::KernelNorm { row: i, norm: row });
        }
    }
    for j in 0..n {
        let col: f64 = (0..n).map(|i| base_areas[i] * entries[(i, j)]).sum::<f64>() / base_areas[j];
        if col > 1.0 {
            return Err(Error::KernelNorm { row: j, norm: col });
        }
    }
    Ok(Transport::from_kernel(
        scene_p,
        KernelMatrix::from_entries(entries),
    ))
}

/// Checks `c⁻⁴ (K f) ≤ K′ f ≤ c⁴ (K f)` elementwise, with `K′` assembled on the
/// transformed scene.
pub fn kernel_sandwich_check(scene: &Scene, t: &AffinePerturbation, f: &[f64]) -> Result<bool> {
    if f.len() != scene.len() {
        return Err(Error::Dimension {
            expected: scene.len(),
            got: f.len(),
        });
    }
    if let Some((index, &value)) = f.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeEmittance { index, value });
    }
    let c4 = t.condition_number()?.powi(4);
    let f = DVector::from_column_slice(f);
    let kf = kernel_entries(scene)? * &f;
    let kpf = kernel_entries(&apply_affine(scene, t)?)? * &f;
    Ok(kf.iter().zip(kpf.iter()).all(|(&k, &kp)| {
        let slack = 1e-9 * k.abs().max(kp.abs());
        kp >= k / c4 - slack && kp <= k * c4 + slack
    }))
}

/// Comparison of `‖bbᵀ − ccᵀ‖²_F` against the two printed polynomials and the
/// sharp one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOneGapReport {
    /// `‖b − c‖₂`
    pub delta: f64,
    /// `‖b‖₂`
    pub r: f64,
    /// Squared Frobenius norm of `bbᵀ − ccᵀ`.
    pub gap: f64,
    /// `3δ²r² + 4δ³r + δ⁴`
    pub statement_bound: f64,
    /// `4δr³ + 3δ²r² + 2δ³r + δ⁴`
    pub proof_bound: f64,
    /// `4δ²r² + 4δ³r + δ⁴`, attained when `c` is a positive multiple of `b`.
    pub sharp_bound: f64,
    pub statement_holds: bool,
    pub proof_holds: bool,
    pub sharp_holds: bool,
}

pub fn rank_one_gap_check(b: &[f64], c: &[f64]) -> Result<RankOneGapReport> {
    if b.len() != c.len() {
        return Err(Error::Dimension {
            expected: b.len(),
            got: c.len(),
        });
    }
    let b = DVector::from_column_slice(b);
    let c = DVector::from_column_slice(c);
    let delta = (&b - &c).norm();
    let r = b.norm();
    let gap = (&b * b.transpose() - &c * c.transpose()).norm_squared();
    let statement_bound = 3.0 * delta.powi(2) * r.powi(2) + 4.0 * delta.powi(3) * r + delta.powi(4);
    let proof_bound = 4.0 * delta * r.powi(3)
        + 3.0 * delta.powi(2) * r.powi(2)
        + 2.0 * delta.powi(3) * r
        + delta.powi(4);
    let sharp_bound = 4.0 * delta.powi(2) * r.powi(2) + 4.0 * delta.powi(3) * r + delta.powi(4);
    let tol = 1e-12 * gap.max(1.0);
    Ok(RankOneGapReport {
        delta,
        r,
        gap,
        statement_bound,
        proof_bound,
        sharp_bound,
        statement_holds: gap <= statement_bound + tol,
        proof_holds: gap <= proof_bound + tol,
        sharp_holds: gap <= sharp_bound + tol,
    })
}

/// Checks the gloss ratio condition on explicit direction quadruples
/// `(ω, ω′, ω̄, ω̄′)`. Quadruples with a non-positive dot product are skipped.
pub fn gloss_property_holds_on<F>(brdf: F, alpha: f64, quads: &[[Vec3; 4]]) -> Result<bool>
where
    F: Fn(&Vec3, &Vec3) -> f64,
{
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    let mut all = true;
    for [w, w_p, wb, wb_p] in quads {
        let dots = w_p.dot(w) * wb_p.dot(wb);
        if !(w_p.dot(w) > 0.0 && wb_p.dot(wb) > 0.0) {
            continue;
        }
        let num = brdf(w_p, wb_p);
        let den = brdf(w, wb);
        for v in [num, den] {
            if !(v > 0.0) {
                return Err(Error::NonPositiveBrdf(v));
            }
        }
        let ratio = num / den;
        let lower = dots.powf(alpha);
        let upper = dots.powf(-alpha);
        let slack = 1e-12 * upper;
        if ratio < lower - slack || ratio > upper + slack {
            all = false;
        }
    }
    Ok(all)
}

/// Samples `n_samples` quadruples of upper-hemisphere directions and checks
/// the gloss ratio condition on all of them.
pub fn gloss_property_check<F, R>(
    brdf: F,
    alpha: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<bool>
where
    F: Fn(&Vec3, &Vec3) -> f64,
    R: Rng + ?Sized,
{
    let quads: Vec<[Vec3; 4]> = (0..n_samples)
        .map(|_| std::array::from_fn(|_| hemisphere(rng)))
        .collect();
    gloss_property_holds_on(brdf, alpha, &quads)
}

fn hemisphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let mut v = random_unit(rng);
    v.z = v.z.abs();
    v
}

/// A campaign row for the combined bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTrial {
    pub trial: u64,
    pub report: PerturbationReport,
}

impl CsvRecord for BoundTrial {
    const HEADER: &'static [&'static str] = &[
        "trial", "eps_E", "eps_rho", "p", "p_prime", "cond_c", "actual", "bound", "holds",
    ];

    fn record(&self) -> Vec<String> {
        let r = &self.report;
        vec![
            self.trial.to_string(),
            fmt_f64(r.eps_e),
            fmt_f64(r.eps_rho),
            fmt_f64(r.p),
            fmt_f64(r.p_prime),
            fmt_f64(r.cond_c),
            fmt_f64(r.actual_diff),
            fmt_f64(r.bound),
            r.holds.to_string(),
        ]
    }
}
