//! Planar-patch scenes, affine perturbations and center-to-center visibility.
//!
//! A patch is a parallelogram stored as a center and two edge vectors, so an
//! affine map transforms areas and normals exactly: edges map to `A·edge`,
//! centers to `A·s + b`.

use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Default cap on any kernel entry. Scenes that exceed it contain a throat.
pub const DEFAULT_KERNEL_CAP: f64 = 1e6;

/// Intersections closer than this to either segment endpoint are ignored.
pub const SEGMENT_ENDPOINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub albedo: f64,
}

impl Patch {
    pub fn new(center: Vec3, edge_u: Vec3, edge_v: Vec3, albedo: f64) -> Self {
        Self {
            center,
            edge_u,
            edge_v,
            albedo,
        }
    }

    /// Unit normal `normalize(edge_u × edge_v)`.
    pub fn normal(&self) -> Vec3 {
        let n = self.edge_u.cross(&self.edge_v);
        n / n.norm()
    }

    pub fn area(&self) -> f64 {
        self.edge_u.cross(&self.edge_v).norm()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let finite = self.center.iter().all(|x| x.is_finite())
            && self.edge_u.iter().all(|x| x.is_finite())
            && self.edge_v.iter().all(|x| x.is_finite())
            && self.albedo.is_finite();
        if !finite {
            return Err(Error::NonFinite { what: "patch" });
        }
        if !(self.albedo > 0.0 && self.albedo < 1.0) {
            return Err(Error::AlbedoOutOfRange {
                patch: index,
                albedo: self.albedo,
            });
        }
        let area = self.area();
        if !(area > 0.0) {
            return Err(Error::DegeneratePatch { patch: index, area });
        }
        Ok(())
    }

    /// Whether the open segment `from → to` crosses this parallelogram.
    pub fn occludes(&self, from: &Vec3, to: &Vec3) -> bool {
        let dir = to - from;
        let len = dir.norm();
        let n = self.edge_u.cross(&self.edge_v);
        let n_norm = n.norm();
        // signed distances of the endpoints to the patch plane
        let d_from = n.dot(&(from - self.center)) / n_norm;
        let d_to = n.dot(&(to - self.center)) / n_norm;
        if d_from.abs() <= SEGMENT_ENDPOINT_TOL
            || d_to.abs() <= SEGMENT_ENDPOINT_TOL
            || (d_from > 0.0) == (d_to > 0.0)
        {
            // touching, grazing or on one side
            return false;
        }
        let tau = d_from / (d_from - d_to);
        if tau * len <= SEGMENT_ENDPOINT_TOL || (1.0 - tau) * len <= SEGMENT_ENDPOINT_TOL {
            return false;
        }
        let rel = from + dir * tau - self.center;
        // coordinates of `rel` in the (edge_u, edge_v) frame
        let uu = self.edge_u.dot(&self.edge_u);
        let uv = self.edge_u.dot(&self.edge_v);
        let vv = self.edge_v.dot(&self.edge_v);
        let ru = rel.dot(&self.edge_u);
        let rv = rel.dot(&self.edge_v);
        let det = uu * vv - uv * uv;
        let s = (vv * ru - uv * rv) / det;
        let t = (uu * rv - uv * ru) / det;
        s.abs() <= 0.5 && t.abs() <= 0.5
    }
}

/// Basis luminaires plus the symmetric Dirichlet concentration for mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminaireModel {
    emittance_basis: Vec<DVector<f64>>,
    dirichlet_alpha: f64,
}

impl LuminaireModel {
    /// Builds a model from basis vectors that already have unit area-weighted L2 norm.
    pub fn new(
        emittance_basis: Vec<DVector<f64>>,
        dirichlet_alpha: f64,
        areas: &[f64],
    ) -> Result<Self> {
        check_alpha(dirichlet_alpha)?;
        for (l, e) in emittance_basis.iter().enumerate() {
            check_emittance(l, e, areas)?;
            let norm = area_l2(e, areas);
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidLuminaire {
                    luminaire: l,
                    reason: format!("area-weighted L2 norm {norm} is not 1"),
                });
            }
        }
        Ok(Self {
            emittance_basis,
            dirichlet_alpha,
        })
    }

    /// Rescales each raw emittance vector to unit area-weighted L2 norm.
    /// Returns the model and the scale factor applied to each vector.
    pub fn normalized(
        raw: Vec<DVector<f64>>,
        dirichlet_alpha: f64,
        areas: &[f64],
    ) -> Result<(Self, Vec<f64>)> {
        check_alpha(dirichlet_alpha)?;
        let mut scales = Vec::with_capacity(raw.len());
        let mut basis = Vec::with_capacity(raw.len());
        for (l, e) in raw.into_iter().enumerate() {
            check_emittance(l, &e, areas)?;
            let norm = area_l2(&e, areas);
            if !(norm > 0.0) {
                return Err(Error::InvalidLuminaire {
                    luminaire: l,
                    reason: "emittance is identically zero".into(),
                });
            }
            scales.push(1.0 / norm);
            basis.push(e / norm);
        }
        Ok((
            Self {
                emittance_basis: basis,
                dirichlet_alpha,
            },
            scales,
        ))
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.emittance_basis
    }

    pub fn len(&self) -> usize {
        self.emittance_basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emittance_basis.is_empty()
    }

    pub fn dirichlet_alpha(&self) -> f64 {
        self.dirichlet_alpha
    }

    /// Emittance field `Σ θ_i E_i` for mixing weights `theta`.
    pub fn mix(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: theta.len(),
            });
        }
        let n = self.emittance_basis.first().map_or(0, |e| e.len());
        let mut out = DVector::zeros(n);
        for (w, e) in theta.iter().zip(&self.emittance_basis) {
            out.axpy(*w, e, 1.0);
        }
        Ok(out)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "dirichlet_alpha must be positive, got {alpha}"
        )))
    }
}

fn check_emittance(l: usize, e: &DVector<f64>, areas: &[f64]) -> Result<()> {
    if e.len() != areas.len() {
        return Err(Error::InvalidLuminaire {
            luminaire: l,
            reason: format!("has {} entries for {} patches", e.len(), areas.len()),
        });
    }
    if let Some((i, v)) = e
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
    {
        return Err(Error::InvalidLuminaire {
            luminaire: l,
            reason: format!("entry {i} = {v} is not a finite non-negative value"),
        });
    }
    Ok(())
}

fn area_l2(e: &DVector<f64>, areas: &[f64]) -> f64 {
    e.iter()
        .zip(areas)
        .map(|(v, a)| v * v * a)
        .sum::<f64>()
        .sqrt()
}

/// An immutable scene: ordered patches plus a luminaire model.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    patches: Vec<Patch>,
    luminaires: LuminaireModel,
    kernel_cap: f64,
}

impl Scene {
    pub fn new(patches: Vec<Patch>, luminaires: LuminaireModel) -> Result<Self> {
        Self::with_kernel_cap(patches, luminaires, DEFAULT_KERNEL_CAP)
    }

    pub fn with_kernel_cap(
        patches: Vec<Patch>,
        luminaires: LuminaireModel,
        kernel_cap: f64,
    ) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Empty("scene has no patches"));
        }
        for (i, p) in patches.iter().enumerate() {
            p.validate(i)?;
        }
        for (l, e) in luminaires.basis().iter().enumerate() {
            if e.len() != patches.len() {
                return Err(Error::InvalidLuminaire {
                    luminaire: l,
                    reason: format!("has {} entries for {} patches", e.len(), patches.len()),
                });
            }
        }
        if !(kernel_cap > 0.0) {
            return Err(Error::InvalidParameter(
                "kernel cap must be positive".into(),
            ));
        }
        Ok(Self {
            patches,
            luminaires,
            kernel_cap,
        })
    }

    /// Scene with patches only and no luminaires.
    pub fn unlit(patches: Vec<Patch>) -> Result<Self> {
        Self::new(
            patches,
            LuminaireModel {
                emittance_basis: Vec::new(),
                dirichlet_alpha: 1.0,
            },
        )
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn luminaires(&self) -> &LuminaireModel {
        &self.luminaires
    }

    pub fn kernel_cap(&self) -> f64 {
        self.kernel_cap
    }

    pub fn areas(&self) -> Vec<f64> {
        self.patches.iter().map(Patch::area).collect()
    }

    pub fn albedos(&self) -> Vec<f64> {
        self.patches.iter().map(|p| p.albedo).collect()
    }

    /// `p = max albedo`.
    pub fn max_albedo(&self) -> f64 {
        self.patches.iter().map(|p| p.albedo).fold(0.0, f64::max)
    }

    /// Same geometry and luminaires with per-patch albedo offsets applied.
    pub fn with_albedo_delta(&self, delta: &[f64]) -> Result<Scene> {
        if delta.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: delta.len(),
            });
        }
        let patches = self
            .patches
            .iter()
            .zip(delta)
            .map(|(p, d)| Patch {
                albedo: p.albedo + d,
                ..p.clone()
            })
            .collect();
        Scene::with_kernel_cap(patches, self.luminaires.clone(), self.kernel_cap)
    }

    /// Same patches with a different luminaire model.
    pub fn with_luminaires(&self, luminaires: LuminaireModel) -> Result<Scene> {
        Scene::with_kernel_cap(self.patches.clone(), luminaires, self.kernel_cap)
    }

    /// Visibility between the centers of patches `i` and `j`.
    pub fn visibility(&self, i: usize, j: usize) -> Result<bool> {
        let n = self.len();
        for index in [i, j] {
            if index >= n {
                return Err(Error::PatchIndex { index, len: n });
            }
        }
        if i == j {
            return Err(Error::SelfVisibility(i));
        }
        Ok(self.visible_unchecked(i, j))
    }

    fn visible_unchecked(&self, i: usize, j: usize) -> bool {
        // canonical orientation keeps the predicate exactly symmetric
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let from = &self.patches[a].center;
        let to = &self.patches[b].center;
        !self
            .patches
            .iter()
            .enumerate()
            .any(|(k, p)| k != a && k != b && p.occludes(from, to))
    }

    /// Row-major `n × n` visibility table; the diagonal is `false`.
    pub fn visibility_matrix(&self) -> Vec<bool> {
        let n = self.len();
        let upper: Vec<Vec<bool>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| self.visible_unchecked(i, j)).collect())
            .collect();
        let mut out = vec![false; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + 1 + off;
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}

/// Affine geometry map `s ↦ A·s + b` with `det A ≥ 0` and `σ_min(A) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePerturbation {
    matrix_a: Mat3,
    offset_b: Vec3,
}

impl AffinePerturbation {
    pub fn new(matrix_a: Mat3, offset_b: Vec3) -> Result<Self> {
        if !matrix_a
            .iter()
            .chain(offset_b.iter())
            .all(|x| x.is_finite())
        {
            return Err(Error::NonFinite { what: "affine map" });
        }
        let det = matrix_a.determinant();
        let (_, sigma_min) = singular_range(&matrix_a);
        if !(sigma_min > 0.0) || det < 0.0 {
            return Err(Error::SingularAffine { sigma_min, det });
        }
        Ok(Self { matrix_a, offset_b })
    }

    pub fn identity() -> Self {
        Self {
            matrix_a: Mat3::identity(),
            offset_b: Vec3::zeros(),
        }
    }

    pub fn matrix_a(&self) -> &Mat3 {
        &self.matrix_a
    }

    pub fn offset_b(&self) -> &Vec3 {
        &self.offset_b
    }

    /// `(σ_max, σ_min)` of the linear part.
    pub fn singular_values(&self) -> (f64, f64) {
        singular_range(&self.matrix_a)
    }

    /// `c = σ_max / σ_min`.
    pub fn condition_number(&self) -> Result<f64> {
        condition_number(self)
    }

    /// `self ∘ first`: the map that applies `first` and then `self`.
    pub fn after(&self, first: &AffinePerturbation) -> Result<Self> {
        Self::new(
            self.matrix_a * first.matrix_a,
            self.matrix_a * first.offset_b + self.offset_b,
        )
    }

    pub fn apply_point(&self, s: &Vec3) -> Vec3 {
        self.matrix_a * s + self.offset_b
    }
}

fn singular_range(a: &Mat3) -> (f64, f64) {
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min)
}

pub fn condition_number(t: &AffinePerturbation) -> Result<f64> {
    let (max, min) = t.singular_values();
    if !(min > 0.0) {
        return Err(Error::SingularAffine {
            sigma_min: min,
            det: t.matrix_a.determinant(),
        });
    }
    Ok(max / min)
}

/// Maps every patch through `t`. Albedo and luminaires are carried over through
/// the parameter-domain correspondence, so patch `i` of the result is patch `i`
/// of the input.
pub fn apply_affine(scene: &Scene, t: &AffinePerturbation) -> Result<Scene> {
    let a = t.matrix_a();
    let patches = scene
        .patches()
        .iter()
        .map(|p| Patch {
            center: t.apply_point(&p.center),
            edge_u: a * p.edge_u,
            edge_v: a * p.edge_v,
            albedo: p.albedo,
        })
        .collect();
    Scene::with_kernel_cap(patches, scene.luminaires().clone(), scene.kernel_cap())
}
