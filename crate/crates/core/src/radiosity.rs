//! Point-collocation diffuse transport `B = E + D_ρ K B`.
//!
//! `K_ij = V_ij · max(cos θ_i, 0) · max(cos θ_j, 0) / (π |d_ij|²) · A_j`, so the
//! discrete operator acts on per-patch values and the patch areas serve as
//! quadrature weights for every norm.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Scene;
use crate::report::fmt_f64;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_BOUNCES: usize = 10_000;
pub const DIRECT_SOLVE_CAP: usize = 2000;

/// Dense non-negative interreflection kernel with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
}

impl KernelMatrix {
    pub(crate) fn from_entries(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    /// Largest row sum, the ∞-norm of `K` on area-weighted fields.
    pub fn inf_norm(&self) -> (usize, f64) {
        max_with_index((0..self.len()).map(|i| self.entries.row(i).sum()))
    }

    /// Area-weighted 1-norm `max_j Σ_i A_i K_ij / A_j`.
    pub fn weighted_one_norm(&self, areas: &[f64]) -> (usize, f64) {
        let n = self.len();
        max_with_index(
            (0..n).map(|j| (0..n).map(|i| areas[i] * self.entries[(i, j)]).sum::<f64>() / areas[j]),
        )
    }

    /// Applies the kernel to a field.
    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.entries * f
    }
}

fn max_with_index(it: impl Iterator<Item = f64>) -> (usize, f64) {
    it.enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
    )
}

/// Assembles `K` and checks the kernel cap and the operator-norm condition
/// `‖K‖₁ ≤ 1`, `‖K‖_∞ ≤ 1` (both area-weighted), which gives `‖D_ρ K‖ ≤ p`.
pub fn assemble_kernel(scene: &Scene) -> Result<KernelMatrix> {
    let entries = kernel_entries(scene)?;
    let kernel = KernelMatrix { entries };
    let areas = scene.areas();
    let (row, inf) = kernel.inf_norm();
    if inf > 1.0 {
        return Err(Error::KernelNorm { row, norm: inf });
    }
    let (col, one) = kernel.weighted_one_norm(&areas);
    if one > 1.0 {
        return Err(Error::KernelNorm {
            row: col,
            norm: one,
        });
    }
    Ok(kernel)
}

/// Kernel entries with the cap check only. Used where the norm condition is
/// checked against a different set of quadrature weights.
pub fn kernel_entries(scene: &Scene) -> Result<DMatrix<f64>> {
    let n = scene.len();
    let patches = scene.patches();
    let areas = scene.areas();
    let normals: Vec<_> = patches.iter().map(|p| p.normal()).collect();
    let vis = scene.visibility_matrix();
    let cap = scene.kernel_cap();

    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for j in 0..n {
                if i == j || !vis[i * n + j] {
                    continue;
                }
                let d = patches[j].center - patches[i].center;
                let dist2 = d.norm_squared();
                let dist = dist2.sqrt();
                let cos_i = normals[i].dot(&d) / dist;
                let cos_j = -normals[j].dot(&d) / dist;
                let value = if dist2 == 0.0 {
                    f64::INFINITY
                } else if cos_i <= 0.0 || cos_j <= 0.0 {
                    0.0
                } else {
                    cos_i * cos_j / (PI * dist2)
                };
                if !(value <= cap) {
                    return Err(Error::KernelCap { i, j, value, cap });
                }
                row[j] = value * areas[j];
            }
            Ok(row)
        })
        .collect();

    let mut entries = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            entries[(i, j)] = v;
        }
    }
    Ok(entries)
}

/// Per-patch radiosity (or emittance) values.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiosityField {
    values: DVector<f64>,
}

impl RadiosityField {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `patch_index,value` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patch_index", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([i.to_string(), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl From<DVector<f64>> for RadiosityField {
    fn from(values: DVector<f64>) -> Self {
        Self::new(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

/// Area-weighted norm of a per-patch field.
pub fn weighted_norm(f: &RadiosityField, scene: &Scene, which: NormKind) -> Result<f64> {
    weighted_norm_with(f.values(), &scene.areas(), which)
}

pub fn weighted_norm_with(f: &DVector<f64>, areas: &[f64], which: NormKind) -> Result<f64> {
    if f.len() != areas.len() {
        return Err(Error::Dimension {
            expected: areas.len(),
            got: f.len(),
        });
    }
    let pairs = f.iter().zip(areas);
    Ok(match which {
        NormKind::L1 => pairs.map(|(v, a)| v.abs() * a).sum(),
        NormKind::L2 => pairs.map(|(v, a)| v * v * a).sum::<f64>().sqrt(),
        NormKind::Linf => f.iter().fold(0.0, |m, v| m.max(v.abs())),
    })
}

/// Result of a truncated Neumann series.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannSolution {
    pub field: RadiosityField,
    /// Index of the last series term included.
    pub bounces: usize,
    /// Area-weighted L2 norm of that term.
    pub final_increment: f64,
    pub converged: bool,
}

/// The assembled operator `T = D_ρ K` of one scene, reusable across emittances.
#[derive(Debug, Clone)]
pub struct Transport {
    areas: Vec<f64>,
    kernel: KernelMatrix,
    operator: DMatrix<f64>,
}

impl Transport {
    pub fn new(scene: &Scene) -> Result<Self> {
        let p = scene.max_albedo();
        if !(p < 1.0) {
            return Err(Error::Divergent(p));
        }
        let kernel = assemble_kernel(scene)?;
        Ok(Self::from_kernel(scene, kernel))
    }

    pub fn from_kernel(scene: &Scene, kernel: KernelMatrix) -> Self {
        let mut operator = kernel.entries.clone();
        for (i, p) in scene.patches().iter().enumerate() {
            operator.row_mut(i).scale_mut(p.albedo);
        }
        Self {
            areas: scene.areas(),
            kernel,
            operator,
        }
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    /// `D_ρ K`.
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    fn check_emittance(&self, e: &RadiosityField) -> Result<()> {
        if e.len() != self.areas.len() {
            return Err(Error::Dimension {
                expected: self.areas.len(),
                got: e.len(),
            });
        }
        if let Some((index, &value)) = e.values().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeEmittance { index, value });
        }
        Ok(())
    }

    pub fn solve_neumann(
        &self,
        e: &RadiosityField,
        tol: f64,
        max_bounces: usize,
    ) -> Result<NeumannSolution> {
        self.check_emittance(e)?;
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {tol}"
            )));
        }
        let mut sum = e.values().clone();
        let mut term = e.values().clone();
        let mut increment = weighted_norm_with(&term, &self.areas, NormKind::L2)?;
        let mut m = 0;
        while increment >= tol && m < max_bounces {
            term = &self.operator * &term;
            sum += &term;
            increment = weighted_norm_with(&term, &self.areas, NormKind::L2)?;
            m += 1;
        }
        Ok(NeumannSolution {
            field: RadiosityField::new(sum),
            bounces: m,
            final_increment: increment,
            converged: increment < tol,
        })
    }

    pub fn solve_direct(&self, e: &RadiosityField) -> Result<RadiosityField> {
        self.check_emittance(e)?;
        let n = self.areas.len();
        if n > DIRECT_SOLVE_CAP {
            return Err(Error::TooLarge {
                patches: n,
                cap: DIRECT_SOLVE_CAP,
            });
        }
        let system = DMatrix::identity(n, n) - &self.operator;
        let lu = system.clone().lu();
        let solution = lu.solve(e.values()).ok_or(Error::Singular {
            condition: f64::INFINITY,
        })?;
        let residual = (&system * &solution - e.values()).norm();
        if !(residual <= 1e-8 * e.values().norm()) {
            let condition = lu
                .try_inverse()
                .map_or(f64::INFINITY, |inv| one_norm(&system) * one_norm(&inv));
            return Err(Error::Singular { condition });
        }
        Ok(RadiosityField::new(solution))
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Partial Neumann sum `Σ (D_ρ K)ⁿ E`, stopping at the first term whose
/// area-weighted L2 norm drops below `tol`.
pub fn solve_neumann(
    scene: &Scene,
    e: &RadiosityField,
    tol: f64,
    max_bounces: usize,
) -> Result<NeumannSolution> {
    Transport::new(scene)?.solve_neumann(e, tol, max_bounces)
}

/// Dense LU solve of `(I − D_ρ K) B = E`.
pub fn solve_direct(scene: &Scene, e: &RadiosityField) -> Result<RadiosityField> {
    Transport::new(scene)?.solve_direct(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::geometry::{Patch, Vec3};

    fn closed_form_two_patch(k: f64) -> (f64, f64) {
        let denom = 1.0 - 0.25 * k * k;
        (1.0 / denom, 0.5 * k / denom)
    }

    #[test]
    fn facing_pair_kernel_by_hand() {
        let scene = fixtures::two_facing_patches();
        let k = assemble_kernel(&scene).unwrap();
        let expected = 0.01 / PI;
        assert!((k.entries()[(0, 1)] - expected).abs() < 1e-15);
        assert!((k.entries()[(1, 0)] - expected).abs() < 1e-15);
        assert_eq!(k.entries()[(0, 0)], 0.0);
        assert!((expected - 3.1831e-3).abs() < 1e-7);
    }

    #[test]
    fn coplanar_and_occluded_pairs_vanish() {
        let coplanar = Scene::unlit(vec![
            Patch::new(Vec3::zeros(), Vec3::x() * 0.1, Vec3::y() * 0.1, 0.5),
            Patch::new(Vec3::x(), Vec3::x() * 0.1, Vec3::y() * 0.1, 0.5),
        ])
        .unwrap();
        assert_eq!(assemble_kernel(&coplanar).unwrap().entries()[(0, 1)], 0.0);

        let mut patches = fixtures::two_facing_patches().patches().to_vec();
        patches.push(Patch::new(
            Vec3::new(0.0, 0.0, 0.5),
            Vec3::x() * 0.5,
            Vec3::y() * 0.5,
            0.5,
        ));
        let occluded = Scene::unlit(patches).unwrap();
        assert_eq!(assemble_kernel(&occluded).unwrap().entries()[(0, 1)], 0.0);
    }

    #[test]
    fn kernel_symmetric_up_to_area() {
        let scene = fixtures::open_box();
        let k = assemble_kernel(&scene).unwrap();
        let a = scene.areas();
        for i in 0..scene.len() {
            for j in 0..scene.len() {
                let lhs = k.entries()[(i, j)] / a[j];
                let rhs = k.entries()[(j, i)] / a[i];
                assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn coincident_centers_hit_the_cap() {
        let scene = Scene::unlit(vec![
            Patch::new(Vec3::zeros(), Vec3::x() * 0.1, Vec3::y() * 0.1, 0.5),
            Patch::new(Vec3::zeros(), Vec3::y() * 0.1, Vec3::x() * 0.1, 0.5),
        ])
        .unwrap();
        assert!(matches!(
            assemble_kernel(&scene),
            Err(Error::KernelCap { .. })
        ));
    }

    #[test]
    fn coarse_discretization_rejected_by_norm_check() {
        // two large facing patches a short distance apart: form factor sum > 1
        let scene = Scene::unlit(vec![
            Patch::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 0.5),
            Patch::new(Vec3::new(0.0, 0.0, 0.2), Vec3::y(), Vec3::x(), 0.5),
        ])
        .unwrap();
        assert!(matches!(
            assemble_kernel(&scene),
            Err(Error::KernelNorm { .. })
        ));
    }

    #[test]
    fn isolated_patch_converges_after_one_bounce() {
        let scene = fixtures::single_patch();
        let sol = solve_neumann(
            &scene,
            &RadiosityField::from_slice(&[1.0]),
            DEFAULT_TOL,
            DEFAULT_MAX_BOUNCES,
        )
        .unwrap();
        assert_eq!(sol.field.values()[0], 1.0);
        assert_eq!(sol.bounces, 1);
        assert!(sol.converged);
    }

    #[test]
    fn two_patch_neumann_and_direct_match_closed_form() {
        let scene = fixtures::two_facing_patches();
        let k = 0.01 / PI;
        let (b1, b2) = closed_form_two_patch(k);
        let e = RadiosityField::from_slice(&[1.0, 0.0]);
        let direct = solve_direct(&scene, &e).unwrap();
        assert!((direct.values()[0] - b1).abs() < 1e-12);
        assert!((direct.values()[1] - b2).abs() < 1e-12);
        let neumann = solve_neumann(&scene, &e, 1e-14, DEFAULT_MAX_BOUNCES).unwrap();
        assert!((neumann.field.values()[0] - b1).abs() < 1e-12);
        assert!((neumann.field.values()[1] - b2).abs() < 1e-12);
        assert!((b1 - 1.0000025).abs() < 1e-7);
        assert!((b2 - 1.59155e-3).abs() < 1e-8);
    }

    #[test]
    fn zero_emittance_gives_zero_radiosity() {
        let scene = fixtures::open_box();
        let b = solve_direct(&scene, &RadiosityField::zeros(scene.len())).unwrap();
        assert!(b.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let scene = fixtures::open_box();
        let e = RadiosityField::new(scene.luminaires().basis()[0].clone());
        let sol = solve_neumann(&scene, &e, 1e-14, 1).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.bounces, 1);
    }

    #[test]
    fn negative_emittance_rejected() {
        let scene = fixtures::two_facing_patches();
        let e = RadiosityField::from_slice(&[1.0, -0.1]);
        assert!(matches!(
            solve_direct(&scene, &e),
            Err(Error::NegativeEmittance { index: 1, .. })
        ));
    }

    #[test]
    fn norms_of_constant_field() {
        let patches = (0..4)
            .map(|i| {
                Patch::new(
                    Vec3::new(i as f64 * 3.0, 0.0, 0.0),
                    Vec3::x(),
                    Vec3::y(),
                    0.5,
                )
            })
            .collect();
        let scene = Scene::unlit(patches).unwrap();
        let f = RadiosityField::from_slice(&[1.0; 4]);
        assert_eq!(weighted_norm(&f, &scene, NormKind::L1).unwrap(), 4.0);
        assert_eq!(weighted_norm(&f, &scene, NormKind::L2).unwrap(), 2.0);
        assert_eq!(weighted_norm(&f, &scene, NormKind::Linf).unwrap(), 1.0);
        let g = RadiosityField::from_slice(&[3.0; 4]);
        assert_eq!(weighted_norm(&g, &scene, NormKind::L1).unwrap(), 12.0);
        assert_eq!(weighted_norm(&g, &scene, NormKind::L2).unwrap(), 6.0);
        assert_eq!(weighted_norm(&g, &scene, NormKind::Linf).unwrap(), 3.0);
        assert!(weighted_norm(&RadiosityField::zeros(3), &scene, NormKind::L2).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut buf = Vec::new();
        RadiosityField::from_slice(&[0.5, 2.0])
            .write_csv(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "patch_index,value");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,5.0000000000000000e-1"));
    }
}
