//! Effective generator matrices: radiosity bases, second moments, optimal
//! low-rank fits and the regret of fitting on estimated moments.
//!
//! Fields are represented in the area-weighted indicator basis
//! `φ_i = e_i / √A_i`, so coefficient vectors are `√A ∘ B` and Euclidean inner
//! products equal area-weighted L2 inner products.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::geometry::Scene;
use crate::isotonic::distance_sq_nonincreasing;
use crate::radiosity::{RadiosityField, Transport};

/// Minimum separation `λ_r − λ_{r+1}` accepted by [`egm_fit`].
pub const EIGEN_GAP_TOL: f64 = 1e-10;
/// Largest `N_o` accepted by [`lp_regret_bound`].
pub const LP_MAX_DIM: usize = 12;

/// Columns are per-luminaire radiosity solutions in the indicator basis.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiosityBasis {
    matrix_b: DMatrix<f64>,
}

impl RadiosityBasis {
    pub fn new(matrix_b: DMatrix<f64>) -> Self {
        Self { matrix_b }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix_b
    }

    /// Coefficients `B θ` of the radiosity under mixing weights `theta`.
    pub fn coefficients(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.matrix_b.ncols() {
            return Err(Error::Dimension {
                expected: self.matrix_b.ncols(),
                got: theta.len(),
            });
        }
        Ok(&self.matrix_b * DVector::from_column_slice(theta))
    }
}

/// Field values → indicator-basis coefficients.
pub fn to_coefficients(values: &DVector<f64>, areas: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        values.len(),
        values.iter().zip(areas).map(|(v, a)| v * a.sqrt()),
    )
}

pub fn radiosity_basis(scene: &Scene) -> Result<RadiosityBasis> {
    let transport = Transport::new(scene)?;
    let areas = scene.areas();
    let basis = scene.luminaires().basis();
    let mut matrix_b = DMatrix::zeros(scene.len(), basis.len());
    for (l, e) in basis.iter().enumerate() {
        let b = transport.solve_direct(&RadiosityField::new(e.clone()))?;
        matrix_b.set_column(l, &to_coefficients(b.values(), &areas));
    }
    Ok(RadiosityBasis { matrix_b })
}

/// `E[θθᵀ]` for `θ ~ Dirichlet(α, …, α)` on `n_e` components.
pub fn dirichlet_second_moment(n_e: usize, alpha: f64) -> Result<DMatrix<f64>> {
    if n_e == 0 {
        return Err(Error::InvalidParameter("n_e must be >= 1".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let a0 = n_e as f64 * alpha;
    let denom = a0 * (a0 + 1.0);
    let diag = alpha * (alpha + 1.0) / denom;
    let off = alpha * alpha / denom;
    Ok(DMatrix::from_fn(
        n_e,
        n_e,
        |i, j| if i == j { diag } else { off },
    ))
}

/// Source of luminaire mixing weights θ.
pub trait ThetaSampler: Sync {
    fn dim(&self) -> usize;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
    fn second_moment(&self) -> Result<DMatrix<f64>>;
}

/// Symmetric Dirichlet sampler drawn by normalizing independent Gamma variates.
#[derive(Debug, Clone)]
pub struct SymmetricDirichlet {
    n: usize,
    alpha: f64,
    gamma: Gamma<f64>,
}

impl SymmetricDirichlet {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "Dirichlet needs at least one component".into(),
            ));
        }
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| Error::InvalidParameter(format!("alpha {alpha}: {e}")))?;
        Ok(Self { n, alpha, gamma })
    }
}

impl ThetaSampler for SymmetricDirichlet {
    fn dim(&self) -> usize {
        self.n
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let g: Vec<f64> = (0..self.n).map(|_| self.gamma.sample(rng)).collect();
            let s: f64 = g.iter().sum();
            if s > 0.0 {
                return g.into_iter().map(|x| x / s).collect();
            }
        }
    }

    fn second_moment(&self) -> Result<DMatrix<f64>> {
        dirichlet_second_moment(self.n, self.alpha)
    }
}

/// Symmetric PSD matrix with eigenvalues sorted nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    matrix_c: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

impl SecondMoment {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "second moment",
            });
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale.max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let matrix_c = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(matrix_c.clone());
        let n = matrix_c.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigvals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigvecs = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigvecs.set_column(dst, &eig.eigenvectors.column(src));
        }
        if let Some(&min) = eigvals.as_slice().last() {
            if min < -1e-9 * scale {
                return Err(Error::NotPsd(min));
            }
        }
        Ok(Self {
            matrix_c,
            eigvals,
            eigvecs,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix_c
    }

    /// Eigenvalues, nonincreasing.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigvals`].
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn dim(&self) -> usize {
        self.matrix_c.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix_c.trace()
    }

    pub fn reconstruction_error(&self) -> f64 {
        let recon =
            &self.eigvecs * DMatrix::from_diagonal(&self.eigvals) * self.eigvecs.transpose();
        (recon - &self.matrix_c).norm()
    }
}

/// `C = B E[θθᵀ] Bᵀ`.
pub fn second_moment(basis: &RadiosityBasis, theta_moment: &DMatrix<f64>) -> Result<SecondMoment> {
    let b = basis.matrix();
    if theta_moment.nrows() != b.ncols() || !theta_moment.is_square() {
        return Err(Error::Dimension {
            expected: b.ncols(),
            got: theta_moment.nrows(),
        });
    }
    // validates symmetry and PSD of the moment itself
    SecondMoment::new(theta_moment.clone())?;
    SecondMoment::new(b * theta_moment * b.transpose())
}

/// `(1/N_s) Σ bᵢbᵢᵀ`.
pub fn empirical_second_moment(samples: &[DVector<f64>]) -> Result<SecondMoment> {
    let first = samples.first().ok_or(Error::Empty("no samples"))?;
    let d = first.len();
    let mut x = DMatrix::zeros(d, samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: s.len(),
            });
        }
        x.set_column(i, s);
    }
    let c = &x * x.transpose() / samples.len() as f64;
    SecondMoment::new(c)
}

/// An `N_o × r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Egm {
    matrix_g: DMatrix<f64>,
}

impl Egm {
    pub fn new(matrix_g: DMatrix<f64>) -> Result<Self> {
        let r = matrix_g.ncols();
        if r == 0 || r > matrix_g.nrows() {
            return Err(Error::InvalidParameter(format!(
                "rank {r} invalid for dimension {}",
                matrix_g.nrows()
            )));
        }
        let dev = (matrix_g.transpose() * &matrix_g - DMatrix::identity(r, r)).amax();
        if dev > 1e-10 {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self { matrix_g })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix_g
    }

    pub fn rank(&self) -> usize {
        self.matrix_g.ncols()
    }
}

/// Expected squared representation error `Tr C − Tr GᵀCG`.
pub fn egm_loss(g: &Egm, c: &SecondMoment) -> Result<f64> {
    if g.matrix().nrows() != c.dim() {
        return Err(Error::Dimension {
            expected: c.dim(),
            got: g.matrix().nrows(),
        });
    }
    let gm = g.matrix();
    Ok(c.trace() - (gm.transpose() * c.matrix() * gm).trace())
}

/// Top-`r` eigenvectors of `C`. Fails on an eigenvalue tie at the cut.
pub fn egm_fit(c: &SecondMoment, r: usize) -> Result<Egm> {
    let n = c.dim();
    if r == 0 || r > n {
        return Err(Error::InvalidParameter(format!(
            "rank {r} must lie in 1..={n}"
        )));
    }
    if r < n {
        let gap = c.eigvals()[r - 1] - c.eigvals()[r];
        if !(gap > EIGEN_GAP_TOL) {
            return Err(Error::EigenTie { rank: r, gap });
        }
    }
    Egm::new(c.eigvecs().columns(0, r).into_owned())
}

/// `L(Ĝ; C_true) − L(G; C_true)` with `Ĝ` fitted on `c_est` and `G` on `c_true`.
pub fn theorem2_regret(c_true: &SecondMoment, c_est: &SecondMoment, r: usize) -> Result<f64> {
    let g = egm_fit(c_true, r)?;
    let g_hat = egm_fit(c_est, r)?;
    Ok(egm_loss(&g_hat, c_true)? - egm_loss(&g, c_true)?)
}

/// `Σ_{i=1}^{N_o} λ_i − Σ_{i=N_o−r+1}^{N_o} λ_i`.
pub fn loose_bound(c: &SecondMoment, r: usize) -> Result<f64> {
    let n = c.dim();
    if r > n {
        return Err(Error::InvalidParameter(format!(
            "rank {r} exceeds dimension {n}"
        )));
    }
    let l = c.eigvals().as_slice();
    Ok(l.iter().sum::<f64>() - l[n - r..].iter().sum::<f64>())
}

/// Whether an arrangement is reachable within squared budget `budget`.
fn within_budget(dist_sq: f64, budget: f64) -> bool {
    dist_sq <= budget * (1.0 + 1e-12)
}

/// Permutation-aware regret bound `Σ_{i≤r} λ_i − v`, where `v` is the smallest
/// top-`r` sum over rearrangements `Pλ` whose squared distance to the
/// nonincreasing cone is at most `budget_d`.
///
/// Only arrangements with both blocks sorted descending are searched; each
/// r-subset is visited once.
///
/// Only whole permutations are considered, so this does not bound the regret
/// of an estimate whose eigenvectors are partially rotated: see
/// `lp_bound_misses_partial_rotation`.
pub fn lp_regret_bound(eigvals: &[f64], r: usize, budget_d: f64) -> Result<f64> {
    let n = eigvals.len();
    if eigvals.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Unsorted);
    }
    if r == 0 || r >= n {
        return Err(Error::InvalidParameter(format!(
            "rank {r} must lie in 1..{n}"
        )));
    }
    if n > LP_MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "dimension {n} exceeds cap {LP_MAX_DIM}"
        )));
    }
    if !(budget_d >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "budget must be >= 0, got {budget_d}"
        )));
    }
    let top: f64 = eigvals[..r].iter().sum();
    let mut v = top;
    let mut arrangement = Vec::with_capacity(n);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != r {
            continue;
        }
        arrangement.clear();
        // eigvals are sorted, so index order gives each block sorted descending
        arrangement.extend((0..n).filter(|i| mask & (1 << i) != 0).map(|i| eigvals[i]));
        let sum: f64 = arrangement.iter().sum();
        if sum >= v {
            continue;
        }
        arrangement.extend((0..n).filter(|i| mask & (1 << i) == 0).map(|i| eigvals[i]));
        if within_budget(distance_sq_nonincreasing(&arrangement), budget_d) {
            v = sum;
        }
    }
    Ok(top - v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scenegen::trial_rng;
    use std::f64::consts::PI;

    fn diag(v: &[f64]) -> SecondMoment {
        SecondMoment::new(DMatrix::from_diagonal(&DVector::from_column_slice(v))).unwrap()
    }

    fn axes(n: usize, r: usize) -> Egm {
        Egm::new(DMatrix::identity(n, r)).unwrap()
    }

    #[test]
    fn single_patch_basis() {
        let b = radiosity_basis(&fixtures::single_patch()).unwrap();
        assert_eq!(b.matrix(), &DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn two_patch_basis_matches_closed_form() {
        let b = radiosity_basis(&fixtures::two_facing_patches()).unwrap();
        let k = 0.01 / PI;
        let denom = 1.0 - 0.25 * k * k;
        // E = 10·e₁ (unit area-weighted norm); coefficients scale by √0.01 = 0.1
        let (b1, b2) = (10.0 / denom, 5.0 * k / denom);
        let m = b.matrix();
        assert!((m[(0, 0)] - 0.1 * b1).abs() < 1e-12);
        assert!((m[(1, 0)] - 0.1 * b2).abs() < 1e-12);
        assert!((m[(1, 1)] - 0.1 * b1).abs() < 1e-12);
        assert!((m[(0, 1)] - 0.1 * b2).abs() < 1e-12);
    }

    #[test]
    fn basis_is_linear_in_luminaires() {
        let scene = fixtures::open_box();
        let b = radiosity_basis(&scene).unwrap();
        let sum = &scene.luminaires().basis()[0] + &scene.luminaires().basis()[1];
        let t = Transport::new(&scene).unwrap();
        let direct = t.solve_direct(&RadiosityField::new(sum)).unwrap();
        let coeffs = to_coefficients(direct.values(), &scene.areas());
        let col_sum = b.matrix().column(0) + b.matrix().column(1);
        assert!((coeffs - col_sum).amax() < 1e-12);
    }

    #[test]
    fn dirichlet_moment_values() {
        assert_eq!(
            dirichlet_second_moment(1, 0.7).unwrap(),
            DMatrix::from_element(1, 1, 1.0)
        );
        let m = dirichlet_second_moment(2, 1.0).unwrap();
        assert!((m[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((m[(0, 1)] - 1.0 / 6.0).abs() < 1e-15);
        let m = dirichlet_second_moment(5, 0.3).unwrap();
        for i in 0..5 {
            assert!((m.row(i).sum() - 0.2).abs() < 1e-15);
        }
        assert!((m.sum() - 1.0).abs() < 1e-14);
        assert!(dirichlet_second_moment(0, 1.0).is_err());
        assert!(dirichlet_second_moment(2, 0.0).is_err());
    }

    #[test]
    fn dirichlet_moment_matches_sampling() {
        // Monte Carlo oracle: 10⁶ draws, each entry within 3 standard errors
        let sampler = SymmetricDirichlet::new(3, 0.8).unwrap();
        let exact = sampler.second_moment().unwrap();
        let mut rng = trial_rng(17, 0);
        let n = 1_000_000;
        let mut sum = DMatrix::<f64>::zeros(3, 3);
        let mut sum_sq = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let t = sampler.sample(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let v = t[i] * t[j];
                    sum[(i, j)] += v;
                    sum_sq[(i, j)] += v * v;
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let mean = sum[(i, j)] / n as f64;
                let var = sum_sq[(i, j)] / n as f64 - mean * mean;
                let se = (var / n as f64).sqrt();
                assert!((mean - exact[(i, j)]).abs() < 3.0 * se, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn second_moment_identity_and_rank() {
        let basis = RadiosityBasis::new(DMatrix::identity(2, 2));
        let c = second_moment(&basis, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(c.matrix(), &DMatrix::identity(2, 2));
        assert_eq!(c.eigvals().as_slice(), &[1.0, 1.0]);

        let scene = fixtures::open_box();
        let c = second_moment(
            &radiosity_basis(&scene).unwrap(),
            &dirichlet_second_moment(3, 1.0).unwrap(),
        )
        .unwrap();
        let nonzero = c
            .eigvals()
            .iter()
            .filter(|l| **l > 1e-12 * c.eigvals()[0])
            .count();
        assert!(nonzero <= 3);
        assert!(c.reconstruction_error() <= 1e-9 * c.matrix().norm());
        assert!(c.eigvals().as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn asymmetric_moment_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(SecondMoment::new(m), Err(Error::NotSymmetric(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SecondMoment::new(m), Err(Error::NotPsd(_))));
    }

    #[test]
    fn loss_of_complete_and_partial_bases() {
        let c = diag(&[4.0, 3.0, 2.0, 1.0]);
        assert!(egm_loss(&axes(4, 4), &c).unwrap().abs() < 1e-15);
        assert_eq!(egm_loss(&axes(4, 2), &c).unwrap(), 3.0);
        let g = Egm::new(DMatrix::from_row_slice(4, 1, &[2.0, 0.0, 0.0, 0.0]));
        assert!(matches!(g, Err(Error::NotOrthonormal(_))));
    }

    #[test]
    fn fit_picks_leading_axes() {
        let c = diag(&[1.0, 4.0, 2.0, 3.0]);
        let g = egm_fit(&c, 2).unwrap();
        assert!((egm_loss(&g, &c).unwrap() - 3.0).abs() < 1e-12);
        let g = egm_fit(&c, 4).unwrap();
        assert!(egm_loss(&g, &c).unwrap().abs() < 1e-12);
        assert!(matches!(
            egm_fit(&diag(&[2.0, 1.0, 1.0]), 2),
            Err(Error::EigenTie { rank: 2, .. })
        ));
        assert!(egm_fit(&diag(&[2.0, 1.0, 1.0]), 1).is_ok());
    }

    #[test]
    fn empirical_moment_basics() {
        let b = DVector::from_column_slice(&[1.0, -2.0]);
        let c = empirical_second_moment(std::slice::from_ref(&b)).unwrap();
        assert!((c.matrix() - &b * b.transpose()).amax() < 1e-15);
        let samples = vec![b.clone(), DVector::from_column_slice(&[0.5, 0.5])];
        let doubled: Vec<_> = samples.iter().chain(samples.iter()).cloned().collect();
        let c1 = empirical_second_moment(&samples).unwrap();
        let c2 = empirical_second_moment(&doubled).unwrap();
        assert!((c1.matrix() - c2.matrix()).amax() < 1e-15);
        assert!(empirical_second_moment(&[]).is_err());
    }

    #[test]
    fn loose_bound_values() {
        assert_eq!(loose_bound(&diag(&[4.0, 3.0, 2.0, 1.0]), 2).unwrap(), 7.0);
        assert_eq!(loose_bound(&diag(&[4.0, 3.0, 2.0, 1.0]), 4).unwrap(), 0.0);
        assert_eq!(loose_bound(&diag(&[2.0, 2.0, 2.0]), 2).unwrap(), 6.0 - 4.0);
    }

    #[test]
    fn regret_zero_for_exact_estimate() {
        let c = diag(&[4.0, 3.0, 2.0, 1.0]);
        assert!(theorem2_regret(&c, &c, 2).unwrap().abs() < 1e-15);
    }

    #[test]
    fn lp_bound_examples() {
        let l = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(lp_regret_bound(&l, 2, 0.0).unwrap(), 0.0);
        assert_eq!(lp_regret_bound(&l, 2, 5.0).unwrap(), 4.0);
        assert_eq!(lp_regret_bound(&l, 2, 100.0).unwrap(), 4.0);
        assert!(lp_regret_bound(&l, 2, 4.99).unwrap() < 4.0);
        assert!(matches!(
            lp_regret_bound(&[1.0, 2.0], 1, 1.0),
            Err(Error::Unsorted)
        ));
        assert!(lp_regret_bound(&l, 4, 1.0).is_err());
    }

    #[test]
    fn lp_bound_monotone_in_budget() {
        let l = [9.0, 7.5, 4.0, 3.5, 1.0, 0.25];
        let mut prev = 0.0;
        for d in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 40.0, 1e3] {
            let b = lp_regret_bound(&l, 3, d).unwrap();
            assert!(b >= prev);
            assert!(b <= l[..3].iter().sum::<f64>() - l[3..].iter().sum::<f64>());
            prev = b;
        }
    }

    #[test]
    fn lp_bound_misses_partial_rotation() {
        let c = diag(&[2.0, 1.0]);
        let eps = 0.1;
        let c_hat =
            SecondMoment::new(DMatrix::from_row_slice(2, 2, &[2.0, eps, eps, 1.0])).unwrap();
        let budget = (c.matrix() - c_hat.matrix()).norm_squared();
        assert!((budget - 2.0 * eps * eps).abs() < 1e-15);
        // swapping the two eigenvalues costs 0.5, far above the budget
        assert_eq!(
            lp_regret_bound(c.eigvals().as_slice(), 1, budget).unwrap(),
            0.0
        );
        let regret = theorem2_regret(&c, &c_hat, 1).unwrap();
        assert!(regret > 9e-3, "{regret}");
    }
}
