//! Fréchet distance between embedded sets, its large-sample extrapolation,
//! the mean-matched diversity score and the per-image local FID.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::report::{fmt_f64, CsvRecord};
use crate::scenegen::trial_rng;

/// Eigenvalues below `-PSD_TOL · max(1, λ_max)` are rejected; smaller
/// negatives are clamped to zero.
pub const PSD_TOL: f64 = 1e-10;
/// Default relative eigenvalue floor for the local FID.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;
pub const DEFAULT_FID_SIZES: usize = 15;
const BOOTSTRAP_STREAM: u64 = 1 << 32;

/// A point cloud in feature space, one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    points: DMatrix<f64>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl EmbeddingSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        let n = points.nrows();
        if n < 2 {
            return Err(Error::InsufficientPoints(format!(
                "embedding set needs at least 2 points, got {n}"
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::Empty("embedding dimension"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "embedding" });
        }
        let mean = points.row_mean().transpose();
        let centered = DMatrix::from_fn(n, points.ncols(), |i, j| points[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / n as f64;
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { points, mean, cov })
    }

    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("embedding set"))?;
        let d = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: r.len(),
            });
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance with `1/N` normalization.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, k: usize) -> DVector<f64> {
        self.points.row(k).transpose()
    }

    /// The set with point `k` replaced by `x`.
    pub fn with_point(&self, k: usize, x: &DVector<f64>) -> Result<Self> {
        self.check_index(k)?;
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut points = self.points.clone();
        points.set_row(k, &x.transpose());
        Self::new(points)
    }

    /// Rows picked by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.points.select_rows(indices))
    }

    /// Every point mapped through `x ↦ R x`.
    pub fn rotated(&self, r: &DMatrix<f64>) -> Result<Self> {
        Self::new(&self.points * r.transpose())
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.len() {
            return Err(Error::InvalidParameter(format!(
                "index {k} out of range for {} points",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Eigendecomposition of a PSD matrix with tiny negative eigenvalues clamped.
fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * max.max(1.0) {
        return Err(Error::NotPsd(min));
    }
    eig.eigenvalues.apply(|l| *l = l.max(0.0));
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m)?;
    let s = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose())
}

/// `Tr sqrt(C_a C_b)` through the symmetric form `sqrt(C_a^{1/2} C_b C_a^{1/2})`.
fn trace_sqrt_product(ca: &DMatrix<f64>, cb: &DMatrix<f64>) -> Result<f64> {
    let sa = psd_sqrt(ca)?;
    let inner = &sa * cb * &sa;
    Ok(psd_eigen(&inner)?
        .eigenvalues
        .iter()
        .map(|l| l.sqrt())
        .sum())
}

/// `‖μ_a − μ_b‖² + Tr[C_a + C_b − 2 sqrt(C_a C_b)]`.
pub fn fid(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mean_term = (a.mean() - b.mean()).norm_squared();
    let cross = trace_sqrt_product(a.cov(), b.cov())?;
    Ok(mean_term + a.cov().trace() + b.cov().trace() - 2.0 * cross)
}

/// Ordinary least-squares fit of FID against `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidInfinityFit {
    pub intercept: f64,
    pub slope: f64,
    /// Standard error of the intercept.
    pub intercept_se: f64,
    pub sizes: Vec<usize>,
    pub fids: Vec<f64>,
}

/// Subsample sizes linearly spaced from `smallest` to `largest`.
fn subsample_sizes(smallest: usize, largest: usize, n_sizes: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = (0..n_sizes)
        .map(|i| {
            let t = i as f64 / (n_sizes - 1) as f64;
            (smallest as f64 + t * (largest - smallest) as f64).round() as usize
        })
        .collect();
    sizes.dedup();
    sizes
}

/// FID on `n_sizes` pairs of random subsamples of increasing size, extrapolated
/// linearly in `1/n` to `n → ∞`. Subsample `i` draws from its own RNG stream.
pub fn fid_infinity_fit(
    a: &EmbeddingSet,
    b: &EmbeddingSet,
    n_sizes: usize,
    seed: u64,
) -> Result<FidInfinityFit> {
    let largest = a.len().min(b.len());
    let smallest = largest / 10;
    if smallest < 2 || n_sizes < 3 {
        return Err(Error::InsufficientPoints(format!(
            "need at least 20 points per set and 3 sizes, got {largest} points and {n_sizes} sizes"
        )));
    }
    let sizes = subsample_sizes(smallest, largest, n_sizes);
    if sizes.len() < 3 {
        return Err(Error::InsufficientPoints(format!(
            "only {} distinct subsample sizes",
            sizes.len()
        )));
    }
    let fids = sizes
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut rng = trial_rng(seed, i as u64);
            let ia = sample(&mut rng, a.len(), n).into_vec();
            let ib = sample(&mut rng, b.len(), n).into_vec();
            fid(&a.subset(&ia)?, &b.subset(&ib)?)
        })
        .collect::<Result<Vec<f64>>>()?;

    let m = sizes.len() as f64;
    let x: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    let x_bar = x.iter().sum::<f64>() / m;
    let y_bar = fids.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|xi| (xi - x_bar).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(&fids)
        .map(|(xi, yi)| (xi - x_bar) * (yi - y_bar))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let rss: f64 = x
        .iter()
        .zip(&fids)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let sigma2 = rss / (m - 2.0);
    let intercept_se = (sigma2 * (1.0 / m + x_bar * x_bar / sxx)).sqrt();
    Ok(FidInfinityFit {
        intercept,
        slope,
        intercept_se,
        sizes,
        fids,
    })
}

pub fn fid_infinity(a: &EmbeddingSet, b: &EmbeddingSet, n_sizes: usize, seed: u64) -> Result<f64> {
    Ok(fid_infinity_fit(a, b, n_sizes, seed)?.intercept)
}

/// Bootstrap standard error of the extrapolated intercept: both sets are
/// resampled with replacement `replicates` times and refit.
///
/// Every subsample in one fit shares the same two sets, so the residual-based
/// `intercept_se` misses their common discrepancy; this estimate includes it.
pub fn fid_infinity_bootstrap_se(
    a: &EmbeddingSet,
    b: &EmbeddingSet,
    n_sizes: usize,
    seed: u64,
    replicates: usize,
) -> Result<f64> {
    if replicates < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicates, got {replicates}"
        )));
    }
    let intercepts = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = trial_rng(seed, BOOTSTRAP_STREAM + r as u64);
            let ia: Vec<usize> = (0..a.len()).map(|_| rng.random_range(0..a.len())).collect();
            let ib: Vec<usize> = (0..b.len()).map(|_| rng.random_range(0..b.len())).collect();
            let fit_seed: u64 = rng.random();
            Ok(fid_infinity_fit(&a.subset(&ia)?, &b.subset(&ib)?, n_sizes, fit_seed)?.intercept)
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = intercepts.iter().sum::<f64>() / replicates as f64;
    let var = intercepts.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (replicates - 1) as f64;
    Ok(var.sqrt())
}

/// Root-mean-square difference between originals and mean-matched relights.
pub fn msd(originals: &[DVector<f64>], relights: &[DVector<f64>]) -> Result<f64> {
    if originals.len() != relights.len() {
        return Err(Error::Dimension {
            expected: originals.len(),
            got: relights.len(),
        });
    }
    if originals.is_empty() {
        return Err(Error::Empty("image pairs"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, r) in originals.iter().zip(relights) {
        if i.len() != r.len() {
            return Err(Error::Dimension {
                expected: i.len(),
                got: r.len(),
            });
        }
        if r.is_empty() {
            return Err(Error::Empty("relit image"));
        }
        let (sum_i, sum_r) = (i.sum(), r.sum());
        if !(sum_r > 0.0) {
            return Err(Error::NonPositiveMean(sum_r / r.len() as f64));
        }
        // mean(I)/mean(R) = sum(I)/sum(R); multiplying first keeps exact proportions exact
        total += i
            .iter()
            .zip(r.iter())
            .map(|(a, b)| (a - b * sum_i / sum_r).powi(2))
            .sum::<f64>();
        count += r.len();
    }
    Ok((total / count as f64).sqrt())
}

/// Solves `C M + M C = C U` for diagonal `C`: `m_ij = c_i u_ij / (c_i + c_j)`.
pub fn sylvester_diag(c_diag: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = c_diag.len();
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: u.nrows(),
        });
    }
    if let Some(c) = c_diag.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "diagonal entries must be positive, got {c}"
        )));
    }
    let m = DMatrix::from_fn(d, d, |i, j| c_diag[i] * u[(i, j)] / (c_diag[i] + c_diag[j]));
    let cu = DMatrix::from_fn(d, d, |i, j| c_diag[i] * u[(i, j)]);
    let residual =
        DMatrix::from_fn(d, d, |i, j| c_diag[i] * m[(i, j)] + m[(i, j)] * c_diag[j]) - &cu;
    let scale = cu.amax();
    if residual.amax() > 1e-10 * scale || residual.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "Sylvester residual",
        });
    }
    Ok(m)
}

/// A base set, the index of the image being replaced and its relit embedding.
#[derive(Debug, Clone, Copy)]
pub struct LfidInputs<'a> {
    pub base_set: &'a EmbeddingSet,
    pub index_k: usize,
    pub relit_point: &'a DVector<f64>,
}

/// Precomputed eigenbasis of a base set's covariance, for scoring many
/// replacements against the same set.
#[derive(Debug, Clone)]
pub struct LfidEvaluator<'a> {
    base: &'a EmbeddingSet,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl<'a> LfidEvaluator<'a> {
    /// Eigenvalues below `floor_rel · λ_max` are raised to that floor.
    pub fn new(base: &'a EmbeddingSet, floor_rel: f64) -> Result<Self> {
        if !(floor_rel > 0.0) || !floor_rel.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue floor must be positive, got {floor_rel}"
            )));
        }
        let eig = psd_eigen(base.cov())?;
        let max = eig.eigenvalues.max();
        if !(max > 0.0) {
            return Err(Error::NotPsd(max));
        }
        let floor = floor_rel * max;
        Ok(Self {
            base,
            eigvals: eig.eigenvalues.map(|l| l.max(floor)),
            eigvecs: eig.eigenvectors,
        })
    }

    /// `dᵀd + Tr[C⁻¹ M₁²]` in the eigenbasis of the base covariance.
    pub fn evaluate(&self, index_k: usize, relit_point: &DVector<f64>) -> Result<f64> {
        self.base.check_index(index_k)?;
        if relit_point.len() != self.base.dim() {
            return Err(Error::Dimension {
                expected: self.base.dim(),
                got: relit_point.len(),
            });
        }
        let x_k = self.base.point(index_k);
        let d = self.eigvecs.transpose() * (relit_point - &x_k);
        let e = self.eigvecs.transpose() * (x_k - self.base.mean());
        let u = &d * e.transpose() + &e * d.transpose() + &d * d.transpose();
        let m1 = sylvester_diag(&self.eigvals, &u)?;
        let n = self.eigvals.len();
        let mut tr = 0.0;
        for i in 0..n {
            for j in 0..n {
                tr += m1[(i, j)] * m1[(j, i)] / self.eigvals[i];
            }
        }
        Ok(d.norm_squared() + tr)
    }
}

pub fn lfid(inputs: &LfidInputs<'_>, floor_rel: f64) -> Result<f64> {
    LfidEvaluator::new(inputs.base_set, floor_rel)?.evaluate(inputs.index_k, inputs.relit_point)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub rank: usize,
    pub index: usize,
    pub lfid: f64,
}

impl CsvRecord for RankedCandidate {
    const HEADER: &'static [&'static str] = &["rank", "index", "lfid"];

    fn record(&self) -> Vec<String> {
        vec![
            self.rank.to_string(),
            self.index.to_string(),
            fmt_f64(self.lfid),
        ]
    }
}

/// Candidates sorted by ascending local FID; ties keep input order.
pub fn local_fid_ranking(
    base: &EmbeddingSet,
    candidates: &[(usize, DVector<f64>)],
    floor_rel: f64,
) -> Result<Vec<RankedCandidate>> {
    let eval = LfidEvaluator::new(base, floor_rel)?;
    let scores = candidates
        .par_iter()
        .map(|(k, x)| eval.evaluate(*k, x))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| RankedCandidate {
            rank,
            index: candidates[i].0,
            lfid: scores[i],
        })
        .collect())
}
