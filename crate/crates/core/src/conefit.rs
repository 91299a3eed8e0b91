//! Fitting shading fields as non-negative combinations of generator fields,
//! plus the scalar losses used alongside the fit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SHADING_MEAN: f64 = 0.7;
pub const DEFAULT_GENERATORS: usize = 10;
pub const BARRIER_EPSILON: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-8;

/// Non-negative generator fields, stored as the columns of an `N × N_g` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSet {
    matrix: DMatrix<f64>,
}

impl GeneratorSet {
    pub fn new(generators: &[DVector<f64>]) -> Result<Self> {
        let first = generators.first().ok_or(Error::Empty("generator set"))?;
        let n = first.len();
        if n == 0 {
            return Err(Error::Empty("generator field"));
        }
        for g in generators {
            if g.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: g.len(),
                });
            }
        }
        Self::from_matrix(DMatrix::from_columns(generators))
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::Empty("generator set"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "generator" });
        }
        if let Some(v) = matrix.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "generator entries must be >= 0, found {v}"
            )));
        }
        if let Some(j) = matrix
            .column_iter()
            .position(|c| c.iter().all(|v| *v == 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "generator {j} is identically zero"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn field_len(&self) -> usize {
        self.matrix.nrows()
    }

    fn check_target(&self, target: &DVector<f64>) -> Result<()> {
        if target.len() != self.field_len() {
            return Err(Error::Dimension {
                expected: self.field_len(),
                got: target.len(),
            });
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "target" });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub weights: Vec<f64>,
    pub residual_sq: f64,
    pub steps_taken: usize,
}

/// Rescales a field to mean 0.7.
pub fn normalize_shading(field: &DVector<f64>) -> Result<DVector<f64>> {
    if field.is_empty() {
        return Err(Error::Empty("shading field"));
    }
    let mean = field.mean();
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::NonPositiveMean(mean));
    }
    Ok(field * (SHADING_MEAN / mean))
}

fn residual_sq(g: &DMatrix<f64>, w: &DVector<f64>, t: &DVector<f64>) -> f64 {
    (g * w - t).norm_squared()
}

/// Minimum-norm least-squares solution of `G w ≈ t`.
fn min_norm_lstsq(g: &DMatrix<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * g.nrows().max(g.ncols()) as f64 * f64::EPSILON;
    svd.solve(t, eps)
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// Least squares, clip to `w ≥ 0`, then `n_gd` projected-gradient steps of
/// size `1/L` on `½‖Gw − t‖²`, with `L` the largest Gram eigenvalue.
pub fn fit_approx(target: &DVector<f64>, gens: &GeneratorSet, n_gd: usize) -> Result<FitResult> {
    let trace = fit_approx_trace(target, gens, n_gd)?;
    Ok(trace
        .into_iter()
        .last()
        .expect("trace holds the clipped start"))
}

/// Like [`fit_approx`] but returns the state after the clip and after every
/// gradient step.
pub fn fit_approx_trace(
    target: &DVector<f64>,
    gens: &GeneratorSet,
    n_gd: usize,
) -> Result<Vec<FitResult>> {
    gens.check_target(target)?;
    let g = gens.matrix();
    let mut w = min_norm_lstsq(g, target)?.map(|v| v.max(0.0));
    let gram = g.transpose() * g;
    let gt = g.transpose() * target;
    let lipschitz = gram.clone().symmetric_eigenvalues().max();
    let mut out = Vec::with_capacity(n_gd + 1);
    out.push(FitResult {
        weights: w.as_slice().to_vec(),
        residual_sq: residual_sq(g, &w, target),
        steps_taken: 0,
    });
    for step in 1..=n_gd {
        let grad = &gram * &w - &gt;
        w = (&w - grad / lipschitz).map(|v| v.max(0.0));
        out.push(FitResult {
            weights: w.as_slice().to_vec(),
            residual_sq: residual_sq(g, &w, target),
            steps_taken: step,
        });
    }
    Ok(out)
}

/// Gradient of `½‖Gw − t‖²` and the scale used for optimality tolerances.
fn gradient(g: &DMatrix<f64>, w: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
    g.transpose() * (g * w - t)
}

fn kkt_scale(g: &DMatrix<f64>, t: &DVector<f64>) -> f64 {
    (g.norm() * t.norm()).max(1.0)
}

/// Largest violation of `w ≥ 0`, `∇ ≥ 0` on zero weights and `∇ = 0` on positive ones.
pub fn kkt_violation(target: &DVector<f64>, gens: &GeneratorSet, weights: &[f64]) -> Result<f64> {
    gens.check_target(target)?;
    if weights.len() != gens.len() {
        return Err(Error::Dimension {
            expected: gens.len(),
            got: weights.len(),
        });
    }
    let w = DVector::from_column_slice(weights);
    let grad = gradient(gens.matrix(), &w, target);
    Ok(w.iter()
        .zip(grad.iter())
        .map(|(&wi, &gi)| {
            if wi < 0.0 {
                -wi
            } else if wi == 0.0 {
                (-gi).max(0.0)
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max))
}

/// Exact non-negative least squares by the Lawson–Hanson active-set method.
pub fn fit_exact(target: &DVector<f64>, gens: &GeneratorSet) -> Result<FitResult> {
    gens.check_target(target)?;
    let g = gens.matrix();
    let n_g = gens.len();
    let cap = 10 * n_g;
    let scale = kkt_scale(g, target);
    let enter_tol = 1e-13 * scale;

    let mut passive = vec![false; n_g];
    let mut w = DVector::zeros(n_g);
    let mut steps = 0;
    loop {
        let neg_grad = -gradient(g, &w, target);
        let candidate = (0..n_g)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| neg_grad[a].total_cmp(&neg_grad[b]));
        let Some(j) = candidate.filter(|&j| neg_grad[j] > enter_tol) else {
            break;
        };
        if steps >= cap {
            return Err(Error::IterationCap(cap));
        }
        steps += 1;
        passive[j] = true;
        let mut s = solve_on_support(g, target, &passive)?;
        if s[j] <= 0.0 {
            // entering coordinate cannot move: numerically optimal already
            passive[j] = false;
            break;
        }
        while let Some(alpha) = (0..n_g)
            .filter(|&i| passive[i] && s[i] <= 0.0)
            .map(|i| w[i] / (w[i] - s[i]))
            .min_by(f64::total_cmp)
        {
            w += (&s - &w) * alpha;
            for i in 0..n_g {
                if passive[i] && w[i] <= 1e-15 * scale {
                    passive[i] = false;
                    w[i] = 0.0;
                }
            }
            s = solve_on_support(g, target, &passive)?;
        }
        w = s;
    }

    let violation = kkt_violation(target, gens, w.as_slice())?;
    if violation > KKT_TOL * scale {
        return Err(Error::Kkt(violation));
    }
    Ok(FitResult {
        weights: w.as_slice().to_vec(),
        residual_sq: residual_sq(g, &w, target),
        steps_taken: steps,
    })
}

/// Least squares restricted to the marked columns; other weights are zero.
fn solve_on_support(g: &DMatrix<f64>, t: &DVector<f64>, support: &[bool]) -> Result<DVector<f64>> {
    let cols: Vec<usize> = (0..support.len()).filter(|&i| support[i]).collect();
    let mut full = DVector::zeros(support.len());
    if cols.is_empty() {
        return Ok(full);
    }
    let sub = g.select_columns(&cols);
    let x = min_norm_lstsq(&sub, t)?;
    for (k, &c) in cols.iter().enumerate() {
        full[c] = x[k];
    }
    Ok(full)
}

/// Sum of [`fit_approx`] residuals over `targets`.
pub fn nearby_loss(targets: &[DVector<f64>], gens: &GeneratorSet, n_gd: usize) -> Result<f64> {
    let residuals = targets
        .par_iter()
        .map(|t| fit_approx(t, gens, n_gd).map(|f| f.residual_sq))
        .collect::<Result<Vec<f64>>>()?;
    Ok(residuals.iter().sum())
}

fn positive_mean(v: &DVector<f64>) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("intensity field"));
    }
    let m = v.mean();
    if !(m > 0.0) {
        return Err(Error::NonPositiveMean(m));
    }
    Ok(m)
}

/// `mean(−log(|P/mean P − Q/mean Q| + ε))`.
pub fn barrier_loss(relit: &DVector<f64>, orig: &DVector<f64>, epsilon: f64) -> Result<f64> {
    if relit.len() != orig.len() {
        return Err(Error::Dimension {
            expected: orig.len(),
            got: relit.len(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (mp, mq) = (positive_mean(relit)?, positive_mean(orig)?);
    let total: f64 = relit
        .iter()
        .zip(orig.iter())
        .map(|(p, q)| -((p / mp - q / mq).abs() + epsilon).ln())
        .sum();
    Ok(total / relit.len() as f64)
}

/// `(mean(max(−x, 0)²), mean(max(x − 1, 0)²))`.
pub fn range_losses(relit: &DVector<f64>) -> Result<(f64, f64)> {
    if relit.is_empty() {
        return Err(Error::Empty("relit field"));
    }
    let n = relit.len() as f64;
    let under = relit.iter().map(|v| (-v).max(0.0).powi(2)).sum::<f64>() / n;
    let over = relit
        .iter()
        .map(|v| (v - 1.0).max(0.0).powi(2))
        .sum::<f64>()
        / n;
    Ok((under, over))
}

/// `mean(−min(0.95 − relit_max, 0) + max(shading_min − 0.05, 0))`.
pub fn pixel_uniformity_loss(relit_max: &DVector<f64>, shading_min: &DVector<f64>) -> Result<f64> {
    if relit_max.len() != shading_min.len() {
        return Err(Error::Dimension {
            expected: relit_max.len(),
            got: shading_min.len(),
        });
    }
    if relit_max.is_empty() {
        return Err(Error::Empty("relit field"));
    }
    let total: f64 = relit_max
        .iter()
        .zip(shading_min.iter())
        .map(|(r, s)| -(0.95 - r).min(0.0) + (s - 0.05).max(0.0))
        .sum();
    Ok(total / relit_max.len() as f64)
}
