//! Spectral utilities: power iteration for `λmax`, a cyclic Jacobi
//! eigensolver, and the approximate fraction rank of a feature matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Seed for the power-iteration start vector.
pub const DEFAULT_POWER_SEED: u64 = 0x4d61_6752;
pub const DEFAULT_POWER_TOL: f64 = 1e-10;
pub const DEFAULT_POWER_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub lambda_max: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

fn symv(h: &DenseMatrix, x: &[f64], y: &mut [f64]) {
    let row_dot = |r: usize| h.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    if h.rows() >= 256 {
        y.par_iter_mut().enumerate().for_each(|(r, out)| *out = row_dot(r));
    } else {
        for (r, out) in y.iter_mut().enumerate() {
            *out = row_dot(r);
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from the
/// default seeded start vector.
pub fn power_iteration(h: &DenseMatrix, tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    power_iteration_seeded(h, tol, max_iter, DEFAULT_POWER_SEED)
}

pub fn power_iteration_seeded(
    h: &DenseMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SpectralEstimate> {
    let rq = rayleigh_power(h, tol, max_iter, seed)?;
    Ok(SpectralEstimate {
        lambda_max: rq.lambda_max.max(0.0),
        ..rq
    })
}

/// Power iteration returning the raw (possibly negative) Rayleigh quotient.
fn rayleigh_power(
    h: &DenseMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SpectralEstimate> {
    if !h.is_square() {
        return Err(Error::Shape(format!(
            "power iteration needs a square matrix, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let n = h.rows();
    if n == 0 || h.data().iter().all(|&v| v == 0.0) {
        return Ok(SpectralEstimate {
            lambda_max: 0.0,
            iterations_used: 0,
            converged: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);

    let mut y = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut rq = 0.0;
    for it in 1..=max_iter {
        symv(h, &x, &mut y);
        rq = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        let ny = norm(&y);
        if ny == 0.0 {
            // Start vector fell into the kernel.
            return Ok(SpectralEstimate {
                lambda_max: 0.0,
                iterations_used: it,
                converged: true,
            });
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
        if prev.is_finite() && (rq - prev).abs() <= tol * rq.abs() {
            return Ok(SpectralEstimate {
                lambda_max: rq,
                iterations_used: it,
                converged: true,
            });
        }
        prev = rq;
    }
    Ok(SpectralEstimate {
        lambda_max: rq,
        iterations_used: max_iter,
        converged: false,
    })
}

/// Upper estimate of how negative the spectrum of `h` goes, via power
/// iteration on `λ·I − H`. Rayleigh quotients never overshoot, so the
/// returned value is never below the true smallest eigenvalue.
pub fn min_eigenvalue_upper_estimate(h: &DenseMatrix, lambda_max: f64) -> Result<f64> {
    let n = h.rows();
    let shift = lambda_max.max(0.0);
    let mut shifted = h.scaled(-1.0);
    for i in 0..n {
        shifted.set(i, i, shifted.get(i, i) + shift);
    }
    let est = rayleigh_power(&shifted, 1e-9, 500, DEFAULT_POWER_SEED ^ 0x5a5a)?;
    Ok(shift - est.lambda_max)
}

/// Eigen decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: DenseMatrix,
    pub sweeps: usize,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver. O(n³) per sweep; intended for matrices up to
/// a few thousand rows.
pub fn jacobi_eigen(a: &DenseMatrix) -> Result<SymmetricEigen> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "eigensolver needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let scale = m.frobenius_norm();
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum();
        if off.sqrt() <= f64::EPSILON * scale || scale == 0.0 {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);

                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Singular values of `x` in descending order, via the eigenvalues of the
/// smaller Gram matrix. Negative round-off eigenvalues are clamped to zero.
pub fn singular_values(x: &DenseMatrix) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Argument("singular values of an empty matrix".into()));
    }
    let g = if x.cols() <= x.rows() {
        x.gram()?
    } else {
        x.transpose().gram()?
    };
    Ok(jacobi_eigen(&g)?
        .values
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect())
}

/// Share of singular values above `rel_threshold · σmax`, out of
/// `min(rows, cols)`.
pub fn fraction_rank(x: &DenseMatrix, rel_threshold: f64) -> Result<f64> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::Argument(format!(
            "relative threshold must lie in (0, 1), got {rel_threshold}"
        )));
    }
    let sv = singular_values(x)?;
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0.0);
    }
    let cut = rel_threshold * smax;
    let count = sv.iter().filter(|&&s| s > cut).count();
    Ok(count as f64 / x.rows().min(x.cols()) as f64)
}
