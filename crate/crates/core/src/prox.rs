//! Projection onto the ℓ1 ball and the proximal operator of the ℓ∞ norm.
//!
//! The ℓ∞ prox is obtained from the projection through the Moreau
//! decomposition
//!
//! ```text
//! prox_{t‖·‖∞}(v) = v − t · proj_{‖·‖₁ ≤ 1}(v / t)
//! ```
//!
//! Matrix variants act independently on each column (per-channel) or on each
//! contiguous length-`d` segment of a column (per-group).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Result of projecting a single vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorProjection {
    pub w: Vec<f64>,
    /// Soft-threshold level; 0 when the input was already inside the ball.
    pub theta: f64,
    /// Number of coordinates left nonzero by the threshold; 0 when the
    /// input was already inside the ball.
    pub rho: usize,
}

/// Result of projecting every column (or segment) of a matrix.
///
/// `theta` and `rho` hold one entry per projected vector. For per-group
/// projections they are ordered column by column, segments top to bottom:
/// index `j * (m / d) + s` is segment `s` of column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub w: DenseMatrix,
    pub theta: Vec<f64>,
    pub rho: Vec<usize>,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "ℓ1 ball radius must be positive, got {eps}"
        )))
    }
}

/// Projects `v` in place onto `{x : ‖x‖₁ ≤ eps}`, returning `(theta, rho)`.
///
/// `scratch` is reused for the sort permutation.
fn project_in_place(v: &mut [f64], eps: f64, scratch: &mut Vec<usize>) -> (f64, usize) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= eps {
        return (0.0, 0);
    }

    scratch.clear();
    scratch.extend(0..v.len());
    // Stable: equal magnitudes keep their original order.
    scratch.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));

    let mut prefix = 0.0;
    let mut rho = 0;
    let mut rho_sum = 0.0;
    for (i, &idx) in scratch.iter().enumerate() {
        let mu = v[idx].abs();
        prefix += mu;
        let k = (i + 1) as f64;
        if mu > (prefix - eps) / k {
            rho = i + 1;
            rho_sum = prefix;
        }
    }
    // rho >= 1 whenever ‖v‖₁ > eps since μ₁ > μ₁ − eps.
    let theta = (rho_sum - eps) / rho as f64;
    for x in v.iter_mut() {
        let shrunk = (x.abs() - theta).max(0.0);
        *x = shrunk.copysign(*x);
    }
    (theta, rho)
}

/// Euclidean projection of `v` onto the ℓ1 ball of radius `eps`.
pub fn project_l1_vector(v: &[f64], eps: f64) -> Result<VectorProjection> {
    check_eps(eps)?;
    let mut w = v.to_vec();
    let (theta, rho) = project_in_place(&mut w, eps, &mut Vec::with_capacity(v.len()));
    Ok(VectorProjection { w, theta, rho })
}

/// Copies `v` into channel-major order: segment `s` of column `j` lands at
/// `(j * segs + s) * d`.
fn to_segments(v: &DenseMatrix, d: usize) -> Vec<f64> {
    let (m, n) = v.shape();
    let segs = m / d;
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let (s, o) = (r / d, r % d);
        for (j, &x) in v.row(r).iter().enumerate() {
            out[(j * segs + s) * d + o] = x;
        }
    }
    out
}

fn from_segments(buf: &[f64], m: usize, n: usize, d: usize) -> DenseMatrix {
    let segs = m / d;
    DenseMatrix::from_fn(m, n, |r, j| buf[(j * segs + r / d) * d + r % d])
}

/// Projects every length-`d` segment of `buf` in parallel.
fn project_segments(buf: &mut [f64], d: usize, eps: f64) -> (Vec<f64>, Vec<usize>) {
    buf.par_chunks_mut(d)
        .map_init(Vec::new, |scratch, seg| project_in_place(seg, eps, scratch))
        .unzip()
}

/// Column-wise projection onto the ℓ1 ball of radius `eps`.
pub fn project_l1_columns(v: &DenseMatrix, eps: f64) -> Result<ProjectionResult> {
    project_l1_grouped(v, v.rows().max(1), eps)
}

/// Projects each contiguous length-`d` segment of every column.
pub fn project_l1_grouped(v: &DenseMatrix, d: usize, eps: f64) -> Result<ProjectionResult> {
    check_eps(eps)?;
    let (m, n) = v.shape();
    check_group(m, d)?;
    if m == 0 || n == 0 {
        return Ok(ProjectionResult {
            w: v.clone(),
            theta: Vec::new(),
            rho: Vec::new(),
        });
    }
    let mut buf = to_segments(v, d);
    let (theta, rho) = project_segments(&mut buf, d, eps);
    Ok(ProjectionResult {
        w: from_segments(&buf, m, n, d),
        theta,
        rho,
    })
}

pub(crate) fn check_group(m: usize, d: usize) -> Result<()> {
    if d == 0 || !m.is_multiple_of(d) {
        return Err(Error::Argument(format!(
            "group size {d} does not divide column length {m}"
        )));
    }
    Ok(())
}

/// Column-wise `prox_{t‖·‖∞}`.
pub fn prox_linf_columns(v: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    prox_linf_grouped(v, v.rows().max(1), t)
}

/// `prox_{t‖·‖∞}` applied to every length-`d` segment of every column.
pub fn prox_linf_grouped(v: &DenseMatrix, d: usize, t: f64) -> Result<DenseMatrix> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Argument(format!(
            "prox parameter must be positive, got {t}"
        )));
    }
    let (m, n) = v.shape();
    check_group(m, d)?;
    if m == 0 || n == 0 {
        return Ok(v.clone());
    }
    let mut buf = to_segments(v, d);
    prox_segments_in_place(&mut buf, d, t);
    Ok(from_segments(&buf, m, n, d))
}

/// In-place `prox_{t‖·‖∞}` on consecutive length-`d` segments of `buf`.
pub(crate) fn prox_segments_in_place(buf: &mut [f64], d: usize, t: f64) {
    buf.par_chunks_mut(d).for_each_init(Vec::new, |scratch, seg| {
        prox_one(seg, t, scratch);
    });
}

fn prox_one(v: &mut [f64], t: f64, scratch: &mut Vec<usize>) {
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if vmax == 0.0 || t < 1e-300 * vmax {
        return;
    }
    let mut u: Vec<f64> = v.iter().map(|x| x / t).collect();
    project_in_place(&mut u, 1.0, scratch);
    for (x, p) in v.iter_mut().zip(&u) {
        *x -= t * p;
    }
}

/// `prox_{t‖·‖∞}` of a single vector.
pub fn prox_linf_vector(v: &[f64], t: f64) -> Result<Vec<f64>> {
    let m = DenseMatrix::column_vector(v);
    Ok(prox_linf_columns(&m, t)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inside_ball_is_unchanged() {
        let p = project_l1_vector(&[0.3, -0.2], 1.0).unwrap();
        assert_eq!(p.w, vec![0.3, -0.2]);
        assert_eq!((p.theta, p.rho), (0.0, 0));
    }

    #[test]
    fn boundary_takes_unchanged_branch() {
        let p = project_l1_vector(&[0.5, -0.5], 1.0).unwrap();
        assert_eq!(p.w, vec![0.5, -0.5]);
        assert_eq!(p.rho, 0);
    }

    #[test]
    fn projects_three_one() {
        let p = project_l1_vector(&[3.0, 1.0], 1.0).unwrap();
        assert_eq!(p.w, vec![1.0, 0.0]);
        assert_eq!((p.theta, p.rho), (2.0, 1));
    }

    #[test]
    fn projects_two_two() {
        let p = project_l1_vector(&[2.0, 2.0], 1.0).unwrap();
        assert_eq!(p.w, vec![0.5, 0.5]);
        assert_eq!((p.theta, p.rho), (1.5, 2));
    }

    #[test]
    fn keeps_signs() {
        let p = project_l1_vector(&[-3.0, 1.0], 1.0).unwrap();
        assert_eq!(p.w, vec![-1.0, 0.0]);
    }

    #[test]
    fn rejects_nonpositive_radius() {
        assert!(project_l1_vector(&[1.0], 0.0).is_err());
        assert!(project_l1_vector(&[1.0], -1.0).is_err());
        assert!(prox_linf_vector(&[1.0], 0.0).is_err());
    }

    #[test]
    fn column_example() {
        let v = DenseMatrix::from_rows(&[[3.0, 0.3], [1.0, -0.2]]);
        let p = project_l1_columns(&v, 1.0).unwrap();
        assert_eq!(
            p.w,
            DenseMatrix::from_rows(&[[1.0, 0.3], [0.0, -0.2]])
        );
        assert_eq!(p.theta, vec![2.0, 0.0]);
        assert_eq!(p.rho, vec![1, 0]);
    }

    #[test]
    fn grouped_example() {
        let v = DenseMatrix::column_vector(&[3.0, 1.0, 0.3, -0.2]);
        let p = project_l1_grouped(&v, 2, 1.0).unwrap();
        assert_eq!(p.w.data(), &[1.0, 0.0, 0.3, -0.2]);
        assert!(project_l1_grouped(&v, 3, 1.0).is_err());
        assert!(project_l1_grouped(&v, 0, 1.0).is_err());
    }

    #[test]
    fn prox_examples() {
        assert_eq!(prox_linf_vector(&[3.0, 1.0], 1.0).unwrap(), vec![2.0, 1.0]);
        assert_eq!(prox_linf_vector(&[5.0], 2.0).unwrap(), vec![3.0]);
        assert_eq!(prox_linf_vector(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn prox_tiny_t_is_identity() {
        let v = [1.0, -2.0];
        assert_eq!(prox_linf_vector(&v, 1e-310).unwrap(), v.to_vec());
    }
}
