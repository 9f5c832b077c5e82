//! Brute-force reference solvers used to certify the fast paths.
//!
//! Nothing here calls into the library's projection, prox, quantizer, or
//! objective code; only `DenseMatrix` and the fitted grids are shared.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use magr_core::{DenseMatrix, QuantizedLayer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: Vec<f64>,
    pub objective: f64,
    pub method: &'static str,
}

pub const L1_ORACLE_MAX_DIM: usize = 8;
pub const PROX_ORACLE_MAX_DIM: usize = 4;
pub const QUANT_ORACLE_MAX_SPACE: usize = 1 << 16;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Projection onto `{‖x‖₁ ≤ eps}` by enumerating every sign pattern
/// `s ∈ {−1, 0, 1}^m`. On the face with support `S` and signs `s`, the KKT
/// stationarity condition gives `x_S = v_S − λ·s_S` with
/// `λ = (sᵀv_S − eps)/|S|`. Every feasible candidate is scored and the
/// closest one wins; the interior candidate `x = v` is included when
/// feasible.
pub fn l1_projection_oracle(v: &[f64], eps: f64) -> Result<OracleResult, String> {
    let m = v.len();
    if m > L1_ORACLE_MAX_DIM {
        return Err(format!("dimension {m} exceeds {L1_ORACLE_MAX_DIM}"));
    }
    if !(eps > 0.0) {
        return Err(format!("radius {eps} must be positive"));
    }
    let feasible = |x: &[f64]| x.iter().map(|a| a.abs()).sum::<f64>() <= eps * (1.0 + 1e-12);

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |x: Vec<f64>| {
        if !feasible(&x) {
            return;
        }
        let d = sq_dist(&x, v);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    };
    consider(v.to_vec());

    let patterns = 3usize.pow(m as u32);
    for p in 0..patterns {
        let mut signs = vec![0.0; m];
        let mut code = p;
        for s in signs.iter_mut() {
            *s = (code % 3) as f64 - 1.0;
            code /= 3;
        }
        let support = signs.iter().filter(|&&s| s != 0.0).count();
        if support == 0 {
            consider(vec![0.0; m]);
            continue;
        }
        let lambda = (signs.iter().zip(v).map(|(s, x)| s * x).sum::<f64>() - eps) / support as f64;
        let x = signs
            .iter()
            .zip(v)
            .map(|(&s, &vi)| if s == 0.0 { 0.0 } else { vi - lambda * s })
            .collect();
        consider(x);
    }
    let (d, x) = best.expect("zero is always feasible");
    Ok(OracleResult {
        value: x,
        objective: d,
        method: "kkt-enumeration",
    })
}

fn prox_objective(x: &[f64], v: &[f64], t: f64) -> f64 {
    0.5 * sq_dist(x, v) + t * x.iter().fold(0.0f64, |m, a| m.max(a.abs()))
}

/// `argmin ½‖x − v‖² + t‖x‖∞` by nested search: the outer level fixes the
/// bound `s = ‖x‖∞` on a successively refined grid, and the inner
/// coordinate-wise minimization under `|x_i| ≤ s` is a clip.
pub fn prox_linf_oracle(v: &[f64], t: f64) -> Result<OracleResult, String> {
    if v.len() > PROX_ORACLE_MAX_DIM {
        return Err(format!("dimension {} exceeds {PROX_ORACLE_MAX_DIM}", v.len()));
    }
    if !(t > 0.0) {
        return Err(format!("t = {t} must be positive"));
    }
    let at_level = |s: f64| -> Vec<f64> { v.iter().map(|&x| x.clamp(-s, s)).collect() };
    let f = |s: f64| prox_objective(&at_level(s), v, t);

    let vmax = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let (mut lo, mut hi) = (0.0, vmax);
    const POINTS: usize = 64;
    while hi - lo > 1e-9 * vmax.max(1.0) {
        let step = (hi - lo) / POINTS as f64;
        let (best_k, _) = (0..=POINTS)
            .map(|k| (k, f(lo + step * k as f64)))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        let centre = lo + step * best_k as f64;
        lo = (centre - step).max(0.0);
        hi = (centre + step).min(vmax);
    }
    let s = 0.5 * (lo + hi);
    let x = at_level(s);
    Ok(OracleResult {
        objective: prox_objective(&x, v, t),
        value: x,
        method: "level-search",
    })
}

/// Reconstruction objective `Σ_j (q_j − ŵ_j)ᵀ H (q_j − ŵ_j)` by explicit loops.
pub fn naive_layer_objective(q: &DenseMatrix, w_hat: &DenseMatrix, h: &DenseMatrix) -> f64 {
    let (m, n) = w_hat.shape();
    let mut total = 0.0;
    for j in 0..n {
        for a in 0..m {
            for b in 0..m {
                total += (q.get(a, j) - w_hat.get(a, j)) * h.get(a, b) * (q.get(b, j) - w_hat.get(b, j));
            }
        }
    }
    total
}

/// Global optimum of the reconstruction objective over every code
/// assignment on the grids of `layer`.
pub fn quant_exhaustive_oracle(
    w_hat: &DenseMatrix,
    h: &DenseMatrix,
    layer: &QuantizedLayer,
) -> Result<OracleResult, String> {
    let (m, n) = w_hat.shape();
    let levels = 1usize << layer.bits;
    let entries = m * n;
    let space = levels
        .checked_pow(entries as u32)
        .filter(|&s| s <= QUANT_ORACLE_MAX_SPACE)
        .ok_or_else(|| format!("{levels}^{entries} assignments exceed {QUANT_ORACLE_MAX_SPACE}"))?;

    let mut q = DenseMatrix::zeros(m, n);
    let mut best = (f64::INFINITY, Vec::new());
    for idx in 0..space {
        let mut code = idx;
        for e in 0..entries {
            let (r, c) = (e / n, e % n);
            let k = (code % levels) as u32;
            code /= levels;
            q.set(r, c, layer.grid(r, c).decode(k));
        }
        let obj = naive_layer_objective(&q, w_hat, h);
        if obj < best.0 {
            best = (obj, q.data().to_vec());
        }
    }
    Ok(OracleResult {
        value: best.1,
        objective: best.0,
        method: "exhaustive-grid",
    })
}

pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    DenseMatrix::from_fn(a.rows(), b.cols(), |r, c| {
        (0..a.cols()).map(|k| a.get(r, k) * b.get(k, c)).sum()
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vec(len: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random PSD matrix `AᵀA` with `A` of shape `rows × m`.
pub fn random_psd(m: usize, rows: usize, rng: &mut ChaCha8Rng) -> (DenseMatrix, DenseMatrix) {
    let a = uniform_matrix(rows, m, -1.0, 1.0, rng);
    let h = naive_matmul(&a.transpose(), &a);
    let mut h = h;
    h.symmetrize();
    (a, h)
}

/// Features sharing one common factor (plus `spread` times independent
/// noise), as calibration activations typically do.
pub fn correlated_features(samples: usize, m: usize, spread: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let noise = uniform_matrix(samples, m, -1.0, 1.0, rng);
    let common = uniform_vec(samples, -1.0, 1.0, rng);
    DenseMatrix::from_fn(samples, m, |r, c| spread * noise.get(r, c) + common[r])
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn l1_oracle_examples() {
        let r = l1_projection_oracle(&[3.0, 1.0], 1.0).unwrap();
        assert!(sq_dist(&r.value, &[1.0, 0.0]) < 1e-20);
        let r = l1_projection_oracle(&[2.0, 2.0], 1.0).unwrap();
        assert!(sq_dist(&r.value, &[0.5, 0.5]) < 1e-20);
        let r = l1_projection_oracle(&[0.3, -0.2], 1.0).unwrap();
        assert_eq!(r.value, vec![0.3, -0.2]);
        assert!(l1_projection_oracle(&[0.0; 9], 1.0).is_err());
    }

    #[test]
    fn prox_oracle_examples() {
        let r = prox_linf_oracle(&[3.0, 1.0], 1.0).unwrap();
        assert!(sq_dist(&r.value, &[2.0, 1.0]) < 1e-12);
        let r = prox_linf_oracle(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(r.value, vec![0.0, 0.0]);
        // t ≥ ‖v‖₁ drives the result to zero.
        let r = prox_linf_oracle(&[1.0, -0.5], 2.0).unwrap();
        assert!(r.value.iter().all(|x| x.abs() < 1e-8));
        assert!(prox_linf_oracle(&[0.0; 5], 1.0).is_err());
    }
}
