//! Hessian-compensated greedy quantization (OPTQ without activation
//! reordering or lazy batch updates).
//!
//! Weight rows are quantized in natural order. After row `i` is rounded,
//! its error is pushed onto the remaining rows through the upper Cholesky
//! factor `U` of `H⁻¹` (`H⁻¹ = UᵀU`):
//!
//! ```text
//! err     = (w_i − q(w_i)) / U_ii
//! w_k    -= U_ik · err        for k > i
//! ```

use super::{check_weights, empty_layer, Method, QuantConfig, QuantizedLayer};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

const DAMP_RETRIES: usize = 3;

/// Lower Cholesky factor, or `None` if a pivot is not positive.
fn cholesky_lower(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k).powi(2);
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix.
fn invert_lower(l: &DenseMatrix) -> DenseMatrix {
    let n = l.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    for j in 0..n {
        inv.set(j, j, 1.0 / l.get(j, j));
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s += l.get(i, k) * inv.get(k, j);
            }
            inv.set(i, j, -s / l.get(i, i));
        }
    }
    inv
}

/// Upper factor `U` with `H⁻¹ = UᵀU`, or `None` if `H` is not positive
/// definite.
fn inverse_upper_factor(h: &DenseMatrix) -> Option<DenseMatrix> {
    let l = cholesky_lower(h)?;
    let l_inv = invert_lower(&l);
    // H⁻¹ = L⁻ᵀ L⁻¹
    let h_inv = l_inv.transpose().matmul(&l_inv).ok()?;
    let mut h_inv = h_inv;
    h_inv.symmetrize();
    Some(cholesky_lower(&h_inv)?.transpose())
}

/// Dampened factorization with up to three ×10 retries.
fn factor_with_damping(h: &DenseMatrix, rel_damp: f64) -> Result<DenseMatrix> {
    let n = h.rows();
    let mut base = h.clone();
    // Inputs that never fire carry no information; give them unit curvature
    // so the factorization exists. Their rows are then rounded in isolation.
    for i in 0..n {
        if base.get(i, i) == 0.0 {
            base.set(i, i, 1.0);
        }
    }
    let mean_diag = base.trace() / n as f64;
    let mut damp = rel_damp * mean_diag;
    for attempt in 0..=DAMP_RETRIES {
        let mut damped = base.clone();
        for i in 0..n {
            damped.set(i, i, damped.get(i, i) + damp);
        }
        if let Some(u) = inverse_upper_factor(&damped) {
            return Ok(u);
        }
        if attempt == 0 && damp == 0.0 {
            damp = 1e-8 * mean_diag.abs().max(f64::MIN_POSITIVE);
        } else {
            damp *= 10.0;
        }
    }
    Err(Error::Data(format!(
        "Cholesky factorization failed after {DAMP_RETRIES} dampening retries"
    )))
}

/// Greedy quantization with Hessian error compensation.
///
/// Grids are fitted from `w_hat` before any compensation and stay fixed.
pub fn optq_quantize(
    w_hat: &DenseMatrix,
    h: &DenseMatrix,
    cfg: &QuantConfig,
) -> Result<QuantizedLayer> {
    check_weights(w_hat, cfg)?;
    let (m, n) = w_hat.shape();
    if h.shape() != (m, m) {
        return Err(Error::Shape(format!(
            "Hessian is {}x{}, expected {m}x{m}",
            h.rows(),
            h.cols()
        )));
    }
    let u = factor_with_damping(h, cfg.optq_damp)?;

    let mut layer = empty_layer(w_hat, cfg, Method::Optq);
    let group_len = layer.group_len();
    let mut w = w_hat.clone();
    let mut err = vec![0.0; n];
    for i in 0..m {
        let base = (i / group_len) * n;
        let uii = u.get(i, i);
        let codes = &mut layer.codes[i * n..(i + 1) * n];
        let grids = &layer.grids[base..base + n];
        for (((e, code), grid), &x) in err.iter_mut().zip(codes).zip(grids).zip(w.row(i)) {
            *code = grid.encode(x);
            *e = (x - grid.decode(*code)) / uii;
        }
        for k in (i + 1)..m {
            let uik = u.get(i, k);
            if uik == 0.0 {
                continue;
            }
            for (wk, e) in w.row_mut(k).iter_mut().zip(&err) {
                *wk -= uik * e;
            }
        }
    }
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{layer_objective, rtn_quantize};

    #[test]
    fn inverse_factor_reconstructs() {
        let h = DenseMatrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let u = inverse_upper_factor(&h).unwrap();
        let h_inv = u.transpose().matmul(&u).unwrap();
        let prod = h.matmul(&h_inv).unwrap();
        assert!(prod.max_abs_diff(&DenseMatrix::identity(3)) < 1e-12);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(u.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn identity_hessian_reduces_to_rtn() {
        let w = DenseMatrix::from_fn(6, 4, |r, c| ((r * 7 + c * 5) % 11) as f64 * 0.09 - 0.45);
        let cfg = QuantConfig::new(2, 0, Method::Optq);
        let a = optq_quantize(&w, &DenseMatrix::identity(6), &cfg).unwrap();
        let b = rtn_quantize(&w, &cfg).unwrap();
        assert_eq!(a.codes, b.codes);
        assert_eq!(a.grids, b.grids);
    }

    #[test]
    fn compensation_beats_rtn_on_correlated_toy() {
        let h = DenseMatrix::from_rows(&[[1.0, 0.9], [0.9, 1.0]]);
        let w = DenseMatrix::column_vector(&[0.2, 0.9]);
        let cfg = QuantConfig::new(1, 0, Method::Optq).with_beta(1.0);
        let optq = optq_quantize(&w, &h, &cfg).unwrap().dequantized();
        let rtn = rtn_quantize(&w, &cfg).unwrap().dequantized();
        let e_optq = layer_objective(&optq, &w, &h).unwrap();
        let e_rtn = layer_objective(&rtn, &w, &h).unwrap();
        assert!(e_optq <= e_rtn + 1e-12, "{e_optq} > {e_rtn}");
    }

    #[test]
    fn zero_hessian_still_factors() {
        let w = DenseMatrix::from_fn(3, 2, |r, c| (r + c) as f64);
        let cfg = QuantConfig::new(2, 0, Method::Optq);
        let layer = optq_quantize(&w, &DenseMatrix::zeros(3, 3), &cfg).unwrap();
        assert_eq!(layer.codes, rtn_quantize(&w, &cfg).unwrap().codes);
    }

    #[test]
    fn indefinite_hessian_fails_after_retries() {
        let h = DenseMatrix::from_rows(&[[1.0, 50.0], [50.0, 1.0]]);
        let w = DenseMatrix::column_vector(&[0.1, 0.5]);
        let err = optq_quantize(&w, &h, &QuantConfig::new(2, 0, Method::Optq)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
