//! Coordinate-descent refinement on a fixed grid.
//!
//! Each channel is refined independently. A visit to coordinate `i` moves
//! its code to the grid point nearest the unconstrained one-dimensional
//! minimizer `q_i − r_i / H_ii`, where `r = H(q − ŵ)`, and keeps the move
//! only if the reconstruction objective strictly drops.

use rayon::prelude::*;

use super::QuantizedLayer;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Runs `iters` cyclic sweeps over the rows of every channel.
pub fn cd_refine(
    layer: &QuantizedLayer,
    w_hat: &DenseMatrix,
    h: &DenseMatrix,
    iters: usize,
) -> Result<QuantizedLayer> {
    let (m, n) = (layer.rows, layer.cols);
    if w_hat.shape() != (m, n) {
        return Err(Error::Shape(format!(
            "layer is {m}x{n}, reference weights are {}x{}",
            w_hat.rows(),
            w_hat.cols()
        )));
    }
    if h.shape() != (m, m) {
        return Err(Error::Shape(format!(
            "Hessian is {}x{}, expected {m}x{m}",
            h.rows(),
            h.cols()
        )));
    }
    let mut out = layer.clone();
    if iters == 0 {
        return Ok(out);
    }

    let columns: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|j| refine_column(layer, w_hat, h, j, iters))
        .collect();
    for (j, codes) in columns.into_iter().enumerate() {
        for (i, c) in codes.into_iter().enumerate() {
            out.codes[i * n + j] = c;
        }
    }
    Ok(out)
}

fn refine_column(
    layer: &QuantizedLayer,
    w_hat: &DenseMatrix,
    h: &DenseMatrix,
    j: usize,
    iters: usize,
) -> Vec<u32> {
    let m = layer.rows;
    let mut codes: Vec<u32> = (0..m).map(|i| layer.code(i, j)).collect();
    let mut q: Vec<f64> = (0..m).map(|i| layer.grid(i, j).decode(codes[i])).collect();
    let e: Vec<f64> = (0..m).map(|i| q[i] - w_hat.get(i, j)).collect();
    // r = H e
    let mut r: Vec<f64> = (0..m)
        .map(|i| h.row(i).iter().zip(&e).map(|(a, b)| a * b).sum())
        .collect();

    for _ in 0..iters {
        for i in 0..m {
            let grid = layer.grid(i, j);
            let hii = h.get(i, i);
            if grid.is_constant() || !(hii > 0.0) {
                continue;
            }
            let target = q[i] - r[i] / hii;
            let c = grid.encode(target);
            if c == codes[i] {
                continue;
            }
            let step = grid.decode(c) - q[i];
            let gain = step * (hii * step + 2.0 * r[i]);
            let scale = (hii * step * step).abs() + (2.0 * r[i] * step).abs();
            if !(gain < -4.0 * f64::EPSILON * scale) {
                continue;
            }
            codes[i] = c;
            q[i] += step;
            // H is symmetric: column i equals row i.
            for (rk, hki) in r.iter_mut().zip(h.row(i)) {
                *rk += step * hki;
            }
        }
    }
    codes
}
