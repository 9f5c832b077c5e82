//! Synthetic layers with a controlled feature spectrum and weight outliers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LayerRecord;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Singular values kept below the fraction-rank cut sit at this fraction
/// of `σmax`.
pub const TAIL_SINGULAR_VALUE: f64 = 1e-4;
/// Smallest "dominant" singular value relative to `σmax`.
pub const HEAD_FLOOR: f64 = 0.1;
pub const OUTLIER_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Input dimension (weight rows).
    pub m: usize,
    /// Output channels (weight columns).
    pub n: usize,
    /// Calibration rows in the feature matrix.
    pub samples: usize,
    pub frac_rank_target: f64,
    pub outlier_rate: f64,
    /// Largest singular value of the feature matrix.
    pub sigma_max: f64,
    /// Standard deviation of the non-outlier weights.
    pub weight_std: f64,
}

impl SynthSpec {
    pub fn new(m: usize, n: usize, samples: usize, frac_rank_target: f64, outlier_rate: f64) -> Self {
        Self {
            m,
            n,
            samples,
            frac_rank_target,
            outlier_rate,
            sigma_max: 1.0,
            weight_std: 0.02,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.frac_rank_target > 0.0 && self.frac_rank_target <= 1.0) {
            return Err(Error::Argument(format!(
                "fraction-rank target must lie in (0, 1], got {}",
                self.frac_rank_target
            )));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::Argument(format!(
                "outlier rate must lie in [0, 1], got {}",
                self.outlier_rate
            )));
        }
        if self.m == 0 || self.n == 0 || self.samples == 0 {
            return Err(Error::Argument("synthetic dimensions must be positive".into()));
        }
        if !(self.sigma_max > 0.0 && self.weight_std > 0.0) {
            return Err(Error::Argument("scales must be positive".into()));
        }
        Ok(())
    }

    /// Singular values above the 1% cut: `⌈target · min(samples, m)⌉`.
    pub fn dominant_count(&self) -> usize {
        let k = self.samples.min(self.m);
        // Guard against 0.1 * 30 = 3.0000000000000004.
        ((self.frac_rank_target * k as f64 - 1e-9).ceil() as usize).clamp(1, k)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows × k` matrix with orthonormal columns (Gram–Schmidt, two passes).
fn orthonormal_columns(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..rows).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    DenseMatrix::from_fn(rows, k, |r, c| cols[c][r])
}

/// Feature spectrum: `r` dominant values spaced geometrically from
/// `σmax` down to `0.1·σmax`, the rest at `1e-4·σmax`.
pub fn synth_spectrum(spec: &SynthSpec) -> Vec<f64> {
    let k = spec.samples.min(spec.m);
    let r = spec.dominant_count();
    (0..k)
        .map(|i| {
            let rel = if i < r {
                if r == 1 {
                    1.0
                } else {
                    HEAD_FLOOR.powf(i as f64 / (r - 1) as f64)
                }
            } else {
                TAIL_SINGULAR_VALUE
            };
            spec.sigma_max * rel
        })
        .collect()
}

/// Features `UΣVᵀ` (`samples × m`) for the spec.
pub fn synth_features(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<DenseMatrix> {
    let k = spec.samples.min(spec.m);
    let sigma = synth_spectrum(spec);
    let u = orthonormal_columns(spec.samples, k, rng);
    let v = orthonormal_columns(spec.m, k, rng);
    let us = DenseMatrix::from_fn(spec.samples, k, |r, c| u.get(r, c) * sigma[c]);
    us.matmul(&v.transpose())
}

/// Gaussian weights with a fraction of entries scaled by ×10.
pub fn synth_weights(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(spec.m, spec.n, |_, _| {
        let w = spec.weight_std * gaussian(rng);
        if rng.random::<f64>() < spec.outlier_rate {
            w * OUTLIER_SCALE
        } else {
            w
        }
    })
}

pub fn synth_layer_with(name: &str, spec: &SynthSpec, seed: u64) -> Result<LayerRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = synth_features(spec, &mut rng)?;
    let weights = synth_weights(spec, &mut rng);
    LayerRecord::with_features(name, weights, features)
}

/// One synthetic layer with unit `σmax` and weight std 0.02.
pub fn synth_layer(
    m: usize,
    n: usize,
    samples: usize,
    frac_rank_target: f64,
    outlier_rate: f64,
    seed: u64,
) -> Result<LayerRecord> {
    synth_layer_with(
        &format!("synth{seed}"),
        &SynthSpec::new(m, n, samples, frac_rank_target, outlier_rate),
        seed,
    )
}

/// A chain of `depth` square `width × width` layers. Layer 0 gets synthetic
/// features; layer `k` gets the full-precision outputs of layer `k − 1`.
/// Weights use std `1/√width` so activations keep their scale.
pub fn synth_chain(
    depth: usize,
    width: usize,
    samples: usize,
    frac_rank_target: f64,
    outlier_rate: f64,
    seed: u64,
) -> Result<Vec<LayerRecord>> {
    let mut spec = SynthSpec::new(width, width, samples, frac_rank_target, outlier_rate);
    spec.weight_std = 1.0 / (width as f64).sqrt();
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = synth_features(&spec, &mut rng)?;
    let mut out = Vec::with_capacity(depth);
    for k in 0..depth {
        let w = synth_weights(&spec, &mut rng);
        let next = x.matmul(&w)?;
        out.push(LayerRecord::with_features(&format!("layer{k}"), w, x)?);
        x = next;
    }
    Ok(out)
}
