//! Multi-layer orchestration: magnitude reduction, quantization, optional
//! propagation of calibration features through the quantized chain, and
//! per-layer metrics.

pub mod manifest;
pub mod report;
pub mod synth;

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::magr::{magr_preprocess, MagRConfig, MagRReport};
use crate::quant::{layer_error, quantize, rtn_quantize, Method, QuantConfig, QuantizedLayer};
use crate::tensor::spectral::fraction_rank;
use crate::tensor::DenseMatrix;

pub use report::{LayerReport, RunReport};
pub use synth::{synth_chain, synth_layer, SynthSpec};

/// Threshold for the fraction-rank statistic, relative to `σmax`.
pub const FRACTION_RANK_THRESHOLD: f64 = 0.01;

/// One linear layer: pre-trained weights (`m × n`) and either calibration
/// features (`samples × m`) or the Hessian `XᵀX` (`m × m`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub weights: DenseMatrix,
    pub features: Option<DenseMatrix>,
    pub hessian: Option<DenseMatrix>,
}

impl LayerRecord {
    pub fn with_features(name: &str, weights: DenseMatrix, features: DenseMatrix) -> Result<Self> {
        let rec = Self {
            name: name.to_string(),
            weights,
            features: Some(features),
            hessian: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_hessian(name: &str, weights: DenseMatrix, hessian: DenseMatrix) -> Result<Self> {
        let rec = Self {
            name: name.to_string(),
            weights,
            features: None,
            hessian: Some(hessian),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.rows();
        let check = || -> Result<()> {
            match (&self.features, &self.hessian) {
                (None, None) => Err(Error::Data("layer has neither features nor a Hessian".into())),
                (Some(_), Some(_)) => Err(Error::Data(
                    "layer has both features and a Hessian; supply exactly one".into(),
                )),
                (Some(x), None) if x.cols() != m => Err(Error::Shape(format!(
                    "features have {} columns but weights have {m} rows",
                    x.cols()
                ))),
                (None, Some(h)) if h.shape() != (m, m) => Err(Error::Shape(format!(
                    "Hessian is {}x{} but weights have {m} rows",
                    h.rows(),
                    h.cols()
                ))),
                _ => Ok(()),
            }
        };
        check().map_err(|e| e.in_layer(&self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipelineOptions {
    /// Recompute each layer's features from the previous quantized layer.
    pub propagate: bool,
    /// Worker threads for independent layers; 0 uses the global pool.
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub quantized: Vec<QuantizedLayer>,
    /// Weights after magnitude reduction (the raw weights when disabled).
    pub preprocessed: Vec<DenseMatrix>,
    pub report: RunReport,
}

struct LayerOutcome {
    quantized: QuantizedLayer,
    preprocessed: DenseMatrix,
    report: LayerReport,
}

fn process_layer(
    name: &str,
    weights: &DenseMatrix,
    features: Option<&DenseMatrix>,
    hessian: Option<&DenseMatrix>,
    magr: Option<&MagRConfig>,
    quant: &QuantConfig,
) -> Result<LayerOutcome> {
    let start = Instant::now();
    let computed;
    let h = match (features, hessian) {
        (Some(x), _) => {
            computed = x.gram()?;
            &computed
        }
        (None, Some(h)) => h,
        (None, None) => {
            return Err(Error::Data("layer has neither features nor a Hessian".into()))
        }
    };
    let frac_rank = features
        .map(|x| fraction_rank(x, FRACTION_RANK_THRESHOLD))
        .transpose()?;

    let magr_start = Instant::now();
    let (preprocessed, magr_report): (DenseMatrix, Option<MagRReport>) = match magr {
        Some(cfg) => {
            let (w, rep) = magr_preprocess(weights, h, cfg)?;
            (w, Some(rep))
        }
        None => (weights.clone(), None),
    };
    let magr_seconds = magr_start.elapsed().as_secs_f64();

    let quant_start = Instant::now();
    let quantized = quantize(&preprocessed, h, quant)?;
    let quant_seconds = quant_start.elapsed().as_secs_f64();

    let rtn_cfg = quant.clone().with_method(Method::Rtn);
    let err_rtn_raw = layer_error(&rtn_quantize(weights, &rtn_cfg)?.dequantized(), weights, h)?;
    let err_method_magr = layer_error(&quantized.dequantized(), weights, h)?;
    let (err_method_raw, err_rtn_magr) = if magr.is_some() {
        let raw = quantize(weights, h, quant)?.dequantized();
        let rtn_magr = rtn_quantize(&preprocessed, &rtn_cfg)?.dequantized();
        (
            layer_error(&raw, weights, h)?,
            layer_error(&rtn_magr, weights, h)?,
        )
    } else {
        (err_method_magr, err_rtn_raw)
    };

    let report = LayerReport {
        name: name.to_string(),
        rows: weights.rows(),
        cols: weights.cols(),
        fraction_rank: frac_rank,
        max_mag_before: weights.column_max_abs(),
        max_mag_after: preprocessed.column_max_abs(),
        output_drift: magr_report.as_ref().map_or(0.0, |r| r.output_drift),
        magr: magr_report,
        err_rtn_raw,
        err_method_raw,
        err_rtn_magr,
        err_method_magr,
        magr_seconds,
        quant_seconds,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(LayerOutcome {
        quantized,
        preprocessed,
        report,
    })
}

/// Runs magnitude reduction (when `magr` is set) and the configured
/// quantizer on every layer, in order.
///
/// With `propagate`, layer 0 must carry features and layer `k` sees
/// `X_k = X_{k−1} · dequant(W_{k−1})`; supplied features/Hessians of later
/// layers are ignored. Otherwise layers are independent and may run in
/// parallel on `workers` threads.
pub fn run_pipeline(
    layers: &[LayerRecord],
    magr: Option<&MagRConfig>,
    quant: &QuantConfig,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    for rec in layers {
        rec.validate()?;
    }
    let outcomes = if opts.propagate {
        run_chain(layers, magr, quant)?
    } else {
        let run = || {
            layers
                .par_iter()
                .map(|rec| {
                    process_layer(
                        &rec.name,
                        &rec.weights,
                        rec.features.as_ref(),
                        rec.hessian.as_ref(),
                        magr,
                        quant,
                    )
                    .map_err(|e| e.in_layer(&rec.name))
                })
                .collect::<Result<Vec<_>>>()
        };
        if opts.workers > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
                .install(run)?
        } else {
            run()?
        }
    };

    let mut quantized = Vec::with_capacity(outcomes.len());
    let mut preprocessed = Vec::with_capacity(outcomes.len());
    let mut reports = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        quantized.push(o.quantized);
        preprocessed.push(o.preprocessed);
        reports.push(o.report);
    }
    Ok(PipelineOutput {
        quantized,
        preprocessed,
        report: RunReport {
            bits: quant.bits,
            group_size: quant.group_size,
            method: quant.method,
            magr_enabled: magr.is_some(),
            propagate: opts.propagate,
            layers: reports,
        },
    })
}

fn run_chain(
    layers: &[LayerRecord],
    magr: Option<&MagRConfig>,
    quant: &QuantConfig,
) -> Result<Vec<LayerOutcome>> {
    let Some(first) = layers.first() else {
        return Ok(Vec::new());
    };
    let mut x = first.features.clone().ok_or_else(|| {
        Error::Data("propagation needs features for the first layer".into()).in_layer(&first.name)
    })?;
    let mut out = Vec::with_capacity(layers.len());
    for rec in layers {
        if x.cols() != rec.weights.rows() {
            return Err(Error::Shape(format!(
                "chain mismatch: incoming activations have {} columns, weights have {} rows",
                x.cols(),
                rec.weights.rows()
            ))
            .in_layer(&rec.name));
        }
        let outcome = process_layer(&rec.name, &rec.weights, Some(&x), None, magr, quant)
            .map_err(|e| e.in_layer(&rec.name))?;
        x = x.matmul(&outcome.quantized.dequantized())?;
        out.push(outcome);
    }
    Ok(out)
}

/// Features each layer would see in a propagated run, for inspection.
pub fn propagated_features(
    layers: &[LayerRecord],
    quantized: &[QuantizedLayer],
) -> Result<Vec<DenseMatrix>> {
    let mut feats = Vec::with_capacity(layers.len());
    let Some(first) = layers.first() else {
        return Ok(feats);
    };
    let mut x = first
        .features
        .clone()
        .ok_or_else(|| Error::Data("first layer has no features".into()))?;
    for q in quantized.iter().take(layers.len()) {
        let next = x.matmul(&q.dequantized())?;
        feats.push(x);
        x = next;
    }
    Ok(feats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_requires_exactly_one_source() {
        let w = DenseMatrix::zeros(3, 2);
        let rec = LayerRecord {
            name: "a".into(),
            weights: w.clone(),
            features: None,
            hessian: None,
        };
        let err = rec.validate().unwrap_err();
        assert!(matches!(err.root(), Error::Data(_)));
        assert!(err.to_string().contains("`a`"));

        let both = LayerRecord {
            features: Some(DenseMatrix::zeros(4, 3)),
            hessian: Some(DenseMatrix::zeros(3, 3)),
            ..rec.clone()
        };
        assert!(both.validate().is_err());

        assert!(LayerRecord::with_features("x", w.clone(), DenseMatrix::zeros(4, 2)).is_err());
        assert!(LayerRecord::with_hessian("h", w, DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn chain_mismatch_names_layer() {
        let a = LayerRecord::with_features(
            "first",
            DenseMatrix::from_fn(3, 2, |r, c| (r + c) as f64),
            DenseMatrix::from_fn(5, 3, |r, c| (r * c) as f64),
        )
        .unwrap();
        let b = LayerRecord::with_hessian(
            "second",
            DenseMatrix::from_fn(4, 2, |r, c| (r + c) as f64),
            DenseMatrix::identity(4),
        )
        .unwrap();
        let err = run_pipeline(
            &[a, b],
            None,
            &QuantConfig::new(4, 0, Method::Rtn),
            &PipelineOptions {
                propagate: true,
                workers: 0,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("second"), "{err}");
        assert!(matches!(err.root(), Error::Shape(_)));
    }
}
