//! Magnitude reduction (MagR) and low-bit post-training quantization for
//! linear-layer weights.
//!
//! The crate preprocesses a weight matrix `Ŵ` by ℓ∞-regularized least
//! squares against the layer Hessian `H = XᵀX`, which shrinks the
//! per-channel (or per-group) weight range while keeping `XW ≈ XŴ`, and
//! then quantizes the result with round-to-nearest, a Hessian-compensated
//! greedy quantizer, or coordinate-descent refinement.
//!
//! ```
//! use magr_core::{magr_preprocess, rtn_quantize, layer_error, DenseMatrix, MagRConfig, Method, QuantConfig};
//!
//! let x = DenseMatrix::from_rows(&[[1.0, 1.0]]);
//! let h = x.gram().unwrap();
//! let w_hat = DenseMatrix::column_vector(&[2.0, 0.0]);
//! let cfg = MagRConfig::per_channel(1e-4).with_max_iter(60_000);
//! let (w, _report) = magr_preprocess(&w_hat, &h, &cfg).unwrap();
//! assert!((w.get(0, 0) - 1.0).abs() < 1e-3);
//!
//! let q = rtn_quantize(&w, &QuantConfig::new(4, 0, Method::Rtn)).unwrap();
//! let err = layer_error(&q.dequantized(), &w_hat, &h).unwrap();
//! assert!(err < 0.1);
//! ```

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod magr;
pub mod pipeline;
pub mod prox;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
pub use magr::{magr_preprocess, objective_value, Granularity, MagRConfig, MagRReport, StepPolicy};
pub use pipeline::{run_pipeline, LayerRecord, PipelineOptions, PipelineOutput, RunReport};
pub use prox::{
    project_l1_columns, project_l1_grouped, project_l1_vector, prox_linf_columns,
    prox_linf_grouped, prox_linf_vector, ProjectionResult, VectorProjection,
};
pub use quant::{
    cd_refine, default_beta, layer_error, layer_objective, optq_quantize, quantize,
    quantize_vector, rtn_quantize, Method, QuantConfig, QuantGrid, QuantizedLayer,
};
pub use tensor::io::{read_tensor, write_tensor};
pub use tensor::spectral::{fraction_rank, power_iteration, SpectralEstimate};
pub use tensor::DenseMatrix;
