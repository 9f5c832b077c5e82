//! Asymmetric uniform weight quantization and the layer-wise quantizers
//! built on it.
//!
//! A channel (column) or length-`g` group `w` gets the grid
//!
//! ```text
//! δ = β·(max(w) − min(w)) / (2ᵇ − 1)
//! z = ⌊min(w)/δ⌉
//! q(x) = δ·(clamp(⌊x/δ⌉ − z, 0, 2ᵇ − 1) + z)
//! ```
//!
//! with `⌊·⌉` rounding half away from zero. Grids are fitted once from the
//! weights handed to the quantizer and stay fixed while a method chooses
//! codes on them.

mod cd;
mod optq;
pub mod store;

pub use cd::cd_refine;
pub use optq::optq_quantize;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{column_quadratic_forms, DenseMatrix};

pub const DEFAULT_OPTQ_DAMP: f64 = 0.01;
pub const DEFAULT_CD_ITERS: usize = 30;
pub const MAX_BITS: u32 = 16;

/// Step shrink factor used when none is given.
///
/// INT4 keeps the standard step, INT3 uses 0.9 and per-channel INT2 uses
/// 0.8; grouped INT2/INT3 use 0.95. Anything else gets 1.
pub fn default_beta(bits: u32, grouped: bool) -> f64 {
    match (bits, grouped) {
        (2 | 3, true) => 0.95,
        (2, false) => 0.8,
        (3, false) => 0.9,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rtn,
    Optq,
    /// OPTQ followed by `cd_iters` sweeps of coordinate descent.
    OptqCd { cd_iters: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rtn => "rtn",
            Method::Optq => "optq",
            Method::OptqCd { .. } => "optq-cd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rtn" => Ok(Method::Rtn),
            "optq" | "gptq" => Ok(Method::Optq),
            "optq-cd" | "optq_cd" => Ok(Method::OptqCd {
                cd_iters: DEFAULT_CD_ITERS,
            }),
            other => Err(Error::Argument(format!("unknown quantization method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub bits: u32,
    /// Rows per group within a column; 0 means one grid per column.
    pub group_size: usize,
    pub beta: f64,
    pub method: Method,
    /// Dampening added to the Hessian diagonal, relative to its mean.
    pub optq_damp: f64,
}

impl QuantConfig {
    /// Config with the default step shrink for `bits`/`group_size`.
    pub fn new(bits: u32, group_size: usize, method: Method) -> Self {
        Self {
            bits,
            group_size,
            beta: default_beta(bits, group_size > 0),
            method,
            optq_damp: DEFAULT_OPTQ_DAMP,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Rows per grid for a column of length `m`.
    pub fn group_len(&self, m: usize) -> usize {
        if self.group_size == 0 {
            m
        } else {
            self.group_size
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(1..=MAX_BITS).contains(&self.bits) {
            return Err(Error::Config(format!(
                "bit width must be in 1..={MAX_BITS}, got {}",
                self.bits
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!(
                "beta must lie in (0, 1], got {}",
                self.beta
            )));
        }
        if self.group_size > 0 && !m.is_multiple_of(self.group_size) {
            return Err(Error::Config(format!(
                "group size {} does not divide {m} weight rows",
                self.group_size
            )));
        }
        if !(self.optq_damp >= 0.0 && self.optq_damp.is_finite()) {
            return Err(Error::Config(format!(
                "dampening must be non-negative, got {}",
                self.optq_damp
            )));
        }
        Ok(())
    }
}

/// One quantization grid `{(z + q)·δ : q ∈ [0, 2ᵇ−1]}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantGrid {
    pub delta: f64,
    pub zero: i64,
    pub max_code: u32,
    /// Set for a constant input (`max = min`), where `δ = 0` and every code
    /// decodes to this value.
    pub constant: Option<f64>,
}

impl QuantGrid {
    /// Fits the grid to the range of `w`. Panics on an empty slice.
    pub fn fit(w: &[f64], bits: u32, beta: f64) -> Self {
        assert!(!w.is_empty(), "cannot fit a grid to no values");
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        let max_code = (1u32 << bits) - 1;
        if hi == lo {
            return QuantGrid {
                delta: 0.0,
                zero: 0,
                max_code,
                constant: Some(lo),
            };
        }
        let delta = beta * (hi - lo) / max_code as f64;
        QuantGrid {
            delta,
            zero: (lo / delta).round() as i64,
            max_code,
            constant: None,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    /// Nearest grid code for `x`.
    #[inline]
    pub fn encode(&self, x: f64) -> u32 {
        if self.constant.is_some() {
            return 0;
        }
        let q = (x / self.delta).round() - self.zero as f64;
        q.clamp(0.0, self.max_code as f64) as u32
    }

    #[inline]
    pub fn decode(&self, code: u32) -> f64 {
        match self.constant {
            Some(c) => c,
            None => self.delta * (code as i64 + self.zero) as f64,
        }
    }

    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        self.decode(self.encode(x))
    }
}

/// Quantizes one vector on its own grid, returning the codes and the grid.
pub fn quantize_vector(w: &[f64], bits: u32, beta: f64) -> Result<(Vec<u32>, QuantGrid)> {
    if w.is_empty() {
        return Err(Error::Argument("cannot quantize an empty vector".into()));
    }
    if let Some(x) = w.iter().find(|x| !x.is_finite()) {
        return Err(Error::Data(format!("non-finite weight {x}")));
    }
    QuantConfig {
        bits,
        group_size: 0,
        beta,
        method: Method::Rtn,
        optq_damp: DEFAULT_OPTQ_DAMP,
    }
    .validate(w.len())?;
    let grid = QuantGrid::fit(w, bits, beta);
    Ok((w.iter().map(|&x| grid.encode(x)).collect(), grid))
}

/// Integer codes plus one grid per (group, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    /// 0 for per-channel grids.
    pub group_size: usize,
    pub beta: f64,
    pub method: Method,
    /// Row-major `rows × cols`.
    pub codes: Vec<u32>,
    /// Row-major `(rows / group_len) × cols`.
    pub grids: Vec<QuantGrid>,
}

impl QuantizedLayer {
    pub fn group_len(&self) -> usize {
        if self.group_size == 0 {
            self.rows
        } else {
            self.group_size
        }
    }

    pub fn groups_per_column(&self) -> usize {
        self.rows / self.group_len().max(1)
    }

    #[inline]
    pub fn grid(&self, row: usize, col: usize) -> &QuantGrid {
        &self.grids[(row / self.group_len()) * self.cols + col]
    }

    #[inline]
    pub fn code(&self, row: usize, col: usize) -> u32 {
        self.codes[row * self.cols + col]
    }

    pub fn dequantized(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |r, c| {
            self.grid(r, c).decode(self.code(r, c))
        })
    }

    pub fn has_constant_groups(&self) -> bool {
        self.grids.iter().any(QuantGrid::is_constant)
    }
}

/// Fits one grid per (group, channel) of `w`.
pub(crate) fn fit_grids(w: &DenseMatrix, bits: u32, beta: f64, group_len: usize) -> Vec<QuantGrid> {
    let (m, n) = w.shape();
    let groups = m / group_len;
    let wt = w.transpose();
    let mut grids: Vec<QuantGrid> = (0..groups * n)
        .into_par_iter()
        .map(|idx| {
            let (g, j) = (idx / n, idx % n);
            QuantGrid::fit(&wt.row(j)[g * group_len..(g + 1) * group_len], bits, beta)
        })
        .collect();
    grids.shrink_to_fit();
    grids
}

pub(crate) fn check_weights(w: &DenseMatrix, cfg: &QuantConfig) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Argument("cannot quantize an empty matrix".into()));
    }
    cfg.validate(w.rows())
}

pub(crate) fn empty_layer(w: &DenseMatrix, cfg: &QuantConfig, method: Method) -> QuantizedLayer {
    let grids = fit_grids(w, cfg.bits, cfg.beta, cfg.group_len(w.rows()));
    QuantizedLayer {
        rows: w.rows(),
        cols: w.cols(),
        bits: cfg.bits,
        group_size: cfg.group_size,
        beta: cfg.beta,
        method,
        codes: vec![0; w.rows() * w.cols()],
        grids,
    }
}

/// Round-to-nearest on per-channel or per-group grids.
pub fn rtn_quantize(w: &DenseMatrix, cfg: &QuantConfig) -> Result<QuantizedLayer> {
    check_weights(w, cfg)?;
    let mut layer = empty_layer(w, cfg, Method::Rtn);
    let n = w.cols();
    let group_len = layer.group_len();
    let grids = &layer.grids;
    layer
        .codes
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(r, codes)| {
            let base = (r / group_len) * n;
            for (j, (c, &x)) in codes.iter_mut().zip(w.row(r)).enumerate() {
                *c = grids[base + j].encode(x);
            }
        });
    Ok(layer)
}

/// Runs the configured method.
pub fn quantize(w: &DenseMatrix, h: &DenseMatrix, cfg: &QuantConfig) -> Result<QuantizedLayer> {
    match cfg.method {
        Method::Rtn => rtn_quantize(w, cfg),
        Method::Optq => optq_quantize(w, h, cfg),
        Method::OptqCd { cd_iters } => {
            let layer = optq_quantize(w, h, cfg)?;
            let mut refined = cd_refine(&layer, w, h, cd_iters)?;
            refined.method = cfg.method;
            Ok(refined)
        }
    }
}

/// Reconstruction objective `trace((W_q − W)ᵀ H (W_q − W))`.
pub fn layer_objective(w_q: &DenseMatrix, w_ref: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    let e = w_q.sub(w_ref)?;
    Ok(column_quadratic_forms(&e, h)?.iter().sum())
}

/// Root of [`layer_objective`], i.e. `‖X(W_q − W)‖_F` when `H = XᵀX`.
pub fn layer_error(w_q: &DenseMatrix, w_ref: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    Ok(layer_objective(w_q, w_ref, h)?.max(0.0).sqrt())
}
