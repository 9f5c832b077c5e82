//! Magnitude reduction by ℓ∞-regularized least squares.
//!
//! For a layer with pre-trained weights `Ŵ` (m × n, one column per output
//! channel) and Hessian `H = XᵀX`, the preprocessing solves
//!
//! ```text
//! min_W  ½‖XW − XŴ‖²_F + α Σ_j ‖w_j‖∞
//! ```
//!
//! by proximal gradient descent:
//!
//! ```text
//! V  = W − η·H(W − Ŵ)
//! W' = V − ηα·proj_{‖·‖₁≤1}(V / (ηα))      (column- or segment-wise)
//! ```
//!
//! Because `X` is close to rank deficient, large moves along its near-kernel
//! barely change `XW`, and the ℓ∞ penalty uses them to flatten the largest
//! entry of every channel.

use crate::error::{Error, Result};
use crate::prox::{check_group, prox_segments_in_place};
use crate::tensor::spectral::{
    min_eigenvalue_upper_estimate, power_iteration, DEFAULT_POWER_MAX_ITER, DEFAULT_POWER_TOL,
};
use crate::tensor::DenseMatrix;

/// Margin applied to the power-iteration estimate of `λmax(H)`.
pub const STEP_SAFETY: f64 = 1.01;

pub const DEFAULT_ALPHA_PER_CHANNEL: f64 = 1e-3;
pub const DEFAULT_ALPHA_PER_GROUP: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerChannel,
    /// Contiguous segments of `d` rows within each column.
    PerGroup(usize),
}

impl Granularity {
    /// Segment length for a column of length `m`.
    pub fn segment_len(self, m: usize) -> usize {
        match self {
            Granularity::PerChannel => m,
            Granularity::PerGroup(d) => d,
        }
    }

    pub fn from_group_size(g: usize) -> Self {
        if g == 0 {
            Granularity::PerChannel
        } else {
            Granularity::PerGroup(g)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// `η = 1 / (1.01 · λmax(H))` with `λmax` from power iteration.
    Auto,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagRConfig {
    pub alpha: f64,
    pub max_iter: usize,
    pub granularity: Granularity,
    pub step_policy: StepPolicy,
}

impl Default for MagRConfig {
    fn default() -> Self {
        Self::per_channel(DEFAULT_ALPHA_PER_CHANNEL)
    }
}

impl MagRConfig {
    pub fn per_channel(alpha: f64) -> Self {
        Self {
            alpha,
            max_iter: DEFAULT_MAX_ITER,
            granularity: Granularity::PerChannel,
            step_policy: StepPolicy::Auto,
        }
    }

    pub fn per_group(alpha: f64, d: usize) -> Self {
        Self {
            granularity: Granularity::PerGroup(d),
            ..Self::per_channel(alpha)
        }
    }

    pub fn with_max_iter(mut self, k: usize) -> Self {
        self.max_iter = k;
        self
    }

    pub fn with_step(mut self, policy: StepPolicy) -> Self {
        self.step_policy = policy;
        self
    }

    /// Checks the configuration against a column length `m`.
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        if let Granularity::PerGroup(d) = self.granularity {
            check_group(m, d).map_err(|_| {
                Error::Config(format!("group size {d} does not divide {m} weight rows"))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagRReport {
    /// Objective value at `W⁰ = Ŵ` followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
    /// `‖·‖∞` per channel, or per group ordered `j * (m/d) + s`.
    pub max_mag_before: Vec<f64>,
    pub max_mag_after: Vec<f64>,
    /// `√trace((W−Ŵ)ᵀH(W−Ŵ))`, i.e. `‖X(W−Ŵ)‖_F`.
    pub output_drift: f64,
    /// `‖X(w_j − ŵ_j)‖` per channel.
    pub channel_drift: Vec<f64>,
    pub step_size: f64,
    pub lambda_max: f64,
}

fn check_hessian(h: &DenseMatrix, m: usize) -> Result<()> {
    if h.shape() != (m, m) {
        return Err(Error::Shape(format!(
            "Hessian is {}x{}, expected {m}x{m}",
            h.rows(),
            h.cols()
        )));
    }
    Ok(())
}

/// Largest eigenvalue of `h` for step-size purposes. Falls back to the
/// Gershgorin bound when power iteration does not converge.
pub fn lipschitz_constant(h: &DenseMatrix) -> Result<f64> {
    let est = power_iteration(h, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER)?;
    if est.converged {
        return Ok(est.lambda_max);
    }
    let gershgorin = (0..h.rows())
        .map(|r| h.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(gershgorin.max(est.lambda_max))
}

/// Returns `(η, λmax)`. `λmax` is NaN for an explicit step.
pub fn step_size(h: &DenseMatrix, policy: StepPolicy) -> Result<(f64, f64)> {
    match policy {
        StepPolicy::Explicit(eta) => {
            if eta > 0.0 && eta.is_finite() {
                Ok((eta, f64::NAN))
            } else {
                Err(Error::Config(format!("step size must be positive, got {eta}")))
            }
        }
        StepPolicy::Auto => {
            let lambda = lipschitz_constant(h)?;
            // With H = 0 the smooth term is constant and any step is valid.
            let eta = if lambda > 0.0 {
                1.0 / (STEP_SAFETY * lambda)
            } else {
                1.0
            };
            Ok((eta, lambda))
        }
    }
}

/// Rejects Hessians that are not symmetric positive semidefinite.
pub fn verify_psd(h: &DenseMatrix, lambda_max: f64) -> Result<()> {
    let scale = h.max_abs().max(lambda_max.abs());
    if scale == 0.0 {
        return Ok(());
    }
    if !h.is_symmetric(1e-9 * scale) {
        return Err(Error::Data("Hessian is not symmetric".into()));
    }
    if let Some(i) = h.diag().iter().position(|&d| d < -1e-8 * scale) {
        return Err(Error::Data(format!(
            "Hessian has negative diagonal entry {} at {i}",
            h.get(i, i)
        )));
    }
    let lmin = min_eigenvalue_upper_estimate(h, lambda_max)?;
    if lmin < -1e-8 * scale {
        return Err(Error::Data(format!(
            "Hessian is not positive semidefinite (eigenvalue estimate {lmin:.3e})"
        )));
    }
    Ok(())
}

/// `‖·‖∞` of each consecutive length-`d` segment of `buf`.
fn segment_max(buf: &[f64], d: usize) -> Vec<f64> {
    buf.chunks(d)
        .map(|s| s.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect()
}

/// Channel-major objective pieces: `Σ e∘g` per channel.
fn channel_quadratic(e_t: &DenseMatrix, g_t: &DenseMatrix) -> Vec<f64> {
    (0..e_t.rows())
        .map(|j| e_t.row(j).iter().zip(g_t.row(j)).map(|(a, b)| a * b).sum())
        .collect()
}

/// Runs `cfg.max_iter` proximal gradient iterations starting at `Ŵ`.
pub fn magr_preprocess(
    w_hat: &DenseMatrix,
    h: &DenseMatrix,
    cfg: &MagRConfig,
) -> Result<(DenseMatrix, MagRReport)> {
    let (m, _n) = w_hat.shape();
    check_hessian(h, m)?;
    cfg.validate(m)?;
    let d = cfg.granularity.segment_len(m).max(1);

    let (eta, lambda_max) = step_size(h, cfg.step_policy)?;
    let lambda_for_check = if lambda_max.is_nan() {
        lipschitz_constant(h)?
    } else {
        lambda_max
    };
    verify_psd(h, lambda_for_check)?;

    // Work channel-major: row j of `w_t` is channel j, so every prox
    // segment is contiguous, and H(W − Ŵ) becomes (W − Ŵ)ᵀH.
    let w_hat_t = w_hat.transpose();
    let mut w_t = w_hat_t.clone();
    let t = eta * cfg.alpha;

    let max_mag_before = segment_max(w_hat_t.data(), d);
    let penalty = |w: &DenseMatrix| cfg.alpha * segment_max(w.data(), d).iter().sum::<f64>();

    let mut objective_trace = Vec::with_capacity(cfg.max_iter + 1);
    for _ in 0..cfg.max_iter {
        let e_t = w_t.sub(&w_hat_t)?;
        let g_t = e_t.matmul(h)?;
        let quad: f64 = channel_quadratic(&e_t, &g_t).iter().sum();
        objective_trace.push(0.5 * quad + penalty(&w_t));

        for (w, g) in w_t.data_mut().iter_mut().zip(g_t.data()) {
            *w -= eta * g;
        }
        prox_segments_in_place(w_t.data_mut(), d, t);
    }

    let e_t = w_t.sub(&w_hat_t)?;
    let g_t = e_t.matmul(h)?;
    let per_channel = channel_quadratic(&e_t, &g_t);
    let quad: f64 = per_channel.iter().sum();
    objective_trace.push(0.5 * quad + penalty(&w_t));

    let report = MagRReport {
        objective_trace,
        max_mag_before,
        max_mag_after: segment_max(w_t.data(), d),
        output_drift: quad.max(0.0).sqrt(),
        channel_drift: per_channel.iter().map(|q| q.max(0.0).sqrt()).collect(),
        step_size: eta,
        lambda_max,
    };
    Ok((w_t.transpose(), report))
}

/// `½·trace((W−Ŵ)ᵀH(W−Ŵ)) + α Σ ‖·‖∞` over channels or groups.
pub fn objective_value(
    w: &DenseMatrix,
    w_hat: &DenseMatrix,
    h: &DenseMatrix,
    alpha: f64,
    granularity: Granularity,
) -> Result<f64> {
    w.check_same_shape(w_hat)?;
    let m = w.rows();
    check_hessian(h, m)?;
    let d = granularity.segment_len(m).max(1);
    check_group(m.max(1), d)?;
    let e = w.sub(w_hat)?;
    let quad: f64 = crate::tensor::column_quadratic_forms(&e, h)?.iter().sum();
    let penalty: f64 = segment_max(w.transpose().data(), d).iter().sum();
    Ok(0.5 * quad + alpha * penalty)
}
