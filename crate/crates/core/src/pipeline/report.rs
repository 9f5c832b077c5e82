use std::fmt::Write as _;

use crate::magr::MagRReport;
use crate::quant::Method;

pub const CSV_HEADER: &str =
    "layer,frac_rank,maxmag_before,maxmag_after,drift,err_rtn_raw,err_method_magr,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub fraction_rank: Option<f64>,
    pub magr: Option<MagRReport>,
    /// Per-channel `‖·‖∞` of the raw and of the preprocessed weights.
    pub max_mag_before: Vec<f64>,
    pub max_mag_after: Vec<f64>,
    /// `‖X(W − Ŵ)‖_F`; 0 without magnitude reduction.
    pub output_drift: f64,
    /// Layer errors, all measured against the raw weights.
    pub err_rtn_raw: f64,
    pub err_method_raw: f64,
    pub err_rtn_magr: f64,
    /// Error of the layer this run produced.
    pub err_method_magr: f64,
    pub magr_seconds: f64,
    pub quant_seconds: f64,
    pub seconds: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl LayerReport {
    pub fn mean_max_mag_before(&self) -> f64 {
        mean(&self.max_mag_before)
    }

    pub fn mean_max_mag_after(&self) -> f64 {
        mean(&self.max_mag_after)
    }

    /// Median over channels of `1 − after/before` (channels with zero
    /// initial magnitude count as no reduction).
    pub fn median_relative_reduction(&self) -> f64 {
        let mut r: Vec<f64> = self
            .max_mag_before
            .iter()
            .zip(&self.max_mag_after)
            .map(|(&b, &a)| if b > 0.0 { 1.0 - a / b } else { 0.0 })
            .collect();
        median(&mut r)
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub bits: u32,
    pub group_size: usize,
    pub method: Method,
    pub magr_enabled: bool,
    pub propagate: bool,
    pub layers: Vec<LayerReport>,
}

impl RunReport {
    /// `report.csv` contents. The max-magnitude columns are means over
    /// channels. Without `timings` the seconds column is written as 0 so
    /// that repeated runs produce identical files.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for l in &self.layers {
            let frac = l
                .fraction_rank
                .map(|f| format!("{f:.6}"))
                .unwrap_or_default();
            let secs = if timings { l.seconds } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.3}",
                l.name,
                frac,
                l.mean_max_mag_before(),
                l.mean_max_mag_after(),
                l.output_drift,
                l.err_rtn_raw,
                l.err_method_magr,
                secs
            );
        }
        s
    }

    pub fn mean_error(&self) -> f64 {
        mean(&self.layers.iter().map(|l| l.err_method_magr).collect::<Vec<_>>())
    }

    /// Plain-text summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let grouping = if self.group_size == 0 {
            "per-channel".to_string()
        } else {
            format!("g{}", self.group_size)
        };
        let _ = writeln!(
            s,
            "method: {}{}  bits: {}  grouping: {}  propagate: {}",
            if self.magr_enabled { "magr+" } else { "" },
            self.method,
            self.bits,
            grouping,
            self.propagate
        );
        let _ = writeln!(s, "layers: {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(
                s,
                "  {:<16} {}x{}  maxmag {:.4e} -> {:.4e}  drift {:.4e}  err rtn {:.4e}  err {:.4e} (raw {:.4e})",
                l.name,
                l.rows,
                l.cols,
                l.mean_max_mag_before(),
                l.mean_max_mag_after(),
                l.output_drift,
                l.err_rtn_raw,
                l.err_method_magr,
                l.err_method_raw
            );
        }
        let raw = mean(&self.layers.iter().map(|l| l.err_method_raw).collect::<Vec<_>>());
        let _ = writeln!(s, "mean error: {:.6e} (without preprocessing {:.6e})", self.mean_error(), raw);
        s
    }
}
