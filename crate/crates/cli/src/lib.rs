//! Command-line front end: `synth`, `analyze`, `preprocess`, `quantize`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use magr_core::magr::{DEFAULT_ALPHA_PER_CHANNEL, DEFAULT_ALPHA_PER_GROUP, DEFAULT_MAX_ITER};
use magr_core::pipeline::manifest::{load_layers, read_manifest, write_manifest, Calibration, ManifestEntry};
use magr_core::pipeline::synth::{synth_layer_with, SynthSpec};
use magr_core::pipeline::{synth_chain, FRACTION_RANK_THRESHOLD};
use magr_core::quant::store::write_quantized;
use magr_core::quant::{DEFAULT_CD_ITERS, DEFAULT_OPTQ_DAMP};
use magr_core::{
    default_beta, fraction_rank, magr_preprocess, run_pipeline, write_tensor, DenseMatrix, Error,
    LayerRecord, MagRConfig, Method, PipelineOptions, QuantConfig,
};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "magr", version, about = "Magnitude reduction and low-bit weight quantization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic layers and a manifest.
    Synth(SynthArgs),
    /// Print fraction-rank statistics of the manifest's feature matrices.
    Analyze(AnalyzeArgs),
    /// Run magnitude reduction only and write the preprocessed weights.
    Preprocess(PreprocessArgs),
    /// Run (optional) magnitude reduction followed by quantization.
    Quantize(QuantizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    /// Input dimension (weight rows).
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    /// Output channels (weight columns); must equal `m` with `--chain`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Calibration rows; defaults to `2·m`.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub frac_rank: f64,
    #[arg(long, default_value_t = 0.01)]
    pub outlier_rate: f64,
    /// Generate a linear chain where layer k's features are layer k−1's outputs.
    #[arg(long)]
    pub chain: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, default_value = "out/manifest.txt")]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct MagRArgs {
    /// Regularization strength; defaults to 1e-3 per-channel, 1e-4 grouped.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Proximal-gradient iterations.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub iters: usize,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, default_value = "out/manifest.txt")]
    pub manifest: PathBuf,
    /// Rows per quantization group; 0 means per-channel.
    #[arg(long, default_value_t = 0)]
    pub group: usize,
    /// Recompute each layer's features from the previous quantized layer.
    #[arg(long)]
    pub propagate: bool,
    /// Worker threads for independent layers (0 = all cores).
    #[arg(long, env = "MAGR_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Accepted for reproducible invocations; the pipeline itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write wall-clock seconds into report.csv (otherwise 0).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "out/magr")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub magr: MagRArgs,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "out/quant")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub magr_args: MagRArgs,
    #[arg(long, default_value_t = 4)]
    pub bits: u32,
    /// Step shrink factor; defaults to the per-bit table.
    #[arg(long)]
    pub beta: Option<f64>,
    /// rtn, optq, or optq-cd.
    #[arg(long, default_value = "optq", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = DEFAULT_CD_ITERS)]
    pub cd_iters: usize,
    /// OPTQ dampening relative to the mean Hessian diagonal.
    #[arg(long, default_value_t = DEFAULT_OPTQ_DAMP)]
    pub damp: f64,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub magr: Toggle,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl MagRArgs {
    pub fn config(&self, group: usize) -> MagRConfig {
        let alpha = self.alpha.unwrap_or(if group == 0 {
            DEFAULT_ALPHA_PER_CHANNEL
        } else {
            DEFAULT_ALPHA_PER_GROUP
        });
        let cfg = if group == 0 {
            MagRConfig::per_channel(alpha)
        } else {
            MagRConfig::per_group(alpha, group)
        };
        cfg.with_max_iter(self.iters)
    }
}

impl QuantizeArgs {
    pub fn quant_config(&self) -> QuantConfig {
        let method = match self.method {
            Method::OptqCd { .. } => Method::OptqCd {
                cd_iters: self.cd_iters,
            },
            m => m,
        };
        let group = self.common.group;
        QuantConfig {
            optq_damp: self.damp,
            ..QuantConfig::new(self.bits, group, method)
                .with_beta(self.beta.unwrap_or_else(|| default_beta(self.bits, group != 0)))
        }
    }
}

/// Maps an error to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Io { .. }) => EXIT_IO,
        Some(Error::Argument(_) | Error::Config(_)) => EXIT_USAGE,
        Some(_) => EXIT_DATA,
        None => match err.downcast_ref::<std::io::Error>() {
            Some(_) => EXIT_IO,
            None => EXIT_DATA,
        },
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Analyze(a) => {
            print!("{}", analyze(&a)?);
            Ok(())
        }
        Command::Preprocess(a) => preprocess(&a),
        Command::Quantize(a) => quantize(&a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
        .map_err(Into::into)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
        .map_err(Into::into)
}

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    if a.layers == 0 {
        return Err(Error::Argument("--layers must be positive".into()).into());
    }
    let samples = a.samples.unwrap_or(2 * a.m);
    let layers: Vec<LayerRecord> = if a.chain {
        if a.n.is_some_and(|n| n != a.m) {
            return Err(Error::Argument("--chain needs square layers (--n equal to --m)".into()).into());
        }
        synth_chain(a.layers, a.m, samples, a.frac_rank, a.outlier_rate, a.seed)?
    } else {
        let spec = SynthSpec::new(a.m, a.n.unwrap_or(a.m), samples, a.frac_rank, a.outlier_rate);
        (0..a.layers)
            .map(|k| synth_layer_with(&format!("layer{k}"), &spec, a.seed.wrapping_add(k as u64)))
            .collect::<Result<_, _>>()?
    };

    create_dir(&a.out_dir)?;
    let mut entries = Vec::with_capacity(layers.len());
    for layer in &layers {
        let w = a.out_dir.join(format!("{}.w.magr", layer.name));
        let x = a.out_dir.join(format!("{}.x.magr", layer.name));
        write_tensor(&w, &layer.weights)?;
        write_tensor(&x, layer.features.as_ref().expect("synthetic layers carry features"))?;
        entries.push(ManifestEntry {
            name: layer.name.clone(),
            weights: w,
            calibration: Calibration::Features(x),
        });
    }
    let manifest = a.out_dir.join("manifest.txt");
    write_manifest(&manifest, &entries)?;
    eprintln!("wrote {} layers to {}", layers.len(), manifest.display());
    Ok(())
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fraction-rank table (percentages with two decimals).
pub fn analyze(a: &AnalyzeArgs) -> anyhow::Result<String> {
    let entries = read_manifest(&a.manifest)?;
    let mut out = String::new();
    let mut ranks = Vec::new();
    let _ = writeln!(out, "{:<16} {:>10}", "layer", "frac_rank");
    for entry in &entries {
        let Calibration::Features(_) = entry.calibration else {
            eprintln!("skipping `{}`: no feature matrix", entry.name);
            continue;
        };
        let layer = entry.load()?;
        let x = layer.features.as_ref().expect("feature entry");
        let r = 100.0 * fraction_rank(x, FRACTION_RANK_THRESHOLD).map_err(|e| e.in_layer(&entry.name))?;
        let _ = writeln!(out, "{:<16} {:>9.2}%", entry.name, r);
        ranks.push(r);
    }
    if ranks.is_empty() {
        bail!(Error::Data("manifest has no layers with feature matrices".into()));
    }
    ranks.sort_by(f64::total_cmp);
    let mean = ranks.iter().sum::<f64>() / ranks.len() as f64;
    let _ = writeln!(out);
    let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8} {:>8}", "Min", "Max", "Mean", "25%", "75%");
    let _ = writeln!(
        out,
        "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
        ranks[0],
        ranks[ranks.len() - 1],
        mean,
        percentile(&ranks, 0.25),
        percentile(&ranks, 0.75)
    );
    Ok(out)
}

fn load(manifest: &Path) -> anyhow::Result<(Vec<ManifestEntry>, Vec<LayerRecord>)> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        bail!(Error::Data(format!("{}: manifest lists no layers", manifest.display())));
    }
    let layers = load_layers(&entries)?;
    Ok((entries, layers))
}

fn hessian_of(layer: &LayerRecord) -> magr_core::Result<DenseMatrix> {
    match (&layer.features, &layer.hessian) {
        (Some(x), _) => x.gram(),
        (None, Some(h)) => Ok(h.clone()),
        (None, None) => Err(Error::Data("layer has neither features nor a Hessian".into())),
    }
}

fn worker_pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("cannot start worker threads")
}

pub const PREPROCESS_CSV_HEADER: &str =
    "layer,lambda_max,step,objective_start,objective_end,maxmag_before,maxmag_after,drift";

pub fn preprocess(a: &PreprocessArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let (entries, layers) = load(&c.manifest)?;
    if c.propagate {
        eprintln!("note: --propagate has no effect without quantization");
    }
    let cfg = a.magr.config(c.group);
    let results = worker_pool(c.workers)?.install(|| {
        layers
            .par_iter()
            .map(|layer| {
                hessian_of(layer)
                    .and_then(|h| magr_preprocess(&layer.weights, &h, &cfg))
                    .map_err(|e| e.in_layer(&layer.name))
            })
            .collect::<magr_core::Result<Vec<_>>>()
    })?;

    create_dir(&a.out_dir)?;
    let mut csv = format!("{PREPROCESS_CSV_HEADER}\n");
    let mut out_entries = Vec::with_capacity(entries.len());
    for ((entry, (w, rep)), layer) in entries.iter().zip(&results).zip(&layers) {
        let path = a.out_dir.join(format!("{}.w.magr", entry.name));
        write_tensor(&path, w)?;
        out_entries.push(ManifestEntry {
            name: entry.name.clone(),
            weights: path,
            calibration: match &entry.calibration {
                Calibration::Features(p) => Calibration::Features(absolute(p)),
                Calibration::Hessian(p) => Calibration::Hessian(absolute(p)),
            },
        });
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let trace = &rep.objective_trace;
        let _ = writeln!(
            csv,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            layer.name,
            rep.lambda_max,
            rep.step_size,
            trace.first().copied().unwrap_or(0.0),
            trace.last().copied().unwrap_or(0.0),
            mean(&rep.max_mag_before),
            mean(&rep.max_mag_after),
            rep.output_drift
        );
    }
    write_text(&a.out_dir.join("magr_report.csv"), &csv)?;
    write_manifest(a.out_dir.join("manifest.txt"), &out_entries)?;
    eprintln!("preprocessed {} layers into {}", results.len(), a.out_dir.display());
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn quantize(a: &QuantizeArgs) -> anyhow::Result<()> {
    let c = &a.common;
    let (_, layers) = load(&c.manifest)?;
    let quant = a.quant_config();
    let magr = (a.magr == Toggle::On).then(|| a.magr_args.config(c.group));
    let opts = PipelineOptions {
        propagate: c.propagate,
        workers: c.workers,
    };
    let out = run_pipeline(&layers, magr.as_ref(), &quant, &opts)?;

    create_dir(&a.out_dir)?;
    for (layer, q) in layers.iter().zip(&out.quantized) {
        write_quantized(&a.out_dir, &layer.name, q)?;
        write_tensor(a.out_dir.join(format!("{}.deq.magr", layer.name)), &q.dequantized())?;
    }
    write_text(&a.out_dir.join("report.csv"), &out.report.to_csv(c.timings))?;
    let summary = out.report.summary();
    write_text(&a.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
