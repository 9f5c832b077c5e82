//! On-disk layout of a [`QuantizedLayer`].
//!
//! A layer `name` in directory `dir` is written as
//!
//! | file                  | contents                                         |
//! |-----------------------|--------------------------------------------------|
//! | `name.codes.magr`     | `rows × cols` integer codes, stored as f64       |
//! | `name.delta.magr`     | `groups × cols` steps δ                          |
//! | `name.zero.magr`      | `groups × cols` integer zero-points, as f64      |
//! | `name.qmeta`          | plain-text `key: value` sidecar                  |
//!
//! where `groups = rows / group_len`. The sidecar keys are `format`
//! (`magr-quantized`), `version` (1), `rows`, `cols`, `bits`, `group_size`
//! (0 = per-channel), `beta`, `method` (`rtn`, `optq` or `optq-cd`),
//! `cd_iters` (only for `optq-cd`), and one `constant: <group>,<col>=<value>`
//! line per constant group (δ = 0). Floats use the shortest representation
//! that round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Method, QuantGrid, QuantizedLayer};
use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::DenseMatrix;

pub const FORMAT_NAME: &str = "magr-quantized";
pub const FORMAT_VERSION: u32 = 1;

pub struct LayerPaths {
    pub codes: PathBuf,
    pub delta: PathBuf,
    pub zero: PathBuf,
    pub meta: PathBuf,
}

impl LayerPaths {
    pub fn new(dir: &Path, name: &str) -> Self {
        Self {
            codes: dir.join(format!("{name}.codes.magr")),
            delta: dir.join(format!("{name}.delta.magr")),
            zero: dir.join(format!("{name}.zero.magr")),
            meta: dir.join(format!("{name}.qmeta")),
        }
    }
}

fn sidecar(layer: &QuantizedLayer) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format: {FORMAT_NAME}");
    let _ = writeln!(s, "version: {FORMAT_VERSION}");
    let _ = writeln!(s, "rows: {}", layer.rows);
    let _ = writeln!(s, "cols: {}", layer.cols);
    let _ = writeln!(s, "bits: {}", layer.bits);
    let _ = writeln!(s, "group_size: {}", layer.group_size);
    let _ = writeln!(s, "beta: {}", layer.beta);
    let _ = writeln!(s, "method: {}", layer.method.name());
    if let Method::OptqCd { cd_iters } = layer.method {
        let _ = writeln!(s, "cd_iters: {cd_iters}");
    }
    for (idx, g) in layer.grids.iter().enumerate() {
        if let Some(c) = g.constant {
            let _ = writeln!(s, "constant: {},{}={}", idx / layer.cols, idx % layer.cols, c);
        }
    }
    s
}

pub fn write_quantized(dir: &Path, name: &str, layer: &QuantizedLayer) -> Result<()> {
    let paths = LayerPaths::new(dir, name);
    let groups = layer.groups_per_column();
    let codes = DenseMatrix::new(
        layer.rows,
        layer.cols,
        layer.codes.iter().map(|&c| c as f64).collect(),
    )?;
    let delta = DenseMatrix::new(groups, layer.cols, layer.grids.iter().map(|g| g.delta).collect())?;
    let zero = DenseMatrix::new(
        groups,
        layer.cols,
        layer.grids.iter().map(|g| g.zero as f64).collect(),
    )?;
    write_tensor(&paths.codes, &codes)?;
    write_tensor(&paths.delta, &delta)?;
    write_tensor(&paths.zero, &zero)?;
    fs::write(&paths.meta, sidecar(layer)).map_err(|e| Error::io(&paths.meta, e))
}

fn meta_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::Data(format!("{}: {}", path.display(), msg.into()))
}

pub fn read_quantized(dir: &Path, name: &str) -> Result<QuantizedLayer> {
    let paths = LayerPaths::new(dir, name);
    let text = fs::read_to_string(&paths.meta).map_err(|e| Error::io(&paths.meta, e))?;

    let mut kv = std::collections::BTreeMap::new();
    let mut constants = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| meta_error(&paths.meta, format!("malformed line `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "constant" {
            constants.push(v.to_string());
        } else {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| meta_error(&paths.meta, format!("missing key `{k}`")))
    };
    fn parse<T: std::str::FromStr>(path: &Path, k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| meta_error(path, format!("bad value `{v}` for `{k}`")))
    }
    if get("format")? != FORMAT_NAME {
        return Err(meta_error(&paths.meta, "not a quantized-layer sidecar"));
    }
    let version: u32 = parse(&paths.meta, "version", get("version")?)?;
    if version != FORMAT_VERSION {
        return Err(meta_error(&paths.meta, format!("unsupported version {version}")));
    }
    let rows: usize = parse(&paths.meta, "rows", get("rows")?)?;
    let cols: usize = parse(&paths.meta, "cols", get("cols")?)?;
    let bits: u32 = parse(&paths.meta, "bits", get("bits")?)?;
    let group_size: usize = parse(&paths.meta, "group_size", get("group_size")?)?;
    let beta: f64 = parse(&paths.meta, "beta", get("beta")?)?;
    let method = match get("method")? {
        "optq-cd" => Method::OptqCd {
            cd_iters: parse(&paths.meta, "cd_iters", get("cd_iters")?)?,
        },
        other => other.parse()?,
    };
    if !(1..=super::MAX_BITS).contains(&bits) {
        return Err(meta_error(&paths.meta, format!("bad bit width {bits}")));
    }
    let group_len = if group_size == 0 { rows } else { group_size };
    if group_len == 0 || !rows.is_multiple_of(group_len) {
        return Err(meta_error(&paths.meta, "group size does not divide rows"));
    }
    let groups = rows / group_len;

    let codes = read_tensor(&paths.codes)?;
    let delta = read_tensor(&paths.delta)?;
    let zero = read_tensor(&paths.zero)?;
    if codes.shape() != (rows, cols) || delta.shape() != (groups, cols) || zero.shape() != (groups, cols)
    {
        return Err(meta_error(&paths.meta, "tensor shapes disagree with sidecar"));
    }

    let max_code = (1u32 << bits) - 1;
    let codes = codes
        .data()
        .iter()
        .map(|&c| {
            if c.fract() == 0.0 && c >= 0.0 && c <= max_code as f64 {
                Ok(c as u32)
            } else {
                Err(meta_error(&paths.codes, format!("code {c} out of range")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grids: Vec<QuantGrid> = delta
        .data()
        .iter()
        .zip(zero.data())
        .map(|(&delta, &z)| QuantGrid {
            delta,
            zero: z as i64,
            max_code,
            constant: None,
        })
        .collect();
    for entry in constants {
        let parsed = entry.split_once('=').and_then(|(pos, val)| {
            let (g, c) = pos.split_once(',')?;
            Some((
                g.trim().parse::<usize>().ok()?,
                c.trim().parse::<usize>().ok()?,
                val.trim().parse::<f64>().ok()?,
            ))
        });
        match parsed {
            Some((g, c, v)) if g < groups && c < cols => grids[g * cols + c].constant = Some(v),
            _ => return Err(meta_error(&paths.meta, format!("bad constant entry `{entry}`"))),
        }
    }

    Ok(QuantizedLayer {
        rows,
        cols,
        bits,
        group_size,
        beta,
        method,
        codes,
        grids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{rtn_quantize, QuantConfig};

    #[test]
    fn round_trip_with_constant_group() {
        let mut w = DenseMatrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.11 - 0.5);
        for r in 0..2 {
            w.set(r, 1, 0.25);
        }
        let cfg = QuantConfig::new(3, 2, crate::quant::Method::Rtn).with_beta(0.9);
        let layer = rtn_quantize(&w, &cfg).unwrap();
        assert!(layer.has_constant_groups());

        let dir = tempfile::tempdir().unwrap();
        write_quantized(dir.path(), "l0", &layer).unwrap();
        let back = read_quantized(dir.path(), "l0").unwrap();
        assert_eq!(back, layer);
        assert_eq!(back.dequantized(), layer.dequantized());
    }

    #[test]
    fn optq_cd_method_round_trips() {
        let w = DenseMatrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let mut layer = rtn_quantize(&w, &QuantConfig::new(2, 0, Method::Rtn)).unwrap();
        layer.method = Method::OptqCd { cd_iters: 7 };
        let dir = tempfile::tempdir().unwrap();
        write_quantized(dir.path(), "x", &layer).unwrap();
        assert_eq!(read_quantized(dir.path(), "x").unwrap().method, layer.method);
    }

    #[test]
    fn missing_key_is_reported() {
        let w = DenseMatrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let layer = rtn_quantize(&w, &QuantConfig::new(2, 0, Method::Rtn)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_quantized(dir.path(), "x", &layer).unwrap();
        let meta = dir.path().join("x.qmeta");
        let text = fs::read_to_string(&meta).unwrap().replace("bits: 2\n", "");
        fs::write(&meta, text).unwrap();
        assert!(matches!(read_quantized(dir.path(), "x"), Err(Error::Data(_))));
    }
}
