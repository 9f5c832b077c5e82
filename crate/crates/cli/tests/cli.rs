use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use magr_cli::{Cli, Command as Sub, Toggle, EXIT_DATA, EXIT_IO, EXIT_USAGE};
use magr_core::pipeline::manifest::{load_layers, read_manifest};
use magr_core::{read_tensor, rtn_quantize, Granularity, Method, QuantConfig};

fn magr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = magr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_then_quantize_writes_one_row_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--layers", "4", "--m", "64", "--n", "32", "--seed", "7"]);
    ok(dir.path(), &["quantize", "--bits", "3", "--magr", "on"]);
    let csv = fs::read_to_string(dir.path().join("out/quant/report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("layer,frac_rank,"));
    for k in 0..4 {
        assert!(lines[k + 1].starts_with(&format!("layer{k},")));
        for suffix in ["codes.magr", "delta.magr", "zero.magr", "qmeta", "deq.magr"] {
            assert!(dir.path().join(format!("out/quant/layer{k}.{suffix}")).exists());
        }
    }
    assert!(dir.path().join("out/quant/summary.txt").exists());
}

#[test]
fn rtn_without_magr_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--layers", "2", "--m", "16", "--n", "8", "--seed", "3"]);
    ok(dir.path(), &["quantize", "--magr", "off", "--method", "rtn", "--bits", "2"]);
    let layers = load_layers(&read_manifest(dir.path().join("out/manifest.txt")).unwrap()).unwrap();
    let cfg = QuantConfig::new(2, 0, Method::Rtn);
    for layer in &layers {
        let expected = rtn_quantize(&layer.weights, &cfg).unwrap().dequantized();
        let got = read_tensor(dir.path().join(format!("out/quant/{}.deq.magr", layer.name))).unwrap();
        assert_eq!(got, expected);
    }
}

#[test]
fn analyze_reports_synth_fraction_rank() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--layers", "3", "--m", "32", "--n", "8", "--frac-rank", "0.25"]);
    let out = ok(dir.path(), &["analyze"]);
    let last: Vec<&str> = out.lines().last().unwrap().split_whitespace().collect();
    let header: Vec<&str> = out.lines().rev().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(header, ["Min", "Max", "Mean", "25%", "75%"]);
    assert_eq!(last, ["25.00"; 5]);
}

#[test]
fn repeated_runs_produce_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--layers", "3", "--m", "24", "--chain", "--seed", "5"]);
    let args = ["quantize", "--bits", "2", "--method", "optq-cd", "--cd-iters", "3", "--propagate"];
    let mut a: Vec<&str> = args.to_vec();
    a.extend(["--out-dir", "run_a", "--workers", "1"]);
    let mut b: Vec<&str> = args.to_vec();
    b.extend(["--out-dir", "run_b", "--workers", "3"]);
    ok(dir.path(), &a);
    ok(dir.path(), &b);
    let mut names: Vec<_> = fs::read_dir(dir.path().join("run_a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 17);
    for name in names {
        let x = fs::read(dir.path().join("run_a").join(&name)).unwrap();
        let y = fs::read(dir.path().join("run_b").join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
    }
}

#[test]
fn preprocess_writes_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--layers", "2", "--m", "16", "--n", "4"]);
    ok(dir.path(), &["preprocess", "--iters", "20"]);
    let csv = fs::read_to_string(dir.path().join("out/magr/magr_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let layers = load_layers(&read_manifest(dir.path().join("out/magr/manifest.txt")).unwrap()).unwrap();
    let originals = load_layers(&read_manifest(dir.path().join("out/manifest.txt")).unwrap()).unwrap();
    for (p, o) in layers.iter().zip(&originals) {
        assert_eq!(p.features, o.features);
        assert!(p.weights.max_abs() <= o.weights.max_abs());
    }
    // Quantizing the preprocessed manifest works without further MagR.
    ok(dir.path(), &["quantize", "--manifest", "out/magr/manifest.txt", "--magr", "off"]);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(magr(dir.path(), &["quantize", "--no-such-flag"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(magr(dir.path(), &["quantize", "--method", "fancy"]).status.code(), Some(EXIT_USAGE));
    let missing = magr(dir.path(), &["quantize", "--manifest", "absent.txt"]);
    assert_eq!(missing.status.code(), Some(EXIT_IO));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.txt"));

    ok(dir.path(), &["synth", "--layers", "2", "--m", "8", "--n", "4"]);
    fs::write(dir.path().join("bad.txt"), "odd, w=out/layer0.w.magr, x=out/layer0.w.magr\n").unwrap();
    let bad = magr(dir.path(), &["quantize", "--manifest", "bad.txt"]);
    assert_eq!(bad.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("odd"));

    fs::write(dir.path().join("junk.magr"), b"not a tensor").unwrap();
    fs::write(dir.path().join("junk.txt"), "j, w=junk.magr, h=junk.magr\n").unwrap();
    assert_eq!(magr(dir.path(), &["quantize", "--manifest", "junk.txt"]).status.code(), Some(EXIT_DATA));

    let bad_bits = magr(dir.path(), &["quantize", "--bits", "0"]);
    assert_eq!(bad_bits.status.code(), Some(EXIT_USAGE));

    let env = Command::new(env!("CARGO_BIN_EXE_magr"))
        .current_dir(dir.path())
        .env("MAGR_WORKERS", "many")
        .args(["quantize"])
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(EXIT_USAGE));
}

#[test]
fn flag_defaults_match_documented_values() {
    let Sub::Quantize(q) = Cli::try_parse_from(["magr", "quantize"]).unwrap().command else {
        panic!("expected quantize");
    };
    assert_eq!(q.magr, Toggle::On);
    assert_eq!(q.cd_iters, 30);
    assert_eq!(q.damp, 0.01);
    assert_eq!(q.common.group, 0);
    let m = q.magr_args.config(0);
    assert_eq!((m.alpha, m.max_iter, m.granularity), (1e-3, 150, Granularity::PerChannel));
    let g = q.magr_args.config(128);
    assert_eq!((g.alpha, g.granularity), (1e-4, Granularity::PerGroup(128)));

    let beta = |args: &[&str]| {
        let mut argv = vec!["magr", "quantize"];
        argv.extend_from_slice(args);
        match Cli::try_parse_from(argv).unwrap().command {
            Sub::Quantize(q) => q.quant_config().beta,
            _ => unreachable!(),
        }
    };
    assert_eq!(beta(&["--bits", "4"]), 1.0);
    assert_eq!(beta(&["--bits", "3"]), 0.9);
    assert_eq!(beta(&["--bits", "2"]), 0.8);
    assert_eq!(beta(&["--bits", "3", "--group", "128"]), 0.95);
    assert_eq!(beta(&["--bits", "2", "--group", "128"]), 0.95);
    assert_eq!(beta(&["--bits", "2", "--beta", "0.85"]), 0.85);

    let Sub::Quantize(q) = Cli::try_parse_from(["magr", "quantize", "--method", "optq-cd", "--cd-iters", "7"])
        .unwrap()
        .command
    else {
        unreachable!()
    };
    assert_eq!(q.quant_config().method, Method::OptqCd { cd_iters: 7 });
}
