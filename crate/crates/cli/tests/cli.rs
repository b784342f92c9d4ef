//! Drive the `scalecodec` binary end to end on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scalecodec::checkpoint::load_store;
use scalecodec::codec::{run_direct, Layers};
use scalecodec::data::load_png;
use scalecodec::eval::psnr;

const TINY: &str = "\
# small enough to train in seconds
l_base = 4
l_enh = 4
hidden = 4
feature_channels = 4
proxy_width = 4
classes = 3
stage1_epochs = 1
stage2_epochs = 0
proxy_epochs = 1
synthetic_train = 12
synthetic_val = 6
image_size = 16
patch_size = 16
lambda_grid = 1, 3, 10, 30
lambda_enh_grid = 30, 300
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scalecodec"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn scalecodec")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8_lossy(&o.stderr).into_owned();
    assert_eq!(s.trim_end().lines().count(), 1, "{s}");
    s.trim_end().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Trained {
    dir: tempfile::TempDir,
    config: PathBuf,
    proxy: PathBuf,
    base: PathBuf,
    enh: PathBuf,
    other: PathBuf,
}

fn trained() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.cfg");
    std::fs::write(&config, TINY).unwrap();
    let proxy = dir.path().join("proxy.ckpt");
    let base = dir.path().join("base.ckpt");
    let enh = dir.path().join("enh.ckpt");
    ok(&["train-task", "--config", s(&config), "--out", s(&proxy)]);
    ok(&["train-base", "--config", s(&config), "--checkpoint", s(&proxy), "--out", s(&base)]);
    ok(&["train-enh", "--config", s(&config), "--base-checkpoint", s(&base), "--out", s(&enh)]);
    let other = dir.path().join("other.ckpt");
    ok(&["train-base", "--config", s(&config), "--seed", "9", "--checkpoint", s(&proxy), "--out", s(&other)]);
    Trained { dir, config, proxy, base, enh, other }
}

#[test]
fn breakeven_prints_the_closed_form() {
    let out = ok(&["breakeven", "--rb", "0.5", "--rt", "1.5"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["f_threshold"], 0.5);
    let o = run(&["breakeven", "--rb", "-1", "--rt", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("eval: "));
}

#[test]
fn bdrate_of_a_curve_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("ref.csv");
    std::fs::write(&c, "bpp,quality\n0.1,30\n0.2,50\n0.4,65\n0.8,72\n").unwrap();
    let out = ok(&["bdrate", s(&c), s(&c)]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["bd_rate_percent"], 0.0);
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        vec!["encode", "x.png"],
        vec!["no-such-command"],
        vec!["breakeven", "--rb", "0.5"],
        vec!["encode", "--checkpoint", "c", "--out", "o", "--layers", "all", "x.png"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr_line(&o).starts_with("usage: "), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_with_two_and_a_prefixed_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "l_base = 16\nlbase = 4\n").unwrap();
    let o = run(&["train-task", "--config", s(&cfg), "--out", "p.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr_line(&o);
    assert!(line.starts_with("config: line 2:") && line.contains("l_base"), "{line}");

    let missing = dir.path().join("missing.ckpt");
    let o = run(&["encode", "--checkpoint", s(&missing), "--out", "o.shmc", "x.png"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("io: "));
}

#[test]
fn train_encode_decode_workflow() {
    let t = trained();
    let d = t.dir.path();
    for (name, ext) in [("base.ckpt", ".metrics.csv"), ("enh.ckpt", ".config"), ("proxy.ckpt", ".config")] {
        assert!(d.join(format!("{name}{ext}")).exists(), "{name}{ext}");
    }

    let data = d.join("data");
    ok(&["make-dataset", "--config", s(&t.config), "--out", s(&data)]);
    let png = data.join("val_00000.png");
    let x = load_png(&png).unwrap();
    let enh_store = load_store(&t.enh).unwrap();
    let direct = run_direct(&x, &enh_store, Layers::BaseEnh).unwrap();

    // Base layer: decoded label matches the in-memory pipeline.
    let shmc = d.join("x.shmc");
    ok(&["encode", "--checkpoint", s(&t.base), "--layers", "base", "--out", s(&shmc), s(&png)]);
    let report = ok(&["decode", "--checkpoint", s(&t.base), "--layers", "base", s(&shmc)]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["label"], direct.task.label);
    // The enhancement checkpoint shares the base layer.
    let again = ok(&["decode", "--checkpoint", s(&t.enh), "--layers", "base", s(&shmc)]);
    assert_eq!(again, report);

    // Both layers: PSNR of the decoded PNG equals the in-memory PSNR.
    let full = d.join("full.shmc");
    let rec = d.join("rec.png");
    ok(&["encode", "--checkpoint", s(&t.enh), "--out", s(&full), s(&png)]);
    ok(&["decode", "--checkpoint", s(&t.enh), "--layers", "base+enh", "--out", s(&rec), s(&full)]);
    let decoded = load_png(&rec).unwrap();
    let expected = psnr(&x, direct.image.as_ref().unwrap()).unwrap();
    let got = psnr(&x, &decoded).unwrap();
    let requantized = {
        let d = direct.image.as_ref().unwrap();
        let tmp = t.dir.path().join("direct.png");
        scalecodec::data::save_png(&tmp, d).unwrap();
        psnr(&x, &load_png(&tmp).unwrap()).unwrap()
    };
    assert!((got - requantized).abs() < 1e-9, "{got} vs {requantized} (float {expected})");

    // A stream made with other parameters is refused.
    let o = run(&["decode", "--checkpoint", s(&t.other), "--layers", "base", s(&shmc)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("bitstream: model hash mismatch"));
    let o = run(&["decode", "--checkpoint", s(&t.enh), "--layers", "base+enh", s(&full)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reruns_produce_identical_artifacts() {
    let a = trained();
    let b = trained();
    for (x, y) in [(&a.proxy, &b.proxy), (&a.base, &b.base), (&a.enh, &b.enh), (&a.other, &b.other)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let mut csv = Vec::new();
    for t in [&a, &b] {
        let out = t.dir.path().join("task.csv");
        ok(&[
            "eval-task", "--config", s(&t.config), "--checkpoint", s(&t.base), "--checkpoint", s(&t.other),
            "--out", s(&out), "--no-coder",
        ]);
        csv.push(std::fs::read_to_string(&out).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn sweep_writes_curves_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.cfg");
    std::fs::write(&config, TINY).unwrap();
    let out = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&config), "--out", s(&out), "--no-coder"]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["curves"].as_array().unwrap().len(), 4);
    assert_eq!(summary["bd_rate"].as_array().unwrap().len(), 2);
    assert_eq!(summary["break_even"].as_array().unwrap().len(), 2);
    for f in ["sequential-base.csv", "joint-base.csv", "sequential-recon.csv", "joint-recon.csv", "base_3.ckpt", "enh_1.ckpt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(out.join("joint-base.csv")).unwrap();
    assert!(text.starts_with("bpp,quality\n"));
}
