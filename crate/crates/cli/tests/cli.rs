use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spi_unroll::imageio::write_image;
use spi_unroll::sensing::{MeasurementOperator, NoiseModel, OperatorKind};
use spi_unroll::tensorgrad::container::{find, read_container, Entry};
use spi_unroll::training::synth_dataset;
use spi_unroll::Image;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spi-unroll"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn phantom(dir: &Path, n: usize) -> PathBuf {
    let img: Image<f64> = synth_dataset(1, n, 1).remove(0);
    let path = dir.join("phantom.pgm");
    write_image(&path, &img).unwrap();
    path
}

const TINY_CONFIG: &str = r#"{
  "train": { "k": 2, "steps": 3, "batch_size": 1, "seed": 4,
             "dir": { "base_channels": 4, "window": 1, "heads": 2, "adaconv_kernels": 2 } },
  "dataset": { "images": 4, "extent": 8 },
  "eval": { "images": 2, "extent": 8, "crs": [0.25] }
}"#;

#[test]
fn sense_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 16);
    ok(d, &["--seed", "9", "sense", "--image", "phantom.pgm", "--cr", "0.25", "--out", "m.bin"]);
    let entries = read_container(fs::File::open(d.join("m.bin")).unwrap()).unwrap();
    let y = find(&entries, "Y").and_then(Entry::to_tensor::<f64>).unwrap();

    let img: Image<f64> = spi_unroll::imageio::read_image(&d.join("phantom.pgm")).unwrap();
    let op = MeasurementOperator::<f64>::new(16, 16, 0.25, OperatorKind::GaussianOrthonormal, 9).unwrap();
    let expected = op.forward(&img, &NoiseModel::none()).unwrap().values.to_tensor();
    assert_eq!(y, expected);
    for name in ["meta", "H", "W"] {
        assert!(find(&entries, name).is_some(), "missing {name}");
    }
}

#[test]
fn reconstruct_with_each_classical_restorer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 16);
    ok(d, &["sense", "--image", "phantom.pgm", "--cr", "0.5", "--kind", "hadamard", "--out", "m.bin"]);
    for (restorer, scheme) in [("identity", "hqs"), ("tv", "admm"), ("dct", "hqs")] {
        let out = ok(
            d,
            &[
                "reconstruct", "--measurement", "m.bin", "--scheme", scheme, "--restorer", restorer, "--strength", "0.02",
                "--k", "5", "--out", "r.png", "--reference", "phantom.pgm", "--metrics", "m.json",
            ],
        );
        assert!(out.contains("\"psnr\""), "{out}");
        let metrics: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m.json")).unwrap()).unwrap();
        assert!(metrics["psnr"].as_f64().unwrap() > 0.0);
        assert!(d.join("r.png").exists());
    }
}

#[test]
fn dir_restorer_without_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 16);
    ok(d, &["sense", "--image", "phantom.pgm", "--cr", "0.5", "--out", "m.bin"]);
    let out = run(d, &["reconstruct", "--measurement", "m.bin", "--restorer", "dir", "--out", "r.pgm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[E_CHECKPOINT]"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sense", "--cr", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[E_USAGE]"));
    let out = run(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["reconstruct", "--measurement", "absent.bin", "--out", "r.pgm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[E_IO]"), "{}", stderr(&out));
}

#[test]
fn malformed_config_names_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("unknown.json"), r#"{ "train": { "stepz": 3 } }"#).unwrap();
    let out = run(d, &["--config", "unknown.json", "train", "--out", "c.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("stepz"), "{}", stderr(&out));

    fs::write(d.join("range.json"), r#"{ "train": { "cr_range": [0.4, 0.1] } }"#).unwrap();
    let out = run(d, &["--config", "range.json", "train", "--out", "c.ckpt"]);
    assert!(stderr(&out).contains("train.cr_range"), "{}", stderr(&out));
}

#[test]
fn train_resume_evaluate_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), TINY_CONFIG).unwrap();
    ok(d, &["--config", "cfg.json", "train", "--out", "a.ckpt", "--log", "a.csv"]);
    let log = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("step,loss,lr,sampled_cr"));

    ok(d, &["--config", "cfg.json", "train", "--resume", "a.ckpt", "--steps", "5", "--out", "b.ckpt", "--log", "b.csv"]);
    let log = fs::read_to_string(d.join("b.csv")).unwrap();
    let steps: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["4", "5"]);

    let out = ok(d, &["--config", "cfg.json", "evaluate", "--checkpoint", "b.ckpt", "--csv", "e.csv", "--json", "e.json"]);
    assert!(out.contains("checkpoint sha256"));
    assert_eq!(fs::read_to_string(d.join("e.csv")).unwrap().lines().count(), 2);

    phantom(d, 8);
    ok(d, &["sense", "--image", "phantom.pgm", "--cr", "0.3", "--out", "m.bin"]);
    ok(d, &["reconstruct", "--measurement", "m.bin", "--scheme", "admm", "--restorer", "dir", "--checkpoint", "b.ckpt", "--out", "r.pgm"]);
    let out = run(d, &["reconstruct", "--measurement", "m.bin", "--restorer", "dir", "--checkpoint", "b.ckpt", "--k", "7", "--out", "r.pgm"]);
    assert!(stderr(&out).starts_with("error[E_ARG]"));

    ok(d, &["trajectory", "--measurement", "m.bin", "--reference", "phantom.pgm", "--restorer", "dir", "--checkpoint", "b.ckpt", "--out-dir", "traj"]);
    assert!(d.join("traj/iter_02.pgm").exists());
    ok(d, &["trajectory", "--measurement", "m.bin", "--reference", "phantom.pgm", "--teacher", "--k", "4", "--out-dir", "teach"]);
    let csv = fs::read_to_string(d.join("teach/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn bench_and_grad_check() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["bench", "--sizes", "8,16", "--out", "b.csv", "--timings", "t.csv"]);
    assert!(out.contains("storage_ratio"));
    assert_eq!(fs::read_to_string(d.join("b.csv")).unwrap().lines().count(), 3);

    let out = ok(d, &["grad-check", "--op", "adaconv", "--out", "g.json"]);
    assert!(out.contains("ok"));
    let out = run(d, &["grad-check", "--op", "adaconv", "--tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[E_GRADCHECK]"));
    let out = run(d, &["grad-check", "--op", "nope"]);
    assert!(stderr(&out).starts_with("error[E_ARG]"));
}

#[test]
fn single_precision_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    phantom(d, 16);
    ok(d, &["--precision", "f32", "sense", "--image", "phantom.pgm", "--cr", "0.25", "--out", "m.bin"]);
    ok(d, &["--precision", "f32", "reconstruct", "--measurement", "m.bin", "--restorer", "tv", "--strength", "0.05", "--out", "r.pgm"]);
}
