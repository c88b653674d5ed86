use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spi_unroll::diagnostics::run_checks;
use spi_unroll::dir::DirRestorer;
use spi_unroll::imageio::{read_image, write_image};
use spi_unroll::metrics::{psnr, ssim};
use spi_unroll::proximal::{convergence_csv, convergence_report, ideal_trajectory, run, Scheme, StepParams, Trajectory};
use spi_unroll::restorers::{Restorer, RestorerKind, RestorerSpec};
use spi_unroll::sensing::{complexity_probe, Measurement, MeasurementOperator, NoiseModel, OperatorKind};
use spi_unroll::tensorgrad::container::{find, read_container, write_container, Entry};
use spi_unroll::training::{evaluate_csv, evaluate, ingest_corpus, synth_dataset, train, Checkpoint, LogRow};
use spi_unroll::{Error, Image, Matrix, Result, Scalar};

use crate::config::ExperimentConfig;
use crate::{BenchArgs, Cli, Command, EvaluateArgs, GradCheckArgs, Precision, ReconstructArgs, RestorerArgs};
use crate::{SenseArgs, TrainArgs, TrajectoryArgs};

pub fn dispatch(cli: &Cli) -> Result<()> {
    if cli.workers == 0 {
        return Err(Error::InvalidArgument("--workers must be positive".into()));
    }
    // A global pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    match cli.precision {
        Precision::F32 => dispatch_typed::<f32>(cli),
        Precision::F64 => dispatch_typed::<f64>(cli),
    }
}

fn dispatch_typed<T: Scalar>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sense(a) => sense::<T>(cli, a),
        Command::Reconstruct(a) => reconstruct::<T>(a),
        Command::Train(a) => train_cmd::<T>(cli, a),
        Command::Evaluate(a) => evaluate_cmd::<T>(cli, a),
        Command::Trajectory(a) => trajectory::<T>(a),
        Command::Bench(a) => bench(cli, a),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

/// Provenance stored next to `Y` in a measurement file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementMeta {
    pub kind: OperatorKind,
    pub cr: f64,
    pub sigma: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn sense<T: Scalar>(cli: &Cli, a: &SenseArgs) -> Result<()> {
    let img: Image<T> = read_image(&a.image)?;
    let kind: OperatorKind = a.kind.parse()?;
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("--sigma must be non-negative, got {}", a.sigma)));
    }
    let (h, w) = img.dims();
    let op = MeasurementOperator::<T>::new(h, w, a.cr, kind, cli.seed)?;
    let noise = if a.sigma > 0.0 { NoiseModel::gaussian(a.sigma, cli.seed ^ 0x006e_6f69_7365) } else { NoiseModel::none() };
    let y = op.forward(&img, &noise)?;
    let meta = MeasurementMeta { kind, cr: a.cr, sigma: a.sigma, seed: cli.seed, height: h, width: w };
    let mut entries = vec![
        ("meta".to_string(), Entry::Bytes(serde_json::to_vec(&meta)?)),
        ("Y".to_string(), Entry::from_tensor(&y.values.to_tensor())),
    ];
    entries.extend(op.to_entries());
    let mut buf = Vec::new();
    write_container(&mut buf, &entries)?;
    write_file(&a.out, &buf)?;
    let (mh, mw) = op.measurement_dims();
    println!("measured {h}x{w} -> {mh}x{mw} (cr {:.4}) into {}", op.cr(), a.out.display());
    Ok(())
}

pub fn load_measurement<T: Scalar>(path: &Path) -> Result<(Measurement<T>, MeasurementOperator<T>)> {
    let entries = read_container(BufReader::new(File::open(path)?))?;
    let op = MeasurementOperator::<T>::from_entries(&entries)?;
    let y = find(&entries, "Y")
        .and_then(Entry::to_tensor::<T>)
        .ok_or_else(|| Error::Format(format!("{}: no `Y` entry", path.display())))?;
    let values = Matrix::from_tensor(&y)?;
    if values.dims() != op.measurement_dims() {
        return Err(Error::Format(format!("Y is {:?}, operator expects {:?}", values.dims(), op.measurement_dims())));
    }
    Ok((Measurement { values, operator_id: op.id() }, op))
}

fn restorer_spec(a: &RestorerArgs) -> Result<RestorerSpec> {
    let kind: RestorerKind = a.restorer.parse()?;
    let spec = RestorerSpec { kind, strength: a.strength, inner_iters: a.inner_iters, checkpoint: a.checkpoint.clone() };
    spec.validate()?;
    Ok(spec)
}

/// Restorer plus the per-iteration penalties to run it with.
fn solver_setup<T: Scalar>(a: &RestorerArgs, k: Option<usize>, mu: f64) -> Result<(Box<dyn Restorer<T>>, Vec<f64>)> {
    let spec = restorer_spec(a)?;
    match (&spec.kind, &spec.checkpoint) {
        (RestorerKind::Dir, Some(path)) => {
            let ck = Checkpoint::<T>::load(path)?;
            let mus = ck.params.mus();
            if let Some(k) = k.filter(|&k| k != mus.len()) {
                return Err(Error::InvalidArgument(format!("--k {k} differs from the checkpoint's K = {}", mus.len())));
            }
            Ok((Box::new(DirRestorer::new(ck.params.model)), mus))
        }
        _ => {
            let k = k.unwrap_or(30);
            if k == 0 {
                return Err(Error::InvalidArgument("--k must be positive".into()));
            }
            Ok((spec.build_classical()?, vec![mu; k]))
        }
    }
}

#[derive(Serialize)]
struct ReconstructMetrics {
    scheme: Scheme,
    k: usize,
    psnr: Option<f64>,
    ssim: Option<f64>,
    baseline_psnr: Option<f64>,
}

fn reconstruct<T: Scalar>(a: &ReconstructArgs) -> Result<()> {
    let (y, op) = load_measurement::<T>(&a.measurement)?;
    let scheme: Scheme = a.scheme.parse()?;
    let (mut restorer, mus) = solver_setup::<T>(&a.restorer, a.k, a.mu)?;
    let traj = run(scheme, &y, &op, restorer.as_mut(), &mus)?;
    write_image(&a.out, traj.last())?;
    let mut m = ReconstructMetrics { scheme, k: mus.len(), psnr: None, ssim: None, baseline_psnr: None };
    if let Some(r) = &a.reference {
        let gt: Image<T> = read_image(r)?;
        m.psnr = Some(psnr(traj.last(), &gt)?);
        m.ssim = Some(ssim(traj.last(), &gt)?);
        m.baseline_psnr = Some(psnr(&traj.initial, &gt)?);
    }
    let json = serde_json::to_string_pretty(&m)?;
    if let Some(p) = &a.metrics {
        write_file(p, json.as_bytes())?;
    }
    println!("{json}");
    Ok(())
}

fn load_config(cli: &Cli, required: bool) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(p) => ExperimentConfig::load(p),
        None if required => Err(Error::InvalidArgument("this subcommand requires --config <json>".into())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn images<T: Scalar>(dir: &Option<PathBuf>, n: usize, extent: usize, seed: u64) -> Result<Vec<Image<T>>> {
    match dir {
        Some(d) => ingest_corpus(d, extent),
        None => Ok(synth_dataset(n, extent, seed)),
    }
}

fn train_cmd<T: Scalar>(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(cli, true)?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    let out = a
        .out
        .clone()
        .or(cfg.output.checkpoint.clone())
        .ok_or_else(|| Error::InvalidArgument("output.checkpoint: no checkpoint path (set it or pass --out)".into()))?;
    let log_path = a.log.clone().or(cfg.output.log.clone());
    let data = images::<T>(&cfg.dataset.dir, cfg.dataset.images, cfg.dataset.extent, cfg.dataset.seed)?;
    let resume = a.resume.as_deref().map(Checkpoint::<T>::load).transpose()?;
    let mut log = match &log_path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let mut f = BufWriter::new(File::create(p)?);
            writeln!(f, "{}", LogRow::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };
    let mut io_err = None;
    let outcome = train(&cfg.train, &data, resume, |row| {
        if let Some(f) = log.as_mut() {
            if let Err(e) = writeln!(f, "{}", row.csv()) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(mut f) = log {
        f.flush()?;
    }
    outcome.checkpoint(&cfg.train).save(&out)?;
    let last = outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("trained to step {} (final loss {last:.6e}); checkpoint {}", outcome.step, out.display());
    Ok(())
}

fn evaluate_cmd<T: Scalar>(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let cfg = load_config(cli, false)?;
    let ck = Checkpoint::<T>::load(&a.checkpoint)?;
    let crs = a.crs.clone().unwrap_or(cfg.eval.crs.clone());
    let n = a.images.unwrap_or(cfg.eval.images);
    let data = images::<T>(&cfg.eval.dir, n, cfg.eval.extent, cfg.eval.seed)?;
    let kind = ck.header.train.as_ref().map(|t| t.operator).unwrap_or(cfg.train.operator);
    let report = evaluate(&ck.params, &data, &crs, ck.header.scheme, kind, cfg.eval.operator_seed)?;
    let csv = evaluate_csv(&report);
    if let Some(p) = &a.csv {
        write_file(p, csv.as_bytes())?;
    }
    if let Some(p) = &a.json {
        write_file(p, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    print!("{csv}");
    println!("checkpoint sha256 {}", report.checkpoint_hash);
    Ok(())
}

fn trajectory<T: Scalar>(a: &TrajectoryArgs) -> Result<()> {
    let (y, op) = load_measurement::<T>(&a.measurement)?;
    let gt: Image<T> = read_image(&a.reference)?;
    let scheme: Scheme = a.scheme.parse()?;
    let traj: Trajectory<T> = if a.teacher {
        let (steps, k) = match &a.restorer.checkpoint {
            Some(p) => {
                let ck = Checkpoint::<T>::load(p)?;
                (ck.params.teacher_steps(), ck.params.k())
            }
            None => {
                let k = a.k.unwrap_or(6).max(1);
                (vec![StepParams::new(1.0, 1.0); k - 1], k)
            }
        };
        ideal_trajectory(&op.adjoint(&y)?, &gt, &y, &op, scheme, &steps, k)?
    } else {
        let (mut restorer, mus) = solver_setup::<T>(&a.restorer, a.k, a.mu)?;
        run(scheme, &y, &op, restorer.as_mut(), &mus)?
    };
    fs::create_dir_all(&a.out_dir)?;
    for (k, x) in std::iter::once(&traj.initial).chain(&traj.iterates).enumerate() {
        write_image(&a.out_dir.join(format!("iter_{k:02}.pgm")), x)?;
    }
    let csv = convergence_csv(&convergence_report(&traj, &gt)?);
    write_file(&a.out_dir.join("convergence.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let rows = complexity_probe(&a.sizes, a.cr, cli.seed)?;
    let mut report = String::from("size,cr,h,w,matrix_storage,explicit_storage,storage_ratio,max_abs_diff\n");
    let mut timings = String::from("size,matrix_seconds,explicit_seconds,time_ratio\n");
    for r in &rows {
        report.push_str(&format!(
            "{},{},{},{},{},{},{:.3},{:.3e}\n",
            r.size, r.cr, r.h, r.w, r.matrix_storage, r.explicit_storage, r.storage_ratio, r.max_abs_diff
        ));
        timings.push_str(&format!("{},{:.6e},{:.6e},{:.2}\n", r.size, r.matrix_seconds, r.explicit_seconds, r.time_ratio));
    }
    if let Some(p) = &a.out {
        write_file(p, report.as_bytes())?;
    }
    if let Some(p) = &a.timings {
        write_file(p, timings.as_bytes())?;
    }
    print!("{report}{timings}");
    Ok(())
}

#[derive(Serialize)]
struct CheckLine {
    name: String,
    max_rel_error: f64,
    probes: usize,
    passed: bool,
}

fn grad_check_cmd(a: &GradCheckArgs) -> Result<()> {
    let reports = run_checks(&a.op, a.tol)?;
    let lines: Vec<CheckLine> = reports
        .iter()
        .map(|(name, r)| CheckLine {
            name: name.clone(),
            max_rel_error: r.max_rel_error,
            probes: r.probes.iter().sum(),
            passed: r.passed(),
        })
        .collect();
    for l in &lines {
        println!("{:<8} max_rel_err {:.3e} probes {:>5} {}", l.name, l.max_rel_error, l.probes, if l.passed { "ok" } else { "FAIL" });
    }
    if let Some(p) = &a.out {
        write_file(p, serde_json::to_string_pretty(&lines)?.as_bytes())?;
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed).map(|l| l.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::GradCheck(format!("above tolerance {}: {}", a.tol, failed.join(", "))));
    }
    Ok(())
}
