use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{checkpoint_hash, cosine_lr, pt_loss, Adam, Checkpoint, LossWeights, ParameterSet, TrainConfig};
use crate::dir::DirRestorer;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::proximal::{run as run_solver, Scheme, Trajectory};
use crate::scalar::Scalar;
use crate::sensing::{Measurement, MeasurementOperator, NoiseModel, OperatorKind};
use crate::tensorgrad::{Graph, Tensor};
use crate::Image;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub sampled_cr: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "step,loss,lr,sampled_cr";

    pub fn csv(&self) -> String {
        format!("{},{:.10e},{:.6e},{:.6}", self.step, self.loss, self.lr, self.sampled_cr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: ParameterSet<T>,
    pub adam: Adam<T>,
    /// Optimizer steps completed, including any resumed ones.
    pub step: u64,
    pub log: Vec<LogRow>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint<T> {
        Checkpoint::new(self.params.clone(), config.scheme, self.step, Some(config.clone()), Some(self.adam.clone()))
    }
}

/// Loss and gradients (in [`ParameterSet::tensors`] order) for one sample.
fn sample_grad<T: Scalar>(
    params: &ParameterSet<T>,
    x_gt: &Image<T>,
    op: &MeasurementOperator<T>,
    scheme: Scheme,
    alpha: &LossWeights,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let y = op.forward(x_gt, &NoiseModel::none())?;
    let mut g = Graph::new();
    let tensors = params.tensors();
    let vars: Vec<_> = tensors.iter().map(|t| g.param(t.clone())).collect();
    let bound = params.bound_from_vars(&vars);
    let out = pt_loss(&mut g, params, &bound, x_gt, &y, op, scheme, alpha)?;
    let loss = g.value(out.loss).item().as_f64();
    g.backward(out.loss)?;
    let grads = vars
        .iter()
        .zip(&tensors)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    Ok((loss, grads))
}

/// Adam on the trajectory loss. Each step draws a compression ratio uniformly
/// from `cr_range`, a fresh operator, and `batch_size` images; per-sample
/// gradients are computed in parallel and averaged in a fixed order. Step `s`
/// depends only on `(seed, s)`, so a resumed run matches an uninterrupted one.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    dataset: &[Image<T>],
    resume: Option<Checkpoint<T>>,
    mut on_step: impl FnMut(&LogRow),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let alpha = config.loss_weights();
    let (mut params, mut adam, start) = match resume {
        Some(ck) => {
            if ck.header.k != config.k || ck.header.dir != config.dir {
                return Err(Error::InvalidArgument("checkpoint does not match the configured K / dir".into()));
            }
            let adam = ck.adam.unwrap_or_else(|| Adam::new(&ck.params.tensors()));
            (ck.params, adam, ck.header.step)
        }
        None => {
            let p = ParameterSet::<T>::new(config)?;
            let adam = Adam::new(&p.tensors());
            (p, adam, 0)
        }
    };
    let [lo, hi] = config.cr_range;
    let total = config.steps;
    let mut log = Vec::new();
    for s in start as usize..total {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s as u64 + 1);
        let cr = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let op_seed: u64 = rng.gen();
        let batch: Vec<usize> = (0..config.batch_size).map(|_| rng.gen_range(0..dataset.len())).collect();
        let lr = cosine_lr(s, total, config.lr_init, config.lr_final);

        let results: Vec<(f64, Vec<Tensor<T>>)> = batch
            .par_iter()
            .map(|&i| {
                let (h, w) = dataset[i].dims();
                let op = MeasurementOperator::new(h, w, cr, config.operator, op_seed)?;
                sample_grad(&params, &dataset[i], &op, config.scheme, &alpha)
            })
            .collect::<Result<_>>()?;
        let inv = T::lit(1.0 / batch.len() as f64);
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<T>>> = None;
        for (l, gs) in results {
            loss += l;
            match grads.as_mut() {
                None => grads = Some(gs),
                Some(acc) => acc.iter_mut().zip(&gs).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mut grads = grads.expect("batch is non-empty");
        grads.iter_mut().for_each(|gr| gr.data_mut().iter_mut().for_each(|v| *v *= inv));
        loss /= batch.len() as f64;
        if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
            return Err(Error::NonFinite(format!("training loss at step {s} (cr {cr:.4}) is {loss}")));
        }
        let mut tensors = params.tensors();
        adam.step(&mut tensors, &grads, lr);
        params.set_tensors(&tensors)?;
        let row = LogRow { step: s as u64 + 1, loss, lr, sampled_cr: cr };
        on_step(&row);
        log.push(row);
    }
    Ok(TrainOutcome { params, adam, step: total.max(start as usize) as u64, log })
}

/// Unrolled reconstruction with the learned restorer and penalties.
pub fn unrolled_trajectory<T: Scalar>(
    params: &ParameterSet<T>,
    y: &Measurement<T>,
    op: &MeasurementOperator<T>,
    scheme: Scheme,
) -> Result<Trajectory<T>> {
    let mut restorer = DirRestorer::new(params.model.clone());
    run_solver(scheme, y, op, &mut restorer, &params.mus())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub cr: f64,
    pub images: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Adjoint-only reconstruction `X⁰`.
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint_hash: String,
    pub scheme: Scheme,
    pub rows: Vec<EvalRow>,
    /// Per CR, per image: PSNR of `X⁰, X¹, …, Xᴷ`.
    pub curves: Vec<Vec<Vec<f64>>>,
}

/// PSNR, SSIM, baseline PSNR, baseline SSIM and the per-iterate PSNR curve.
type PerImage = (f64, f64, f64, f64, Vec<f64>);

/// Evaluates one parameter set at every CR. Image `i` at CR index `c` uses
/// its own operator seeded from `(seed, c, i)`.
pub fn evaluate<T: Scalar>(
    params: &ParameterSet<T>,
    dataset: &[Image<T>],
    crs: &[f64],
    scheme: Scheme,
    kind: OperatorKind,
    seed: u64,
) -> Result<EvalReport> {
    if dataset.is_empty() || crs.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs images and at least one CR".into()));
    }
    let mut rows = Vec::with_capacity(crs.len());
    let mut curves = Vec::with_capacity(crs.len());
    for (c, &cr) in crs.iter().enumerate() {
        let per_image: Vec<(f64, f64, f64, f64, Vec<f64>)> = dataset
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let (h, w) = x.dims();
                let op_seed = seed ^ ((c as u64) << 32) ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let op = MeasurementOperator::new(h, w, cr, kind, op_seed)?;
                let y = op.forward(x, &NoiseModel::none())?;
                let traj = unrolled_trajectory(params, &y, &op, scheme)?;
                let curve = std::iter::once(&traj.initial)
                    .chain(&traj.iterates)
                    .map(|xk| psnr(xk, x))
                    .collect::<Result<Vec<_>>>()?;
                let last = traj.last();
                Ok((psnr(last, x)?, ssim(last, x)?, psnr(&traj.initial, x)?, ssim(&traj.initial, x)?, curve))
            })
            .collect::<Result<_>>()?;
        let n = per_image.len() as f64;
        let mean = |f: fn(&PerImage) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        rows.push(EvalRow {
            cr,
            images: per_image.len(),
            mean_psnr: mean(|r| r.0),
            mean_ssim: mean(|r| r.1),
            baseline_psnr: mean(|r| r.2),
            baseline_ssim: mean(|r| r.3),
        });
        curves.push(per_image.into_iter().map(|r| r.4).collect());
    }
    Ok(EvalReport { checkpoint_hash: checkpoint_hash(params), scheme, rows, curves })
}

pub fn evaluate_csv(report: &EvalReport) -> String {
    let mut s = String::from("cr,images,mean_psnr,mean_ssim,baseline_psnr,baseline_ssim\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.cr, r.images, r.mean_psnr, r.mean_ssim, r.baseline_psnr, r.baseline_ssim
        ));
    }
    s
}
