//! Finite-difference checks of the differentiable building blocks on small,
//! fixed-seed instances (64-bit).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dir::{
    adaconv_block, chanca, ctb, gdcnn, swinsa, AdaConvWeights, Bound, ChanCaWeights, CtbWeights, DirConfig, DirModel,
    GdCnnWeights, Init, MemoryBank, ParamStore, SwinSaWeights, LEVELS,
};
use crate::error::{Error, Result};
use crate::proximal::Scheme;
use crate::sensing::{MeasurementOperator, NoiseModel, OperatorKind};
use crate::tensorgrad::{grad_check, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};
use crate::training::{pt_loss, LossWeights, ParameterSet, TrainConfig};
use crate::Image;

pub const CHECK_NAMES: [&str; 7] = ["swinsa", "chanca", "adaconv", "gdcnn", "ctb", "dir", "pt-loss"];

fn opts(tol: f64, max_probes: Option<usize>) -> GradCheckOptions {
    GradCheckOptions { eps: 1e-6, tol, max_probes, seed: 11, floor: 1e-5 }
}

/// Runs `block` with `x` plus every tensor of `store` as checked inputs.
fn check_block(
    store: &ParamStore<f64>,
    extra: Vec<Tensor<f64>>,
    tol: f64,
    max_probes: Option<usize>,
    block: impl Fn(&mut Graph<f64>, &Bound, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let n_extra = extra.len();
    let mut inputs = extra;
    inputs.extend(store.values().iter().cloned());
    grad_check(
        |g, vars| {
            let bound = Bound::from_vars(vars[n_extra..].to_vec());
            block(g, &bound, &vars[..n_extra])
        },
        &inputs,
        opts(tol, max_probes),
    )
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(2024)
}

pub fn check_swinsa(tol: f64) -> Result<GradCheckReport> {
    let mut r = rng();
    let mut store = ParamStore::new();
    let w = SwinSaWeights::new(&mut Init::new(&mut store, &mut r), "sa", 4, 2, 2)?;
    let x = Tensor::randn(vec![4, 4, 4], 1.0, &mut r);
    check_block(&store, vec![x], tol, None, |g, p, v| swinsa(g, p, &w, v[0], 1))
}

pub fn check_chanca(tol: f64) -> Result<GradCheckReport> {
    let mut r = rng();
    let mut store = ParamStore::new();
    let w = ChanCaWeights::new(&mut Init::new(&mut store, &mut r), "ca", 4, 2)?;
    let fq = Tensor::randn(vec![4, 5, 3], 1.0, &mut r);
    let fkv = Tensor::randn(vec![4, 5, 3], 1.0, &mut r);
    check_block(&store, vec![fq, fkv], tol, None, |g, p, v| chanca(g, p, &w, v[0], v[1]))
}

pub fn check_adaconv(tol: f64) -> Result<GradCheckReport> {
    let mut r = rng();
    let mut store = ParamStore::new();
    let w = AdaConvWeights::new(&mut Init::new(&mut store, &mut r), "ada", 3, 2)?;
    let x = Tensor::randn(vec![3, 5, 4], 1.0, &mut r);
    check_block(&store, vec![x], tol, None, |g, p, v| adaconv_block(g, p, &w, v[0]))
}

pub fn check_gdcnn(tol: f64) -> Result<GradCheckReport> {
    let mut r = rng();
    let mut store = ParamStore::new();
    let w = GdCnnWeights::new(&mut Init::new(&mut store, &mut r), "gd", 2, 2)?;
    let x = Tensor::randn(vec![2, 4, 4], 1.0, &mut r);
    check_block(&store, vec![x], tol, None, |g, p, v| gdcnn(g, p, &w, v[0]))
}

pub fn check_ctb(tol: f64) -> Result<GradCheckReport> {
    let mut r = rng();
    let mut store = ParamStore::new();
    let w = CtbWeights::new(&mut Init::new(&mut store, &mut r), "ctb", 4, 2, 2, 2, 1)?;
    let x = Tensor::randn(vec![4, 4, 4], 1.0, &mut r);
    check_block(&store, vec![x], tol, Some(8), |g, p, v| ctb(g, p, &w, v[0]))
}

/// Small restorer used by the end-to-end checks: `C = 4`, window 2 (16×16 inputs).
pub fn small_dir_config() -> DirConfig {
    DirConfig { base_channels: 4, window: 2, heads: 2, adaconv_kernels: 2, ..DirConfig::default() }
}

/// Whole restorer on a 16×16 input with non-zero memories.
pub fn check_dir(tol: f64) -> Result<GradCheckReport> {
    let model = DirModel::<f64>::new(small_dir_config(), 5)?;
    let mut r = rng();
    let mut extra = vec![Tensor::uniform(vec![16, 16], 0.0, 1.0, &mut r)];
    for l in 0..LEVELS {
        extra.push(Tensor::randn(vec![model.config.channels_at(l), 16 >> l, 16 >> l], 0.5, &mut r));
    }
    check_block(&model.store, extra, tol, Some(4), |g, p, v| {
        let mem = MemoryBank { features: Some([v[1], v[2], v[3], v[4]]), iteration: 1 };
        Ok(model.forward(g, p, v[0], &mem)?.output)
    })
}

/// Trajectory loss on an 8×8, `K = 2` instance w.r.t. `θ`, `μ`, `μ̄`, `λ̄`.
/// `C = 8`: with two channels per half, layer norm is nearly a sign function.
pub fn check_pt_loss(tol: f64, scheme: Scheme) -> Result<GradCheckReport> {
    let config = TrainConfig {
        k: 2,
        dir: DirConfig { base_channels: 8, window: 1, heads: 2, adaconv_kernels: 2, ..DirConfig::default() },
        seed: 9,
        scheme,
        ..TrainConfig::default()
    };
    let params = ParameterSet::<f64>::new(&config)?;
    let mut r = rng();
    let x_gt = Image::<f64>::uniform(8, 8, 0.0, 1.0, &mut r);
    let op = MeasurementOperator::<f64>::new(8, 8, 0.3, OperatorKind::GaussianOrthonormal, 4)?;
    let y = op.forward(&x_gt, &NoiseModel::none())?;
    let alpha = LossWeights::uniform(2);
    grad_check(
        |g, vars| {
            let bound = params.bound_from_vars(vars);
            Ok(pt_loss(g, &params, &bound, &x_gt, &y, &op, scheme, &alpha)?.loss)
        },
        &params.tensors(),
        opts(tol, Some(3)),
    )
}

/// Runs the named check (`all` for every one).
pub fn run_checks(which: &str, tol: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let names: Vec<&str> = match which {
        "all" => CHECK_NAMES.to_vec(),
        n if CHECK_NAMES.contains(&n) => vec![n],
        other => return Err(Error::InvalidArgument(format!("unknown check `{other}`; expected all or one of {CHECK_NAMES:?}"))),
    };
    names
        .into_iter()
        .map(|n| {
            let rep = match n {
                "swinsa" => check_swinsa(tol),
                "chanca" => check_chanca(tol),
                "adaconv" => check_adaconv(tol),
                "gdcnn" => check_gdcnn(tol),
                "ctb" => check_ctb(tol),
                "dir" => check_dir(tol),
                _ => check_pt_loss(tol, Scheme::Admm),
            }?;
            Ok((n.to_string(), rep))
        })
        .collect()
}
