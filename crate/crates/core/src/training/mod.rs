//! Trajectory-supervised training of the unrolled solver.

mod checkpoint;
mod data;
mod optim;
mod run;

use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_hash, Checkpoint, CheckpointHeader};
pub use data::{ingest_corpus, synth_dataset, synth_image, SynthKind};
pub use optim::{cosine_lr, Adam};
pub use run::{evaluate, evaluate_csv, train, unrolled_trajectory, EvalReport, EvalRow, LogRow, TrainOutcome};

use crate::dir::{Bound, DirConfig, DirModel, MemoryBank};
use crate::error::{Error, Result};
use crate::proximal::{prox_f_graph, prox_g_bar_graph, Scheme};
use crate::scalar::Scalar;
use crate::sensing::{Measurement, MeasurementOperator, OperatorKind};
use crate::tensorgrad::{softplus, softplus_inv, Graph, Tensor, Var};
use crate::Image;

/// Per-iteration weights `α_k` of the trajectory loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: Vec<f64>,
}

impl LossWeights {
    pub fn uniform(k: usize) -> Self {
        LossWeights { alpha: vec![1.0; k] }
    }

    /// Weight only on the final iterate.
    pub fn final_only(k: usize) -> Self {
        let mut alpha = vec![0.0; k];
        if let Some(a) = alpha.last_mut() {
            *a = 1.0;
        }
        LossWeights { alpha }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.alpha.len() != k {
            return Err(Error::InvalidArgument(format!("alpha has {} entries for K = {k}", self.alpha.len())));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument("alpha entries must be finite and non-negative".into()));
        }
        if self.alpha.iter().all(|&a| a == 0.0) {
            return Err(Error::InvalidArgument("alpha must not be all zero".into()));
        }
        Ok(())
    }
}

fn default_k() -> usize {
    6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub k: usize,
    pub cr_range: [f64; 2],
    pub batch_size: usize,
    pub steps: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Defaults to all ones.
    pub alpha: Option<Vec<f64>>,
    pub operator: OperatorKind,
    pub dir: DirConfig,
    /// Initial values (after the softplus) of the solver penalties.
    pub mu_init: f64,
    pub teacher_mu_init: f64,
    pub teacher_lambda_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: default_k(),
            cr_range: [0.01, 0.5],
            batch_size: 4,
            steps: 1000,
            lr_init: 1e-3,
            lr_final: 1e-4,
            seed: 0,
            scheme: Scheme::Admm,
            alpha: None,
            operator: OperatorKind::GaussianOrthonormal,
            dir: DirConfig::default(),
            mu_init: 0.5,
            teacher_mu_init: 1.0,
            teacher_lambda_init: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        match &self.alpha {
            Some(a) => LossWeights { alpha: a.clone() },
            None => LossWeights::uniform(self.k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::InvalidArgument(format!("{key}: {msg}")));
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        let [lo, hi] = self.cr_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("cr_range", format!("need 0 < lo ≤ hi ≤ 1, got [{lo}, {hi}]"));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0) {
            return bad("lr_init", "learning rates must be positive".into());
        }
        for (key, v) in
            [("mu_init", self.mu_init), ("teacher_mu_init", self.teacher_mu_init), ("teacher_lambda_init", self.teacher_lambda_init)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, format!("must be positive, got {v}"));
            }
        }
        self.loss_weights().validate(self.k).map_err(|e| Error::InvalidArgument(format!("alpha: {e}")))?;
        self.dir.validate()
    }
}

/// Everything the trajectory loss trains: restorer weights, `K` student
/// penalties and `K−1` teacher pairs, all as unconstrained raw values whose
/// softplus is the actual (positive) parameter.
#[derive(Clone, Debug)]
pub struct ParameterSet<T> {
    pub model: DirModel<T>,
    pub mu_student: Vec<T>,
    pub mu_teacher: Vec<T>,
    pub lambda_teacher: Vec<T>,
}

/// Graph handles of a bound [`ParameterSet`]; the solver handles are raw.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub theta: Bound,
    pub mu_student: Vec<Var>,
    pub mu_teacher: Vec<Var>,
    pub lambda_teacher: Vec<Var>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = DirModel::new(config.dir.clone(), config.seed)?;
        let k = config.k;
        Ok(ParameterSet {
            model,
            mu_student: vec![softplus_inv(T::lit(config.mu_init)); k],
            mu_teacher: vec![softplus_inv(T::lit(config.teacher_mu_init)); k - 1],
            lambda_teacher: vec![softplus_inv(T::lit(config.teacher_lambda_init)); k - 1],
        })
    }

    pub fn k(&self) -> usize {
        self.mu_student.len()
    }

    /// Student penalties `μ_k = softplus(raw)`.
    pub fn mus(&self) -> Vec<f64> {
        self.mu_student.iter().map(|&r| softplus(r).as_f64()).collect()
    }

    /// Teacher `(μ̄_k, λ̄_k)` for the `K−1` free steps.
    pub fn teacher_steps(&self) -> Vec<crate::proximal::StepParams> {
        self.mu_teacher
            .iter()
            .zip(&self.lambda_teacher)
            .map(|(&m, &l)| crate::proximal::StepParams::new(softplus(m).as_f64(), softplus(l).as_f64()))
            .collect()
    }

    /// Flat list: restorer tensors, then each raw scalar as a 1-element tensor
    /// (student μ, teacher μ̄, teacher λ̄).
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        let scalars = self.mu_student.iter().chain(&self.mu_teacher).chain(&self.lambda_teacher);
        self.model.store.values().iter().cloned().chain(scalars.map(|&v| Tensor::full(vec![1], v))).collect()
    }

    pub fn set_tensors(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        let n = self.model.store.len();
        let k = self.k();
        if tensors.len() != n + 3 * k - 2 {
            return Err(Error::InvalidArgument(format!("{} tensors for a parameter set of {}", tensors.len(), n + 3 * k - 2)));
        }
        for (slot, t) in self.model.store.values_mut().iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::dim("set_tensors", format!("{:?} vs {:?}", slot.shape(), t.shape())));
            }
            *slot = t.clone();
        }
        let mut rest = tensors[n..].iter().map(|t| t.data()[0]);
        for v in self.mu_student.iter_mut().chain(self.mu_teacher.iter_mut()).chain(self.lambda_teacher.iter_mut()) {
            *v = rest.next().expect("length checked");
        }
        Ok(())
    }

    /// Binds everything as trainable leaves, in [`ParameterSet::tensors`] order.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| g.param(t)).collect();
        self.bound_from_vars(&vars)
    }

    /// Binds everything as constants.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| g.constant(t)).collect();
        self.bound_from_vars(&vars)
    }

    /// Interprets `vars` (laid out as [`ParameterSet::tensors`]).
    pub fn bound_from_vars(&self, vars: &[Var]) -> BoundParams {
        let n = self.model.store.len();
        let k = self.k();
        let theta = Bound::from_vars(vars[..n].to_vec());
        BoundParams {
            theta,
            mu_student: vars[n..n + k].to_vec(),
            mu_teacher: vars[n + k..n + 2 * k - 1].to_vec(),
            lambda_teacher: vars[n + 2 * k - 1..n + 3 * k - 2].to_vec(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        ParameterSet {
            model: self.model.cast(),
            mu_student: c(&self.mu_student),
            mu_teacher: c(&self.mu_teacher),
            lambda_teacher: c(&self.lambda_teacher),
        }
    }
}

/// Problem data placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ProblemVars {
    pub x_gt: Var,
    pub y: Var,
    pub h_mat: Var,
    pub w_mat: Var,
    /// `X⁰ = Hᵀ Y W`.
    pub x0: Var,
}

impl ProblemVars {
    pub fn new<T: Scalar>(g: &mut Graph<T>, x_gt: &Image<T>, y: &Measurement<T>, op: &MeasurementOperator<T>) -> Result<Self> {
        if x_gt.dims() != op.image_dims() || y.values.dims() != op.measurement_dims() {
            return Err(Error::dim(
                "pt_loss",
                format!("image {:?}, measurement {:?} for operator {:?}", x_gt.dims(), y.values.dims(), op.image_dims()),
            ));
        }
        let x0 = op.adjoint(y)?;
        Ok(ProblemVars {
            x_gt: g.constant(x_gt.to_tensor()),
            y: g.constant(y.values.to_tensor()),
            h_mat: g.constant(op.h_mat().to_tensor()),
            w_mat: g.constant(op.w_mat().to_tensor()),
            x0: g.constant(x0.to_tensor()),
        })
    }
}

/// Loss node plus both trajectories (iterates `1..=K`).
#[derive(Clone, Debug)]
pub struct PtLoss {
    pub loss: Var,
    pub student: Vec<Var>,
    pub teacher: Vec<Var>,
}

/// Positive solver penalties on a tape, i.e. the softplus of the raw handles.
#[derive(Clone, Debug)]
pub struct SolverVars {
    pub mu_student: Vec<Var>,
    pub mu_teacher: Vec<Var>,
    pub lambda_teacher: Vec<Var>,
}

impl SolverVars {
    pub fn from_raw<T: Scalar>(g: &mut Graph<T>, b: &BoundParams) -> Self {
        let mut sp = |v: &[Var]| v.iter().map(|&x| g.softplus(x)).collect::<Vec<_>>();
        SolverVars {
            mu_student: sp(&b.mu_student),
            mu_teacher: sp(&b.mu_teacher),
            lambda_teacher: sp(&b.lambda_teacher),
        }
    }
}

/// One composite HQS/ADMM step on a tape with restorer `r`.
/// Returns the new `X` and updates `u` in place for ADMM.
fn graph_step<T: Scalar>(
    g: &mut Graph<T>,
    pv: &ProblemVars,
    scheme: Scheme,
    x: Var,
    u: &mut Option<Var>,
    mu: Var,
    r: &mut dyn FnMut(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    match scheme {
        Scheme::Hqs => {
            let z = prox_f_graph(g, x, pv.y, pv.h_mat, pv.w_mat, mu)?;
            r(g, z)
        }
        Scheme::Admm => {
            let uk = u.expect("ADMM state carries a multiplier");
            let inv = g.recip(mu);
            let u_scaled = g.scale_by(uk, inv)?;
            let p = g.sub(x, u_scaled)?;
            let z = prox_f_graph(g, p, pv.y, pv.h_mat, pv.w_mat, mu)?;
            let q = g.add(z, u_scaled)?;
            let x_next = r(g, q)?;
            let diff = g.sub(z, x_next)?;
            let du = g.scale_by(diff, mu)?;
            *u = Some(g.add(uk, du)?);
            Ok(x_next)
        }
    }
}

/// Trajectory loss `Σ_k α_k ‖X^{k+1} − X̄^{k+1}‖²_F` with a pluggable student
/// restorer `student(g, k, input)`. The teacher's last step is forced to
/// `(μ̄, λ̄) = (0, 1)`, i.e. `X̄ᴷ = X_gt`.
pub fn pt_loss_with<T: Scalar>(
    g: &mut Graph<T>,
    pv: &ProblemVars,
    solver: &SolverVars,
    scheme: Scheme,
    alpha: &LossWeights,
    mut student: impl FnMut(&mut Graph<T>, usize, Var) -> Result<Var>,
) -> Result<PtLoss> {
    let k_steps = solver.mu_student.len();
    alpha.validate(k_steps)?;
    if solver.mu_teacher.len() + 1 != k_steps || solver.lambda_teacher.len() + 1 != k_steps {
        return Err(Error::InvalidArgument(format!(
            "teacher has {} steps for K = {k_steps} (need K−1)",
            solver.mu_teacher.len()
        )));
    }
    let x_shape = g.shape(pv.x0).to_vec();
    let start_u = |g: &mut Graph<T>| (scheme == Scheme::Admm).then(|| g.constant(Tensor::zeros(x_shape.clone())));
    let mut u_s = start_u(g);
    let mut u_t = start_u(g);
    let (mut xs, mut xt) = (pv.x0, pv.x0);
    let mut loss: Option<Var> = None;
    let mut student_iters = Vec::with_capacity(k_steps);
    let mut teacher_iters = Vec::with_capacity(k_steps);
    for k in 0..k_steps {
        let mut r = |g: &mut Graph<T>, z: Var| student(g, k, z);
        xs = graph_step(g, pv, scheme, xs, &mut u_s, solver.mu_student[k], &mut r)?;
        xt = if k + 1 < k_steps {
            let (mu, lam) = (solver.mu_teacher[k], solver.lambda_teacher[k]);
            let mut teacher = |g: &mut Graph<T>, q: Var| prox_g_bar_graph(g, q, pv.x_gt, mu, lam);
            graph_step(g, pv, scheme, xt, &mut u_t, mu, &mut teacher)?
        } else {
            pv.x_gt
        };
        student_iters.push(xs);
        teacher_iters.push(xt);
        let a = alpha.alpha[k];
        if a != 0.0 {
            let d = g.sub(xs, xt)?;
            let sq = g.sum_sq(d);
            let term = g.scale(sq, T::lit(a));
            loss = Some(match loss {
                Some(l) => g.add(l, term)?,
                None => term,
            });
        }
    }
    Ok(PtLoss { loss: loss.expect("alpha validated non-zero"), student: student_iters, teacher: teacher_iters })
}

/// Trajectory loss with the restorer `R_θ` as student. One restorer is shared
/// by all `K` iterations and its memories carry over between them.
#[allow(clippy::too_many_arguments)]
pub fn pt_loss<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    bound: &BoundParams,
    x_gt: &Image<T>,
    y: &Measurement<T>,
    op: &MeasurementOperator<T>,
    scheme: Scheme,
    alpha: &LossWeights,
) -> Result<PtLoss> {
    let pv = ProblemVars::new(g, x_gt, y, op)?;
    let solver = SolverVars::from_raw(g, bound);
    let mut memory = MemoryBank::empty();
    let model = &params.model;
    pt_loss_with(g, &pv, &solver, scheme, alpha, |g, _k, z| {
        let out = model.forward(g, &bound.theta, z, &memory)?;
        memory = out.memory;
        Ok(out.output)
    })
}
