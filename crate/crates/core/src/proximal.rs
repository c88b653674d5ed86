//! Proximal machinery for the separable SPI problem
//! `min ½‖Y − H X Wᵀ‖²_F + λ g(X)` with row-orthonormal `H`, `W`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::restorers::{RestoreContext, Restorer};
use crate::scalar::Scalar;
use crate::sensing::{Measurement, MeasurementOperator};
use crate::tensorgrad::{Graph, Var};
use crate::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Hqs,
    Admm,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hqs" => Ok(Scheme::Hqs),
            "admm" => Ok(Scheme::Admm),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Hqs => "hqs",
            Scheme::Admm => "admm",
        })
    }
}

/// Solver state between composite steps.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateState<T> {
    pub x: Image<T>,
    pub z: Image<T>,
    /// Lagrange multiplier; present only for ADMM.
    pub u: Option<Image<T>>,
    pub k: usize,
}

impl<T: Scalar> IterateState<T> {
    /// `X = Z = x0`, `U = 0` for ADMM.
    pub fn start(x0: Image<T>, scheme: Scheme) -> Self {
        let (r, c) = x0.dims();
        IterateState {
            z: x0.clone(),
            u: (scheme == Scheme::Admm).then(|| Image::zeros(r, c)),
            x: x0,
            k: 0,
        }
    }

    pub fn scheme(&self) -> Scheme {
        if self.u.is_some() { Scheme::Admm } else { Scheme::Hqs }
    }
}

/// Penalty `mu` and regularization weight `lambda` of one teacher step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub mu: f64,
    pub lambda: f64,
}

impl StepParams {
    /// Forced final teacher step: lands exactly on the ground truth.
    pub const FINAL: StepParams = StepParams { mu: 0.0, lambda: 1.0 };

    pub fn new(mu: f64, lambda: f64) -> Self {
        StepParams { mu, lambda }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    /// Starting point `X⁰`, not counted among the iterates.
    pub initial: Image<T>,
    /// `X¹ … Xᴷ`.
    pub iterates: Vec<Image<T>>,
    pub scheme: Scheme,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last(&self) -> &Image<T> {
        self.iterates.last().unwrap_or(&self.initial)
    }

    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty mu must be positive, got {mu}")));
    }
    Ok(())
}

/// Closed-form data proximal step
/// `P + (1/(1+μ)) Hᵀ (Y − H P Wᵀ) W`, the minimizer of
/// `½‖Y − H Z Wᵀ‖² + (μ/2)‖Z − P‖²` for row-orthonormal `H`, `W`.
pub fn prox_f<T: Scalar>(p: &Image<T>, y: &Measurement<T>, op: &MeasurementOperator<T>, mu: f64) -> Result<Image<T>> {
    check_mu(mu)?;
    let residual = y.values.sub(&op.apply(p)?)?;
    let back = op.adjoint_values(&residual)?;
    let step = T::lit(1.0 / (1.0 + mu));
    p.zip_map(&back, |a, b| a + step * b)
}

/// Proximal step of `ḡ(X') = ½‖X' − X_gt‖²`: `(μQ + λX_gt)/(μ + λ)`.
pub fn prox_g_bar<T: Scalar>(q: &Image<T>, x_gt: &Image<T>, params: StepParams) -> Result<Image<T>> {
    let denom = params.mu + params.lambda;
    if !(denom != 0.0 && denom.is_finite()) || params.mu < 0.0 || params.lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate teacher weights mu={}, lambda={}",
            params.mu, params.lambda
        )));
    }
    let a = T::lit(params.mu / denom);
    let b = T::lit(params.lambda / denom);
    q.zip_map(x_gt, |qv, xv| a * qv + b * xv)
}

/// One HQS composite step: `Z ← Prox_f(X)`, `X ← R(Z)`.
pub fn hqs_step<T: Scalar, R: Restorer<T> + ?Sized>(
    state: &IterateState<T>,
    y: &Measurement<T>,
    op: &MeasurementOperator<T>,
    restorer: &mut R,
    mu: f64,
) -> Result<IterateState<T>> {
    if state.u.is_some() {
        return Err(Error::InvalidArgument("HQS step on an ADMM state".into()));
    }
    let z = prox_f(&state.x, y, op, mu)?;
    let x = restorer.restore(&z, &RestoreContext { k: state.k, mu })?;
    Ok(IterateState { x, z, u: None, k: state.k + 1 })
}

/// One ADMM composite step:
/// `Z ← Prox_f(X − U/μ)`, `X ← R(Z + U/μ)`, `U ← U + μ(Z − X)`.
pub fn admm_step<T: Scalar, R: Restorer<T> + ?Sized>(
    state: &IterateState<T>,
    y: &Measurement<T>,
    op: &MeasurementOperator<T>,
    restorer: &mut R,
    mu: f64,
) -> Result<IterateState<T>> {
    let u = state.u.as_ref().ok_or_else(|| Error::InvalidArgument("ADMM step on an HQS state".into()))?;
    check_mu(mu)?;
    let inv_mu = T::lit(1.0 / mu);
    let p = state.x.zip_map(u, |x, u| x - u * inv_mu)?;
    let z = prox_f(&p, y, op, mu)?;
    let q = z.zip_map(u, |z, u| z + u * inv_mu)?;
    let x = restorer.restore(&q, &RestoreContext { k: state.k, mu })?;
    let muv = T::lit(mu);
    let diff = z.sub(&x)?;
    let u_next = u.zip_map(&diff, |u, d| u + muv * d)?;
    Ok(IterateState { x, z, u: Some(u_next), k: state.k + 1 })
}

pub fn step<T: Scalar, R: Restorer<T> + ?Sized>(
    state: &IterateState<T>,
    y: &Measurement<T>,
    op: &MeasurementOperator<T>,
    restorer: &mut R,
    mu: f64,
) -> Result<IterateState<T>> {
    match state.scheme() {
        Scheme::Hqs => hqs_step(state, y, op, restorer, mu),
        Scheme::Admm => admm_step(state, y, op, restorer, mu),
    }
}

/// Runs `mus.len()` composite steps from `X⁰ = Hᵀ Y W`.
pub fn run<T: Scalar, R: Restorer<T> + ?Sized>(
    scheme: Scheme,
    y: &Measurement<T>,
    op: &MeasurementOperator<T>,
    restorer: &mut R,
    mus: &[f64],
) -> Result<Trajectory<T>> {
    if mus.is_empty() {
        return Err(Error::InvalidArgument("at least one iteration required".into()));
    }
    let x0 = op.adjoint(y)?;
    let mut state = IterateState::start(x0.clone(), scheme);
    let mut iterates = Vec::with_capacity(mus.len());
    for &mu in mus {
        state = step(&state, y, op, restorer, mu)?;
        iterates.push(state.x.clone());
    }
    Ok(Trajectory { initial: x0, iterates, scheme })
}

/// Ground-truth-conditioned trajectory `X̄^{k+1} = Prox_ḡ ∘ Prox_f(X̄ᵏ)`.
///
/// `teacher_params` holds the `K−1` free steps; step `K−1` is forced to
/// `(μ̄, λ̄) = (0, 1)`. Within a step `Prox_f` uses the same `μ̄` as `Prox_ḡ`.
/// A step with `μ̄ = 0` ignores its input and returns `X_gt` directly.
pub fn ideal_trajectory<T: Scalar>(
    x0: &Image<T>,
    x_gt: &Image<T>,
    y: &Measurement<T>,
    op: &MeasurementOperator<T>,
    scheme: Scheme,
    teacher_params: &[StepParams],
    k_steps: usize,
) -> Result<Trajectory<T>> {
    if k_steps == 0 || teacher_params.len() + 1 != k_steps {
        return Err(Error::InvalidArgument(format!(
            "{} teacher steps given for K = {k_steps} (need K−1)",
            teacher_params.len()
        )));
    }
    if x0.dims() != x_gt.dims() {
        return Err(Error::dim("ideal_trajectory", format!("{:?} vs {:?}", x0.dims(), x_gt.dims())));
    }
    let mut state = IterateState::start(x0.clone(), scheme);
    let mut iterates = Vec::with_capacity(k_steps);
    for params in teacher_params.iter().copied().chain(std::iter::once(StepParams::FINAL)) {
        let mut teacher = |q: &Image<T>, _: &RestoreContext| prox_g_bar(q, x_gt, params);
        state = if params.mu == 0.0 {
            prox_g_bar(x0, x_gt, params)?; // validates the weights
            IterateState { x: x_gt.clone(), z: state.z.clone(), u: state.u.clone(), k: state.k + 1 }
        } else {
            step(&state, y, op, &mut teacher, params.mu)?
        };
        iterates.push(state.x.clone());
    }
    Ok(Trajectory { initial: x0.clone(), iterates, scheme })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub psnr: f64,
    pub frob_dist: f64,
}

/// Per-iteration PSNR and Frobenius distance to ground truth, `k = 0` being `X⁰`.
pub fn convergence_report<T: Scalar>(traj: &Trajectory<T>, x_gt: &Image<T>) -> Result<Vec<ConvergenceRow>> {
    std::iter::once(&traj.initial)
        .chain(&traj.iterates)
        .enumerate()
        .map(|(k, x)| {
            Ok(ConvergenceRow { k, psnr: psnr(x, x_gt)?, frob_dist: x.sub(x_gt)?.frob_norm().as_f64() })
        })
        .collect()
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("k,psnr,frob_dist\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.10e}\n", r.k, r.psnr, r.frob_dist));
    }
    s
}

/// Differentiable `Prox_f` on a tape. `p`, `y` are `H×W` / `h×w` matrices,
/// `h_mat`, `w_mat` the operator factors, `mu` a one-element tensor.
pub fn prox_f_graph<T: Scalar>(g: &mut Graph<T>, p: Var, y: Var, h_mat: Var, w_mat: Var, mu: Var) -> Result<Var> {
    let hp = g.matmul(h_mat, p)?;
    let hpw = g.matmul_t(hp, w_mat, false, true)?;
    let resid = g.sub(y, hpw)?;
    let ht_r = g.matmul_t(h_mat, resid, true, false)?;
    let back = g.matmul(ht_r, w_mat)?;
    let one_plus = g.add_const(mu, T::one());
    let step = g.recip(one_plus);
    let scaled = g.scale_by(back, step)?;
    g.add(p, scaled)
}

/// Differentiable `Prox_ḡ`: `(μQ + λX_gt)/(μ + λ)`, `mu`/`lambda` one-element tensors.
pub fn prox_g_bar_graph<T: Scalar>(g: &mut Graph<T>, q: Var, x_gt: Var, mu: Var, lambda: Var) -> Result<Var> {
    let denom = g.add(mu, lambda)?;
    let inv = g.recip(denom);
    let a = g.mul(mu, inv)?;
    let b = g.mul(lambda, inv)?;
    let qa = g.scale_by(q, a)?;
    let xb = g.scale_by(x_gt, b)?;
    g.add(qa, xb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{NoiseModel, OperatorKind};
    use crate::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (MeasurementOperator<f64>, Image<f64>, Measurement<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = MeasurementOperator::new(8, 8, 0.3, OperatorKind::GaussianOrthonormal, seed).unwrap();
        let x = Matrix::uniform(8, 8, 0.0, 1.0, &mut rng);
        let y = op.forward(&x, &NoiseModel::none()).unwrap();
        (op, x, y)
    }

    #[test]
    fn prox_f_consistent_point_is_fixed() {
        let (op, x, y) = instance(1);
        let out = prox_f(&x, &y, &op, 0.7).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn prox_f_large_penalty_stays_put() {
        let (op, _, y) = instance(2);
        let p = Matrix::filled(8, 8, 0.3);
        let out = prox_f(&p, &y, &op, 1e12).unwrap();
        assert!(out.max_abs_diff(&p) < 1e-9);
    }

    #[test]
    fn prox_f_rejects_bad_mu() {
        let (op, x, y) = instance(3);
        assert!(prox_f(&x, &y, &op, 0.0).is_err());
        assert!(prox_f(&x, &y, &op, -1.0).is_err());
    }

    #[test]
    fn prox_g_bar_special_weights() {
        let q = Matrix::<f64>::filled(3, 3, 0.2);
        let gt = Matrix::<f64>::filled(3, 3, 0.8);
        assert_eq!(prox_g_bar(&q, &gt, StepParams::new(0.0, 1.0)).unwrap(), gt);
        assert_eq!(prox_g_bar(&q, &gt, StepParams::new(1.0, 0.0)).unwrap(), q);
        let mid = prox_g_bar(&q, &gt, StepParams::new(2.0, 2.0)).unwrap();
        assert!(mid.max_abs_diff(&Matrix::filled(3, 3, 0.5)) < 1e-15);
        assert!(prox_g_bar(&q, &gt, StepParams::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn teacher_restorer_reaches_ground_truth_in_one_step() {
        let (op, x, y) = instance(4);
        let mut teacher = |q: &Image<f64>, _: &RestoreContext| prox_g_bar(q, &x, StepParams::FINAL);
        for scheme in [Scheme::Hqs, Scheme::Admm] {
            let s0 = IterateState::start(op.adjoint(&y).unwrap(), scheme);
            let s1 = step(&s0, &y, &op, &mut teacher, 0.5).unwrap();
            assert_eq!(s1.x, x);
            assert_eq!(s1.k, 1);
        }
    }

    #[test]
    fn identity_restorer_fixed_point() {
        let (op, x, y) = instance(5);
        let mut id = crate::restorers::Identity;
        let s = IterateState::start(x.clone(), Scheme::Hqs);
        let next = hqs_step(&s, &y, &op, &mut id, 0.3).unwrap();
        assert!(next.x.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn admm_multiplier_unchanged_when_restorer_returns_z() {
        let (op, _, y) = instance(6);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let u0 = Matrix::uniform(8, 8, -0.1, 0.1, &mut rng);
        let s = IterateState { x: op.adjoint(&y).unwrap(), z: Matrix::zeros(8, 8), u: Some(u0.clone()), k: 0 };
        // Restorer returns Z exactly: it receives Z + U/μ, subtract U/μ back.
        let mu = 0.5;
        let mut back_to_z = |q: &Image<f64>, _: &RestoreContext| q.zip_map(&u0, |a, b| a - b / mu);
        let n = admm_step(&s, &y, &op, &mut back_to_z, mu).unwrap();
        assert!(n.u.unwrap().max_abs_diff(&u0) < 1e-15);
    }

    #[test]
    fn mismatched_state_and_scheme() {
        let (op, x, y) = instance(7);
        let mut id = crate::restorers::Identity;
        assert!(admm_step(&IterateState::start(x.clone(), Scheme::Hqs), &y, &op, &mut id, 1.0).is_err());
        assert!(hqs_step(&IterateState::start(x, Scheme::Admm), &y, &op, &mut id, 1.0).is_err());
    }

    #[test]
    fn ideal_trajectory_edge_cases() {
        let (op, x, y) = instance(8);
        let x0 = op.adjoint(&y).unwrap();
        let one = ideal_trajectory(&x0, &x, &y, &op, Scheme::Admm, &[], 1).unwrap();
        assert_eq!(one.iterates, vec![x.clone()]);
        let zeros = vec![StepParams::new(0.0, 1.0); 4];
        let t = ideal_trajectory(&x0, &x, &y, &op, Scheme::Hqs, &zeros, 5).unwrap();
        assert!(t.iterates.iter().all(|it| *it == x));
        assert!(ideal_trajectory(&x0, &x, &y, &op, Scheme::Hqs, &zeros, 3).is_err());
        let bad = vec![StepParams::new(0.0, 0.0)];
        assert!(ideal_trajectory(&x0, &x, &y, &op, Scheme::Hqs, &bad, 2).is_err());
    }

    #[test]
    fn convergence_report_constant_and_teacher() {
        let (op, x, y) = instance(9);
        let x0 = op.adjoint(&y).unwrap();
        let t = ideal_trajectory(&x0, &x, &y, &op, Scheme::Hqs, &[StepParams::new(1.0, 1.0); 3], 4).unwrap();
        let rows = convergence_report(&t, &x).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows.last().unwrap().psnr, crate::metrics::PSNR_CAP_DB);
        let flat = Trajectory { initial: x0.clone(), iterates: vec![x0.clone(); 3], scheme: Scheme::Hqs };
        let rows = convergence_report(&flat, &x).unwrap();
        assert!(rows.windows(2).all(|w| w[0].psnr == w[1].psnr && w[0].frob_dist == w[1].frob_dist));
        assert!(convergence_csv(&rows).starts_with("k,psnr,frob_dist\n0,"));
    }
}
