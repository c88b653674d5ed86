//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensorgrad::graph::{Graph, Var};
use crate::tensorgrad::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per-input `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over probed entries.
    pub rel_errors: Vec<f64>,
    pub probes: Vec<usize>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Options for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Upper bound on probed coordinates per input; `None` probes every entry.
    pub max_probes: Option<usize>,
    pub seed: u64,
    /// Gradient norms below `floor·max(1, |f|)` are treated as rounding noise:
    /// the relative error is taken against this floor instead.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, tol: 1e-6, max_probes: None, seed: 0, floor: 0.0 }
    }
}

/// Builds `f` on fresh tapes and compares reverse-mode gradients against
/// `(f(x+eps) − f(x−eps)) / 2eps`, entry by entry.
///
/// Non-scalar outputs are reduced by a fixed pseudo-random weighting, so the
/// whole Jacobian participates, not just its column sums.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut weights: Option<Tensor<f64>> = None;

    let mut eval = |xs: &[Tensor<f64>], want_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let mut out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            let shape = g.shape(out).to_vec();
            let w = weights
                .get_or_insert_with(|| Tensor::uniform(shape, 0.5, 1.5, &mut ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed)))
                .clone();
            let wv = g.constant(w);
            let prod = g.mul(out, wv)?;
            out = g.sum(prod);
        }
        let val = g.value(out).item();
        if !want_grad {
            return Ok((val, Vec::new()));
        }
        g.backward(out)?;
        let grads = vars
            .iter()
            .zip(xs)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();
        Ok((val, grads))
    };

    let (f0, analytic) = eval(inputs, true)?;
    let floor = opts.floor * f0.abs().max(1.0);
    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut probes = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let idx: Vec<usize> = match opts.max_probes {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let (mut diff2, mut an2, mut nu2) = (0.0, 0.0, 0.0);
        for &j in &idx {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + opts.eps;
            let (fp, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig - opts.eps;
            let (fm, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[i].data()[j];
            diff2 += (a - numeric).powi(2);
            an2 += a * a;
            nu2 += numeric * numeric;
        }
        let scale = an2.sqrt().max(nu2.sqrt()).max(floor * (idx.len() as f64).sqrt());
        rel_errors.push(if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale });
        probes.push(idx.len());
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { rel_errors, probes, max_rel_error, tol: opts.tol })
}
