use crate::scalar::Scalar;
use crate::tensorgrad::Tensor;

/// Cosine decay from `init` at step 0 to `last` at step `total − 1`.
pub fn cosine_lr(step: usize, total: usize, init: f64, last: f64) -> f64 {
    if total <= 1 {
        return init;
    }
    let t = (step.min(total - 1)) as f64 / (total - 1) as f64;
    last + 0.5 * (init - last) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect::<Vec<_>>();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::lit(lr / c1);
        let c2s = T::lit(c2.sqrt());
        for i in 0..params.len() {
            let (p, g) = (params[i].data_mut(), grads[i].data());
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                p[j] -= step * m[j] / (v[j].sqrt() / c2s + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-4), 1e-3);
        assert!((cosine_lr(99, 100, 1e-3, 1e-4) - 1e-4).abs() < 1e-15);
        assert!((cosine_lr(50, 101, 1e-3, 1e-4) - 5.5e-4).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![Tensor::full(vec![2], 3.0f64)];
        let mut opt = Adam::new(&p);
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * x)];
            opt.step(&mut p, &g, 0.05);
        }
        assert!(p[0].max_abs() < 1e-3);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![Tensor::full(vec![1], 1.0f64)];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &[Tensor::full(vec![1], 123.0)], 0.01);
        assert!((p[0].item() - 0.99).abs() < 1e-9);
    }
}
