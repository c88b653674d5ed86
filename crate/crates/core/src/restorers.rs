//! Plug-in restorers for plug-and-play iterations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::total_variation;
use crate::scalar::Scalar;
use crate::Image;

/// Information about the call site. Classical restorers ignore it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestoreContext {
    pub k: usize,
    pub mu: f64,
}

/// Maps an intermediate estimate to a restored image of the same extents.
pub trait Restorer<T: Scalar> {
    fn restore(&mut self, x: &Image<T>, ctx: &RestoreContext) -> Result<Image<T>>;
}

impl<T, F> Restorer<T> for F
where
    T: Scalar,
    F: FnMut(&Image<T>, &RestoreContext) -> Result<Image<T>>,
{
    fn restore(&mut self, x: &Image<T>, ctx: &RestoreContext) -> Result<Image<T>> {
        self(x, ctx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RestorerKind {
    Identity,
    Tv,
    #[serde(alias = "dct_threshold")]
    Dct,
    Dir,
}

impl std::str::FromStr for RestorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(RestorerKind::Identity),
            "tv" => Ok(RestorerKind::Tv),
            "dct" | "dct_threshold" => Ok(RestorerKind::Dct),
            "dir" => Ok(RestorerKind::Dir),
            other => Err(Error::InvalidArgument(format!("unknown restorer `{other}`"))),
        }
    }
}

pub const DEFAULT_TV_ITERS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestorerSpec {
    pub kind: RestorerKind,
    #[serde(default)]
    pub strength: f64,
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

fn default_inner_iters() -> usize {
    DEFAULT_TV_ITERS
}

impl RestorerSpec {
    pub fn identity() -> Self {
        RestorerSpec { kind: RestorerKind::Identity, strength: 0.0, inner_iters: DEFAULT_TV_ITERS, checkpoint: None }
    }

    pub fn tv(strength: f64) -> Self {
        RestorerSpec { kind: RestorerKind::Tv, strength, ..Self::identity() }
    }

    pub fn dct(strength: f64) -> Self {
        RestorerSpec { kind: RestorerKind::Dct, strength, ..Self::identity() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::InvalidArgument(format!("restorer strength {} must be non-negative", self.strength)));
        }
        if self.kind == RestorerKind::Tv && self.inner_iters == 0 {
            return Err(Error::InvalidArgument("TV restorer needs at least one inner iteration".into()));
        }
        if self.kind == RestorerKind::Dir && self.checkpoint.is_none() {
            return Err(Error::MissingCheckpoint);
        }
        Ok(())
    }

    /// Instantiates a classical restorer. The `dir` kind is built from its
    /// checkpoint by [`crate::dir::DirRestorer::build`].
    pub fn build_classical<T: Scalar>(&self) -> Result<Box<dyn Restorer<T>>> {
        self.validate()?;
        Ok(match self.kind {
            RestorerKind::Identity => Box::new(Identity),
            RestorerKind::Tv => Box::new(TvDenoiser { strength: self.strength, inner_iters: self.inner_iters }),
            RestorerKind::Dct => Box::new(DctThreshold { strength: self.strength }),
            RestorerKind::Dir => {
                return Err(Error::InvalidArgument("dir restorer must be loaded from its checkpoint".into()))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl<T: Scalar> Restorer<T> for Identity {
    fn restore(&mut self, x: &Image<T>, _: &RestoreContext) -> Result<Image<T>> {
        Ok(x.clone())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TvDenoiser {
    pub strength: f64,
    pub inner_iters: usize,
}

impl<T: Scalar> Restorer<T> for TvDenoiser {
    fn restore(&mut self, x: &Image<T>, _: &RestoreContext) -> Result<Image<T>> {
        tv_denoise(x, self.strength, self.inner_iters)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DctThreshold {
    pub strength: f64,
}

impl<T: Scalar> Restorer<T> for DctThreshold {
    fn restore(&mut self, x: &Image<T>, _: &RestoreContext) -> Result<Image<T>> {
        dct_threshold(x, self.strength)
    }
}

/// Forward-difference gradient with Neumann boundary.
fn grad(u: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            gx[i] = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`grad`].
fn div(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let dx = if w == 1 {
                0.0
            } else if c == 0 {
                px[i]
            } else if c + 1 == w {
                -px[i - 1]
            } else {
                px[i] - px[i - 1]
            };
            let dy = if h == 1 {
                0.0
            } else if r == 0 {
                py[i]
            } else if r + 1 == h {
                -py[i - w]
            } else {
                py[i] - py[i - w]
            };
            out[i] = dx + dy;
        }
    }
}

/// Chambolle dual step size; `τ ≤ 1/8` guarantees convergence.
const TV_TAU: f64 = 0.125;

/// Approximate minimizer of `½‖u − x‖² + strength·TV(u)` by a fixed number of
/// Chambolle dual projection iterations.
pub fn tv_denoise<T: Scalar>(x: &Image<T>, strength: f64, inner_iters: usize) -> Result<Image<T>> {
    tv_denoise_traced(x, strength, inner_iters, |_| {})
}

/// [`tv_denoise`] reporting the primal iterate after every inner iteration.
pub fn tv_denoise_traced<T: Scalar>(
    x: &Image<T>,
    strength: f64,
    inner_iters: usize,
    mut trace: impl FnMut(&Image<T>),
) -> Result<Image<T>> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::InvalidArgument(format!("TV strength {strength} must be non-negative")));
    }
    if strength == 0.0 {
        return Ok(x.clone());
    }
    let (h, w) = x.dims();
    let n = h * w;
    let f: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut d = vec![0.0; n];
    let mut v = vec![0.0; n];
    let primal = |d: &[f64]| -> Image<T> {
        Matrix::new(h, w, f.iter().zip(d).map(|(&fi, &di)| T::lit(fi - strength * di)).collect()).unwrap()
    };
    for _ in 0..inner_iters {
        div(&px, &py, h, w, &mut d);
        for i in 0..n {
            v[i] = d[i] - f[i] / strength;
        }
        grad(&v, h, w, &mut gx, &mut gy);
        for i in 0..n {
            let norm = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            let denom = 1.0 + TV_TAU * norm;
            px[i] = (px[i] + TV_TAU * gx[i]) / denom;
            py[i] = (py[i] + TV_TAU * gy[i]) / denom;
        }
        div(&px, &py, h, w, &mut d);
        trace(&primal(&d));
    }
    div(&px, &py, h, w, &mut d);
    Ok(primal(&d))
}

/// `½‖u − x‖² + strength·TV(u)`.
pub fn tv_objective<T: Scalar>(u: &Image<T>, x: &Image<T>, strength: f64) -> f64 {
    let fid: f64 = u.data().iter().zip(x.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    0.5 * fid + strength * total_variation(u)
}

/// Orthonormal DCT-II matrix of order `n` (rows are basis vectors).
pub fn dct_matrix<T: Scalar>(n: usize) -> Matrix<T> {
    let nf = n as f64;
    Matrix::from_fn(n, n, |k, i| {
        let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        T::lit(alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos())
    })
}

/// 2-D orthonormal DCT coefficients `C_H X C_Wᵀ`.
pub fn dct2<T: Scalar>(x: &Image<T>) -> Result<Matrix<T>> {
    let (h, w) = x.dims();
    dct_matrix::<T>(h).matmul(x)?.matmul_t(false, &dct_matrix(w), true)
}

pub fn idct2<T: Scalar>(coef: &Matrix<T>) -> Result<Image<T>> {
    let (h, w) = coef.dims();
    dct_matrix::<T>(h).matmul_t(true, coef, false)?.matmul(&dct_matrix(w))
}

/// Soft-thresholds all AC coefficients of the orthonormal 2-D DCT by `strength`.
pub fn dct_threshold<T: Scalar>(x: &Image<T>, strength: f64) -> Result<Image<T>> {
    if strength.is_nan() || strength < 0.0 {
        return Err(Error::InvalidArgument(format!("DCT strength {strength} must be non-negative")));
    }
    let mut coef = dct2(x)?;
    let t = T::lit(if strength.is_finite() { strength } else { f64::MAX });
    for (i, c) in coef.data_mut().iter_mut().enumerate() {
        if i == 0 {
            continue;
        }
        let mag = (c.abs() - t).max(T::zero());
        *c = mag * c.signum();
    }
    idct2(&coef)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> RestoreContext {
        RestoreContext { k: 0, mu: 1.0 }
    }

    #[test]
    fn identity_and_zero_strength_are_noops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::<f64>::uniform(9, 7, 0.0, 1.0, &mut rng);
        assert_eq!(Identity.restore(&x, &ctx()).unwrap(), x);
        assert!(tv_denoise(&x, 0.0, 30).unwrap().max_abs_diff(&x) < 1e-12);
        assert!(dct_threshold(&x, 0.0).unwrap().max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn tv_constant_image_is_fixed() {
        let x = Matrix::<f64>::filled(8, 8, 0.4);
        for s in [0.01, 0.5, 10.0] {
            assert!(tv_denoise(&x, s, 30).unwrap().max_abs_diff(&x) < 1e-12);
        }
    }

    #[test]
    fn tv_reduces_variation_of_impulse() {
        let mut x = Matrix::<f64>::filled(12, 12, 0.5);
        x[(5, 6)] = 1.0;
        let mut r = TvDenoiser { strength: 0.1, inner_iters: 30 };
        let u = r.restore(&x, &ctx()).unwrap();
        assert!(total_variation(&u) < total_variation(&x));
    }

    #[test]
    fn tv_objective_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::<f64>::uniform(16, 16, 0.0, 1.0, &mut rng);
        let strength = 0.15;
        let mut objs = vec![tv_objective(&x, &x, strength)];
        tv_denoise_traced(&x, strength, 60, |u| objs.push(tv_objective(u, &x, strength))).unwrap();
        for w in objs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective rose {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn tv_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::<f64>::uniform(10, 10, 0.0, 1.0, &mut rng);
        let a = tv_denoise(&x, 0.2, 30).unwrap();
        let b = tv_denoise(&x, 0.2, 30).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn dct_parseval_and_dc_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::<f64>::uniform(8, 12, 0.0, 1.0, &mut rng);
        let c = dct2(&x).unwrap();
        assert!((c.dot(&c) - x.dot(&x)).abs() < 1e-10);
        let dc = dct_threshold(&x, f64::INFINITY).unwrap();
        assert!(dc.max_abs_diff(&Matrix::filled(8, 12, x.mean())) < 1e-12);
        let big = dct_threshold(&x, 1e6).unwrap();
        assert!(big.max_abs_diff(&Matrix::filled(8, 12, x.mean())) < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let dir = RestorerSpec { kind: RestorerKind::Dir, ..RestorerSpec::identity() };
        assert!(matches!(dir.validate(), Err(Error::MissingCheckpoint)));
        assert!(RestorerSpec::tv(-1.0).validate().is_err());
        let zero_iters = RestorerSpec { inner_iters: 0, ..RestorerSpec::tv(0.1) };
        assert!(zero_iters.validate().is_err());
        assert!(RestorerSpec::dct(0.1).build_classical::<f64>().is_ok());
    }
}
