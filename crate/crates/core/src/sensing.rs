//! Separable (Kronecker) single-pixel measurement model.
//!
//! A measurement `Y = H X Wᵀ + E` is the matrix form of `y = (W ⊗ H) vec(X) + ε`;
//! only the two small factors are ever stored.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tensorgrad::container::{find, Entry};
use crate::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// Random Gaussian rows, orthonormalized.
    #[serde(alias = "gaussian")]
    GaussianOrthonormal,
    /// Leading sequency-ordered Walsh–Hadamard rows.
    Hadamard,
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian-orthonormal" => Ok(OperatorKind::GaussianOrthonormal),
            "hadamard" => Ok(OperatorKind::Hadamard),
            other => Err(Error::InvalidArgument(format!("unknown operator kind `{other}`"))),
        }
    }
}

/// Row-orthonormal pair `(H, W)` realizing `Φ = W ⊗ H`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOperator<T> {
    h_mat: Matrix<T>,
    w_mat: Matrix<T>,
    cr: f64,
    id: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement<T> {
    pub values: Matrix<T>,
    /// Fingerprint of the operator that produced the values.
    pub operator_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    None,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Standard deviation in measurement units.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel { kind: NoiseKind::None, sigma: 0.0, seed: 0 }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        NoiseModel { kind: NoiseKind::Gaussian, sigma, seed }
    }

    fn is_silent(&self) -> bool {
        self.kind == NoiseKind::None || self.sigma == 0.0
    }
}

/// Picks `(h, w)` for a target ratio: `h = round(√cr·H)`, then the `w`
/// that best matches `cr` (ties resolved toward the smaller `w`).
pub fn measurement_extents(height: usize, width: usize, cr: f64) -> Result<(usize, usize)> {
    if !(cr > 0.0 && cr <= 1.0) {
        return Err(Error::InvalidArgument(format!("compression ratio {cr} outside (0, 1]")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image extents must be positive".into()));
    }
    let h = ((cr.sqrt() * height as f64).round() as usize).clamp(1, height);
    let total = (height * width) as f64;
    let mut best = (usize::MAX, f64::INFINITY);
    for w in 1..=width {
        let err = ((h * w) as f64 / total - cr).abs();
        if err < best.1 - 1e-15 {
            best = (w, err);
        }
    }
    Ok((h, best.0))
}

/// Natural-order Hadamard row index of sequency `s` for order `2^bits`.
pub fn sequency_to_natural(s: usize, bits: u32) -> usize {
    let gray = s ^ (s >> 1);
    if bits == 0 {
        0
    } else {
        gray.reverse_bits() >> (usize::BITS - bits)
    }
}

/// First `rows` sequency-ordered rows of the `n×n` Hadamard matrix, scaled by `1/√n`.
pub fn hadamard_rows<T: Scalar>(n: usize, rows: usize) -> Result<Matrix<T>> {
    if !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("Hadamard order {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    let scale = T::one() / T::lit(n as f64).sqrt();
    Ok(Matrix::from_fn(rows, n, |r, c| {
        let nat = sequency_to_natural(r, bits);
        if (nat & c).count_ones().is_multiple_of(2) { scale } else { -scale }
    }))
}

/// Modified Gram–Schmidt on rows, two passes.
fn orthonormalize_rows<T: Scalar>(m: &mut Matrix<T>) -> Result<()> {
    let (rows, cols) = m.dims();
    for _pass in 0..2 {
        for r in 0..rows {
            for q in 0..r {
                let d: T = (0..cols).map(|c| m[(r, c)] * m[(q, c)]).sum();
                for c in 0..cols {
                    let v = m[(q, c)];
                    m[(r, c)] -= d * v;
                }
            }
            let norm: T = (0..cols).map(|c| m[(r, c)] * m[(r, c)]).sum::<T>().sqrt();
            if norm <= T::lit(1e-10) {
                return Err(Error::InvalidArgument("rank-deficient random rows".into()));
            }
            for c in 0..cols {
                m[(r, c)] /= norm;
            }
        }
    }
    Ok(())
}

fn fingerprint<T: Scalar>(parts: &[&Matrix<T>]) -> u64 {
    // FNV-1a over the f64 bit patterns and extents.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for m in parts {
        eat(m.rows() as u64);
        eat(m.cols() as u64);
        for &v in m.data() {
            eat(v.as_f64().to_bits());
        }
    }
    h
}

impl<T: Scalar> MeasurementOperator<T> {
    /// Builds an operator for `height×width` images at compression ratio `cr`.
    pub fn new(height: usize, width: usize, cr: f64, kind: OperatorKind, seed: u64) -> Result<Self> {
        let (h, w) = measurement_extents(height, width, cr)?;
        let (h_mat, w_mat) = match kind {
            OperatorKind::Hadamard => (hadamard_rows(height, h)?, hadamard_rows(width, w)?),
            OperatorKind::GaussianOrthonormal => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut hm = Matrix::randn(h, height, &mut rng);
                let mut wm = Matrix::randn(w, width, &mut rng);
                orthonormalize_rows(&mut hm)?;
                orthonormalize_rows(&mut wm)?;
                (hm, wm)
            }
        };
        Self::from_factors(h_mat, w_mat)
    }

    /// Wraps explicit factors; the compression ratio follows from their shapes.
    pub fn from_factors(h_mat: Matrix<T>, w_mat: Matrix<T>) -> Result<Self> {
        let (h, big_h) = h_mat.dims();
        let (w, big_w) = w_mat.dims();
        if h == 0 || w == 0 || h > big_h || w > big_w {
            return Err(Error::dim("operator", format!("factors {h}×{big_h}, {w}×{big_w}")));
        }
        let cr = (h * w) as f64 / (big_h * big_w) as f64;
        let id = fingerprint(&[&h_mat, &w_mat]);
        Ok(MeasurementOperator { h_mat, w_mat, cr, id })
    }

    pub fn h_mat(&self) -> &Matrix<T> {
        &self.h_mat
    }

    pub fn w_mat(&self) -> &Matrix<T> {
        &self.w_mat
    }

    pub fn cr(&self) -> f64 {
        self.cr
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// `(H, W)` image extents.
    pub fn image_dims(&self) -> (usize, usize) {
        (self.h_mat.cols(), self.w_mat.cols())
    }

    /// `(h, w)` measurement extents.
    pub fn measurement_dims(&self) -> (usize, usize) {
        (self.h_mat.rows(), self.w_mat.rows())
    }

    /// Largest deviation of `HHᵀ` and `WWᵀ` from identity.
    pub fn orthonormality_error(&self) -> T {
        let eh = self.h_mat.matmul_t(false, &self.h_mat, true).unwrap();
        let ew = self.w_mat.matmul_t(false, &self.w_mat, true).unwrap();
        eh.max_abs_diff(&Matrix::identity(eh.rows())).max(ew.max_abs_diff(&Matrix::identity(ew.rows())))
    }

    fn check_image(&self, x: &Image<T>) -> Result<()> {
        if x.dims() != self.image_dims() {
            return Err(Error::dim("sensing", format!("image {:?}, operator expects {:?}", x.dims(), self.image_dims())));
        }
        Ok(())
    }

    /// Noise-free `H X Wᵀ`.
    pub fn apply(&self, x: &Image<T>) -> Result<Matrix<T>> {
        self.check_image(x)?;
        self.h_mat.matmul(x)?.matmul_t(false, &self.w_mat, true)
    }

    /// `Y = H X Wᵀ + E`.
    pub fn forward(&self, x: &Image<T>, noise: &NoiseModel) -> Result<Measurement<T>> {
        let mut values = self.apply(x)?;
        if !noise.is_silent() {
            if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise sigma {}", noise.sigma)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            let dist = Normal::new(0.0, noise.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for v in values.data_mut() {
                *v += T::lit(dist.sample(&mut rng));
            }
        }
        Ok(Measurement { values, operator_id: self.id })
    }

    /// `Hᵀ Y W` for a raw measurement matrix.
    pub fn adjoint_values(&self, y: &Matrix<T>) -> Result<Image<T>> {
        if y.dims() != self.measurement_dims() {
            return Err(Error::dim("adjoint", format!("measurement {:?}, operator expects {:?}", y.dims(), self.measurement_dims())));
        }
        self.h_mat.matmul_t(true, y, false)?.matmul(&self.w_mat)
    }

    /// Back-projection `X⁰ = Hᵀ Y W`.
    pub fn adjoint(&self, y: &Measurement<T>) -> Result<Image<T>> {
        self.adjoint_values(&y.values)
    }

    /// Materializes `Φ = W ⊗ H` (`hw × HW`), acting on column-major `vec(X)`.
    pub fn explicit_phi(&self) -> Matrix<T> {
        self.w_mat.kron(&self.h_mat)
    }

    /// Serializes as container entries `H`, `W` and `cr`.
    pub fn to_entries(&self) -> Vec<(String, Entry)> {
        vec![
            ("H".into(), Entry::F64(self.h_mat.cast::<f64>().to_tensor())),
            ("W".into(), Entry::F64(self.w_mat.cast::<f64>().to_tensor())),
            ("cr".into(), Entry::F64(crate::Tensor::scalar(self.cr))),
        ]
    }

    pub fn from_entries(entries: &[(String, Entry)]) -> Result<Self> {
        let get = |name: &str| -> Result<Matrix<T>> {
            let t = find(entries, name)
                .and_then(Entry::to_f64)
                .ok_or_else(|| Error::Format(format!("missing operator entry `{name}`")))?;
            Ok(Matrix::<f64>::from_tensor(&t)?.cast())
        };
        Self::from_factors(get("H")?, get("W")?)
    }
}

/// One row of a storage/time comparison between matrix-form and explicit-Φ sampling.
#[derive(Clone, Debug, Serialize)]
pub struct ComplexityRow {
    pub size: usize,
    pub cr: f64,
    pub h: usize,
    pub w: usize,
    pub matrix_seconds: f64,
    pub explicit_seconds: f64,
    pub time_ratio: f64,
    /// Stored operator scalars: `hH + wW` versus `hw·HW`.
    pub matrix_storage: usize,
    pub explicit_storage: usize,
    pub storage_ratio: f64,
    /// Largest disagreement between the two sampling paths.
    pub max_abs_diff: f64,
}

/// Times `Y = H X Wᵀ` against `y = Φ vec(X)` on square images.
pub fn complexity_probe(sizes: &[usize], cr: f64, seed: u64) -> Result<Vec<ComplexityRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 || n > 256 {
            return Err(Error::InvalidArgument(format!("probe size {n} outside 1..=256")));
        }
        let op = MeasurementOperator::<f64>::new(n, n, cr, OperatorKind::GaussianOrthonormal, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
        let x = Matrix::<f64>::uniform(n, n, 0.0, 1.0, &mut rng);
        let phi = op.explicit_phi();
        let vx = x.vec_col_major();

        let y_mat = op.apply(&x)?;
        let y_vec = phi.apply(&vx)?;
        let y_mat_vec = y_mat.vec_col_major();
        let max_abs_diff = y_mat_vec.iter().zip(&y_vec).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

        let matrix_seconds = time_per_call(|| {
            std::hint::black_box(op.apply(std::hint::black_box(&x)).unwrap());
        });
        let explicit_seconds = time_per_call(|| {
            std::hint::black_box(phi.apply(std::hint::black_box(&vx)).unwrap());
        });
        let (h, w) = op.measurement_dims();
        let matrix_storage = h * n + w * n;
        let explicit_storage = phi.rows() * phi.cols();
        rows.push(ComplexityRow {
            size: n,
            cr,
            h,
            w,
            matrix_seconds,
            explicit_seconds,
            time_ratio: explicit_seconds / matrix_seconds,
            matrix_storage,
            explicit_storage,
            storage_ratio: explicit_storage as f64 / matrix_storage as f64,
            max_abs_diff,
        });
    }
    Ok(rows)
}

/// Best-of-five mean time per call, each batch running at least ~5 ms.
fn time_per_call(mut f: impl FnMut()) -> f64 {
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        if t.elapsed().as_secs_f64() > 5e-3 || reps >= 1 << 20 {
            break;
        }
        reps *= 2;
    }
    (0..5)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_secs_f64() / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_rule() {
        assert_eq!(measurement_extents(16, 16, 0.25).unwrap(), (8, 8));
        assert_eq!(measurement_extents(8, 8, 1.0).unwrap(), (8, 8));
        assert_eq!(measurement_extents(1, 1, 0.3).unwrap(), (1, 1));
        // √0.01·32 = 3.2 → h = 3; 3w/1024 closest to 0.01 at w = 3.
        assert_eq!(measurement_extents(32, 32, 0.01).unwrap(), (3, 3));
        assert!(measurement_extents(8, 8, 0.0).is_err());
        assert!(measurement_extents(8, 8, 1.5).is_err());
    }

    #[test]
    fn sequency_order_counts_sign_changes() {
        let m = hadamard_rows::<f64>(16, 16).unwrap();
        for r in 0..16 {
            let changes = m.row(r).windows(2).filter(|p| p[0].signum() != p[1].signum()).count();
            assert_eq!(changes, r, "row {r}");
        }
    }

    #[test]
    fn hadamard_requires_power_of_two() {
        assert!(MeasurementOperator::<f64>::new(12, 8, 0.5, OperatorKind::Hadamard, 0).is_err());
    }

    #[test]
    fn hadamard_rows_orthonormal() {
        // H=8, h=4 needs cr with round(√cr·8) = 4.
        let op = MeasurementOperator::<f64>::new(8, 8, 0.25, OperatorKind::Hadamard, 0).unwrap();
        assert_eq!(op.measurement_dims(), (4, 4));
        let hh = op.h_mat().matmul_t(false, op.h_mat(), true).unwrap();
        assert!(hh.max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    #[test]
    fn noise_is_reproducible_and_zero_sigma_is_silent() {
        let op = MeasurementOperator::<f64>::new(8, 8, 0.5, OperatorKind::GaussianOrthonormal, 3).unwrap();
        let x = Matrix::filled(8, 8, 0.5);
        let a = op.forward(&x, &NoiseModel::gaussian(0.1, 9)).unwrap();
        let b = op.forward(&x, &NoiseModel::gaussian(0.1, 9)).unwrap();
        assert!(a.values.data().iter().zip(b.values.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        let clean = op.forward(&x, &NoiseModel::none()).unwrap();
        let zero = op.forward(&x, &NoiseModel::gaussian(0.0, 9)).unwrap();
        assert_eq!(clean, zero);
        assert_ne!(clean, a);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let op = MeasurementOperator::<f64>::new(8, 8, 0.5, OperatorKind::GaussianOrthonormal, 3).unwrap();
        assert!(op.forward(&Matrix::zeros(8, 7), &NoiseModel::none()).is_err());
        assert!(op.adjoint_values(&Matrix::zeros(8, 8)).is_err());
    }

    #[test]
    fn entries_roundtrip() {
        let op = MeasurementOperator::<f64>::new(8, 16, 0.3, OperatorKind::GaussianOrthonormal, 1).unwrap();
        let back = MeasurementOperator::<f64>::from_entries(&op.to_entries()).unwrap();
        assert_eq!(back, op);
    }
}
