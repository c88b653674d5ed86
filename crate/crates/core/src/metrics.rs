//! Image-quality measures: PSNR, SSIM, total variation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::Image;

/// Reported for identical images instead of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;

/// PSNR in dB for peak value 1, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(estimate: &Image<T>, reference: &Image<T>) -> Result<f64> {
    if estimate.dims() != reference.dims() {
        return Err(Error::dim("psnr", format!("{:?} vs {:?}", estimate.dims(), reference.dims())));
    }
    let n = estimate.data().len() as f64;
    let mse: f64 = estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a row-major plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xx in 0..ow {
            tmp[y * ow + xx] = (0..n).map(|t| k[t] * x[y * w + xx + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = (0..n).map(|t| k[t] * tmp[(y + t) * ow + xx]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, dynamic range 1. Images smaller than the window
/// use the largest odd window that fits.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dim("ssim", format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let (h, w) = a.dims();
    let mut size = SSIM_WIN.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let win = gaussian_window(size, SSIM_SIGMA);
    let av: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let bv: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let (mu_a, ..) = filter_valid(&av, h, w, &win);
    let (mu_b, ..) = filter_valid(&bv, h, w, &win);
    let (e_aa, ..) = filter_valid(&prod(&av, &av), h, w, &win);
    let (e_bb, ..) = filter_valid(&prod(&bv, &bv), h, w, &win);
    let (e_ab, ..) = filter_valid(&prod(&av, &bv), h, w, &win);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len() as f64;
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n)
}

/// Isotropic total variation with forward differences and Neumann boundary.
pub fn total_variation<T: Scalar>(x: &Image<T>) -> f64 {
    let (h, w) = x.dims();
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = x[(r, c)].as_f64();
            let dx = if c + 1 < w { x[(r, c + 1)].as_f64() - v } else { 0.0 };
            let dy = if r + 1 < h { x[(r + 1, c)].as_f64() - v } else { 0.0 };
            tv += (dx * dx + dy * dy).sqrt();
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_cap_and_value() {
        let a = Matrix::<f64>::filled(4, 4, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = Matrix::<f64>::filled(4, 4, 0.6);
        // mse = 0.01 → 20 dB
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_symmetry_and_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Matrix::<f64>::uniform(24, 24, 0.0, 1.0, &mut rng);
        let b = Matrix::<f64>::uniform(24, 24, 0.0, 1.0, &mut rng);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let bin = Matrix::<f64>::from_fn(24, 24, |r, c| if (r / 3 + c / 5) % 2 == 0 { 1.0 } else { 0.0 });
        let inv = bin.map(|v| 1.0 - v);
        assert!(ssim(&bin, &inv).unwrap() <= 0.0);
    }

    #[test]
    fn ssim_small_images() {
        let a = Matrix::<f64>::filled(4, 6, 0.2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &Matrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn tv_of_step() {
        let x = Matrix::<f64>::from_fn(4, 4, |_, c| if c < 2 { 0.0 } else { 1.0 });
        assert!((total_variation(&x) - 4.0).abs() < 1e-12);
        assert_eq!(total_variation(&Matrix::<f64>::filled(5, 5, 0.3)), 0.0);
    }
}
