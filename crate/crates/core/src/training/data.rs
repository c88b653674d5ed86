use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio::read_image;
use crate::scalar::Scalar;
use crate::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    PiecewiseConstant,
    Gradient,
    Texture,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::PiecewiseConstant, SynthKind::Gradient, SynthKind::Texture];
}

fn paint_shapes<R: Rng>(img: &mut [f64], n: usize, count: usize, rng: &mut R) {
    for _ in 0..count {
        let level: f64 = rng.gen_range(0.0..1.0);
        let nf = n as f64;
        if rng.gen_bool(0.5) {
            let (r0, c0) = (rng.gen_range(0.0..nf * 0.8), rng.gen_range(0.0..nf * 0.8));
            let (hh, ww) = (rng.gen_range(nf * 0.15..nf * 0.6), rng.gen_range(nf * 0.15..nf * 0.6));
            for r in 0..n {
                for c in 0..n {
                    let (rf, cf) = (r as f64, c as f64);
                    if rf >= r0 && rf < r0 + hh && cf >= c0 && cf < c0 + ww {
                        img[r * n + c] = level;
                    }
                }
            }
        } else {
            let (cy, cx) = (rng.gen_range(0.0..nf), rng.gen_range(0.0..nf));
            let rad = rng.gen_range(nf * 0.1..nf * 0.35);
            for r in 0..n {
                for c in 0..n {
                    let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                    if dy * dy + dx * dx <= rad * rad {
                        img[r * n + c] = level;
                    }
                }
            }
        }
    }
}

/// One `extent×extent` synthetic image of the given kind, values in `[0, 1]`.
pub fn synth_image<T: Scalar, R: Rng>(kind: SynthKind, extent: usize, rng: &mut R) -> Image<T> {
    let n = extent;
    let nf = n as f64;
    let mut img = vec![0.0f64; n * n];
    match kind {
        SynthKind::PiecewiseConstant => {
            let bg = rng.gen_range(0.0..1.0);
            img.iter_mut().for_each(|v| *v = bg);
            let count = rng.gen_range(2..=5);
            paint_shapes(&mut img, n, count, rng);
        }
        SynthKind::Gradient => {
            let (a, b, c) = (rng.gen_range(0.2..0.8), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            for r in 0..n {
                for col in 0..n {
                    img[r * n + col] = a + b * (r as f64 / nf - 0.5) + c * (col as f64 / nf - 0.5);
                }
            }
            paint_shapes(&mut img, n, 1, rng);
        }
        SynthKind::Texture => {
            let comps = rng.gen_range(3..=6);
            let max_f = (n / 4).max(1) as f64;
            let waves: Vec<(f64, f64, f64, f64)> = (0..comps)
                .map(|_| {
                    (
                        rng.gen_range(-max_f..=max_f),
                        rng.gen_range(-max_f..=max_f),
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.05..0.25),
                    )
                })
                .collect();
            let base = rng.gen_range(0.3..0.7);
            for r in 0..n {
                for c in 0..n {
                    let s: f64 = waves
                        .iter()
                        .map(|&(fy, fx, ph, amp)| amp * (2.0 * PI * (fy * r as f64 + fx * c as f64) / nf + ph).cos())
                        .sum();
                    img[r * n + c] = base + s;
                }
            }
        }
    }
    Image::from_fn(n, n, |r, c| T::lit(img[r * n + c].clamp(0.0, 1.0)))
}

/// Deterministic corpus cycling through the three kinds. Image `i` depends
/// only on `(seed, i)`.
pub fn synth_dataset<T: Scalar>(n: usize, extent: usize, seed: u64) -> Vec<Image<T>> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synth_image(SynthKind::ALL[i % 3], extent, &mut rng)
        })
        .collect()
}

/// Loads every `.pgm`/`.png` in `dir` (sorted by name), centre-cropped to
/// `extent×extent`. Files smaller than `extent` are rejected.
pub fn ingest_corpus<T: Scalar>(dir: &Path, extent: usize) -> Result<Vec<Image<T>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
            ext == "pgm" || ext == "png"
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Image(format!("{}: no .pgm or .png files", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let img: Image<T> = read_image(p)?;
            let (h, w) = img.dims();
            if h < extent || w < extent {
                return Err(Error::Image(format!("{}: {h}×{w} is smaller than {extent}×{extent}", p.display())));
            }
            let (top, left) = ((h - extent) / 2, (w - extent) / 2);
            Ok(Image::from_fn(extent, extent, |r, c| img[(top + r, left + c)]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::total_variation;

    #[test]
    fn dataset_is_deterministic_and_in_range() {
        let a = synth_dataset::<f64>(9, 16, 5);
        let b = synth_dataset::<f64>(9, 16, 5);
        assert_eq!(a, b);
        assert!(a.iter().all(|im| im.data().iter().all(|&v| (0.0..=1.0).contains(&v))));
        assert_ne!(a, synth_dataset::<f64>(9, 16, 6));
    }

    #[test]
    fn piecewise_constant_has_less_tv_than_texture() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean_tv = |kind, rng: &mut ChaCha8Rng| {
            (0..30).map(|_| total_variation(&synth_image::<f64, _>(kind, 32, rng))).sum::<f64>() / 30.0
        };
        let pc = mean_tv(SynthKind::PiecewiseConstant, &mut rng);
        let tex = mean_tv(SynthKind::Texture, &mut rng);
        assert!(pc < tex, "piecewise {pc} vs texture {tex}");
    }
}
