//! Grayscale image files: binary PGM (P5) and PNG. Pixel values map to
//! `[0, 1]`; colour inputs are reduced to BT.601 luminance.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::Image;

/// BT.601 luma weights for R, G, B.
pub const BT601: [f64; 3] = [0.299, 0.587, 0.114];

pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    BT601[0] * r + BT601[1] * g + BT601[2] * b
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Reads a `.pgm` or `.png` file (by extension).
pub fn read_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    match extension(path).as_str() {
        "pgm" => decode_pgm(&fs::read(path)?),
        "png" => read_png(path),
        other => Err(Error::Image(format!("{}: unsupported extension `{other}`", path.display()))),
    }
}

/// Writes a 16-bit `.pgm` or `.png` file (by extension); values are clamped to `[0, 1]`.
pub fn write_image<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    match extension(path).as_str() {
        "pgm" => Ok(fs::write(path, encode_pgm(img, 65535)?)?),
        "png" => write_png(path, img),
        other => Err(Error::Image(format!("{}: unsupported extension `{other}`", path.display()))),
    }
}

fn quantize<T: Scalar>(v: T, maxval: u16) -> u16 {
    (v.as_f64().clamp(0.0, 1.0) * maxval as f64).round() as u16
}

/// P5 bytes with the given maxval (`≤ 255` gives one byte per sample).
pub fn encode_pgm<T: Scalar>(img: &Image<T>, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::Image("PGM maxval must be positive".into()));
    }
    let (h, w) = img.dims();
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &v in img.data() {
        let q = quantize(v, maxval);
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Image<T>> {
    let bad = |m: &str| Error::Image(format!("PGM: {m}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary graymap (P5)"));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| bad(&format!("bad header field `{s}`")));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad(&format!("invalid header {w}×{h}, maxval {maxval}")));
    }
    let data = &bytes[pos + 1.min(bytes.len() - pos)..];
    let bps = if maxval < 256 { 1 } else { 2 };
    if data.len() != w * h * bps {
        return Err(bad(&format!("expected {} payload bytes, found {}", w * h * bps, data.len())));
    }
    let scale = 1.0 / maxval as f64;
    let vals = (0..w * h)
        .map(|i| {
            let raw = if bps == 1 { data[i] as f64 } else { u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64 };
            T::lit(raw * scale)
        })
        .collect();
    Image::new(h, w, vals)
}

fn read_png<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let vals: Vec<T> = if img.color().has_color() {
        img.to_rgb32f().pixels().map(|p| T::lit(luminance(p[0] as f64, p[1] as f64, p[2] as f64))).collect()
    } else {
        img.to_luma16().pixels().map(|p| T::lit(p[0] as f64 / 65535.0)).collect()
    };
    Image::new(h, w, vals)
}

fn write_png<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    let (h, w) = img.dims();
    let buf: Vec<u16> = img.data().iter().map(|&v| quantize(v, 65535)).collect();
    let out = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::Image("PNG buffer size mismatch".into()))?;
    out.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}
