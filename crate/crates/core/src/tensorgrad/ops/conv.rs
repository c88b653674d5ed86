//! Convolutions (cross-correlation semantics) and the per-pixel dynamic
//! depth-wise convolution used by the adaptive-kernel branch.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensorgrad::graph::{Graph, Var};
use crate::tensorgrad::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    #[allow(clippy::too_many_arguments)]
    fn new(op: &'static str, c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::dim(op, "stride must be positive"));
        }
        let (eh, ew) = (h + 2 * pad, w + 2 * pad);
        if eh < kh || ew < kw {
            return Err(Error::dim(op, format!("kernel {kh}×{kw} larger than padded input {eh}×{ew}")));
        }
        let oh = (eh - kh) / stride + 1;
        let ow = (ew - kw) / stride + 1;
        Ok(Geom { c, h, w, kh, kw, stride, pad, oh, ow })
    }

    /// Input offset for kernel tap `(ky, kx)` at output `(oy, ox)`, if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some(y as usize * self.w + x as usize)
        }
    }
}

/// `C×H×W` → `(C·kh·kw)×(oh·ow)`.
fn im2col<T: Scalar>(x: &[T], g: &Geom) -> Vec<T> {
    let n = g.oh * g.ow;
    let mut cols = vec![T::zero(); g.c * g.kh * g.kw * n];
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        if let Some(s) = g.src(oy, ox, ky, kx) {
                            cols[row + oy * g.ow + ox] = plane[s];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `C×H×W`.
fn col2im<T: Scalar>(cols: &[T], g: &Geom) -> Vec<T> {
    let n = g.oh * g.ow;
    let mut x = vec![T::zero(); g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        if let Some(s) = g.src(oy, ox, ky, kx) {
                            plane[s] += cols[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn shape3(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    if s.len() != 3 {
        return Err(Error::dim(op, format!("C×H×W input required, got {s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

/// Depth-wise 3×3-style cross-correlation with per-pixel kernels, shared by
/// `dwconv2d` (kernel constant over pixels) and `adaconv`.
///
/// `kernel(c, pix, tap)` gives the weight; returns `C×H×W`.
fn depthwise_apply<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kernel: impl Fn(usize, usize, usize) -> T,
) -> Vec<T> {
    let r = (k / 2) as isize;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let o = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let pix = y * w + xx;
                let mut acc = T::zero();
                for ky in 0..k {
                    let sy = y as isize + ky as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = xx as isize + kx as isize - r;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        acc += kernel(ch, pix, ky * k + kx) * plane[sy as usize * w + sx as usize];
                    }
                }
                o[pix] = acc;
            }
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation of `x: C_in×H×W` with `w: C_out×C_in×kh×kw`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c, h, wd) = shape3("conv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != c {
            return Err(Error::dim("conv2d", format!("kernel {ws:?} for input channels {c}")));
        }
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let g = Geom::new("conv2d", c, h, wd, kh, kw, stride, padding)?;
        let n = g.oh * g.ow;
        let kdim = c * kh * kw;
        let mut out = Tensor::zeros(vec![cout, g.oh, g.ow]);
        let one_by_one = kh == 1 && kw == 1 && stride == 1 && padding == 0;
        if one_by_one {
            gemm(self.value(w).data(), false, self.value(x).data(), false, cout, kdim, n, out.data_mut(), false);
        } else {
            let cols = im2col(self.value(x).data(), &g);
            gemm(self.value(w).data(), false, &cols, false, cout, kdim, n, out.data_mut(), false);
        }
        Ok(self.push(out, &[x, w], move |args| {
            let (xv, wv, gr) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let cols_owned;
            let cols: &[T] = if one_by_one {
                xv
            } else if args.needs[1] {
                cols_owned = im2col(xv, &g);
                &cols_owned
            } else {
                &[]
            };
            let dx = args.needs[0].then(|| {
                let mut dcols = vec![T::zero(); kdim * n];
                gemm(wv, true, gr, false, kdim, cout, n, &mut dcols, false);
                let data = if one_by_one { dcols } else { col2im(&dcols, &g) };
                Tensor::new(args.inputs[0].shape().to_vec(), data).unwrap()
            });
            let dw = args.needs[1].then(|| {
                let mut d = Tensor::zeros(args.inputs[1].shape().to_vec());
                gemm(gr, false, cols, true, cout, n, kdim, d.data_mut(), false);
                d
            });
            vec![dx, dw]
        }))
    }

    /// Transposed convolution (adjoint of a strided `conv2d` with the same
    /// kernel array): `x: C_in×H×W`, `w: C_in×C_out×kh×kw`, no padding.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (cin, h, wd) = shape3("conv_transpose2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != cin {
            return Err(Error::dim("conv_transpose2d", format!("kernel {ws:?} for input channels {cin}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv_transpose2d", "stride must be positive"));
        }
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        let (oh, ow) = ((h - 1) * stride + kh, (wd - 1) * stride + kw);
        // Geometry of the forward conv this op is the adjoint of.
        let g = Geom::new("conv_transpose2d", cout, oh, ow, kh, kw, stride, 0)?;
        debug_assert_eq!((g.oh, g.ow), (h, wd));
        let n = h * wd;
        let kdim = cout * kh * kw;
        let mut cols = vec![T::zero(); kdim * n];
        gemm(self.value(w).data(), true, self.value(x).data(), false, kdim, cin, n, &mut cols, false);
        let out = Tensor::new(vec![cout, oh, ow], col2im(&cols, &g))?;
        Ok(self.push(out, &[x, w], move |args| {
            let (xv, wv) = (args.inputs[0].data(), args.inputs[1].data());
            let gcols = im2col(args.grad.data(), &g);
            let dx = args.needs[0].then(|| {
                let mut d = Tensor::zeros(args.inputs[0].shape().to_vec());
                gemm(wv, false, &gcols, false, cin, kdim, n, d.data_mut(), false);
                d
            });
            let dw = args.needs[1].then(|| {
                let mut d = Tensor::zeros(args.inputs[1].shape().to_vec());
                gemm(xv, false, &gcols, true, cin, n, kdim, d.data_mut(), false);
                d
            });
            vec![dx, dw]
        }))
    }

    /// Depth-wise cross-correlation, stride 1, "same" zero padding:
    /// `x: C×H×W`, `w: C×k×k` with `k` odd.
    pub fn dwconv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, h, wd) = shape3("dwconv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[0] != c || ws[1] != ws[2] || ws[1].is_multiple_of(2) {
            return Err(Error::dim("dwconv2d", format!("kernel {ws:?} for {c} channels (odd square kernel required)")));
        }
        let k = ws[1];
        let kk = k * k;
        let out = {
            let wv = self.value(w).data();
            depthwise_apply(self.value(x).data(), c, h, wd, k, |ch, _, t| wv[ch * kk + t])
        };
        let out = Tensor::new(vec![c, h, wd], out)?;
        Ok(self.push(out, &[x, w], move |args| {
            let (xv, wv, gr) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            // Adjoint w.r.t. x: correlate the gradient with the flipped kernel.
            let dx = args.needs[0].then(|| {
                let d = depthwise_apply(gr, c, h, wd, k, |ch, _, t| wv[ch * kk + (kk - 1 - t)]);
                Tensor::new(vec![c, h, wd], d).unwrap()
            });
            let dw = args.needs[1].then(|| {
                let r = (k / 2) as isize;
                let mut d = vec![T::zero(); c * kk];
                for ch in 0..c {
                    let (plane, gp) = (&xv[ch * h * wd..(ch + 1) * h * wd], &gr[ch * h * wd..(ch + 1) * h * wd]);
                    for ky in 0..k {
                        for kx in 0..k {
                            let (dy, dxo) = (ky as isize - r, kx as isize - r);
                            let mut acc = T::zero();
                            for y in 0..h {
                                let sy = y as isize + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for xx in 0..wd {
                                    let sx = xx as isize + dxo;
                                    if sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    acc += gp[y * wd + xx] * plane[sy as usize * wd + sx as usize];
                                }
                            }
                            d[ch * kk + ky * k + kx] = acc;
                        }
                    }
                }
                Tensor::new(vec![c, k, k], d).unwrap()
            });
            vec![dx, dw]
        }))
    }

    /// Per-pixel dynamic depth-wise 3×3 convolution.
    ///
    /// `x: C×H×W`, `coeff: n×H×W` mixing weights, `bank: n×C×9` kernels.
    /// `out[c,p] = Σ_t (Σ_j coeff[j,p]·bank[j,c,t]) · x[c, p+offset(t)]`.
    pub fn adaconv(&mut self, x: Var, coeff: Var, bank: Var) -> Result<Var> {
        let (c, h, w) = shape3("adaconv", self.shape(x))?;
        let cs = self.shape(coeff).to_vec();
        let bs = self.shape(bank).to_vec();
        if cs.len() != 3 || cs[1] != h || cs[2] != w {
            return Err(Error::dim("adaconv", format!("coefficients {cs:?} for input {h}×{w}")));
        }
        let n = cs[0];
        if bs != [n, c, 9] {
            return Err(Error::dim("adaconv", format!("bank {bs:?}, expected [{n}, {c}, 9]")));
        }
        let hw = h * w;
        let kernels = pixel_kernels(self.value(coeff).data(), self.value(bank).data(), n, c, hw);
        let out = depthwise_apply(self.value(x).data(), c, h, w, 3, |ch, pix, t| kernels[(pix * c + ch) * 9 + t]);
        let out = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(out, &[x, coeff, bank], move |args| {
            let (xv, cv, bv, gr) =
                (args.inputs[0].data(), args.inputs[1].data(), args.inputs[2].data(), args.grad.data());
            let kernels = pixel_kernels(cv, bv, n, c, hw);
            // dK[p,c,t] = g[c,p] · x[c, p+off(t)]
            let mut dk = vec![T::zero(); hw * c * 9];
            let mut dx = args.needs[0].then(|| vec![T::zero(); c * hw]);
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let pix = y * w + xx;
                        let g = gr[ch * hw + pix];
                        if g == T::zero() {
                            continue;
                        }
                        for t in 0..9 {
                            let sy = y as isize + (t / 3) as isize - 1;
                            let sx = xx as isize + (t % 3) as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let src = ch * hw + sy as usize * w + sx as usize;
                            dk[(pix * c + ch) * 9 + t] = g * xv[src];
                            if let Some(dx) = dx.as_mut() {
                                dx[src] += g * kernels[(pix * c + ch) * 9 + t];
                            }
                        }
                    }
                }
            }
            // K = coeffᵀ·bank with coeff viewed n×HW, bank n×(C·9).
            let dcoeff = args.needs[1].then(|| {
                let mut d = Tensor::zeros(vec![n, h, w]);
                gemm(bv, false, &dk, true, n, c * 9, hw, d.data_mut(), false);
                d
            });
            let dbank = args.needs[2].then(|| {
                let mut d = Tensor::zeros(vec![n, c, 9]);
                gemm(cv, false, &dk, false, n, hw, c * 9, d.data_mut(), false);
                d
            });
            vec![dx.map(|d| Tensor::new(vec![c, h, w], d).unwrap()), dcoeff, dbank]
        }))
    }
}

/// Per-pixel kernels `HW×C×9` = `coeffᵀ (HW×n) · bank (n×C·9)`.
fn pixel_kernels<T: Scalar>(coeff: &[T], bank: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut k = vec![T::zero(); hw * c * 9];
    gemm(coeff, true, bank, false, hw, n, c * 9, &mut k, false);
    k
}
