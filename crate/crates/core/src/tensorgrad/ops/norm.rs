//! Softmax and normalizations along an arbitrary axis.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::graph::{Graph, Var};
use crate::tensorgrad::tensor::{axis_split, Tensor};

/// Visits every 1-D fibre along the split axis as a list of flat offsets.
fn fibres(outer: usize, n: usize, inner: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0; n];
    for o in 0..outer {
        for j in 0..inner {
            for (i, slot) in idx.iter_mut().enumerate() {
                *slot = (o * n + i) * inner + j;
            }
            f(&idx);
        }
    }
}

impl<T: Scalar> Graph<T> {
    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::dim(op, format!("axis {axis} out of range for {shape:?}")));
        }
        Ok(axis_split(shape, axis))
    }

    /// Softmax along `axis`, stabilized by subtracting the fibre maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("softmax", x, axis)?;
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape().to_vec());
        {
            let (src, dst) = (xv.data(), out.data_mut());
            if inner == 1 {
                for (s, d) in src.chunks(n).zip(dst.chunks_mut(n)) {
                    softmax_row(s, d);
                }
            } else {
                let mut row = vec![T::zero(); n];
                let mut res = vec![T::zero(); n];
                fibres(outer, n, inner, |idx| {
                    idx.iter().zip(row.iter_mut()).for_each(|(&i, r)| *r = src[i]);
                    softmax_row(&row, &mut res);
                    idx.iter().zip(&res).for_each(|(&i, &r)| dst[i] = r);
                });
            }
        }
        Ok(self.push(out, &[x], move |args| {
            let (y, g) = (args.output.data(), args.grad.data());
            let mut d = Tensor::zeros(args.output.shape().to_vec());
            let dd = d.data_mut();
            // dx = y ⊙ (g − Σ g⊙y)
            if inner == 1 {
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dd.chunks_mut(n)) {
                    let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yy), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yy * (gg - s);
                    }
                }
            } else {
                fibres(outer, n, inner, |idx| {
                    let s: T = idx.iter().map(|&i| y[i] * g[i]).sum();
                    for &i in idx {
                        dd[i] = y[i] * (g[i] - s);
                    }
                });
            }
            vec![Some(d)]
        }))
    }

    /// Normalizes each fibre along `axis` to zero mean / unit variance, then
    /// applies `gain` and `bias` (both of the axis extent).
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, axis: usize, eps: T) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("layernorm", x, axis)?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::dim(
                "layernorm",
                format!("gain {:?} / bias {:?} for axis extent {n}", self.shape(gain), self.shape(bias)),
            ));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(outer * inner);
        let nn = T::lit(n as f64);
        fibres(outer, n, inner, |idx| {
            let mean = idx.iter().map(|&i| xv[i]).sum::<T>() / nn;
            let var = idx.iter().map(|&i| (xv[i] - mean) * (xv[i] - mean)).sum::<T>() / nn;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            for &i in idx {
                xhat[i] = (xv[i] - mean) * r;
            }
        });
        let mut out = Tensor::zeros(self.shape(x).to_vec());
        {
            let od = out.data_mut();
            fibres(outer, n, inner, |idx| {
                for (k, &i) in idx.iter().enumerate() {
                    od[i] = xhat[i] * gv[k] + bv[k];
                }
            });
        }
        Ok(self.push(out, &[x, gain, bias], move |args| {
            let (g, gv) = (args.grad.data(), args.inputs[1].data());
            let mut dx = vec![T::zero(); g.len()];
            let mut dgain = vec![T::zero(); n];
            let mut dbias = vec![T::zero(); n];
            let mut f = 0;
            fibres(outer, n, inner, |idx| {
                let r = inv_std[f];
                f += 1;
                // dxhat = g·gain; dx = r/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                let mut s1 = T::zero();
                let mut s2 = T::zero();
                for (k, &i) in idx.iter().enumerate() {
                    let dxh = g[i] * gv[k];
                    s1 += dxh;
                    s2 += dxh * xhat[i];
                    dgain[k] += g[i] * xhat[i];
                    dbias[k] += g[i];
                }
                for (k, &i) in idx.iter().enumerate() {
                    let dxh = g[i] * gv[k];
                    dx[i] = r / nn * (nn * dxh - s1 - xhat[i] * s2);
                }
            });
            vec![
                args.needs[0].then(|| Tensor::new(args.inputs[0].shape().to_vec(), dx).unwrap()),
                args.needs[1].then(|| Tensor::new(vec![n], dgain).unwrap()),
                args.needs[2].then(|| Tensor::new(vec![n], dbias).unwrap()),
            ]
        }))
    }

    /// Scales each fibre along `axis` to unit L2 norm: `x / sqrt(Σx² + eps)`.
    /// All-zero fibres stay exactly zero.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: T) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("l2_normalize", x, axis)?;
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(self.shape(x).to_vec());
        let mut inv = Vec::with_capacity(outer * inner);
        {
            let od = out.data_mut();
            fibres(outer, n, inner, |idx| {
                let ss: T = idx.iter().map(|&i| xv[i] * xv[i]).sum();
                let r = T::one() / (ss + eps).sqrt();
                inv.push(r);
                for &i in idx {
                    od[i] = xv[i] * r;
                }
            });
        }
        Ok(self.push(out, &[x], move |args| {
            let (g, y) = (args.grad.data(), args.output.data());
            let mut dx = vec![T::zero(); g.len()];
            let mut f = 0;
            // dx = r·(g − y·Σ(g⊙y))
            fibres(outer, n, inner, |idx| {
                let r = inv[f];
                f += 1;
                let s: T = idx.iter().map(|&i| g[i] * y[i]).sum();
                for &i in idx {
                    dx[i] = r * (g[i] - y[i] * s);
                }
            });
            vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), dx).unwrap())]
        }))
    }
}

fn softmax_row<T: Scalar>(src: &[T], dst: &mut [T]) {
    let m = src.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = (v - m).exp();
        s += *d;
    }
    let inv = T::one() / s;
    dst.iter_mut().for_each(|d| *d *= inv);
}
