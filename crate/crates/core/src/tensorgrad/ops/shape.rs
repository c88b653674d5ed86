//! Layout operations: reshapes, permutations, slicing, padding and the
//! per-channel / tiled broadcasts the network needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::graph::{Graph, Var};
use crate::tensorgrad::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (shape `shape`) into the axis order `perm`.
fn permute_data<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Reflect index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - r;
    }
    r as usize
}

/// Window layout helper: maps `(window, pos, channel)` to the source offset in `C×H×W`
/// after a cyclic roll by `-shift` in both spatial axes.
fn window_index(h: usize, w: usize, p: usize, shift: usize) -> Vec<usize> {
    let nwx = w / p;
    let nw = (h / p) * nwx;
    let mut map = Vec::with_capacity(nw * p * p);
    for win in 0..nw {
        let (wy, wx) = (win / nwx, win % nwx);
        for pos in 0..p * p {
            let (py, px) = (pos / p, pos % p);
            let y = (wy * p + py + shift) % h;
            let x = (wx * p + px + shift) % w;
            map.push(y * w + x);
        }
    }
    map
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, &[x], |args| {
            vec![Some(args.grad.clone().reshape(args.inputs[0].shape().to_vec()).unwrap())]
        }))
    }

    /// Reorders axes; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", format!("{perm:?} is not a permutation of rank {}", shape.len())));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = Tensor::new(out_shape.clone(), permute_data(self.value(x).data(), &shape, perm))?;
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        Ok(self.push(out, &[x], move |args| {
            let data = permute_data(args.grad.data(), &out_shape, &inv);
            vec![Some(Tensor::new(shape.clone(), data).unwrap())]
        }))
    }

    /// Rank-2 transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::dim("transpose", format!("rank-2 required, got {:?}", self.shape(x))));
        }
        self.permute(x, &[1, 0])
    }

    /// Slice `[start, start+len)` of the leading axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] || len == 0 {
            return Err(Error::dim("narrow", format!("[{start}, {}) out of {shape:?}", start + len)));
        }
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, &[x], move |args| {
            let mut d = Tensor::zeros(shape.clone());
            d.data_mut()[start * inner..(start + len) * inner].copy_from_slice(args.grad.data());
            vec![Some(d)]
        }))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat", "no inputs"));
        }
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        for &p in parts {
            if self.shape(p)[1..] != tail[..] {
                return Err(Error::dim("concat", format!("{:?} vs trailing {tail:?}", self.shape(p))));
            }
            lead += self.shape(p)[0];
        }
        let mut data = Vec::new();
        let lens: Vec<usize> = parts.iter().map(|&p| self.value(p).len()).collect();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, parts, move |args| {
            let mut off = 0;
            lens.iter()
                .enumerate()
                .map(|(i, &n)| {
                    let g = args.needs[i].then(|| {
                        Tensor::new(args.inputs[i].shape().to_vec(), args.grad.data()[off..off + n].to_vec()).unwrap()
                    });
                    off += n;
                    g
                })
                .collect()
        }))
    }

    /// Adds `b[c]` to every element of channel `c` of `x` (`C×…`).
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if self.shape(b) != [shape[0]] {
            return Err(Error::dim("add_channel", format!("bias {:?} for input {shape:?}", self.shape(b))));
        }
        let inner = self.value(x).len() / shape[0];
        let mut out = self.value(x).clone();
        let bv = self.value(b).data().to_vec();
        for (c, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            chunk.iter_mut().for_each(|v| *v += bv[c]);
        }
        Ok(self.push(out, &[x, b], move |args| {
            let db = args.needs[1].then(|| {
                let sums: Vec<T> = args.grad.data().chunks(inner).map(|c| c.iter().copied().sum()).collect();
                Tensor::new(vec![sums.len()], sums).unwrap()
            });
            vec![args.needs[0].then(|| args.grad.clone()), db]
        }))
    }

    /// Multiplies every element of leading slice `c` of `x` by `s[c]`.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if self.shape(s) != [shape[0]] {
            return Err(Error::dim("mul_channel", format!("scale {:?} for input {shape:?}", self.shape(s))));
        }
        let inner = self.value(x).len() / shape[0];
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        for (c, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= sv[c]);
        }
        Ok(self.push(out, &[x, s], move |args| {
            let sv = args.inputs[1].data();
            let dx = args.needs[0].then(|| {
                let mut d = args.grad.clone();
                for (c, chunk) in d.data_mut().chunks_mut(inner).enumerate() {
                    chunk.iter_mut().for_each(|v| *v *= sv[c]);
                }
                d
            });
            let ds = args.needs[1].then(|| {
                let sums: Vec<T> = args
                    .grad
                    .data()
                    .chunks(inner)
                    .zip(args.inputs[0].data().chunks(inner))
                    .map(|(g, x)| g.iter().zip(x).map(|(&a, &b)| a * b).sum())
                    .collect();
                Tensor::new(vec![sums.len()], sums).unwrap()
            });
            vec![dx, ds]
        }))
    }

    /// Adds `b` tiled along the leading axis: `x` is `R·|b|` elements laid out
    /// as `R` consecutive copies of `b`'s shape.
    pub fn add_repeat(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = (self.value(x).len(), self.value(b).len());
        if m == 0 || n % m != 0 {
            return Err(Error::dim("add_repeat", format!("{:?} is not a tiling of {:?}", self.shape(x), self.shape(b))));
        }
        let mut out = self.value(x).clone();
        let bv = self.value(b).data().to_vec();
        for chunk in out.data_mut().chunks_mut(m) {
            chunk.iter_mut().zip(&bv).for_each(|(v, &b)| *v += b);
        }
        Ok(self.push(out, &[x, b], move |args| {
            let db = args.needs[1].then(|| {
                let mut d = Tensor::zeros(args.inputs[1].shape().to_vec());
                for chunk in args.grad.data().chunks(m) {
                    d.data_mut().iter_mut().zip(chunk).for_each(|(a, &g)| *a += g);
                }
                d
            });
            vec![args.needs[0].then(|| args.grad.clone()), db]
        }))
    }

    /// Reflect-pads the two trailing (spatial) axes of a `C×H×W` tensor.
    pub fn pad_reflect(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::dim("pad_reflect", format!("C×H×W required, got {shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if (top >= h || bottom >= h || left >= w || right >= w) && (h > 1 || w > 1) {
            return Err(Error::dim("pad_reflect", format!("padding exceeds extent of {shape:?}")));
        }
        let (oh, ow) = (h + top + bottom, w + left + right);
        let mut src = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            let sy = reflect(y as isize - top as isize, h);
            for xx in 0..ow {
                src.push(sy * w + reflect(xx as isize - left as isize, w));
            }
        }
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(vec![c, oh, ow]);
        for ch in 0..c {
            let (s, o) = (&xv[ch * h * w..(ch + 1) * h * w], &mut out.data_mut()[ch * oh * ow..(ch + 1) * oh * ow]);
            for (ov, &si) in o.iter_mut().zip(&src) {
                *ov = s[si];
            }
        }
        Ok(self.push(out, &[x], move |args| {
            let mut d = Tensor::zeros(vec![c, h, w]);
            let g = args.grad.data();
            for ch in 0..c {
                let dd = &mut d.data_mut()[ch * h * w..(ch + 1) * h * w];
                for (gi, &si) in g[ch * oh * ow..(ch + 1) * oh * ow].iter().zip(&src) {
                    dd[si] += *gi;
                }
            }
            vec![Some(d)]
        }))
    }

    /// Spatial crop of a `C×H×W` tensor to `[top, top+h) × [left, left+w)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || top + h > shape[1] || left + w > shape[2] || h == 0 || w == 0 {
            return Err(Error::dim("crop", format!("{h}×{w} at ({top},{left}) from {shape:?}")));
        }
        let (c, ih, iw) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let row = ch * ih * iw + (top + y) * iw + left;
                data.extend_from_slice(&xv[row..row + w]);
            }
        }
        let out = Tensor::new(vec![c, h, w], data)?;
        Ok(self.push(out, &[x], move |args| {
            let mut d = Tensor::zeros(vec![c, ih, iw]);
            let g = args.grad.data();
            for ch in 0..c {
                for y in 0..h {
                    let row = ch * ih * iw + (top + y) * iw + left;
                    let src = (ch * h + y) * w;
                    d.data_mut()[row..row + w].copy_from_slice(&g[src..src + w]);
                }
            }
            vec![Some(d)]
        }))
    }

    /// `C×H×W` → `nw×p²×C`, after rolling both spatial axes by `-shift`.
    pub fn window_partition(&mut self, x: Var, p: usize, shift: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || p == 0 || !shape[1].is_multiple_of(p) || !shape[2].is_multiple_of(p) {
            return Err(Error::dim("window_partition", format!("{shape:?} not divisible into {p}×{p} windows")));
        }
        if shift >= p {
            return Err(Error::dim("window_partition", format!("shift {shift} must be below window {p}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let map = window_index(h, w, p, shift);
        let nw = map.len() / (p * p);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(xv.len());
        for &src in &map {
            for ch in 0..c {
                data.push(xv[ch * h * w + src]);
            }
        }
        let out = Tensor::new(vec![nw, p * p, c], data)?;
        Ok(self.push(out, &[x], move |args| {
            let mut d = Tensor::zeros(vec![c, h, w]);
            let g = args.grad.data();
            for (i, &src) in map.iter().enumerate() {
                for ch in 0..c {
                    d.data_mut()[ch * h * w + src] = g[i * c + ch];
                }
            }
            vec![Some(d)]
        }))
    }

    /// Inverse of [`Graph::window_partition`].
    pub fn window_unpartition(&mut self, x: Var, h: usize, w: usize, p: usize, shift: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) || shift >= p {
            return Err(Error::dim("window_unpartition", format!("{h}×{w} with window {p}, shift {shift}")));
        }
        let nw = (h / p) * (w / p);
        if shape.len() != 3 || shape[0] != nw || shape[1] != p * p {
            return Err(Error::dim("window_unpartition", format!("{shape:?} for {h}×{w}, window {p}")));
        }
        let c = shape[2];
        let map = window_index(h, w, p, shift);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(vec![c, h, w]);
        for (i, &dst) in map.iter().enumerate() {
            for ch in 0..c {
                out.data_mut()[ch * h * w + dst] = xv[i * c + ch];
            }
        }
        Ok(self.push(out, &[x], move |args| {
            let g = args.grad.data();
            let mut data = Vec::with_capacity(g.len());
            for &dst in &map {
                for ch in 0..c {
                    data.push(g[ch * h * w + dst]);
                }
            }
            vec![Some(Tensor::new(vec![nw, p * p, c], data).unwrap())]
        }))
    }

    /// Expands a relative-position table `(2p−1)²×heads` into per-head
    /// `heads×p²×p²` attention biases.
    pub fn rel_pos_bias(&mut self, table: Var, p: usize) -> Result<Var> {
        let span = 2 * p - 1;
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || shape[0] != span * span {
            return Err(Error::dim("rel_pos_bias", format!("table {shape:?} for window {p}")));
        }
        let heads = shape[1];
        let n = p * p;
        let mut index = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let dy = (i / p) as isize - (j / p) as isize + p as isize - 1;
                let dx = (i % p) as isize - (j % p) as isize + p as isize - 1;
                index.push(dy as usize * span + dx as usize);
            }
        }
        let tv = self.value(table).data();
        let mut out = Tensor::zeros(vec![heads, n, n]);
        for hd in 0..heads {
            for (k, &r) in index.iter().enumerate() {
                out.data_mut()[hd * n * n + k] = tv[r * heads + hd];
            }
        }
        Ok(self.push(out, &[table], move |args| {
            let mut d = Tensor::zeros(vec![span * span, heads]);
            let g = args.grad.data();
            for hd in 0..heads {
                for (k, &r) in index.iter().enumerate() {
                    d.data_mut()[r * heads + hd] += g[hd * n * n + k];
                }
            }
            vec![Some(d)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_manual_transpose() {
        let src: Vec<f64> = (0..6).map(|v| v as f64).collect();
        assert_eq!(permute_data(&src, &[2, 3], &[1, 0]), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        // 2×3×2 → 2×2×3 (swap last two)
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let out = permute_data(&src, &[2, 3, 2], &[0, 2, 1]);
        assert_eq!(out[..6], [0.0, 2.0, 4.0, 1.0, 3.0, 5.0]);
    }

    #[test]
    fn reflect_indices() {
        let r: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(r, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(5, 1), 0);
    }
}
