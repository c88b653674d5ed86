//! Building blocks of the restorer: channel cross-attention, window
//! self-attention, adaptive convolution, the gated CNN and the hybrid block.

use rand::Rng;

use super::params::{Bound, Init, ParamId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::{Graph, Var};

const LN_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

fn conv_bias<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
    let y = g.conv2d(x, w, 1, padding)?;
    g.add_channel(y, b)
}

fn dims3<T: Scalar>(g: &Graph<T>, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
    match *g.shape(x) {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Dimension { op, detail: format!("expected C×H×W, got {s:?}") }),
    }
}

/// Channel-wise cross attention between a query feature and a memory.
#[derive(Clone, Debug)]
pub struct ChanCaWeights {
    pub channels: usize,
    pub heads: usize,
    pub q_pw: ParamId,
    pub q_dw: ParamId,
    pub k_pw: ParamId,
    pub k_dw: ParamId,
    pub v_pw: ParamId,
    pub v_dw: ParamId,
    pub temperature: ParamId,
    pub proj: ParamId,
}

impl ChanCaWeights {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<T, R>, prefix: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{heads} heads do not divide {channels} channels")));
        }
        let c = channels;
        Ok(ChanCaWeights {
            channels,
            heads,
            q_pw: init.conv(format!("{prefix}.q_pw"), c, c, 1, 1.0),
            q_dw: init.tensor(format!("{prefix}.q_dw"), vec![c, 3, 3], 1.0 / 3.0),
            k_pw: init.conv(format!("{prefix}.k_pw"), c, c, 1, 1.0),
            k_dw: init.tensor(format!("{prefix}.k_dw"), vec![c, 3, 3], 1.0 / 3.0),
            v_pw: init.conv(format!("{prefix}.v_pw"), c, c, 1, 1.0),
            v_dw: init.tensor(format!("{prefix}.v_dw"), vec![c, 3, 3], 1.0 / 3.0),
            temperature: init.fill(format!("{prefix}.temperature"), vec![heads], 1.0),
            proj: init.conv(format!("{prefix}.proj"), c, c, 1, 0.5),
        })
    }
}

/// `ChanCA(F_q, F_kv)`: q, k, v by point-wise then depth-wise conv (no
/// biases), `d×d` attention per head over L2-normalized channel rows.
/// Returns exactly zero when `f_kv` is zero.
pub fn chanca<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &ChanCaWeights, f_q: Var, f_kv: Var) -> Result<Var> {
    let (c, h, wd) = dims3(g, "chanca", f_q)?;
    if g.shape(f_kv) != [c, h, wd] || c != w.channels {
        return Err(Error::Dimension {
            op: "chanca",
            detail: format!("query {:?}, memory {:?}, weights for {} channels", [c, h, wd], g.shape(f_kv), w.channels),
        });
    }
    let d = c / w.heads;
    let q = g.conv2d(f_q, p[w.q_pw], 1, 0)?;
    let q = g.dwconv2d(q, p[w.q_dw])?;
    let k = g.conv2d(f_kv, p[w.k_pw], 1, 0)?;
    let k = g.dwconv2d(k, p[w.k_dw])?;
    let v = g.conv2d(f_kv, p[w.v_pw], 1, 0)?;
    let v = g.dwconv2d(v, p[w.v_dw])?;
    let shape = [w.heads, d, h * wd];
    let q = g.reshape(q, &shape)?;
    let k = g.reshape(k, &shape)?;
    let v = g.reshape(v, &shape)?;
    let q = g.l2_normalize(q, 2, T::lit(L2_EPS))?;
    let k = g.l2_normalize(k, 2, T::lit(L2_EPS))?;
    let logits = g.bmm(q, k, false, true)?;
    let logits = g.mul_channel(logits, p[w.temperature])?;
    let attn = g.softmax(logits, 2)?;
    let out = g.bmm(attn, v, false, false)?;
    let out = g.reshape(out, &[c, h, wd])?;
    g.conv2d(out, p[w.proj], 1, 0)
}

/// Multi-head self-attention inside `p×p` windows.
#[derive(Clone, Debug)]
pub struct SwinSaWeights {
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    /// `C×3C`, columns ordered q | k | v.
    pub qkv: ParamId,
    /// `(2p−1)²×heads` relative-position table.
    pub rpe: ParamId,
    /// `C×C` output projection.
    pub proj: ParamId,
}

impl SwinSaWeights {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<T, R>,
        prefix: &str,
        channels: usize,
        heads: usize,
        window: usize,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) || window == 0 {
            return Err(Error::InvalidArgument(format!(
                "window attention with {channels} channels, {heads} heads, window {window}"
            )));
        }
        let span = 2 * window - 1;
        let std = 1.0 / (channels as f64).sqrt();
        Ok(SwinSaWeights {
            channels,
            heads,
            window,
            qkv: init.tensor(format!("{prefix}.qkv"), vec![channels, 3 * channels], std),
            rpe: init.tensor(format!("{prefix}.rpe"), vec![span * span, heads], 0.02),
            proj: init.tensor(format!("{prefix}.proj"), vec![channels, channels], std),
        })
    }
}

/// `softmax(QKᵀ/√d + B)V` per window and head, then the output projection.
/// `x: C×H×W` with `H, W` multiples of the window; `shift` rolls the grid.
pub fn swinsa<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &SwinSaWeights, x: Var, shift: usize) -> Result<Var> {
    let (c, h, wd) = dims3(g, "swinsa", x)?;
    if c != w.channels {
        return Err(Error::Dimension { op: "swinsa", detail: format!("{c} channels, weights for {}", w.channels) });
    }
    let (win, heads) = (w.window, w.heads);
    let d = c / heads;
    let n = win * win;
    let windows = g.window_partition(x, win, shift)?;
    let nw = g.shape(windows)[0];
    let flat = g.reshape(windows, &[nw * n, c])?;
    let qkv = g.matmul(flat, p[w.qkv])?;
    let qkv = g.reshape(qkv, &[nw, n, 3, heads, d])?;
    let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
    let b = nw * heads;
    let qkv = g.reshape(qkv, &[3 * b, n, d])?;
    let q = g.narrow(qkv, 0, b)?;
    let k = g.narrow(qkv, b, b)?;
    let v = g.narrow(qkv, 2 * b, b)?;
    let logits = g.bmm(q, k, false, true)?;
    let logits = g.scale(logits, T::lit(1.0 / (d as f64).sqrt()));
    let bias = g.rel_pos_bias(p[w.rpe], win)?;
    let logits = g.add_repeat(logits, bias)?;
    let attn = g.softmax(logits, 2)?;
    let out = g.bmm(attn, v, false, false)?;
    let out = g.reshape(out, &[nw, heads, n, d])?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    let out = g.reshape(out, &[nw * n, c])?;
    let out = g.matmul(out, p[w.proj])?;
    let out = g.reshape(out, &[nw, n, c])?;
    g.window_unpartition(out, h, wd, win, shift)
}

/// Transformer half of the hybrid block: attention and a convolutional FFN,
/// each pre-normalized and residual.
#[derive(Clone, Debug)]
pub struct SwinTWeights {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub attn: SwinSaWeights,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ffn_in: ParamId,
    pub ffn_in_bias: ParamId,
    pub ffn_dw: ParamId,
    pub ffn_out: ParamId,
    pub ffn_out_bias: ParamId,
}

pub const FFN_EXPANSION: usize = 2;

impl SwinTWeights {
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<T, R>,
        prefix: &str,
        channels: usize,
        heads: usize,
        window: usize,
    ) -> Result<Self> {
        let c = channels;
        let e = FFN_EXPANSION * c;
        Ok(SwinTWeights {
            ln1_gain: init.fill(format!("{prefix}.ln1.gain"), vec![c], 1.0),
            ln1_bias: init.fill(format!("{prefix}.ln1.bias"), vec![c], 0.0),
            attn: SwinSaWeights::new(init, &format!("{prefix}.attn"), c, heads, window)?,
            ln2_gain: init.fill(format!("{prefix}.ln2.gain"), vec![c], 1.0),
            ln2_bias: init.fill(format!("{prefix}.ln2.bias"), vec![c], 0.0),
            ffn_in: init.conv(format!("{prefix}.ffn.in"), e, c, 1, 1.0),
            ffn_in_bias: init.fill(format!("{prefix}.ffn.in_bias"), vec![e], 0.0),
            ffn_dw: init.tensor(format!("{prefix}.ffn.dw"), vec![e, 3, 3], 1.0 / 3.0),
            ffn_out: init.conv(format!("{prefix}.ffn.out"), c, e, 1, 0.5),
            ffn_out_bias: init.fill(format!("{prefix}.ffn.out_bias"), vec![c], 0.0),
        })
    }
}

pub fn swint<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &SwinTWeights, x: Var, shift: usize) -> Result<Var> {
    let eps = T::lit(LN_EPS);
    let n1 = g.layernorm(x, p[w.ln1_gain], p[w.ln1_bias], 0, eps)?;
    let a = swinsa(g, p, &w.attn, n1, shift)?;
    let x = g.add(x, a)?;
    let n2 = g.layernorm(x, p[w.ln2_gain], p[w.ln2_bias], 0, eps)?;
    let f = conv_bias(g, n2, p[w.ffn_in], p[w.ffn_in_bias], 0)?;
    let f = g.dwconv2d(f, p[w.ffn_dw])?;
    let f = g.gelu(f);
    let f = conv_bias(g, f, p[w.ffn_out], p[w.ffn_out_bias], 0)?;
    g.add(x, f)
}

/// Per-pixel mixture of a depth-wise 3×3 kernel bank.
#[derive(Clone, Debug)]
pub struct AdaConvWeights {
    pub kernels: usize,
    /// `n×C×1×1` and bias.
    pub coeff_in: ParamId,
    pub coeff_in_bias: ParamId,
    /// `n×n×3×3` and bias.
    pub coeff_out: ParamId,
    pub coeff_out_bias: ParamId,
    /// `n×C×9`.
    pub bank: ParamId,
}

impl AdaConvWeights {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<T, R>, prefix: &str, channels: usize, kernels: usize) -> Result<Self> {
        if kernels == 0 {
            return Err(Error::InvalidArgument("adaptive convolution needs at least one kernel".into()));
        }
        let n = kernels;
        Ok(AdaConvWeights {
            kernels,
            coeff_in: init.conv(format!("{prefix}.coeff_in"), n, channels, 1, 1.0),
            coeff_in_bias: init.fill(format!("{prefix}.coeff_in_bias"), vec![n], 0.1),
            coeff_out: init.conv(format!("{prefix}.coeff_out"), n, n, 3, 1.0),
            coeff_out_bias: init.fill(format!("{prefix}.coeff_out_bias"), vec![n], 1.0 / n as f64),
            bank: init.tensor(format!("{prefix}.bank"), vec![n, channels, 9], 1.0 / 3.0),
        })
    }
}

/// Coefficient map `n×H×W = conv3×3(relu(conv1×1(x)))`.
pub fn adaconv_coefficients<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &AdaConvWeights, x: Var) -> Result<Var> {
    let c = conv_bias(g, x, p[w.coeff_in], p[w.coeff_in_bias], 0)?;
    let c = g.relu(c);
    conv_bias(g, c, p[w.coeff_out], p[w.coeff_out_bias], 1)
}

pub fn adaconv_block<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &AdaConvWeights, x: Var) -> Result<Var> {
    let coeff = adaconv_coefficients(g, p, w, x)?;
    g.adaconv(x, coeff, p[w.bank])
}

/// Gated dynamic CNN: `pw(sigmoid(conv3×3(x)) ⊙ AdaConv(x))`.
#[derive(Clone, Debug)]
pub struct GdCnnWeights {
    pub gate: ParamId,
    pub gate_bias: ParamId,
    pub ada: AdaConvWeights,
    pub out: ParamId,
}

impl GdCnnWeights {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<T, R>, prefix: &str, channels: usize, kernels: usize) -> Result<Self> {
        let c = channels;
        Ok(GdCnnWeights {
            gate: init.conv(format!("{prefix}.gate"), c, c, 3, 1.0),
            gate_bias: init.fill(format!("{prefix}.gate_bias"), vec![c], 0.0),
            ada: AdaConvWeights::new(init, &format!("{prefix}.ada"), c, kernels)?,
            out: init.conv(format!("{prefix}.out"), c, c, 1, 1.0),
        })
    }
}

pub fn gdcnn<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &GdCnnWeights, x: Var) -> Result<Var> {
    let gate = conv_bias(g, x, p[w.gate], p[w.gate_bias], 1)?;
    let gate = g.sigmoid(gate);
    let value = adaconv_block(g, p, &w.ada, x)?;
    let gated = g.mul(gate, value)?;
    g.conv2d(gated, p[w.out], 1, 0)
}

/// Which half of the channels feeds the transformer branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HalfRouting {
    #[default]
    SwinFirst,
    GdFirst,
}

/// Hybrid CNN-Transformer block.
#[derive(Clone, Debug)]
pub struct CtbWeights {
    pub channels: usize,
    pub shift: usize,
    pub routing: HalfRouting,
    pub swin: SwinTWeights,
    pub gd: GdCnnWeights,
    pub fuse: ParamId,
    pub fuse_bias: ParamId,
}

impl CtbWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        init: &mut Init<T, R>,
        prefix: &str,
        channels: usize,
        heads: usize,
        window: usize,
        kernels: usize,
        shift: usize,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("hybrid block needs an even channel count, got {channels}")));
        }
        let half = channels / 2;
        Ok(CtbWeights {
            channels,
            shift,
            routing: HalfRouting::SwinFirst,
            swin: SwinTWeights::new(init, &format!("{prefix}.swin"), half, heads, window)?,
            gd: GdCnnWeights::new(init, &format!("{prefix}.gd"), half, kernels)?,
            fuse: init.conv(format!("{prefix}.fuse"), channels, channels, 1, 0.5),
            fuse_bias: init.fill(format!("{prefix}.fuse_bias"), vec![channels], 0.0),
        })
    }
}

/// `x + fuse(concat(SwinT(x₁), GD-CNN(x₂)))` over an even channel split.
pub fn ctb<T: Scalar>(g: &mut Graph<T>, p: &Bound, w: &CtbWeights, x: Var) -> Result<Var> {
    let (c, h, wd) = dims3(g, "ctb", x)?;
    if c != w.channels || c % 2 != 0 {
        return Err(Error::Dimension { op: "ctb", detail: format!("{c} channels, weights for {}", w.channels) });
    }
    let half = c / 2;
    let first = g.narrow(x, 0, half)?;
    let second = g.narrow(x, half, half)?;
    let parts = match w.routing {
        HalfRouting::SwinFirst => {
            let a = swint(g, p, &w.swin, first, w.shift)?;
            let b = gdcnn(g, p, &w.gd, second)?;
            [a, b]
        }
        HalfRouting::GdFirst => {
            let a = gdcnn(g, p, &w.gd, first)?;
            let b = swint(g, p, &w.swin, second, w.shift)?;
            [a, b]
        }
    };
    let cat = g.concat(&parts)?;
    debug_assert_eq!(g.shape(cat), [c, h, wd]);
    let fused = conv_bias(g, cat, p[w.fuse], p[w.fuse_bias], 0)?;
    g.add(x, fused)
}
