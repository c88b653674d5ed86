//! Deep image restorer: a 4-level encoder-decoder of hybrid CNN-Transformer
//! blocks with cross-iteration memories and a residual output.

pub mod blocks;
pub mod params;
mod restorer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{
    adaconv_block, adaconv_coefficients, chanca, ctb, gdcnn, swinsa, swint, AdaConvWeights, ChanCaWeights,
    CtbWeights, GdCnnWeights, HalfRouting, SwinSaWeights, SwinTWeights,
};
pub use params::{Bound, Init, ParamId, ParamStore};
pub use restorer::DirRestorer;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::{Graph, Tensor, Var};

/// Number of resolution levels (three downsamplings plus the bottleneck).
pub const LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub ctb_per_stage: usize,
    pub window: usize,
    pub heads: usize,
    pub adaconv_kernels: usize,
    pub in_channels: usize,
}

impl Default for DirConfig {
    fn default() -> Self {
        DirConfig { base_channels: 8, levels: LEVELS, ctb_per_stage: 1, window: 4, heads: 2, adaconv_kernels: 4, in_channels: 1 }
    }
}

impl DirConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::InvalidArgument(format!("dir.{key}: {msg}")));
        if self.levels != LEVELS {
            return bad("levels", format!("must be {LEVELS}, got {}", self.levels));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(2) {
            return bad("base_channels", format!("must be positive and even, got {}", self.base_channels));
        }
        for (key, v) in [
            ("ctb_per_stage", self.ctb_per_stage),
            ("window", self.window),
            ("heads", self.heads),
            ("adaconv_kernels", self.adaconv_kernels),
            ("in_channels", self.in_channels),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if !(self.base_channels / 2).is_multiple_of(self.heads) {
            return bad("heads", format!("{} does not divide half of base_channels {}", self.heads, self.base_channels));
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this after padding.
    pub fn multiple(&self) -> usize {
        (1 << (LEVELS - 1)) * self.window
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    memory: ChanCaWeights,
    blocks: Vec<CtbWeights>,
    /// `2C×C×2×2`, stride 2; absent at the bottleneck.
    down: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    /// Transposed conv `2C×C×2×2`, stride 2.
    up: ParamId,
    /// `C×2C×1×1` after concatenating the skip feature.
    reduce: ParamId,
    blocks: Vec<CtbWeights>,
}

#[derive(Clone, Debug)]
struct DirWeights {
    stem: ParamId,
    stem_bias: ParamId,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    head: ParamId,
    head_bias: ParamId,
}

/// Memories from the previous outer iteration, indexed by level:
/// `[F7, F6, F5, F4]` (decoder levels 0..2, then the bottleneck).
#[derive(Clone, Debug, Default)]
pub struct MemoryBank {
    pub features: Option<[Var; LEVELS]>,
    pub iteration: usize,
}

impl MemoryBank {
    pub fn empty() -> Self {
        MemoryBank::default()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_none()
    }

    /// Memories as graph constants.
    pub fn from_tensors<T: Scalar>(g: &mut Graph<T>, features: &[Tensor<T>; LEVELS], iteration: usize) -> Self {
        let vars = std::array::from_fn(|l| g.constant(features[l].clone()));
        MemoryBank { features: Some(vars), iteration }
    }

    pub fn to_tensors<T: Scalar>(&self, g: &Graph<T>) -> Option<[Tensor<T>; LEVELS]> {
        self.features.map(|f| std::array::from_fn(|l| g.value(f[l]).clone()))
    }

    /// All-zero memories of the shapes `model` produces for `h×w` inputs.
    pub fn zeros<T: Scalar>(g: &mut Graph<T>, config: &DirConfig, h: usize, w: usize) -> Self {
        let m = config.multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let vars = std::array::from_fn(|l| g.constant(Tensor::zeros(vec![config.channels_at(l), ph >> l, pw >> l])));
        MemoryBank { features: Some(vars), iteration: 0 }
    }
}

/// Result of one restorer pass.
#[derive(Clone, Debug)]
pub struct DirOutput {
    /// Same shape as the input.
    pub output: Var,
    pub memory: MemoryBank,
    /// Encoder feature after the block stack at each level (bottleneck last).
    pub levels: Vec<Var>,
}

/// Restorer parameters plus the layout that interprets them.
#[derive(Clone, Debug)]
pub struct DirModel<T> {
    pub config: DirConfig,
    pub store: ParamStore<T>,
    weights: DirWeights,
}

impl<T: Scalar> DirModel<T> {
    pub fn new(config: DirConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, &mut rng);
        let c0 = config.base_channels;
        let cin = config.in_channels;
        let stem = init.conv("stem".into(), c0, cin, 3, 1.0);
        let stem_bias = init.fill("stem_bias".into(), vec![c0], 0.0);
        let mut block_index = 0usize;
        let mut blocks = |init: &mut Init<T, ChaCha8Rng>, prefix: &str, c: usize| -> Result<Vec<CtbWeights>> {
            (0..config.ctb_per_stage)
                .map(|i| {
                    let shift = if block_index % 2 == 1 { config.window / 2 } else { 0 };
                    block_index += 1;
                    CtbWeights::new(
                        init,
                        &format!("{prefix}.ctb{i}"),
                        c,
                        config.heads,
                        config.window,
                        config.adaconv_kernels,
                        shift,
                    )
                })
                .collect()
        };
        let mut encoder = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let c = config.channels_at(l);
            let prefix = format!("enc{l}");
            let memory = ChanCaWeights::new(&mut init, &format!("{prefix}.memory"), c, config.heads)?;
            let stage_blocks = blocks(&mut init, &prefix, c)?;
            let down = (l + 1 < LEVELS).then(|| init.conv(format!("{prefix}.down"), 2 * c, c, 2, 1.0));
            encoder.push(EncoderStage { memory, blocks: stage_blocks, down });
        }
        let mut decoder = Vec::with_capacity(LEVELS - 1);
        for l in (0..LEVELS - 1).rev() {
            let c = config.channels_at(l);
            let prefix = format!("dec{l}");
            let up = init.tensor(format!("{prefix}.up"), vec![2 * c, c, 2, 2], 1.0 / (2.0 * c as f64).sqrt());
            let reduce = init.conv(format!("{prefix}.reduce"), c, 2 * c, 1, 1.0);
            let stage_blocks = blocks(&mut init, &prefix, c)?;
            decoder.push(DecoderStage { up, reduce, blocks: stage_blocks });
        }
        let head = init.conv("head".into(), cin, c0, 3, 0.1);
        let head_bias = init.fill("head_bias".into(), vec![cin], 0.0);
        let weights = DirWeights { stem, stem_bias, encoder, decoder, head, head_bias };
        Ok(DirModel { config, store, weights })
    }

    /// Replaces parameter values by name; every parameter must be present
    /// with its expected shape.
    pub fn load_values<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor<T>>) -> Result<()> {
        let names = self.store.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let t = lookup(name).ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            let slot = &mut self.store.values_mut()[i];
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn head_weight(&self) -> ParamId {
        self.weights.head
    }

    pub fn head_bias(&self) -> ParamId {
        self.weights.head_bias
    }

    /// Hybrid blocks in construction order.
    pub fn blocks(&self) -> impl Iterator<Item = &CtbWeights> {
        let enc = self.weights.encoder.iter().flat_map(|s| s.blocks.iter());
        enc.chain(self.weights.decoder.iter().flat_map(|s| s.blocks.iter()))
    }

    /// One restorer pass on `input` (`H×W` or `C_in×H×W`). `params` must come
    /// from binding `self.store` into `g`.
    pub fn forward(&self, g: &mut Graph<T>, params: &Bound, input: Var, memory: &MemoryBank) -> Result<DirOutput> {
        let in_shape = g.shape(input).to_vec();
        let cin = self.config.in_channels;
        let (h, w) = match in_shape[..] {
            [h, w] if cin == 1 => (h, w),
            [c, h, w] if c == cin => (h, w),
            _ => {
                return Err(Error::Dimension {
                    op: "dir_forward",
                    detail: format!("input {in_shape:?} for {cin} input channel(s)"),
                })
            }
        };
        let x_in = g.reshape(input, &[cin, h, w])?;
        let m = self.config.multiple();
        let (pad_h, pad_w) = (h.div_ceil(m) * m - h, w.div_ceil(m) * m - w);
        if (pad_h > 0 && pad_h >= h) || (pad_w > 0 && pad_w >= w) {
            return Err(Error::Dimension {
                op: "dir_forward",
                detail: format!("{h}×{w} cannot be reflect-padded to a multiple of {m}"),
            });
        }
        let x_pad = if pad_h + pad_w > 0 { g.pad_reflect(x_in, 0, pad_h, 0, pad_w)? } else { x_in };
        let (ph, pw) = (h + pad_h, w + pad_w);
        if let Some(f) = &memory.features {
            for (l, &v) in f.iter().enumerate() {
                let want = [self.config.channels_at(l), ph >> l, pw >> l];
                if g.shape(v) != want {
                    return Err(Error::Dimension {
                        op: "dir_forward",
                        detail: format!("memory at level {l} is {:?}, expected {want:?}", g.shape(v)),
                    });
                }
            }
        }

        let p = params;
        let wt = &self.weights;
        let mut x = g.conv2d(x_pad, p[wt.stem], 1, 1)?;
        x = g.add_channel(x, p[wt.stem_bias])?;
        let mut skips = Vec::with_capacity(LEVELS - 1);
        let mut levels = Vec::with_capacity(LEVELS);
        for (l, stage) in wt.encoder.iter().enumerate() {
            if let Some(f) = &memory.features {
                let inj = chanca(g, p, &stage.memory, x, f[l])?;
                x = g.add(x, inj)?;
            }
            for b in &stage.blocks {
                x = ctb(g, p, b, x)?;
            }
            levels.push(x);
            if let Some(down) = stage.down {
                skips.push(x);
                x = g.conv2d(x, p[down], 2, 0)?;
            }
        }
        let mut new_mem = [x; LEVELS];
        for stage in &wt.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let l = skips.len();
            let up = g.conv_transpose2d(x, p[stage.up], 2)?;
            let cat = g.concat(&[up, skip])?;
            x = g.conv2d(cat, p[stage.reduce], 1, 0)?;
            for b in &stage.blocks {
                x = ctb(g, p, b, x)?;
            }
            new_mem[l] = x;
        }
        let mut r = g.conv2d(x, p[wt.head], 1, 1)?;
        r = g.add_channel(r, p[wt.head_bias])?;
        if pad_h + pad_w > 0 {
            r = g.crop(r, 0, 0, h, w)?;
        }
        let out = g.add(x_in, r)?;
        let output = g.reshape(out, &in_shape)?;
        let memory = MemoryBank { features: Some(new_mem), iteration: memory.iteration + 1 };
        Ok(DirOutput { output, memory, levels })
    }

    pub fn cast<U: Scalar>(&self) -> DirModel<U> {
        DirModel { config: self.config.clone(), store: self.store.cast(), weights: self.weights.clone() }
    }
}
