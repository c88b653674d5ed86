use std::path::Path;

use super::{DirModel, MemoryBank, LEVELS};
use crate::error::Result;
use crate::restorers::{RestoreContext, Restorer, RestorerKind, RestorerSpec};
use crate::scalar::Scalar;
use crate::tensorgrad::{Graph, Tensor};
use crate::training::Checkpoint;
use crate::Image;

/// Inference wrapper that carries memories between outer iterations and
/// clears them whenever an iteration `k = 0` starts.
#[derive(Clone, Debug)]
pub struct DirRestorer<T> {
    pub model: DirModel<T>,
    memory: Option<[Tensor<T>; LEVELS]>,
    iteration: usize,
}

impl<T: Scalar> DirRestorer<T> {
    pub fn new(model: DirModel<T>) -> Self {
        DirRestorer { model, memory: None, iteration: 0 }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        Ok(Self::new(Checkpoint::<T>::load(path)?.params.model))
    }

    /// Builds any restorer kind; `dir` loads its checkpoint.
    pub fn build(spec: &RestorerSpec) -> Result<Box<dyn Restorer<T>>> {
        spec.validate()?;
        match (&spec.kind, &spec.checkpoint) {
            (RestorerKind::Dir, Some(path)) => Ok(Box::new(Self::from_checkpoint(path)?)),
            _ => spec.build_classical(),
        }
    }

    pub fn reset(&mut self) {
        self.memory = None;
        self.iteration = 0;
    }
}

impl<T: Scalar> Restorer<T> for DirRestorer<T> {
    fn restore(&mut self, x: &Image<T>, ctx: &RestoreContext) -> Result<Image<T>> {
        if ctx.k == 0 {
            self.reset();
        }
        let mut g = Graph::new();
        let bound = self.model.store.bind_frozen(&mut g);
        let input = g.constant(x.to_tensor());
        let memory = match &self.memory {
            Some(m) => MemoryBank::from_tensors(&mut g, m, self.iteration),
            None => MemoryBank::empty(),
        };
        let out = self.model.forward(&mut g, &bound, input, &memory)?;
        self.memory = out.memory.to_tensors(&g);
        self.iteration = out.memory.iteration;
        Image::from_tensor(g.value(out.output))
    }
}
