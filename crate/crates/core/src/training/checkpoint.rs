use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, ParameterSet, TrainConfig};
use crate::dir::{DirConfig, DirModel};
use crate::error::{Error, Result};
use crate::proximal::Scheme;
use crate::scalar::Scalar;
use crate::tensorgrad::container::{find, read_container, write_container, Entry};
use crate::tensorgrad::Tensor;

pub const FORMAT_TAG: &str = "spi-unroll-checkpoint";

/// JSON header stored as a byte entry named `config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub dir: DirConfig,
    pub k: usize,
    pub scheme: Scheme,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub params: ParameterSet<T>,
    pub adam: Option<Adam<T>>,
}

fn vector<T: Scalar>(v: &[T]) -> Option<Entry> {
    (!v.is_empty()).then(|| Entry::from_tensor(&Tensor::new(vec![v.len()], v.to_vec()).expect("1-D")))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: ParameterSet<T>, scheme: Scheme, step: u64, train: Option<TrainConfig>, adam: Option<Adam<T>>) -> Self {
        let header = CheckpointHeader {
            format: FORMAT_TAG.into(),
            dir: params.model.config.clone(),
            k: params.k(),
            scheme,
            step,
            train,
        };
        Checkpoint { header, params, adam }
    }

    pub fn to_entries(&self) -> Result<Vec<(String, Entry)>> {
        let json = serde_json::to_vec(&self.header)?;
        let mut entries = vec![("config".to_string(), Entry::Bytes(json))];
        for (name, t) in self.params.model.store.iter() {
            entries.push((format!("theta.{name}"), Entry::from_tensor(t)));
        }
        let p = &self.params;
        for (name, v) in [
            ("solver.mu_student", &p.mu_student),
            ("solver.mu_teacher", &p.mu_teacher),
            ("solver.lambda_teacher", &p.lambda_teacher),
        ] {
            if let Some(e) = vector(v) {
                entries.push((name.to_string(), e));
            }
        }
        if let Some(adam) = &self.adam {
            entries.push(("adam.t".into(), Entry::F64(Tensor::full(vec![1], adam.t as f64))));
            for (i, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
                entries.push((format!("adam.m.{i}"), Entry::from_tensor(m)));
                entries.push((format!("adam.v.{i}"), Entry::from_tensor(v)));
            }
        }
        Ok(entries)
    }

    pub fn from_entries(entries: &[(String, Entry)]) -> Result<Self> {
        let header: CheckpointHeader = match find(entries, "config") {
            Some(Entry::Bytes(b)) => serde_json::from_slice(b)?,
            _ => return Err(Error::Format("checkpoint has no `config` header".into())),
        };
        if header.format != FORMAT_TAG {
            return Err(Error::Format(format!("unexpected checkpoint format `{}`", header.format)));
        }
        if header.k == 0 {
            return Err(Error::Format("checkpoint header has K = 0".into()));
        }
        let mut model = DirModel::<T>::new(header.dir.clone(), 0)?;
        let mut theta = Vec::new();
        for (name, e) in entries {
            if let Some(stripped) = name.strip_prefix("theta.") {
                let t = e.to_tensor::<T>().ok_or_else(|| Error::Format(format!("{name} is not numeric")))?;
                theta.push((stripped.to_string(), t));
            }
        }
        if theta.len() != model.store.len() {
            return Err(Error::Format(format!("checkpoint holds {} weights, model has {}", theta.len(), model.store.len())));
        }
        model.load_values(|n| theta.iter().find(|(k, _)| k == n).map(|(_, t)| t))?;
        let read_vec = |name: &str, len: usize| -> Result<Vec<T>> {
            if len == 0 {
                return Ok(Vec::new());
            }
            let t = find(entries, name)
                .and_then(Entry::to_tensor::<T>)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if t.shape() != [len] {
                return Err(Error::Format(format!("{name} has shape {:?}, expected [{len}]", t.shape())));
            }
            Ok(t.into_data())
        };
        let k = header.k;
        let params = ParameterSet {
            model,
            mu_student: read_vec("solver.mu_student", k)?,
            mu_teacher: read_vec("solver.mu_teacher", k - 1)?,
            lambda_teacher: read_vec("solver.lambda_teacher", k - 1)?,
        };
        let adam = match find(entries, "adam.t").and_then(Entry::to_f64) {
            Some(t) => {
                let shapes = params.tensors();
                let mut adam = Adam::new(&shapes);
                adam.t = t.item() as u64;
                for i in 0..shapes.len() {
                    for (slot, key) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                        let name = format!("adam.{key}.{i}");
                        let e = find(entries, &name)
                            .and_then(Entry::to_tensor::<T>)
                            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
                        if e.shape() != slot.shape() {
                            return Err(Error::Format(format!("{name} has the wrong shape")));
                        }
                        *slot = e;
                    }
                }
                Some(adam)
            }
            None => None,
        };
        Ok(Checkpoint { header, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        write_container(f, &self.to_entries()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        Self::from_entries(&read_container(f)?)
    }
}

/// SHA-256 (hex) over parameter names and values widened to `f64`.
pub fn checkpoint_hash<T: Scalar>(params: &ParameterSet<T>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.model.store.iter() {
        h.update(name.as_bytes());
        t.data().iter().for_each(|v| h.update(v.as_f64().to_le_bytes()));
    }
    for v in params.mu_student.iter().chain(&params.mu_teacher).chain(&params.lambda_teacher) {
        h.update(v.as_f64().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
