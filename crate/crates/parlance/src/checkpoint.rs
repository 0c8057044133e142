//! Versioned JSON checkpoint container.
//!
//! Holds the named policy weight tensors with shape headers, the episode
//! spec they were trained for, and optionally the optimizer moments plus the
//! iteration counter so training can resume. JSON floats are written with
//! shortest round-trip precision, so save → load is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::env::EpisodeSpec;
use crate::policy::{Arch, Params};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint does not match architecture: {0}")]
    Layout(String),
}

/// First/second moment accumulators of the adaptive-moment optimizer, one
/// pair per parameter slot, plus the bias-correction step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros(shapes: &[Vec<usize>]) -> Self {
        AdamState {
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: Arch,
    pub spec: EpisodeSpec,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub iteration: u64,
}

impl Checkpoint {
    pub fn new(params: &Params, spec: &EpisodeSpec) -> Self {
        let named = params
            .arch
            .layout()
            .iter()
            .zip(params.tensors())
            .map(|((name, _), t)| NamedTensor { name: (*name).to_string(), tensor: t.clone() })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            arch: params.arch.clone(),
            spec: spec.clone(),
            params: named,
            optimizer: None,
            iteration: 0,
        }
    }

    pub fn with_optimizer(mut self, state: AdamState, iteration: u64) -> Self {
        self.optimizer = Some(state);
        self.iteration = iteration;
        self
    }

    /// Rebuild the parameter registry, validating names and shapes.
    pub fn params(&self) -> Result<Params, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let layout = self.arch.layout();
        if layout.len() != self.params.len() {
            return Err(CheckpointError::Layout(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.params.len()
            )));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for ((name, shape), named) in layout.iter().zip(&self.params) {
            if *name != named.name {
                return Err(CheckpointError::Layout(format!(
                    "expected slot {name}, found {}",
                    named.name
                )));
            }
            if named.tensor.shape() != &shape[..] {
                return Err(CheckpointError::Layout(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    shape,
                    named.tensor.shape()
                )));
            }
            tensors.push(named.tensor.clone());
        }
        Ok(Params::from_tensors(self.arch.clone(), tensors))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let file = File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let file = File::open(path)?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Streams;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = Arch { hidden: 8, memory: 4, vocab: 5 };
        let params = Params::init(&arch, &Streams::new(1234));
        let spec = EpisodeSpec::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");

        let mut state = AdamState::zeros(&params.shapes());
        state.step = 17;
        state.first[0].data_mut()[0] = 0.1 + 0.2; // deliberately non-round value

        Checkpoint::new(&params, &spec)
            .with_optimizer(state.clone(), 99)
            .save(&path)
            .unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let restored = loaded.params().unwrap();

        for (a, b) in params.tensors().iter().zip(restored.tensors()) {
            assert_eq!(a.data(), b.data(), "weights must round-trip bit-exactly");
        }
        assert_eq!(loaded.optimizer.unwrap(), state);
        assert_eq!(loaded.iteration, 99);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let arch = Arch { hidden: 8, memory: 4, vocab: 5 };
        let params = Params::init(&arch, &Streams::new(7));
        let mut ck = Checkpoint::new(&params, &EpisodeSpec::default());
        ck.params.swap(0, 1);
        assert!(matches!(ck.params(), Err(CheckpointError::Layout(_))));
    }
}
