//! `.civm` model files: magic, header length, JSON header, f32 parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlr::MlrParams;
use super::nn::{Architecture, Network};
use super::train::{Regressor, TrainConfig};
use crate::dataset::{FeatureStats, RescalingConfig};
use crate::error::{Error, Result};
use crate::thermo::ClimateTag;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CIVM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    Mlr { n_inputs: usize, n_outputs: usize },
    Nn { architecture: Architecture },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelKind,
    pub rescaling: RescalingConfig,
    pub train: TrainConfig,
    pub train_climate: ClimateTag,
    pub stats: FeatureStats,
    pub config_hash: String,
    pub n_params: usize,
    #[serde(default)]
    pub best_epoch: usize,
}

/// A trained model with everything needed to apply it to new data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Regressor,
}

impl Checkpoint {
    pub fn new(
        model: Regressor,
        rescaling: RescalingConfig,
        train: TrainConfig,
        train_climate: ClimateTag,
        stats: FeatureStats,
        config_hash: String,
        best_epoch: usize,
    ) -> Self {
        let kind = match &model {
            Regressor::Mlr(m) => ModelKind::Mlr {
                n_inputs: m.n_inputs(),
                n_outputs: m.n_outputs(),
            },
            Regressor::Nn(n) => ModelKind::Nn {
                architecture: n.arch.clone(),
            },
        };
        let n_params = model.state().iter().map(|t| t.len()).sum();
        Self {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                model: kind,
                rescaling,
                train,
                train_climate,
                stats,
                config_hash,
                n_params,
                best_epoch,
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.header.n_params);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.model.state() {
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not a model checkpoint"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::format(4, format!("header length {hlen} exceeds file")))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| Error::format(8, format!("bad header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::format(8, format!("unsupported checkpoint version {}", header.version)));
        }
        // Size the model from the header before allocating anything.
        let payload = &bytes[8 + hlen..];
        let declared = match &header.model {
            ModelKind::Mlr { n_inputs, n_outputs } => n_inputs.checked_mul(*n_outputs).and_then(|w| w.checked_add(*n_outputs)),
            ModelKind::Nn { architecture } => architecture.hidden.iter().chain([&architecture.n_outputs]).try_fold(
                (architecture.n_inputs, 0usize),
                |(fan_in, acc), &w| Some((w, acc.checked_add(fan_in.checked_mul(w)?.checked_add(w)?)?)),
            )
            .map(|(_, n)| n),
        };
        if declared.is_none_or(|n| n > payload.len() / 4) {
            return Err(Error::format(
                (8 + hlen) as u64,
                format!("header declares more parameters than the {}-byte payload holds", payload.len()),
            ));
        }
        let mut model = match &header.model {
            ModelKind::Mlr { n_inputs, n_outputs } => Regressor::Mlr(MlrParams::zeros(*n_inputs, *n_outputs)),
            ModelKind::Nn { architecture } => Regressor::Nn(
                Network::zeros(architecture.clone()).map_err(|e| Error::format(8, format!("bad architecture: {e}")))?,
            ),
        };
        let expected: usize = model.state().iter().map(|t| t.len()).sum();
        if expected != header.n_params || payload.len() != 4 * expected {
            return Err(Error::format(
                (8 + hlen) as u64,
                format!("expected {expected} parameters, payload holds {} bytes", payload.len()),
            ));
        }
        let mut vals = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        for t in model.state_mut() {
            for v in t.iter_mut() {
                *v = vals.next().unwrap_or(0.0);
            }
        }
        Ok(Self { header, model })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
