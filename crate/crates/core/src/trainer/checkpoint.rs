//! On-disk layout: `<dir>/{stage}.weights` (safetensors) and `<dir>/{stage}.meta.json`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, ModelConfig, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Stage::Coarse),
            "fine" => Ok(Stage::Fine),
            other => Err(Error::InvalidArgument(format!("unknown stage {other:?}"))),
        }
    }
}

/// Position of one ChaCha stream, enough to continue it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl StreamState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RngState {
    pub streams: BTreeMap<String, StreamState>,
}

/// Mean loss components of one epoch, keyed by component name.
pub type EpochLosses = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub stage: Stage,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub models: ModelConfig,
    pub train: TrainConfig,
    pub ablations: AblationFlags,
    pub rng_state: RngState,
    /// Optimizer step counts by optimizer name.
    pub adam_steps: BTreeMap<String, u64>,
    pub loss_history: Vec<EpochLosses>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// `param.*`, `buffer.*` and `adam.*` tensors.
    pub tensors: HashMap<String, Tensor>,
}

pub fn weights_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{stage}.weights"))
}

pub fn meta_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{stage}.meta.json"))
}

pub fn log_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{stage}.log.csv"))
}

impl Checkpoint {
    pub fn stage(&self) -> Stage {
        self.meta.stage
    }

    pub fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.meta.stage != stage {
            return Err(Error::StageMismatch {
                expected: stage.to_string(),
                found: self.meta.stage.to_string(),
            });
        }
        Ok(())
    }

    /// Writes weights and metadata; returns both paths.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let weights = weights_path(dir, self.meta.stage);
        candle_core::safetensors::save(&self.tensors, &weights)?;
        let meta = meta_path(dir, self.meta.stage);
        fs::write(&meta, serde_json::to_vec_pretty(&self.meta)?)
            .map_err(|e| Error::io(&meta, e))?;
        Ok(vec![weights, meta])
    }

    pub fn load(dir: &Path, stage: Stage) -> Result<Self> {
        let mpath = meta_path(dir, stage);
        if !mpath.exists() {
            let other = if stage == Stage::Coarse {
                Stage::Fine
            } else {
                Stage::Coarse
            };
            if meta_path(dir, other).exists() {
                return Err(Error::StageMismatch {
                    expected: stage.to_string(),
                    found: other.to_string(),
                });
            }
        }
        let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&raw)?;
        if meta.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "checkpoint schema {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                meta.schema_version
            )));
        }
        let ckpt = Self {
            tensors: candle_core::safetensors::load(weights_path(dir, stage), &Device::Cpu)?,
            meta,
        };
        ckpt.expect_stage(stage)?;
        Ok(ckpt)
    }

    /// Loss history as CSV: `epoch,stage,<components...>`.
    pub fn loss_csv(&self) -> String {
        let keys: Vec<&String> = self
            .meta
            .loss_history
            .first()
            .map(|m| m.keys().collect())
            .unwrap_or_default();
        let mut out = String::from("epoch,stage");
        for k in &keys {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for (i, row) in self.meta.loss_history.iter().enumerate() {
            out.push_str(&format!("{},{}", i + 1, self.meta.stage));
            for k in &keys {
                out.push_str(&format!(",{}", row.get(*k).copied().unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.loss_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}
