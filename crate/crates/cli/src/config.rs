//! Run configuration file.
//!
//! ```toml
//! [train]
//! coarse_epochs = 20
//! fine_epochs = 20
//! batch_size = 32
//! learning_rate = 0.0003
//! adam_beta1 = 0.5
//! adam_beta2 = 0.999
//! seed = 0
//! lambda_l1 = 100.0
//! kl_weight = 1.0
//! deterministic = true
//! desk_scale = true
//! non_saturating = false
//!
//! [ablations]
//! no_variational = false
//! no_unet = false
//! no_l1 = false
//! no_cdisc = false
//!
//! [data]
//! test_fraction = 0.125
//! split_seed = 0
//! tasks = ["from_front", "from_side"]
//! ```
//!
//! Every key is optional; command-line flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use varigan::datakit::PairingTask;
use varigan::trainer::{AblationFlags, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Fraction of groups held out for evaluation.
    pub test_fraction: f64,
    pub split_seed: u64,
    pub tasks: Vec<PairingTask>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.125,
            split_seed: 0,
            tasks: PairingTask::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub ablations: AblationFlags,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| varigan::Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs")
            .lines()
            .take_while(|l| l.starts_with("//!"))
            .filter_map(|l| l.strip_prefix("//! ").or(l.strip_prefix("//!")))
            .skip_while(|l| !l.starts_with("```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("```"))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg: RunConfig = toml::from_str(&doc).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig =
            toml::from_str("[train]\nfine_epochs = 3\n[ablations]\nno_unet = true\n").unwrap();
        assert_eq!(cfg.train.fine_epochs, 3);
        assert_eq!(cfg.train.coarse_epochs, 20);
        assert!(cfg.ablations.no_unet);
        assert!(toml::from_str::<RunConfig>("[train]\nbogus = 1\n").is_err());
    }
}
