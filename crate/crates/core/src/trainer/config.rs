use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::DiscConfig;
use crate::coarse::CoarseConfig;
use crate::error::{Error, Result};
use crate::fine::{AdversarialForm, FineConfig};
use crate::nn::AdamConfig;

/// Environment variable selecting deterministic mode (`1`/`true` on, `0`/`false` off).
pub const DETERMINISTIC_ENV: &str = "VARIGAN_DETERMINISTIC";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub coarse_epochs: usize,
    pub fine_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub lambda_l1: f64,
    pub kl_weight: f64,
    pub deterministic: bool,
    pub desk_scale: bool,
    /// Use `-log D(fake)` instead of `log(1 - D(fake))` for the generator.
    pub non_saturating: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            coarse_epochs: 20,
            fine_epochs: 20,
            batch_size: 32,
            learning_rate: 3e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 0,
            lambda_l1: 100.0,
            kl_weight: 1.0,
            deterministic: true,
            desk_scale: true,
            non_saturating: false,
        }
    }
}

impl TrainConfig {
    /// Full-size models and the long schedule.
    pub fn full_scale() -> Self {
        Self {
            coarse_epochs: 500,
            fine_epochs: 500,
            desk_scale: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if [self.lambda_l1, self.kl_weight].iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn adversarial_form(&self) -> AdversarialForm {
        if self.non_saturating {
            AdversarialForm::NonSaturating
        } else {
            AdversarialForm::Saturating
        }
    }

    /// `lambda_l1` after ablations.
    pub fn effective_lambda(&self, flags: &AblationFlags) -> f64 {
        if flags.no_l1 {
            0.0
        } else {
            self.lambda_l1
        }
    }

    /// Reads the deterministic switch from [`DETERMINISTIC_ENV`], if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(DETERMINISTIC_ENV) {
            self.deterministic = match v.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => true,
                "0" | "false" | "no" | "off" => false,
                other => {
                    return Err(Error::Config(format!(
                        "{DETERMINISTIC_ENV}={other:?} is not a boolean"
                    )))
                }
            };
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Train the coarse generator adversarially instead of variationally.
    pub no_variational: bool,
    pub no_unet: bool,
    pub no_l1: bool,
    pub no_cdisc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    NoVariational,
    NoUnet,
    NoL1,
    NoCdisc,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_v" | "no_variational" => Ok(Ablation::NoVariational),
            "no_unet" => Ok(Ablation::NoUnet),
            "no_l1" => Ok(Ablation::NoL1),
            "no_cdisc" => Ok(Ablation::NoCdisc),
            other => Err(Error::InvalidArgument(format!(
                "unknown ablation {other:?} (expected no_v, no_unet, no_l1 or no_cdisc)"
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::NoVariational => "no_v",
            Ablation::NoUnet => "no_unet",
            Ablation::NoL1 => "no_l1",
            Ablation::NoCdisc => "no_cdisc",
        })
    }
}

impl AblationFlags {
    pub fn from_list(list: &[Ablation]) -> Self {
        let mut f = Self::default();
        for a in list {
            f.set(*a);
        }
        f
    }

    pub fn set(&mut self, a: Ablation) {
        match a {
            Ablation::NoVariational => self.no_variational = true,
            Ablation::NoUnet => self.no_unet = true,
            Ablation::NoL1 => self.no_l1 = true,
            Ablation::NoCdisc => self.no_cdisc = true,
        }
    }
}

/// Every architecture configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub coarse: CoarseConfig,
    pub fine: FineConfig,
    pub disc: DiscConfig,
    /// Low-resolution discriminator, present only when the coarse stage is adversarial.
    pub coarse_disc: Option<DiscConfig>,
}

impl ModelConfig {
    pub fn resolve(desk_scale: bool, flags: &AblationFlags) -> Self {
        let (coarse, mut fine, mut disc) = if desk_scale {
            (CoarseConfig::desk(), FineConfig::desk(), DiscConfig::desk())
        } else {
            (
                CoarseConfig::default(),
                FineConfig::default(),
                DiscConfig::default(),
            )
        };
        fine.skips_enabled = !flags.no_unet;
        disc.conditional = !flags.no_cdisc;
        let coarse_disc = flags.no_variational.then(|| DiscConfig {
            image_size: coarse.lr_size,
            conditional: true,
            ..disc.clone()
        });
        Self {
            coarse,
            fine,
            disc,
            coarse_disc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.coarse.validate()?;
        self.fine.validate()?;
        self.disc.validate()?;
        if let Some(d) = &self.coarse_disc {
            d.validate()?;
            if d.image_size != self.coarse.lr_size {
                return Err(Error::Config(
                    "coarse discriminator must match the coarse resolution".into(),
                ));
            }
        }
        if self.coarse.hr_size != self.fine.hr_size || self.coarse.lr_size != self.fine.lr_size {
            return Err(Error::Config(format!(
                "coarse ({} -> {}) and fine ({} -> {}) resolutions disagree",
                self.coarse.hr_size, self.coarse.lr_size, self.fine.lr_size, self.fine.hr_size
            )));
        }
        if self.disc.image_size != self.fine.hr_size {
            return Err(Error::Config(
                "discriminator must match the fine resolution".into(),
            ));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_mapping() {
        let flags =
            AblationFlags::from_list(&["no_unet".parse().unwrap(), "no_cdisc".parse().unwrap()]);
        let m = ModelConfig::resolve(true, &flags);
        m.validate().unwrap();
        assert!(!m.fine.skips_enabled);
        assert!(!m.disc.conditional);
        assert!(m.coarse_disc.is_none());
        let m = ModelConfig::resolve(false, &AblationFlags::from_list(&[Ablation::NoVariational]));
        m.validate().unwrap();
        assert_eq!(m.coarse_disc.unwrap().image_size, 64);
        assert!("no_gan".parse::<Ablation>().is_err());
        let t = TrainConfig::default();
        assert_eq!(
            t.effective_lambda(&AblationFlags::from_list(&[Ablation::NoL1])),
            0.0
        );
        assert_eq!(t.effective_lambda(&AblationFlags::default()), 100.0);
    }

    #[test]
    fn full_scale_keeps_optimizer_settings() {
        let p = TrainConfig::full_scale();
        assert_eq!(
            (p.coarse_epochs, p.fine_epochs, p.batch_size),
            (500, 500, 32)
        );
        assert_eq!(p.learning_rate, 3e-4);
        p.validate().unwrap();
    }
}
