//! Conditional patch discriminator and its objective.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::datakit::ImageTensor;
use crate::error::{Error, Result};
use crate::fine::PROB_EPS;
use crate::nn::{leaky_relu, sigmoid, BatchNorm2d, Conv2d, Mode, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    pub channels: Vec<usize>,
    pub filter_size: usize,
    pub strides: Vec<usize>,
    pub conditional: bool,
    /// Input resolution.
    pub image_size: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            channels: vec![64, 128, 256, 512, 1],
            filter_size: 4,
            strides: vec![2, 2, 2, 1, 1],
            conditional: true,
            image_size: 128,
        }
    }
}

impl DiscConfig {
    pub fn desk() -> Self {
        Self {
            channels: vec![32, 64, 128, 128, 1],
            image_size: 64,
            ..Self::default()
        }
    }

    pub fn input_channels(&self) -> usize {
        if self.conditional {
            6
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "discriminator has {} channel entries but {} strides",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if *self.channels.last().unwrap() != 1 {
            return Err(Error::Config(
                "discriminator's final stage must have 1 channel".into(),
            ));
        }
        if self.filter_size == 0 || self.strides.iter().any(|&s| s == 0 || s > self.filter_size) {
            return Err(Error::Config("invalid discriminator filter/stride".into()));
        }
        if self.patch_size() == 0 {
            return Err(Error::Config(format!(
                "image_size {} too small",
                self.image_size
            )));
        }
        Ok(())
    }

    /// `(before, after)` padding of a "same"-style stage: output is `ceil(size / stride)`.
    fn padding(&self, size: usize, stride: usize) -> (usize, usize) {
        let out = size.div_ceil(stride);
        let total = ((out - 1) * stride + self.filter_size).saturating_sub(size);
        (total / 2, total - total / 2)
    }

    /// Side length of the patch logit map.
    pub fn patch_size(&self) -> usize {
        self.strides
            .iter()
            .fold(self.image_size, |s, &st| s.div_ceil(st))
    }
}

pub struct Discriminator {
    config: DiscConfig,
    convs: Vec<Conv2d>,
    norms: Vec<Option<BatchNorm2d>>,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &DiscConfig) -> Result<Self> {
        config.validate()?;
        let n = config.channels.len();
        let mut convs = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        let mut in_c = config.input_channels();
        let mut size = config.image_size;
        for (i, (&c, &s)) in config.channels.iter().zip(&config.strides).enumerate() {
            let (pb, pa) = config.padding(size, s);
            convs.push(Conv2d::new(
                store,
                &format!("{prefix}conv{i}"),
                in_c,
                c,
                config.filter_size,
                s,
                pb,
                pa,
            )?);
            norms.push(if i > 0 && i + 1 < n {
                Some(BatchNorm2d::new(store, &format!("{prefix}bn{i}"), c)?)
            } else {
                None
            });
            in_c = c;
            size = size.div_ceil(s);
        }
        Ok(Self {
            config: config.clone(),
            convs,
            norms,
        })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn first_layer_input_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn final_layer(&self) -> &Conv2d {
        self.convs.last().expect("at least one stage")
    }

    /// Patch logit map `[B, 1, P, P]` for `cond, candidate: [B, 3, S, S]`.
    pub fn patch_logits(&self, cond: &Tensor, candidate: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.config.image_size;
        let cd = candidate.dims();
        if cd.len() != 4 || cd[1] != 3 || cd[2] != s || cd[3] != s {
            return Err(Error::shape(
                "discriminate (candidate)",
                format!("[B, 3, {s}, {s}]"),
                format!("{cd:?}"),
            ));
        }
        let mut x = if self.config.conditional {
            if cond.dims() != cd {
                return Err(Error::shape(
                    "discriminate (cond_image)",
                    format!("{cd:?}"),
                    format!("{:?}", cond.dims()),
                ));
            }
            Tensor::cat(&[cond, candidate], 1)?
        } else {
            candidate.clone()
        };
        let n = self.convs.len();
        for (i, (conv, norm)) in self.convs.iter().zip(&self.norms).enumerate() {
            x = conv.forward(&x)?;
            if let Some(bn) = norm {
                x = bn.forward(&x, mode)?;
            }
            if i + 1 < n {
                x = leaky_relu(&x)?;
            }
        }
        Ok(x)
    }

    /// Mean patch logit per item, `[B]`.
    pub fn logits(&self, cond: &Tensor, candidate: &Tensor, mode: Mode) -> Result<Tensor> {
        let map = self.patch_logits(cond, candidate, mode)?;
        reduce_patches(&map)
    }

    /// Probability `[B]` that each candidate is a real pair.
    pub fn forward(&self, cond: &Tensor, candidate: &Tensor, mode: Mode) -> Result<Tensor> {
        sigmoid(&self.logits(cond, candidate, mode)?)
    }

    /// Single-pair score with running batch-norm statistics.
    pub fn discriminate(&self, cond_image: &ImageTensor, candidate: &ImageTensor) -> Result<f64> {
        let s = self.config.image_size;
        candidate.expect_square(s, "discriminate (candidate)")?;
        if self.config.conditional {
            cond_image.expect_square(s, "discriminate (cond_image)")?;
        }
        let w = self.convs[0].weight();
        let (dt, dev) = (w.dtype(), w.device().clone());
        let cand = candidate.to_tensor(dt, &dev)?;
        let cond = if self.config.conditional {
            cond_image.to_tensor(dt, &dev)?
        } else {
            cand.clone()
        };
        let p = self.forward(&cond, &cand, Mode::Eval)?;
        Ok(p.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
    }
}

/// Mean over the spatial patch map: `[B, 1, P, P] -> [B]`.
pub fn reduce_patches(map: &Tensor) -> Result<Tensor> {
    Ok(map.flatten_from(1)?.mean(1)?)
}

/// `log d_real + log(1 - d_fake)` averaged over the batch. Inputs must lie inside `(0, 1)`.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.len() != d_fake.len() || d_real.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "discriminator_loss needs equal non-empty batches, got {} and {}",
            d_real.len(),
            d_fake.len()
        )));
    }
    for (&p, what) in d_real
        .iter()
        .map(|p| (p, "d_real in (0, 1)"))
        .chain(d_fake.iter().map(|p| (p, "d_fake in (0, 1)")))
    {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain {
                context: "discriminator_loss",
                value: p,
                expected: what,
            });
        }
    }
    let sum: f64 = d_real
        .iter()
        .zip(d_fake)
        .map(|(r, f)| r.ln() + (1.0 - f).ln())
        .sum();
    Ok(sum / d_real.len() as f64)
}

/// Differentiable `L_D` over `[B]` probability tensors, clamped away from 0 and 1.
pub fn discriminator_loss_tensor(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    let r = d_real.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let f = d_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    Ok((r.log()?.mean_all()? + f.affine(-1.0, 1.0)?.log()?.mean_all()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_map_sizes() {
        assert_eq!(DiscConfig::default().patch_size(), 16);
        assert_eq!(DiscConfig::desk().patch_size(), 8);
        let mut s = ParamStore::new(DType::F32, 0);
        let d = Discriminator::new(&mut s, "d.", &DiscConfig::desk()).unwrap();
        let x = Tensor::zeros((2, 3, 64, 64), DType::F32, s.device()).unwrap();
        assert_eq!(
            d.patch_logits(&x, &x, Mode::Train).unwrap().dims(),
            &[2, 1, 8, 8]
        );
    }

    #[test]
    fn loss_values() {
        let l = discriminator_loss(&[0.5], &[0.5]).unwrap();
        assert!((l - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let eps = 1e-9;
        let l = discriminator_loss(&[1.0 - eps], &[eps]).unwrap();
        assert!(l < 0.0 && l > -1e-8);
        assert!(discriminator_loss(&[1.0], &[0.5]).is_err());
        assert!(discriminator_loss(&[0.5], &[0.0]).is_err());
    }
}
