//! Dual-path U-Net fine generator.
//!
//! The coarse image is nearest-upsampled to `hr_size` and encoded by one path, the
//! condition image by a second path with its own weights. The two bottlenecks are
//! concatenated and decoded; with skips enabled every decoder stage after the first also
//! receives the mirrored activations of *both* encoders.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::coarse::l1_tensor;
use crate::datakit::{ImageTensor, ViewLabel};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, BatchNorm2d, Conv2d, ConvTranspose2d, Embedding, Mode, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineConfig {
    /// Bottleneck channels `M_h` of each encoder path.
    pub bottleneck_dim: usize,
    /// Output resolution `W_HR`.
    pub hr_size: usize,
    /// Resolution of the incoming coarse image.
    pub lr_size: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub filter_size: usize,
    pub stride: usize,
    pub skips_enabled: bool,
    pub view_conditioning: bool,
}

impl Default for FineConfig {
    fn default() -> Self {
        Self {
            bottleneck_dim: 512,
            hr_size: 128,
            lr_size: 64,
            encoder_channels: vec![64, 128, 256, 512, 512, 512, 512],
            decoder_channels: vec![512, 512, 512, 256, 128, 64, 3],
            filter_size: 4,
            stride: 2,
            skips_enabled: true,
            view_conditioning: false,
        }
    }
}

impl FineConfig {
    /// Three-stage U-Net over 64 x 64 images with `M_h = 64` (8 x 8 bottleneck).
    pub fn desk() -> Self {
        Self {
            bottleneck_dim: 64,
            hr_size: 64,
            lr_size: 32,
            encoder_channels: vec![32, 64, 64],
            decoder_channels: vec![64, 32, 3],
            filter_size: 4,
            stride: 2,
            skips_enabled: true,
            view_conditioning: false,
        }
    }

    pub fn stages(&self) -> usize {
        self.encoder_channels.len()
    }

    fn padding(&self) -> usize {
        (self.filter_size - self.stride) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.encoder_channels.len();
        if n == 0 || self.decoder_channels.len() != n {
            return Err(Error::Config(format!(
                "U-Net needs equal encoder ({n}) and decoder ({}) stage counts",
                self.decoder_channels.len()
            )));
        }
        if self.encoder_channels[n - 1] != self.bottleneck_dim {
            return Err(Error::Config(format!(
                "last encoder stage has {} channels but bottleneck_dim is {}",
                self.encoder_channels[n - 1],
                self.bottleneck_dim
            )));
        }
        if self.decoder_channels[n - 1] != 3 {
            return Err(Error::Config(
                "last decoder stage must emit 3 channels".into(),
            ));
        }
        if self.stride != 2 || self.filter_size < 2 || !(self.filter_size - self.stride).is_multiple_of(2) {
            return Err(Error::Config(format!(
                "unsupported filter/stride {}x{} (stride must be 2, filter - stride even)",
                self.filter_size, self.stride
            )));
        }
        if !self.hr_size.is_multiple_of(1 << n) {
            return Err(Error::Config(format!(
                "hr_size {} cannot be halved {n} times",
                self.hr_size
            )));
        }
        if self.lr_size == 0 || !self.hr_size.is_multiple_of(self.lr_size) {
            return Err(Error::Config(
                "hr_size must be a multiple of lr_size".into(),
            ));
        }
        Ok(())
    }

    /// Spatial size after each encoder stage.
    pub fn encoder_sizes(&self) -> Vec<usize> {
        (1..=self.stages()).map(|i| self.hr_size >> i).collect()
    }

    pub fn bottleneck_size(&self) -> usize {
        self.hr_size >> self.stages()
    }

    /// Input channels of each decoder stage under this configuration.
    pub fn decoder_input_channels(&self) -> Vec<usize> {
        let n = self.stages();
        (0..n)
            .map(|d| {
                if d == 0 {
                    2 * self.bottleneck_dim
                        + if self.view_conditioning {
                            self.bottleneck_dim
                        } else {
                            0
                        }
                } else {
                    let skip = if self.skips_enabled {
                        2 * self.encoder_channels[n - 1 - d]
                    } else {
                        0
                    };
                    self.decoder_channels[d - 1] + skip
                }
            })
            .collect()
    }
}

/// Activations recorded by [`FineGenerator::forward_probed`].
#[derive(Debug, Default)]
pub struct FineProbe {
    /// When set, the fused bottleneck is replaced by zeros before decoding.
    pub zero_bottleneck: bool,
    pub lr_bottleneck: Option<Tensor>,
    pub cond_bottleneck: Option<Tensor>,
    pub decoder_inputs: Vec<Tensor>,
}

struct EncoderPath {
    convs: Vec<Conv2d>,
    norms: Vec<Option<BatchNorm2d>>,
}

impl EncoderPath {
    fn new(store: &mut ParamStore, prefix: &str, config: &FineConfig) -> Result<Self> {
        let sizes = config.encoder_sizes();
        let p = config.padding();
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut in_c = 3;
        for (i, &c) in config.encoder_channels.iter().enumerate() {
            convs.push(Conv2d::new(
                store,
                &format!("{prefix}conv{i}"),
                in_c,
                c,
                config.filter_size,
                config.stride,
                p,
                p,
            )?);
            norms.push(if i > 0 && sizes[i] > 1 {
                Some(BatchNorm2d::new(store, &format!("{prefix}bn{i}"), c)?)
            } else {
                None
            });
            in_c = c;
        }
        Ok(Self { convs, norms })
    }

    /// Activations after every stage; the last one is the bottleneck.
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let mut x = x.clone();
        let mut out = Vec::with_capacity(self.convs.len());
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            x = conv.forward(&x)?;
            if let Some(bn) = norm {
                x = bn.forward(&x, mode)?;
            }
            x = leaky_relu(&x)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

pub struct FineGenerator {
    config: FineConfig,
    lr_path: EncoderPath,
    cond_path: EncoderPath,
    view_embedding: Option<Embedding>,
    dec_layers: Vec<ConvTranspose2d>,
    dec_norms: Vec<Option<BatchNorm2d>>,
}

impl FineGenerator {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &FineConfig) -> Result<Self> {
        config.validate()?;
        let lr_path = EncoderPath::new(store, &format!("{prefix}lr_enc."), config)?;
        let cond_path = EncoderPath::new(store, &format!("{prefix}cond_enc."), config)?;
        let view_embedding = if config.view_conditioning {
            Some(Embedding::new(
                store,
                &format!("{prefix}view_embedding"),
                ViewLabel::COUNT,
                config.bottleneck_dim,
            )?)
        } else {
            None
        };
        let inputs = config.decoder_input_channels();
        let n = config.stages();
        let p = config.padding();
        let mut dec_layers = Vec::with_capacity(n);
        let mut dec_norms = Vec::with_capacity(n);
        for (d, (&in_c, &out_c)) in inputs.iter().zip(&config.decoder_channels).enumerate() {
            dec_layers.push(ConvTranspose2d::new(
                store,
                &format!("{prefix}dec.deconv{d}"),
                in_c,
                out_c,
                config.filter_size,
                config.stride,
                p,
                0,
            )?);
            dec_norms.push(if d + 1 < n {
                Some(BatchNorm2d::new(
                    store,
                    &format!("{prefix}dec.bn{d}"),
                    out_c,
                )?)
            } else {
                None
            });
        }
        let gen = Self {
            config: config.clone(),
            lr_path,
            cond_path,
            view_embedding,
            dec_layers,
            dec_norms,
        };
        gen.check_skip_wiring()?;
        Ok(gen)
    }

    /// Decoder stage `d` must accept previous output plus both mirrored encoder outputs.
    fn check_skip_wiring(&self) -> Result<()> {
        let n = self.config.stages();
        for d in 1..n {
            let mut expected = self.dec_layers[d - 1].out_channels();
            if self.config.skips_enabled {
                expected += self.lr_path.convs[n - 1 - d].out_channels()
                    + self.cond_path.convs[n - 1 - d].out_channels();
            }
            if self.dec_layers[d].in_channels() != expected {
                return Err(Error::Config(format!(
                    "decoder stage {d} has {} input channels, wiring requires {expected}",
                    self.dec_layers[d].in_channels()
                )));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &FineConfig {
        &self.config
    }

    pub fn decoder_input_channels(&self) -> Vec<usize> {
        self.dec_layers.iter().map(|l| l.in_channels()).collect()
    }

    pub fn forward(
        &self,
        lr: &Tensor,
        cond: &Tensor,
        views: Option<&[ViewLabel]>,
        mode: Mode,
    ) -> Result<Tensor> {
        self.forward_probed(lr, cond, views, mode, None)
    }

    /// `lr: [B, 3, lr, lr]`, `cond: [B, 3, hr, hr]` -> `[B, 3, hr, hr]` in `[-1, 1]`.
    pub fn forward_probed(
        &self,
        lr: &Tensor,
        cond: &Tensor,
        views: Option<&[ViewLabel]>,
        mode: Mode,
        mut probe: Option<&mut FineProbe>,
    ) -> Result<Tensor> {
        let (hr, lrs) = (self.config.hr_size, self.config.lr_size);
        let lr_dims = lr.dims();
        if lr_dims.len() != 4 || lr_dims[1] != 3 || lr_dims[2] != lrs || lr_dims[3] != lrs {
            return Err(Error::shape(
                "fine_forward (lr_image)",
                format!("[B, 3, {lrs}, {lrs}]"),
                format!("{lr_dims:?}"),
            ));
        }
        let c_dims = cond.dims();
        if c_dims.len() != 4
            || c_dims[1] != 3
            || c_dims[2] != hr
            || c_dims[3] != hr
            || c_dims[0] != lr_dims[0]
        {
            return Err(Error::shape(
                "fine_forward (cond_image)",
                format!("[{}, 3, {hr}, {hr}]", lr_dims[0]),
                format!("{c_dims:?}"),
            ));
        }
        let lr_up = lr.upsample_nearest2d(hr, hr)?;
        let lr_feats = self.lr_path.forward(&lr_up, mode)?;
        let cond_feats = self.cond_path.forward(cond, mode)?;
        let n = self.config.stages();
        let mut fused = Tensor::cat(&[&lr_feats[n - 1], &cond_feats[n - 1]], 1)?;
        if let Some(emb) = &self.view_embedding {
            let views = views.ok_or_else(|| {
                Error::InvalidArgument("view conditioning requires target views".into())
            })?;
            let ids: Vec<usize> = views.iter().map(|v| v.index()).collect();
            let (b, _, h, w) = fused.dims4()?;
            let v = emb
                .forward(&ids)?
                .reshape((b, emb.dim(), 1, 1))?
                .broadcast_as((b, emb.dim(), h, w))?;
            fused = Tensor::cat(&[&fused, &v.contiguous()?], 1)?;
        }
        if let Some(p) = probe.as_deref_mut() {
            p.lr_bottleneck = Some(lr_feats[n - 1].clone());
            p.cond_bottleneck = Some(cond_feats[n - 1].clone());
            if p.zero_bottleneck {
                fused = fused.zeros_like()?;
            }
        }
        let mut x = fused;
        for d in 0..n {
            if d > 0 && self.config.skips_enabled {
                x = Tensor::cat(&[&x, &lr_feats[n - 1 - d], &cond_feats[n - 1 - d]], 1)?;
            }
            if let Some(p) = probe.as_deref_mut() {
                p.decoder_inputs.push(x.clone());
            }
            x = self.dec_layers[d].forward(&x)?;
            x = match &self.dec_norms[d] {
                Some(bn) => bn.forward(&x, mode)?.relu()?,
                None => x.tanh()?,
            };
        }
        Ok(x)
    }

    /// Single-pair refinement with running batch-norm statistics.
    pub fn fine_forward(
        &self,
        lr_image: &ImageTensor,
        cond_image: &ImageTensor,
        view: Option<ViewLabel>,
    ) -> Result<ImageTensor> {
        lr_image.expect_square(self.config.lr_size, "fine_forward (lr_image)")?;
        cond_image.expect_square(self.config.hr_size, "fine_forward (cond_image)")?;
        let (dt, dev) = self.dtype_device();
        let lr = lr_image.to_tensor(dt, &dev)?;
        let cond = cond_image.to_tensor(dt, &dev)?;
        let views = view.map(|v| vec![v]);
        let out = self.forward(&lr, &cond, views.as_deref(), Mode::Eval)?;
        ImageTensor::from_tensor(&out)
    }

    fn dtype_device(&self) -> (DType, candle_core::Device) {
        let w = self.lr_path.convs[0].weight();
        (w.dtype(), w.device().clone())
    }
}

/// Components of the generator objective; `total = adv + lambda_l1 * l1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss<T> {
    pub total: T,
    pub adv: T,
    pub l1: T,
}

/// Adversarial term form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// `log(1 - D(fake))`, minimized.
    #[default]
    Saturating,
    /// `-log D(fake)`.
    NonSaturating,
}

/// Probability clamp applied inside loss evaluation only.
pub const PROB_EPS: f64 = 1e-7;

/// Scalar generator loss for one pair. `d_score_fake` must lie strictly inside `(0, 1)`.
pub fn generator_loss(
    d_score_fake: f64,
    fake: &ImageTensor,
    target: &ImageTensor,
    lambda_l1: f64,
    form: AdversarialForm,
) -> Result<GeneratorLoss<f64>> {
    if !(d_score_fake > 0.0 && d_score_fake < 1.0) {
        return Err(Error::Domain {
            context: "generator_loss",
            value: d_score_fake,
            expected: "d_score_fake in (0, 1)",
        });
    }
    let l1 = fake.l1_distance(target)?;
    let adv = match form {
        AdversarialForm::Saturating => (1.0 - d_score_fake).ln(),
        AdversarialForm::NonSaturating => -d_score_fake.ln(),
    };
    Ok(GeneratorLoss {
        total: adv + lambda_l1 * l1,
        adv,
        l1,
    })
}

/// Batched, differentiable generator loss; `d_fake: [B]` probabilities.
pub fn generator_loss_tensor(
    d_fake: &Tensor,
    fake: &Tensor,
    target: &Tensor,
    lambda_l1: f64,
    form: AdversarialForm,
) -> Result<GeneratorLoss<Tensor>> {
    let p = d_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let adv = match form {
        AdversarialForm::Saturating => p.affine(-1.0, 1.0)?.log()?.mean_all()?,
        AdversarialForm::NonSaturating => p.log()?.mean_all()?.neg()?,
    };
    let l1 = l1_tensor(fake, target)?;
    let total = if lambda_l1 == 0.0 {
        adv.clone()
    } else {
        (&adv + (&l1 * lambda_l1)?)?
    };
    Ok(GeneratorLoss { total, adv, l1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let c = FineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.encoder_sizes(), vec![64, 32, 16, 8, 4, 2, 1]);
        assert_eq!(c.bottleneck_size(), 1);
        assert_eq!(
            c.decoder_input_channels(),
            vec![
                1024,
                512 + 1024,
                512 + 1024,
                512 + 1024,
                256 + 512,
                128 + 256,
                64 + 128
            ]
        );
        let no_skip = FineConfig {
            skips_enabled: false,
            ..c
        };
        assert_eq!(
            no_skip.decoder_input_channels(),
            vec![1024, 512, 512, 512, 256, 128, 64]
        );
        FineConfig::desk().validate().unwrap();
    }

    #[test]
    fn generator_loss_cases() {
        let a = ImageTensor::filled(2, 2, -1.0).unwrap();
        let b = ImageTensor::filled(2, 2, 1.0).unwrap();
        let l = generator_loss(0.5, &a, &a, 0.0, AdversarialForm::Saturating).unwrap();
        assert!((l.total - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(l.l1, 0.0);
        let l = generator_loss(0.5, &a, &b, 100.0, AdversarialForm::Saturating).unwrap();
        assert_eq!(l.l1, 2.0);
        assert!((l.total - (0.5f64.ln() + 200.0)).abs() < 1e-12);
        let l = generator_loss(0.25, &a, &a, 0.0, AdversarialForm::NonSaturating).unwrap();
        assert!((l.adv + 0.25f64.ln()).abs() < 1e-12);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(generator_loss(bad, &a, &a, 1.0, AdversarialForm::Saturating).is_err());
        }
    }
}
