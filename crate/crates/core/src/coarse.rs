//! Variational coarse generator.
//!
//! A weight-shared convolutional encoder maps the target and the condition image to
//! `latent_dim` representations; a learned embedding maps the target view into the same
//! space. During training the three vectors parameterize a diagonal Gaussian posterior
//! over the latent `z`; at test time `z` is drawn from the standard normal prior. The
//! decoder turns `[z, cond_repr, view_emb]` into a `lr_size` x `lr_size` image.
//!
//! Stride plan (default config): encoder convs 1-5 are stride 2 with same padding
//! (128 -> 64 -> 32 -> 16 -> 8 -> 4) and conv 6 is a valid 4x4 conv (4 -> 1). The decoder
//! projects to 256 x 8 x 8, keeps 8 x 8 through the first 3x3 de-conv, doubles three times
//! (8 -> 16 -> 32 -> 64) and finishes with two resolution-preserving 5x5 de-convs.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::datakit::{ImageTensor, TrainingSample, ViewLabel};
use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, BatchNorm2d, Conv2d, ConvTranspose2d, Embedding, Linear, Mode, ParamStore,
};

pub const LOG_VARIANCE_MIN: f64 = -20.0;
pub const LOG_VARIANCE_MAX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseConfig {
    /// Latent and representation width `M_l`.
    pub latent_dim: usize,
    /// Output resolution `W_LR`.
    pub lr_size: usize,
    /// Encoder input resolution.
    pub hr_size: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_filters: Vec<usize>,
    pub fc_width: usize,
    /// Channels of the projected decoder seed (256 x 8 x 8 by default).
    pub decoder_seed_channels: usize,
    pub decoder_channels: Vec<usize>,
    pub decoder_filters: Vec<usize>,
    /// Which decoder layers double the resolution.
    pub decoder_upsample: Vec<bool>,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            latent_dim: 1024,
            lr_size: 64,
            hr_size: 128,
            encoder_channels: vec![64, 128, 256, 256, 256, 1024],
            encoder_filters: vec![5, 5, 5, 3, 3, 4],
            fc_width: 1024,
            decoder_seed_channels: 256,
            decoder_channels: vec![256, 256, 256, 128, 64, 3],
            decoder_filters: vec![3, 5, 5, 5, 5, 5],
            decoder_upsample: vec![false, true, true, true, false, false],
        }
    }
}

impl CoarseConfig {
    /// Miniature configuration for CPU-scale runs: 64 x 64 input, 32 x 32 output, `M_l = 128`.
    pub fn desk() -> Self {
        Self {
            latent_dim: 128,
            lr_size: 32,
            hr_size: 64,
            encoder_channels: vec![32, 64, 128, 128, 128],
            encoder_filters: vec![5, 5, 5, 3, 4],
            fc_width: 128,
            decoder_seed_channels: 64,
            decoder_channels: vec![64, 64, 32, 16, 16, 3],
            decoder_filters: vec![3, 5, 5, 5, 5, 5],
            decoder_upsample: vec![false, true, true, true, false, false],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.encoder_channels.len();
        if n == 0 || self.encoder_filters.len() != n {
            return Err(Error::Config(format!(
                "encoder channels ({n}) and filters ({}) must be non-empty and equal length",
                self.encoder_filters.len()
            )));
        }
        let m = self.decoder_channels.len();
        if m == 0 || self.decoder_filters.len() != m || self.decoder_upsample.len() != m {
            return Err(Error::Config(
                "decoder channels, filters and upsample flags must have equal length".into(),
            ));
        }
        if self.latent_dim != self.fc_width {
            return Err(Error::Config(format!(
                "latent_dim ({}) must equal fc_width ({})",
                self.latent_dim, self.fc_width
            )));
        }
        if self.decoder_channels[m - 1] != 3 {
            return Err(Error::Config(
                "last decoder layer must emit 3 channels".into(),
            ));
        }
        let last_in = self.encoder_sizes_before_last()?;
        if last_in != self.encoder_filters[n - 1] {
            return Err(Error::Config(format!(
                "final encoder conv must be a valid {0}x{0} conv over a {last_in}x{last_in} map",
                self.encoder_filters[n - 1]
            )));
        }
        let ups = self.decoder_upsample.iter().filter(|u| **u).count();
        if !self.lr_size.is_multiple_of(1 << ups) {
            return Err(Error::Config(format!(
                "lr_size {} not divisible by 2^{ups}",
                self.lr_size
            )));
        }
        for (k, up) in self.decoder_filters.iter().zip(&self.decoder_upsample) {
            if !up && k % 2 == 0 {
                return Err(Error::Config(format!(
                    "resolution-preserving de-conv needs an odd filter, got {k}"
                )));
            }
        }
        if !self.hr_size.is_multiple_of(self.lr_size) {
            return Err(Error::Config(
                "hr_size must be a multiple of lr_size".into(),
            ));
        }
        Ok(())
    }

    fn encoder_sizes_before_last(&self) -> Result<usize> {
        let mut size = self.hr_size;
        for _ in 0..self.encoder_channels.len() - 1 {
            if !size.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "encoder cannot halve odd size {size}"
                )));
            }
            size /= 2;
        }
        Ok(size)
    }

    /// Spatial size after each encoder conv.
    pub fn encoder_sizes(&self) -> Vec<usize> {
        let n = self.encoder_channels.len();
        let mut sizes = Vec::with_capacity(n);
        let mut size = self.hr_size;
        for _ in 0..n - 1 {
            size /= 2;
            sizes.push(size);
        }
        sizes.push(1);
        sizes
    }

    /// Spatial size of the decoder seed.
    pub fn decoder_seed_size(&self) -> usize {
        let ups = self.decoder_upsample.iter().filter(|u| **u).count();
        self.lr_size >> ups
    }

    /// Spatial size after each decoder layer.
    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut size = self.decoder_seed_size();
        self.decoder_upsample
            .iter()
            .map(|&up| {
                if up {
                    size *= 2;
                }
                size
            })
            .collect()
    }
}

/// Diagonal Gaussian `q(z | target, cond, view)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

/// The three terms of the coarse objective. `total = kl_weight * kl + recon`.
#[derive(Debug, Clone)]
pub struct ElboTerms<T> {
    pub total: T,
    pub kl: T,
    pub recon: T,
}

pub type ElboLoss = ElboTerms<f64>;

/// `z = mean + exp(0.5 * log_variance) * noise`.
pub fn sample_latent(posterior: &LatentPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    let n = posterior.mean.len();
    if posterior.log_variance.len() != n || noise.len() != n {
        return Err(Error::shape(
            "sample_latent",
            format!("vectors of length {n}"),
            format!(
                "log_variance {} / noise {}",
                posterior.log_variance.len(),
                noise.len()
            ),
        ));
    }
    Ok(posterior
        .mean
        .iter()
        .zip(&posterior.log_variance)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Per-dimension `KL(N(mean, exp(lv)) || N(0, 1))`, each term non-negative.
pub fn kl_per_dimension(mean: &[f64], log_variance: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(log_variance)
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .collect()
}

pub fn kl_standard_normal(mean: &[f64], log_variance: &[f64]) -> f64 {
    kl_per_dimension(mean, log_variance).iter().sum()
}

/// Batch mean of the per-sample KL to the standard normal; `mean`, `log_variance: [B, M]`.
pub fn kl_tensor(mean: &Tensor, log_variance: &Tensor) -> Result<Tensor> {
    let terms = ((log_variance + 1.0)? - mean.sqr()?)?.sub(&log_variance.exp()?)?;
    Ok((terms.sum(1)?.mean_all()? * -0.5)?)
}

/// Mean absolute error over all elements.
pub fn l1_tensor(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            "l1",
            format!("{:?}", a.dims()),
            format!("{:?}", b.dims()),
        ));
    }
    Ok(a.sub(b)?.abs()?.mean_all()?)
}

pub struct CoarseGenerator {
    config: CoarseConfig,
    enc_convs: Vec<Conv2d>,
    enc_norms: Vec<Option<BatchNorm2d>>,
    enc_fc: Linear,
    view_embedding: Embedding,
    post_mean: Linear,
    post_log_variance: Linear,
    dec_fc: Linear,
    dec_layers: Vec<ConvTranspose2d>,
    dec_norms: Vec<Option<BatchNorm2d>>,
}

impl CoarseGenerator {
    /// Registers all parameters under `prefix` in `store`.
    pub fn new(store: &mut ParamStore, prefix: &str, config: &CoarseConfig) -> Result<Self> {
        config.validate()?;
        let m = config.latent_dim;
        let n_enc = config.encoder_channels.len();
        let sizes = config.encoder_sizes();
        let mut enc_convs = Vec::with_capacity(n_enc);
        let mut enc_norms = Vec::with_capacity(n_enc);
        let mut in_c = 3;
        for (i, (&c, &k)) in config
            .encoder_channels
            .iter()
            .zip(&config.encoder_filters)
            .enumerate()
        {
            let name = format!("{prefix}enc.conv{i}");
            let conv = if i + 1 == n_enc {
                Conv2d::new(store, &name, in_c, c, k, 1, 0, 0)?
            } else {
                Conv2d::new(store, &name, in_c, c, k, 2, (k - 1) / 2, (k - 1) / 2)?
            };
            enc_convs.push(conv);
            let norm = if i > 0 && sizes[i] > 1 {
                Some(BatchNorm2d::new(store, &format!("{prefix}enc.bn{i}"), c)?)
            } else {
                None
            };
            enc_norms.push(norm);
            in_c = c;
        }
        let enc_fc = Linear::new(store, &format!("{prefix}enc.fc"), in_c, config.fc_width)?;
        let view_embedding = Embedding::new(
            store,
            &format!("{prefix}view_embedding"),
            ViewLabel::COUNT,
            m,
        )?;
        let post_mean = Linear::new(store, &format!("{prefix}posterior.mean"), 3 * m, m)?;
        let post_log_variance =
            Linear::new(store, &format!("{prefix}posterior.log_variance"), 3 * m, m)?;
        let seed = config.decoder_seed_size();
        let dec_fc = Linear::new(
            store,
            &format!("{prefix}dec.fc"),
            3 * m,
            config.decoder_seed_channels * seed * seed,
        )?;
        let n_dec = config.decoder_channels.len();
        let mut dec_layers = Vec::with_capacity(n_dec);
        let mut dec_norms = Vec::with_capacity(n_dec);
        let mut in_c = config.decoder_seed_channels;
        for (i, ((&c, &k), &up)) in config
            .decoder_channels
            .iter()
            .zip(&config.decoder_filters)
            .zip(&config.decoder_upsample)
            .enumerate()
        {
            let name = format!("{prefix}dec.deconv{i}");
            let layer = if up {
                // (in - 1) * 2 - 2p + k + op == 2 * in
                let p = (k - 1) / 2;
                let op = 2 + 2 * p - k;
                ConvTranspose2d::new(store, &name, in_c, c, k, 2, p, op)?
            } else {
                ConvTranspose2d::new(store, &name, in_c, c, k, 1, (k - 1) / 2, 0)?
            };
            dec_layers.push(layer);
            let norm = if i + 1 < n_dec {
                Some(BatchNorm2d::new(store, &format!("{prefix}dec.bn{i}"), c)?)
            } else {
                None
            };
            dec_norms.push(norm);
            in_c = c;
        }
        Ok(Self {
            config: config.clone(),
            enc_convs,
            enc_norms,
            enc_fc,
            view_embedding,
            post_mean,
            post_log_variance,
            dec_fc,
            dec_layers,
            dec_norms,
        })
    }

    pub fn config(&self) -> &CoarseConfig {
        &self.config
    }

    pub fn view_embedding(&self) -> &Embedding {
        &self.view_embedding
    }

    pub fn posterior_heads(&self) -> (&Linear, &Linear) {
        (&self.post_mean, &self.post_log_variance)
    }

    fn check_images(&self, images: &Tensor, size: usize, context: &'static str) -> Result<()> {
        let dims = images.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] != size || dims[3] != size {
            return Err(Error::shape(
                context,
                format!("[B, 3, {size}, {size}]"),
                format!("{dims:?}"),
            ));
        }
        Ok(())
    }

    fn check_vectors(&self, t: &Tensor, context: &'static str) -> Result<()> {
        let dims = t.dims();
        if dims.len() != 2 || dims[1] != self.config.latent_dim {
            return Err(Error::shape(
                context,
                format!("[B, {}]", self.config.latent_dim),
                format!("{dims:?}"),
            ));
        }
        Ok(())
    }

    /// Encoder activations after every conv (post-activation).
    pub fn encoder_features(&self, images: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        self.check_images(images, self.config.hr_size, "encode_image")?;
        let mut x = images.clone();
        let mut features = Vec::with_capacity(self.enc_convs.len());
        for (conv, norm) in self.enc_convs.iter().zip(&self.enc_norms) {
            x = conv.forward(&x)?;
            if let Some(bn) = norm {
                x = bn.forward(&x, mode)?;
            }
            x = leaky_relu(&x)?;
            features.push(x.clone());
        }
        Ok(features)
    }

    /// `[B, 3, hr, hr] -> [B, M_l]`.
    pub fn encode(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        let last = self
            .encoder_features(images, mode)?
            .pop()
            .expect("at least one encoder layer");
        self.enc_fc.forward(&last.flatten_from(1)?)
    }

    pub fn embed(&self, views: &[ViewLabel]) -> Result<Tensor> {
        let ids: Vec<usize> = views.iter().map(|v| v.index()).collect();
        self.view_embedding.forward(&ids)
    }

    /// Posterior mean and clamped log-variance, each `[B, M_l]`.
    pub fn posterior(
        &self,
        target_repr: &Tensor,
        cond_repr: &Tensor,
        view_emb: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        self.check_vectors(target_repr, "infer_posterior")?;
        self.check_vectors(cond_repr, "infer_posterior")?;
        self.check_vectors(view_emb, "infer_posterior")?;
        let joint = Tensor::cat(&[target_repr, cond_repr, view_emb], 1)?;
        let mean = self.post_mean.forward(&joint)?;
        let log_variance = self
            .post_log_variance
            .forward(&joint)?
            .clamp(LOG_VARIANCE_MIN, LOG_VARIANCE_MAX)?;
        Ok((mean, log_variance))
    }

    /// Decoder activations after every layer; the last entry is the tanh image.
    pub fn decoder_features(
        &self,
        z: &Tensor,
        cond_repr: &Tensor,
        view_emb: &Tensor,
        mode: Mode,
    ) -> Result<Vec<Tensor>> {
        self.check_vectors(z, "decode_coarse")?;
        self.check_vectors(cond_repr, "decode_coarse")?;
        self.check_vectors(view_emb, "decode_coarse")?;
        let b = z.dim(0)?;
        let seed = self.config.decoder_seed_size();
        let joint = Tensor::cat(&[z, cond_repr, view_emb], 1)?;
        let mut x = self
            .dec_fc
            .forward(&joint)?
            .reshape((b, self.config.decoder_seed_channels, seed, seed))?
            .relu()?;
        let mut features = Vec::with_capacity(self.dec_layers.len());
        for (layer, norm) in self.dec_layers.iter().zip(&self.dec_norms) {
            x = layer.forward(&x)?;
            x = match norm {
                Some(bn) => bn.forward(&x, mode)?.relu()?,
                None => x.tanh()?,
            };
            features.push(x.clone());
        }
        Ok(features)
    }

    /// `[B, M_l] x 3 -> [B, 3, lr, lr]` in `[-1, 1]`.
    pub fn decode(
        &self,
        z: &Tensor,
        cond_repr: &Tensor,
        view_emb: &Tensor,
        mode: Mode,
    ) -> Result<Tensor> {
        Ok(self
            .decoder_features(z, cond_repr, view_emb, mode)?
            .pop()
            .expect("at least one decoder layer"))
    }

    /// Downsamples `[B, 3, hr, hr]` targets to the coarse resolution by box filtering.
    pub fn low_res_target(&self, target: &Tensor) -> Result<Tensor> {
        let factor = self.config.hr_size / self.config.lr_size;
        if factor == 1 {
            return Ok(target.clone());
        }
        Ok(target.avg_pool2d(factor)?)
    }

    /// Training-path objective over a batch; `noise: [B, M_l]`.
    pub fn elbo(
        &self,
        target: &Tensor,
        cond: &Tensor,
        views: &[ViewLabel],
        noise: &Tensor,
        kl_weight: f64,
        mode: Mode,
    ) -> Result<ElboTerms<Tensor>> {
        self.check_images(target, self.config.hr_size, "elbo_loss")?;
        self.check_images(cond, self.config.hr_size, "elbo_loss")?;
        let b = target.dim(0)?;
        // Shared weights: both paths go through one encoder call.
        let reprs = self.encode(&Tensor::cat(&[target, cond], 0)?, mode)?;
        let target_repr = reprs.narrow(0, 0, b)?;
        let cond_repr = reprs.narrow(0, b, b)?;
        let view_emb = self.embed(views)?;
        let (mean, log_variance) = self.posterior(&target_repr, &cond_repr, &view_emb)?;
        self.check_vectors(noise, "sample_latent")?;
        let z = (&mean + (log_variance.affine(0.5, 0.0)?.exp()? * noise)?)?;
        let image = self.decode(&z, &cond_repr, &view_emb, mode)?;
        let kl = kl_tensor(&mean, &log_variance)?;
        let recon = l1_tensor(&image, &self.low_res_target(target)?)?;
        let total = ((&kl * kl_weight)? + &recon)?;
        Ok(ElboTerms { total, kl, recon })
    }

    /// Test-path generation with `z` supplied (normally drawn from the prior).
    pub fn generate(
        &self,
        cond: &Tensor,
        views: &[ViewLabel],
        noise: &Tensor,
        mode: Mode,
    ) -> Result<Tensor> {
        let cond_repr = self.encode(cond, mode)?;
        let view_emb = self.embed(views)?;
        self.decode(noise, &cond_repr, &view_emb, mode)
    }

    // Single-image conveniences. These evaluate batch norm with running statistics and
    // therefore have no side effects on the parameters.

    fn dtype(&self) -> DType {
        self.enc_fc.weight().dtype()
    }

    fn vector(&self, v: &[f64], context: &'static str) -> Result<Tensor> {
        if v.len() != self.config.latent_dim {
            return Err(Error::shape(
                context,
                format!("length {}", self.config.latent_dim),
                v.len(),
            ));
        }
        Ok(
            Tensor::from_slice(v, (1, v.len()), self.enc_fc.weight().device())?
                .to_dtype(self.dtype())?,
        )
    }

    fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
        Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?)
    }

    pub fn encode_image(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        image.expect_square(self.config.hr_size, "encode_image")?;
        let x = image.to_tensor(self.dtype(), self.enc_fc.weight().device())?;
        Self::to_vec(&self.encode(&x, Mode::Eval)?)
    }

    pub fn embed_view(&self, view: ViewLabel) -> Result<Vec<f64>> {
        Self::to_vec(&self.embed(&[view])?)
    }

    pub fn infer_posterior(
        &self,
        target_repr: &[f64],
        cond_repr: &[f64],
        view_emb: &[f64],
    ) -> Result<LatentPosterior> {
        let (mean, log_variance) = self.posterior(
            &self.vector(target_repr, "infer_posterior")?,
            &self.vector(cond_repr, "infer_posterior")?,
            &self.vector(view_emb, "infer_posterior")?,
        )?;
        Ok(LatentPosterior {
            mean: Self::to_vec(&mean)?,
            log_variance: Self::to_vec(&log_variance)?,
        })
    }

    pub fn decode_coarse(
        &self,
        z: &[f64],
        cond_repr: &[f64],
        view_emb: &[f64],
    ) -> Result<ImageTensor> {
        let image = self.decode(
            &self.vector(z, "decode_coarse")?,
            &self.vector(cond_repr, "decode_coarse")?,
            &self.vector(view_emb, "decode_coarse")?,
            Mode::Eval,
        )?;
        ImageTensor::from_tensor(&image)
    }

    pub fn elbo_loss(
        &self,
        sample: &TrainingSample,
        noise: &[f64],
        kl_weight: f64,
    ) -> Result<ElboLoss> {
        let device = self.enc_fc.weight().device();
        let target = sample.target_image.to_tensor(self.dtype(), device)?;
        let cond = sample.cond_image.to_tensor(self.dtype(), device)?;
        let noise = self.vector(noise, "elbo_loss")?;
        let terms = self.elbo(
            &target,
            &cond,
            &[sample.target_view],
            &noise,
            kl_weight,
            Mode::Eval,
        )?;
        Ok(ElboLoss {
            total: terms.total.to_dtype(DType::F64)?.to_scalar()?,
            kl: terms.kl.to_dtype(DType::F64)?.to_scalar()?,
            recon: terms.recon.to_dtype(DType::F64)?.to_scalar()?,
        })
    }

    pub fn generate_coarse(
        &self,
        cond_image: &ImageTensor,
        view: ViewLabel,
        noise: &[f64],
    ) -> Result<ImageTensor> {
        cond_image.expect_square(self.config.hr_size, "generate_coarse")?;
        let cond = cond_image.to_tensor(self.dtype(), self.enc_fc.weight().device())?;
        let out = self.generate(
            &cond,
            &[view],
            &self.vector(noise, "generate_coarse")?,
            Mode::Eval,
        )?;
        ImageTensor::from_tensor(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stride_plan() {
        let c = CoarseConfig::default();
        c.validate().unwrap();
        assert_eq!(c.encoder_sizes(), vec![64, 32, 16, 8, 4, 1]);
        assert_eq!(c.decoder_seed_size(), 8);
        assert_eq!(c.decoder_sizes(), vec![8, 16, 32, 64, 64, 64]);
        CoarseConfig::desk().validate().unwrap();
        assert_eq!(CoarseConfig::desk().decoder_sizes().last(), Some(&32));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = CoarseConfig {
            fc_width: 512,
            ..CoarseConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = CoarseConfig::default();
        c.encoder_filters.pop();
        assert!(c.validate().is_err());
        let mut c = CoarseConfig::default();
        c.encoder_filters[5] = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sample_latent_cases() {
        let p = LatentPosterior {
            mean: vec![1.0],
            log_variance: vec![4f64.ln()],
        };
        assert!((sample_latent(&p, &[0.5]).unwrap()[0] - 2.0).abs() < 1e-12);
        let p = LatentPosterior {
            mean: vec![0.3, -0.7],
            log_variance: vec![0.0, 0.0],
        };
        assert_eq!(sample_latent(&p, &[0.0, 0.0]).unwrap(), p.mean);
        assert_eq!(sample_latent(&p, &[1.0, 2.0]).unwrap(), vec![1.3, 1.3]);
        assert!(sample_latent(&p, &[1.0]).is_err());
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_standard_normal(&[0.0; 8], &[0.0; 8]), 0.0);
        assert_eq!(kl_standard_normal(&[1.0; 1024], &[0.0; 1024]), 512.0);
    }

    proptest::proptest! {
        #[test]
        fn kl_terms_are_non_negative(
            mean in proptest::collection::vec(-10.0f64..10.0, 1..16),
            lv in proptest::collection::vec(-20.0f64..20.0, 16),
        ) {
            let lv = &lv[..mean.len()];
            for term in kl_per_dimension(&mean, lv) {
                proptest::prop_assert!(term >= -1e-12);
            }
        }

        #[test]
        fn zero_noise_returns_mean(mean in proptest::collection::vec(-5.0f64..5.0, 1..32)) {
            let p = LatentPosterior { log_variance: vec![0.7; mean.len()], mean: mean.clone() };
            proptest::prop_assert_eq!(sample_latent(&p, &vec![0.0; mean.len()]).unwrap(), mean);
        }
    }
}
