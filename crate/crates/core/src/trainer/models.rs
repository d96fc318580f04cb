use candle_core::{DType, Tensor};

use super::checkpoint::{Checkpoint, Stage};
use super::config::ModelConfig;
use crate::adversary::Discriminator;
use crate::coarse::CoarseGenerator;
use crate::datakit::{stack_images, ImageTensor, ViewLabel};
use crate::error::{Error, Result};
use crate::fine::FineGenerator;
use crate::nn::{Mode, ParamStore};

pub const COARSE_PREFIX: &str = "coarse.";
pub const COARSE_DISC_PREFIX: &str = "coarse_disc.";
pub const FINE_PREFIX: &str = "fine.";
pub const DISC_PREFIX: &str = "disc.";

/// Independent 64-bit seed for `tag` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Coarse generator plus, for the adversarial ablation, its low-resolution discriminator.
pub struct CoarseModel {
    pub store: ParamStore,
    pub generator: CoarseGenerator,
    pub disc: Option<Discriminator>,
}

impl CoarseModel {
    pub fn new(models: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        models.validate()?;
        let mut store = ParamStore::new(dtype, derive_seed(seed, 1));
        let generator = CoarseGenerator::new(&mut store, COARSE_PREFIX, &models.coarse)?;
        let disc = match &models.coarse_disc {
            Some(cfg) => Some(Discriminator::new(&mut store, COARSE_DISC_PREFIX, cfg)?),
            None => None,
        };
        Ok(Self {
            store,
            generator,
            disc,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_stage(Stage::Coarse)?;
        let model = Self::new(&ckpt.meta.models, ckpt.meta.seed, DType::F32)?;
        model.store.load_snapshot(&ckpt.tensors)?;
        Ok(model)
    }
}

/// Fine generator and conditional discriminator.
pub struct FineModel {
    pub store: ParamStore,
    pub generator: FineGenerator,
    pub disc: Discriminator,
}

impl FineModel {
    pub fn new(models: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        models.validate()?;
        let mut store = ParamStore::new(dtype, derive_seed(seed, 2));
        let generator = FineGenerator::new(&mut store, FINE_PREFIX, &models.fine)?;
        let disc = Discriminator::new(&mut store, DISC_PREFIX, &models.disc)?;
        Ok(Self {
            store,
            generator,
            disc,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_stage(Stage::Fine)?;
        let model = Self::new(&ckpt.meta.models, ckpt.meta.seed, DType::F32)?;
        model.store.load_snapshot(&ckpt.tensors)?;
        Ok(model)
    }
}

/// Both trained stages, ready for inference.
pub struct Pipeline {
    pub coarse: CoarseModel,
    pub fine: FineModel,
}

impl Pipeline {
    pub fn from_checkpoints(coarse: &Checkpoint, fine: &Checkpoint) -> Result<Self> {
        coarse.expect_stage(Stage::Coarse)?;
        fine.expect_stage(Stage::Fine)?;
        if coarse.meta.models.coarse != fine.meta.models.coarse {
            return Err(Error::ConfigMismatch(
                "the fine checkpoint was trained on a different coarse configuration".into(),
            ));
        }
        Ok(Self {
            coarse: CoarseModel::from_checkpoint(coarse)?,
            fine: FineModel::from_checkpoint(fine)?,
        })
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        Self::from_checkpoints(
            &Checkpoint::load(dir, Stage::Coarse)?,
            &Checkpoint::load(dir, Stage::Fine)?,
        )
    }

    pub fn latent_dim(&self) -> usize {
        self.generator_config().latent_dim
    }

    pub fn hr_size(&self) -> usize {
        self.generator_config().hr_size
    }

    fn generator_config(&self) -> &crate::coarse::CoarseConfig {
        self.coarse.generator.config()
    }

    /// Coarse `[B, 3, lr, lr]` and fine `[B, 3, hr, hr]` outputs for a batch.
    pub fn infer_tensors(
        &self,
        cond: &Tensor,
        views: &[ViewLabel],
        noise: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let coarse = self
            .coarse
            .generator
            .generate(cond, views, noise, Mode::Eval)?;
        let fine = self
            .fine
            .generator
            .forward(&coarse, cond, Some(views), Mode::Eval)?;
        Ok((coarse, fine))
    }

    /// `noise` holds `latent_dim` values per image, row-major.
    pub fn infer_batch(
        &self,
        conds: &[&ImageTensor],
        views: &[ViewLabel],
        noise: &[f64],
    ) -> Result<(Vec<ImageTensor>, Vec<ImageTensor>)> {
        let m = self.latent_dim();
        if conds.len() != views.len() || noise.len() != conds.len() * m {
            return Err(Error::shape(
                "infer",
                format!("{} views and {} noise values", conds.len(), conds.len() * m),
                format!("{} views and {} noise values", views.len(), noise.len()),
            ));
        }
        for c in conds {
            c.expect_square(self.hr_size(), "infer (cond_image)")?;
        }
        let dtype = self.coarse.store.dtype();
        let device = self.coarse.store.device().clone();
        let cond = stack_images(conds, dtype, &device)?;
        let noise = Tensor::from_slice(noise, (conds.len(), m), &device)?.to_dtype(dtype)?;
        let (coarse, fine) = self.infer_tensors(&cond, views, &noise)?;
        Ok((
            ImageTensor::batch_from_tensor(&coarse)?,
            ImageTensor::batch_from_tensor(&fine)?,
        ))
    }

    pub fn infer(
        &self,
        cond_image: &ImageTensor,
        view: ViewLabel,
        noise: &[f64],
    ) -> Result<(ImageTensor, ImageTensor)> {
        let (mut c, mut f) = self.infer_batch(&[cond_image], &[view], noise)?;
        Ok((c.remove(0), f.remove(0)))
    }
}

/// Runs the coarse then the fine generator on one condition image.
pub fn infer(
    cond_image: &ImageTensor,
    view: ViewLabel,
    coarse_ckpt: &Checkpoint,
    fine_ckpt: &Checkpoint,
    noise: &[f64],
) -> Result<(ImageTensor, ImageTensor)> {
    Pipeline::from_checkpoints(coarse_ckpt, fine_ckpt)?.infer(cond_image, view, noise)
}
