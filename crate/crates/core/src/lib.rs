//! Coarse-to-fine multi-view image generation.
//!
//! A variational coarse generator produces a low-resolution image of a garment seen from a
//! requested viewpoint; a dual-path U-Net refines it to high resolution conditioned on the
//! input image, trained against a conditional patch discriminator.

pub mod adversary;
pub mod coarse;
pub mod datakit;
pub mod error;
pub mod fine;
pub mod metrics;
pub mod nn;
pub mod trainer;
pub mod viz;

pub use adversary::{discriminator_loss, DiscConfig, Discriminator};
pub use coarse::{CoarseConfig, CoarseGenerator, ElboLoss, LatentPosterior};
pub use datakit::{ImageTensor, TrainingSample, ViewLabel};
pub use error::{Error, Result};
pub use fine::{generator_loss, AdversarialForm, FineConfig, FineGenerator, GeneratorLoss};
pub use metrics::{inception_score, ssim, ClassifierHandle, MetricsReport, SsimParams};
pub use trainer::{
    infer, train_coarse, train_fine, AblationFlags, Checkpoint, Pipeline, Stage, TrainConfig,
};
