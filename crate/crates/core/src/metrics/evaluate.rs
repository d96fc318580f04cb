use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::inception::{default_splits, inception_score_from_predictions, ClassifierHandle};
use super::ssim::{ssim, SsimMode, SsimParams};
use crate::datakit::{ImageTensor, TrainingSample, ViewLabel};
use crate::error::{Error, Result};
use crate::trainer::{config_digest, Pipeline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ssim: SsimParams,
    /// Inception Score splits; `None` picks the default for the sample count.
    pub splits: Option<usize>,
    pub noise_seed: u64,
    /// Also score nearest-upsampled coarse outputs.
    pub include_coarse: bool,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ssim: SsimParams::default(),
            splits: None,
            noise_seed: 0,
            include_coarse: true,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub group_id: String,
    pub cond_view: ViewLabel,
    pub target_view: ViewLabel,
    pub ssim_fine: f64,
    pub ssim_coarse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ssim: Summary,
    pub inception_score: Summary,
    pub n_samples: usize,
    pub config_digest: String,
    pub splits: usize,
    pub ssim_mode: SsimMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coarse_ssim: Option<Summary>,
    #[serde(skip)]
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn per_sample_csv(&self) -> String {
        let mut out = String::from("group_id,cond_view,target_view,ssim_fine,ssim_coarse\n");
        for s in &self.per_sample {
            let coarse = s.ssim_coarse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.group_id, s.cond_view, s.target_view, s.ssim_fine, coarse
            );
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_per_sample_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.per_sample_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Generated images for a test set, in sample order.
pub struct Generated {
    pub coarse: Vec<ImageTensor>,
    pub fine: Vec<ImageTensor>,
    pub targets: Vec<ImageTensor>,
}

/// Runs the pipeline over `samples` with prior noise drawn from `noise_seed`.
pub fn generate_for_samples(
    samples: &[TrainingSample],
    pipeline: &Pipeline,
    noise_seed: u64,
    batch_size: usize,
) -> Result<Generated> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hr = pipeline.hr_size();
    let m = pipeline.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut out = Generated {
        coarse: Vec::with_capacity(samples.len()),
        fine: Vec::with_capacity(samples.len()),
        targets: Vec::with_capacity(samples.len()),
    };
    for chunk in samples.chunks(batch_size.max(1)) {
        let conds: Vec<ImageTensor> = chunk
            .iter()
            .map(|s| s.cond_image.resize_square(hr))
            .collect::<Result<_>>()?;
        let views: Vec<ViewLabel> = chunk.iter().map(|s| s.target_view).collect();
        let noise: Vec<f64> = (0..chunk.len() * m)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let (coarse, fine) =
            pipeline.infer_batch(&conds.iter().collect::<Vec<_>>(), &views, &noise)?;
        out.coarse.extend(coarse);
        out.fine.extend(fine);
        for s in chunk {
            out.targets.push(s.target_image.resize_square(hr)?);
        }
    }
    Ok(out)
}

/// Nearest-neighbour upsampling of a coarse output to `size`.
pub fn upsample_to(image: &ImageTensor, size: usize) -> Result<ImageTensor> {
    if image.height() == size {
        return Ok(image.clone());
    }
    if !size.is_multiple_of(image.height()) {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample {} to {size}",
            image.height()
        )));
    }
    image.upsample_nearest(size / image.height())
}

/// Scores already generated images against their targets.
pub fn score_generated(
    samples: &[TrainingSample],
    generated: &Generated,
    classifier: &dyn ClassifierHandle,
    options: &EvalOptions,
    config_digest: String,
) -> Result<MetricsReport> {
    let n = generated.fine.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut per_sample = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate().take(n) {
        let target = &generated.targets[i];
        let ssim_fine = ssim(&generated.fine[i], target, &options.ssim)?;
        let ssim_coarse = if options.include_coarse {
            Some(ssim(
                &upsample_to(&generated.coarse[i], target.height())?,
                target,
                &options.ssim,
            )?)
        } else {
            None
        };
        per_sample.push(SampleMetrics {
            group_id: s.group_id.clone(),
            cond_view: s.cond_view,
            target_view: s.target_view,
            ssim_fine,
            ssim_coarse,
        });
    }
    let splits = options.splits.unwrap_or_else(|| default_splits(n));
    let preds = classifier.predict_batch(&generated.fine)?;
    let (is_mean, is_std) = inception_score_from_predictions(&preds, splits)?;
    let fine: Vec<f64> = per_sample.iter().map(|s| s.ssim_fine).collect();
    let coarse: Option<Vec<f64>> = per_sample.iter().map(|s| s.ssim_coarse).collect();
    Ok(MetricsReport {
        ssim: Summary::of(&fine),
        inception_score: Summary {
            mean: is_mean,
            std: is_std,
        },
        n_samples: n,
        config_digest,
        splits,
        ssim_mode: options.ssim.mode,
        coarse_ssim: coarse.map(|c| Summary::of(&c)),
        per_sample,
    })
}

/// Generates every test sample and reports SSIM against the target and the Inception Score.
pub fn evaluate(
    samples: &[TrainingSample],
    pipeline: &Pipeline,
    classifier: &dyn ClassifierHandle,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let generated =
        generate_for_samples(samples, pipeline, options.noise_seed, options.batch_size)?;
    let digest = config_digest(&(
        pipeline.coarse.generator.config(),
        pipeline.fine.generator.config(),
        options,
        classifier.num_classes(),
    ))?;
    score_generated(samples, &generated, classifier, options, digest)
}
