//! Small convolutional shape classifier used as the Inception Score backend.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inception::ClassifierHandle;
use crate::datakit::{stack_images, ImageGroup, ImageTensor, ViewLabel, NUM_SHAPE_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Adam, AdamConfig, Conv2d, Linear, ParamStore};

pub const CLASSIFIER_WEIGHTS: &str = "classifier.weights";
pub const CLASSIFIER_META: &str = "classifier.meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            channels: vec![16, 32, 32],
            num_classes: NUM_SHAPE_CLASSES,
            seed: 7,
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
        }
    }
}

pub struct ShapeClassifier {
    config: ClassifierConfig,
    store: ParamStore,
    convs: Vec<Conv2d>,
    head: Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierMeta {
    config: ClassifierConfig,
    train_accuracy: f64,
}

impl ShapeClassifier {
    pub fn new(config: &ClassifierConfig) -> Result<Self> {
        if config.channels.is_empty()
            || config.num_classes < 2
            || config.input_size >> config.channels.len() == 0
        {
            return Err(Error::Config(format!(
                "invalid classifier config {config:?}"
            )));
        }
        let mut store = ParamStore::new(DType::F32, config.seed);
        let mut convs = Vec::new();
        let mut in_c = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            convs.push(Conv2d::new(
                &mut store,
                &format!("conv{i}"),
                in_c,
                c,
                3,
                2,
                1,
                1,
            )?);
            in_c = c;
        }
        let head = Linear::new(&mut store, "head", in_c, config.num_classes)?;
        Ok(Self {
            config: config.clone(),
            store,
            convs,
            head,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    fn prepare(&self, images: &[ImageTensor]) -> Result<Tensor> {
        let resized: Vec<ImageTensor> = images
            .iter()
            .map(|im| im.resize_square(self.config.input_size))
            .collect::<Result<_>>()?;
        let refs: Vec<&ImageTensor> = resized.iter().collect();
        stack_images(&refs, DType::F32, &Device::Cpu)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for conv in &self.convs {
            x = leaky_relu(&conv.forward(&x)?)?;
        }
        let pooled = x.mean(D::Minus1)?.mean(D::Minus1)?;
        self.head.forward(&pooled)
    }

    /// Trains on `(image, label)` pairs with cross-entropy; returns final training accuracy.
    pub fn fit(&mut self, images: &[ImageTensor], labels: &[usize]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "images and labels differ in length".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        let x_all = self.prepare(images)?;
        let mut adam = Adam::new(
            self.store.vars_with_prefix(""),
            AdamConfig {
                learning_rate: self.config.learning_rate,
                beta1: 0.9,
                ..AdamConfig::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..images.len()).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.config.batch_size.max(1)) {
                let idx: Vec<u32> = chunk.iter().map(|&i| i as u32).collect();
                let idx_t = Tensor::new(idx.as_slice(), &Device::Cpu)?;
                let x = x_all.index_select(&idx_t, 0)?;
                let y: Vec<u32> = chunk.iter().map(|&i| labels[i] as u32).collect();
                let y = Tensor::new(y.as_slice(), &Device::Cpu)?;
                let loss = cross_entropy(&self.logits(&x)?, &y)?;
                adam.step(&loss.backward()?)?;
            }
        }
        let preds = self.logits(&x_all)?.argmax(D::Minus1)?.to_vec1::<u32>()?;
        let correct = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p as usize == **l)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Trains on every view of every group carrying a shape label.
    pub fn fit_groups(&mut self, groups: &[ImageGroup], size: usize) -> Result<f64> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for g in groups {
            let Some(label) = g.shape_class() else {
                continue;
            };
            for view in ViewLabel::ALL {
                images.push(g.load_view(view, size)?);
                labels.push(label);
            }
        }
        self.fit(&images, &labels)
    }

    pub fn save(&self, dir: &Path, train_accuracy: f64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors: HashMap<String, Tensor> = self.store.snapshot().into_iter().collect();
        candle_core::safetensors::save(&tensors, dir.join(CLASSIFIER_WEIGHTS))?;
        let meta = ClassifierMeta {
            config: self.config.clone(),
            train_accuracy,
        };
        let path = dir.join(CLASSIFIER_META);
        std::fs::write(&path, serde_json::to_vec_pretty(&meta)?)
            .map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CLASSIFIER_META);
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ClassifierMeta = serde_json::from_slice(&raw)?;
        let clf = Self::new(&meta.config)?;
        let tensors = candle_core::safetensors::load(dir.join(CLASSIFIER_WEIGHTS), &Device::Cpu)?;
        clf.store.load_snapshot(&tensors)?;
        Ok(clf)
    }
}

/// Mean negative log-likelihood of `targets: [B]` under `logits: [B, K]`.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let log_p = log_softmax(logits)?;
    let picked = log_p.gather(&targets.unsqueeze(1)?, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

impl ClassifierHandle for ShapeClassifier {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.predict_batch(std::slice::from_ref(image))?.remove(0))
    }

    fn predict_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.prepare(images)?;
        let p = log_softmax(&self.logits(&x)?)?
            .to_dtype(DType::F64)?
            .exp()?;
        let rows = p.to_vec2::<f64>()?;
        Ok(rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_are_distributions() {
        let clf = ShapeClassifier::new(&ClassifierConfig::default()).unwrap();
        let im = ImageTensor::filled(64, 64, 0.3).unwrap();
        let p = clf.predict(&im).unwrap();
        assert_eq!(p.len(), NUM_SHAPE_CLASSES);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| *v >= 0.0));
    }
}
