//! Minimal layer toolkit on top of `candle-core` tensors.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names and are initialized from a
//! seeded ChaCha stream, so two stores built with the same seed and the same layer
//! construction order are bit-identical.

mod adam;
mod layers;
mod unfold;

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use layers::{leaky_relu, sigmoid, BatchNorm2d, Conv2d, ConvTranspose2d, Embedding, Linear};

/// Standard deviation of the zero-mean Gaussian used for every weight tensor.
pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Whether batch normalization uses batch statistics (and updates its running averages).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const PARAM_PREFIX: &str = "param.";
pub const BUFFER_PREFIX: &str = "buffer.";

pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_fresh(&self, name: &str) -> Result<()> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        Ok(())
    }

    /// Trainable tensor drawn from `N(0, std^2)`.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        self.check_fresh(name)?;
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Trainable tensor filled with `value`.
    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_fresh(name)?;
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        let var = Var::from_tensor(&t)?;
        self.params.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_fresh(name)?;
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        let var = Var::from_tensor(&t)?;
        self.buffers.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Number of scalar trainable values under `prefix` (`""` for all).
    pub fn count_params(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Detached copies of all parameters and buffers, keyed with their kind prefix.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.params {
            out.insert(format!("{PARAM_PREFIX}{k}"), v.as_detached_tensor());
        }
        for (k, v) in &self.buffers {
            out.insert(format!("{BUFFER_PREFIX}{k}"), v.as_detached_tensor());
        }
        out
    }

    /// Overwrites every parameter and buffer from a snapshot; all must be present.
    pub fn load_snapshot(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let entries = self
            .params
            .iter()
            .map(|(k, v)| (format!("{PARAM_PREFIX}{k}"), v))
            .chain(
                self.buffers
                    .iter()
                    .map(|(k, v)| (format!("{BUFFER_PREFIX}{k}"), v)),
            );
        for (key, var) in entries {
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::MissingTensor(key.clone()))?;
            if t.dims() != var.dims() {
                return Err(Error::shape(
                    "ParamStore::load_snapshot",
                    format!("{:?}", var.dims()),
                    format!("{:?}", t.dims()),
                ));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::new(DType::F32, 3);
        let mut b = ParamStore::new(DType::F32, 3);
        let wa = a.normal("w", &[4, 5], INIT_STD).unwrap();
        let wb = b.normal("w", &[4, 5], INIT_STD).unwrap();
        let va: Vec<f32> = wa.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f32> = wb.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
        assert!(a.normal("w", &[1], 1.0).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut a = ParamStore::new(DType::F64, 1);
        a.normal("x.w", &[3], 1.0).unwrap();
        a.buffer("x.rm", &[3], 0.0).unwrap();
        let snap: HashMap<_, _> = a.snapshot().into_iter().collect();
        let mut b = ParamStore::new(DType::F64, 2);
        b.normal("x.w", &[3], 1.0).unwrap();
        b.buffer("x.rm", &[3], 5.0).unwrap();
        b.load_snapshot(&snap).unwrap();
        let got: Vec<f64> = b.params()["x.w"].to_vec1().unwrap();
        let want: Vec<f64> = a.params()["x.w"].to_vec1().unwrap();
        assert_eq!(got, want);
        assert_eq!(b.buffers()["x.rm"].to_vec1::<f64>().unwrap(), vec![0.0; 3]);
    }
}
