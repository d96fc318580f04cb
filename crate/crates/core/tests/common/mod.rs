#![allow(dead_code)]

use std::collections::HashMap;

use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use varigan::datakit::{
    dataset_scenes, make_all_pairs, split_dataset, ImageGroup, ImageTensor, PairingTask,
    TrainingSample,
};
use varigan::nn::ParamStore;

/// Rendered in-memory groups at `size` pixels.
pub fn groups(n: usize, seed: u64, size: usize) -> Vec<ImageGroup> {
    dataset_scenes(n, seed)
        .iter()
        .enumerate()
        .map(|(i, s)| ImageGroup::from_scene(format!("g{i:03}"), s, size).unwrap())
        .collect()
}

pub fn pairs(groups: &[ImageGroup], size: usize) -> Vec<TrainingSample> {
    make_all_pairs(groups, &PairingTask::ALL, size).unwrap()
}

/// `(train, test)` training pairs from `n` groups with one eighth held out.
pub fn split_pairs(n: usize, seed: u64, size: usize) -> (Vec<TrainingSample>, Vec<TrainingSample>) {
    let g = groups(n, seed, size);
    let (train, test) = split_dataset(&g, 0.125, seed).unwrap();
    (pairs(&train, size), pairs(&test, size))
}

pub fn uniform_image(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor {
    let data = (0..3 * size * size)
        .map(|_| rng.random_range(-1.0f32..=1.0))
        .collect();
    ImageTensor::new(size, size, data).unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all()
        .unwrap()
        .to_dtype(candle_core::DType::F64)
        .unwrap()
        .to_vec1()
        .unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(candle_core::DType::F64)
        .unwrap()
        .to_scalar()
        .unwrap()
}

/// Bit patterns of every tensor, for exact comparisons.
pub fn bits(tensors: &HashMap<String, Tensor>) -> Vec<(String, Vec<u64>)> {
    let mut out: Vec<_> = tensors
        .iter()
        .map(|(k, t)| (k.clone(), flat(t).into_iter().map(f64::to_bits).collect()))
        .collect();
    out.sort();
    out
}

/// Replaces every parameter with `N(0, std)` draws (batch-norm scales with `1 + N(0, std / 3)`).
pub fn rerandomize(store: &ParamStore, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    for (name, var) in store.params() {
        let values: Vec<f64> = (0..var.elem_count())
            .map(|_| {
                let v: f64 = normal.sample(&mut rng);
                if name.ends_with(".gamma") {
                    1.0 + v / 3.0
                } else {
                    v
                }
            })
            .collect();
        let t = Tensor::from_vec(values, var.shape(), var.device())
            .unwrap()
            .to_dtype(var.dtype())
            .unwrap();
        var.set(&t).unwrap();
    }
}

fn set_element(var: &Var, values: &mut [f64], index: usize, value: f64) {
    values[index] = value;
    let t = Tensor::from_slice(values, var.shape(), var.device()).unwrap();
    var.set(&t).unwrap();
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Compares autodiff gradients of `loss` with central differences on `samples`
/// randomly chosen scalar parameters of `vars`.
pub fn grad_check(
    vars: &[(String, Var)],
    loss: impl Fn() -> Tensor,
    samples: usize,
    seed: u64,
) -> GradCheck {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-6;
    let grads = loss().backward().unwrap();
    let sizes: Vec<usize> = vars.iter().map(|(_, v)| v.elem_count()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, samples.min(total));
    let mut max_rel_error: f64 = 0.0;
    for flat_index in picks {
        let (mut vi, mut idx) = (0, flat_index);
        while idx >= sizes[vi] {
            idx -= sizes[vi];
            vi += 1;
        }
        let var = &vars[vi].1;
        let analytic = grads.get(var).map(|g| flat(g)[idx]).unwrap_or(0.0);
        let mut values = flat(var.as_tensor());
        let orig = values[idx];
        set_element(var, &mut values, idx, orig + H);
        let plus = scalar(&loss());
        set_element(var, &mut values, idx, orig - H);
        let minus = scalar(&loss());
        set_element(var, &mut values, idx, orig);
        let numeric = (plus - minus) / (2.0 * H);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        max_rel_error = max_rel_error.max(rel);
    }
    GradCheck {
        checked: samples.min(total),
        max_rel_error,
    }
}

pub fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}
