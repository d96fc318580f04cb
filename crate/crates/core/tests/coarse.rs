mod common;

use candle_core::{DType, Tensor};
use common::{flat, split_pairs, uniform_image};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use varigan::coarse::{
    kl_per_dimension, kl_standard_normal, l1_tensor, CoarseConfig, CoarseGenerator,
};
use varigan::datakit::{ImageTensor, ViewLabel};
use varigan::nn::{Mode, ParamStore};
use varigan::trainer::{train_coarse, AblationFlags, CoarseModel, TrainConfig};
use varigan::Error;

fn default_generator() -> (ParamStore, CoarseGenerator) {
    let mut store = ParamStore::new(DType::F32, 3);
    let g = CoarseGenerator::new(&mut store, "c.", &CoarseConfig::default()).unwrap();
    (store, g)
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

#[test]
fn default_single_image_chain() {
    let (_store, g) = default_generator();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = uniform_image(&mut rng, 128);

    let repr = g.encode_image(&image).unwrap();
    assert_eq!(repr.len(), 1024);
    assert_eq!(repr, g.encode_image(&image).unwrap());
    let zeros = g
        .encode_image(&ImageTensor::filled(128, 128, 0.0).unwrap())
        .unwrap();
    assert!(zeros.iter().all(|v| v.is_finite()));

    let emb = g.embed_view(ViewLabel::Front).unwrap();
    assert_eq!(emb.len(), 1024);
    assert_eq!(emb, g.embed_view(ViewLabel::Front).unwrap());

    let post = g.infer_posterior(&repr, &repr, &emb).unwrap();
    assert_eq!((post.mean.len(), post.log_variance.len()), (1024, 1024));

    let noise = unit_vector(&mut rng, 1024);
    let out = g.decode_coarse(&noise, &repr, &emb).unwrap();
    assert_eq!((out.height(), out.width(), out.channels()), (64, 64, 3));
    assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(out, g.decode_coarse(&noise, &repr, &emb).unwrap());

    let gen = g.generate_coarse(&image, ViewLabel::Back, &noise).unwrap();
    assert_eq!(
        gen,
        g.generate_coarse(&image, ViewLabel::Back, &noise).unwrap()
    );
    assert_eq!(gen.height(), 64);
}

#[test]
fn wrong_sizes_are_shape_errors() {
    let (_store, g) = default_generator();
    let small = ImageTensor::filled(64, 64, 0.0).unwrap();
    let err = g.encode_image(&small).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
    assert!(err.to_string().contains("128"), "{err}");
    let short = vec![0.0; 10];
    let ok = vec![0.0; 1024];
    assert!(matches!(
        g.infer_posterior(&short, &ok, &ok),
        Err(Error::Shape { .. })
    ));
    assert!(matches!(
        g.decode_coarse(&ok, &short, &ok),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn zero_head_weights_give_bias_as_mean() {
    let mut store = ParamStore::new(DType::F64, 4);
    let g = CoarseGenerator::new(&mut store, "c.", &CoarseConfig::desk()).unwrap();
    let (mean_head, _) = g.posterior_heads();
    mean_head
        .weight()
        .set(&mean_head.weight().zeros_like().unwrap())
        .unwrap();
    let bias: Vec<f64> = (0..128).map(|i| i as f64 * 0.01 - 0.5).collect();
    mean_head
        .bias()
        .set(&Tensor::new(bias.as_slice(), store.device()).unwrap())
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let post = g
        .infer_posterior(
            &unit_vector(&mut rng, 128),
            &unit_vector(&mut rng, 128),
            &unit_vector(&mut rng, 128),
        )
        .unwrap();
    assert_eq!(post.mean, bias);
}

#[test]
fn posterior_is_finite_for_random_unit_inputs() {
    let mut store = ParamStore::new(DType::F32, 5);
    let g = CoarseGenerator::new(&mut store, "c.", &CoarseConfig::desk()).unwrap();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = g
            .infer_posterior(
                &unit_vector(&mut rng, 128),
                &unit_vector(&mut rng, 128),
                &unit_vector(&mut rng, 128),
            )
            .unwrap();
        assert!(post
            .mean
            .iter()
            .chain(&post.log_variance)
            .all(|v| v.is_finite()));
    }
}

#[test]
fn kl_of_unit_mean_is_half_the_dimension() {
    let mean = vec![1.0; 1024];
    let log_var = vec![0.0; 1024];
    assert_eq!(kl_standard_normal(&mean, &log_var), 512.0);
    // Dimensions are independent and identical: estimate one and scale.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 1_000_000;
    let mc: f64 = (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = 1.0 + e;
            0.5 * z * z - 0.5 * e * e
        })
        .sum::<f64>()
        / n as f64;
    assert!(
        (1024.0 * mc - 512.0).abs() / 512.0 < 0.01,
        "mc estimate {}",
        1024.0 * mc
    );
    assert_eq!(kl_standard_normal(&[0.0; 8], &[0.0; 8]), 0.0);
}

#[test]
fn recon_is_zero_for_exact_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = uniform_image(&mut rng, 32)
        .to_tensor(DType::F32, &candle_core::Device::Cpu)
        .unwrap();
    assert_eq!(flat(&l1_tensor(&img, &img).unwrap())[0], 0.0);
}

#[test]
fn encoder_is_shared_between_paths() {
    let mut store = ParamStore::new(DType::F64, 6);
    let g = CoarseGenerator::new(&mut store, "c.", &CoarseConfig::desk()).unwrap();
    let encoders: Vec<String> = store
        .params()
        .keys()
        .filter(|k| k.contains("enc"))
        .cloned()
        .collect();
    assert!(!encoders.is_empty());
    assert!(
        encoders
            .iter()
            .all(|k| !k.contains("target") && !k.contains("cond")),
        "{encoders:?}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = uniform_image(&mut rng, 64)
        .to_tensor(DType::F64, store.device())
        .unwrap();
    let b = uniform_image(&mut rng, 64)
        .to_tensor(DType::F64, store.device())
        .unwrap();
    let pair = Tensor::cat(&[&a, &b], 0).unwrap();
    let before = g.encode(&pair, Mode::Eval).unwrap();
    let (name, var) = store
        .params()
        .iter()
        .find(|(k, _)| k.contains("enc") && k.ends_with("weight"))
        .unwrap();
    var.set(&(var.as_tensor() * 1.5).unwrap()).unwrap();
    let after = g.encode(&pair, Mode::Eval).unwrap();
    // One weight tensor moves the representation of an image in either slot.
    let moved = |i: usize| flat(&before.get(i).unwrap()) != flat(&after.get(i).unwrap());
    assert!(moved(0) && moved(1), "{name} did not affect both paths");
    let swapped = g
        .encode(&Tensor::cat(&[&b, &a], 0).unwrap(), Mode::Eval)
        .unwrap();
    assert_eq!(flat(&swapped.get(0).unwrap()), flat(&after.get(1).unwrap()));
}

#[test]
fn training_separates_views_and_noise_matters() {
    let (train, _) = split_pairs(8, 12, 64);
    let cfg = TrainConfig {
        coarse_epochs: 2,
        batch_size: 8,
        seed: 12,
        ..TrainConfig::default()
    };
    let ckpt = train_coarse(&train, &cfg, &AblationFlags::default(), None)
        .unwrap()
        .checkpoint;
    let model = CoarseModel::from_checkpoint(&ckpt).unwrap();
    let g = &model.generator;
    assert_ne!(
        g.embed_view(ViewLabel::Front).unwrap(),
        g.embed_view(ViewLabel::Back).unwrap()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cond = train[0].cond_image.as_ref();
    let n1: Vec<f64> = (0..128).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n2: Vec<f64> = (0..128).map(|_| StandardNormal.sample(&mut rng)).collect();
    let a = g.generate_coarse(cond, ViewLabel::Side, &n1).unwrap();
    let b = g.generate_coarse(cond, ViewLabel::Side, &n2).unwrap();
    assert!(a.l1_distance(&b).unwrap() > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_terms_non_negative_everywhere(
        pairs in proptest::collection::vec((-10.0f64..10.0, -15.0f64..15.0), 1..64)
    ) {
        let (mean, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let terms = kl_per_dimension(&mean, &lv);
        prop_assert!(terms.iter().all(|t| *t >= 0.0));
        prop_assert!(kl_standard_normal(&mean, &lv) >= 0.0);
    }
}
