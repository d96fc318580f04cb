mod common;

use candle_core::{DType, Tensor};
use common::{flat, scalar, uniform_image};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use varigan::adversary::{discriminator_loss, reduce_patches, DiscConfig, Discriminator};
use varigan::nn::{Mode, ParamStore};
use varigan::Error;

#[test]
fn default_pair_scores_strictly_inside_unit_interval() {
    let mut store = ParamStore::new(DType::F32, 1);
    let d = Discriminator::new(&mut store, "d.", &DiscConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = d
        .discriminate(&uniform_image(&mut rng, 128), &uniform_image(&mut rng, 128))
        .unwrap();
    assert!(p > 0.0 && p < 1.0);
    let err = d
        .discriminate(&uniform_image(&mut rng, 64), &uniform_image(&mut rng, 128))
        .unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
}

#[test]
fn zero_final_layer_gives_one_half() {
    let mut store = ParamStore::new(DType::F64, 2);
    let d = Discriminator::new(&mut store, "d.", &DiscConfig::desk()).unwrap();
    let last = d.final_layer();
    last.weight()
        .set(&last.weight().zeros_like().unwrap())
        .unwrap();
    last.bias().set(&last.bias().zeros_like().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(
        d.discriminate(&uniform_image(&mut rng, 64), &uniform_image(&mut rng, 64))
            .unwrap(),
        0.5
    );
}

#[test]
fn conditioning_sets_first_layer_width() {
    let width = |conditional| {
        let mut store = ParamStore::new(DType::F32, 0);
        let d = Discriminator::new(
            &mut store,
            "d.",
            &DiscConfig {
                conditional,
                ..DiscConfig::default()
            },
        )
        .unwrap();
        d.first_layer_input_channels()
    };
    assert_eq!((width(true), width(false)), (6, 3));
}

#[test]
fn unconditional_discriminator_ignores_condition() {
    let mut store = ParamStore::new(DType::F32, 3);
    let d = Discriminator::new(
        &mut store,
        "d.",
        &DiscConfig {
            conditional: false,
            ..DiscConfig::desk()
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = uniform_image(&mut rng, 64);
    let a = d.discriminate(&uniform_image(&mut rng, 64), &x).unwrap();
    let b = d.discriminate(&uniform_image(&mut rng, 64), &x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn loss_examples() {
    assert!((discriminator_loss(&[0.5], &[0.5]).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    let mut prev = f64::NEG_INFINITY;
    for eps in [1e-1, 1e-2, 1e-4, 1e-8] {
        let l = discriminator_loss(&[1.0 - eps], &[eps]).unwrap();
        assert!(l < 0.0 && l > prev);
        prev = l;
    }
    assert!(prev > -1e-7);
    assert!(matches!(
        discriminator_loss(&[1.0], &[0.5]),
        Err(Error::Domain { .. })
    ));
    assert!(matches!(
        discriminator_loss(&[0.5], &[0.0]),
        Err(Error::Domain { .. })
    ));
    assert!(discriminator_loss(&[0.5, 0.5], &[0.5]).is_err());
}

#[test]
fn patch_mean_reduction() {
    let dev = candle_core::Device::Cpu;
    let map = Tensor::full(0.75f64, (2, 1, 4, 4), &dev).unwrap();
    assert_eq!(flat(&reduce_patches(&map).unwrap()), vec![0.75, 0.75]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v: Vec<f64> = (0..16)
        .map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0))
        .collect();
    let m = v.iter().sum::<f64>() / 16.0;
    let got = scalar(
        &reduce_patches(&Tensor::from_vec(v, (1, 1, 4, 4), &dev).unwrap())
            .unwrap()
            .get(0)
            .unwrap(),
    );
    assert!((got - m).abs() < 1e-12);
}

#[test]
fn batch_items_are_scored_independently() {
    let mut store = ParamStore::new(DType::F64, 6);
    let d = Discriminator::new(&mut store, "d.", &DiscConfig::desk()).unwrap();
    common::rerandomize(&store, 0.05, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let imgs: Vec<Tensor> = (0..8)
        .map(|_| {
            uniform_image(&mut rng, 64)
                .to_tensor(DType::F64, store.device())
                .unwrap()
        })
        .collect();
    let cond = Tensor::cat(&imgs[..4], 0).unwrap();
    let cand = Tensor::cat(&imgs[4..], 0).unwrap();
    let p = flat(&d.forward(&cond, &cand, Mode::Eval).unwrap());
    let perm = Tensor::new(&[2u32, 0, 3, 1], store.device()).unwrap();
    let q = flat(
        &d.forward(
            &cond.index_select(&perm, 0).unwrap(),
            &cand.index_select(&perm, 0).unwrap(),
            Mode::Eval,
        )
        .unwrap(),
    );
    assert_eq!(vec![p[2], p[0], p[3], p[1]], q);
}

proptest! {
    #[test]
    fn loss_is_never_positive(
        pairs in proptest::collection::vec((1e-9f64..1.0, 0.0f64..(1.0 - 1e-9)), 1..16)
    ) {
        let (real, fake): (Vec<f64>, Vec<f64>) = pairs.into_iter().map(|(r, f)| (r.min(1.0 - 1e-12), f.max(1e-12))).unzip();
        prop_assert!(discriminator_loss(&real, &fake).unwrap() <= 0.0);
    }
}
