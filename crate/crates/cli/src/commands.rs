use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use varigan::datakit::{
    generate_dataset, load_grouped_dataset, make_all_pairs, split_dataset, ImageGroup, ImageTensor,
    ViewLabel, MANIFEST_FILE,
};
use varigan::metrics::{evaluate, ClassifierConfig, EvalOptions, ShapeClassifier, SsimParams};
use varigan::nn::Mode;
use varigan::trainer::{
    config_digest, log_path, meta_path, train_coarse, train_fine, AblationFlags, Checkpoint,
    CoarseModel, ModelConfig, Pipeline, Stage, TrainConfig,
};
use varigan::viz::{feature_grid, image_grid};
use varigan::Error;

use crate::config::{DataConfig, RunConfig};
use crate::manifest::{now, RunManifest};
use crate::{
    ClassifierArgs, CliError, DumpArgs, EvalArgs, GenDataArgs, SampleArgs, SplitArg, SsimModeArg,
    TrainArgs,
};

type CmdResult = Result<PathBuf, CliError>;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn digest<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(config_digest(value)?)
}

pub fn gen_data(args: &GenDataArgs) -> CmdResult {
    let started = now();
    let manifest = generate_dataset(args.groups, args.seed, &args.out)?;
    log::info!(
        "rendered {} groups into {}",
        manifest.groups.len(),
        args.out.display()
    );
    let mut run = RunManifest::new(
        "gen-data",
        digest(&(args.groups, args.seed))?,
        args.seed,
        started,
    );
    run.outputs.push(args.out.join(MANIFEST_FILE));
    run.outputs
        .extend(manifest.groups.iter().map(|g| args.out.join(&g.group_id)));
    Ok(run.write(&args.out)?)
}

/// Train/test split of a grouped dataset directory.
fn load_split(
    data: &Path,
    cfg: &DataConfig,
) -> Result<(Vec<ImageGroup>, Vec<ImageGroup>), CliError> {
    let loaded = load_grouped_dataset(data)?;
    for ex in &loaded.exclusions {
        log::warn!("excluded group {}: {}", ex.group_id, ex.reason);
    }
    Ok(split_dataset(
        &loaded.groups,
        cfg.test_fraction,
        cfg.split_seed,
    )?)
}

#[derive(Serialize)]
struct TrainDigest<'a> {
    stage: Stage,
    train: &'a TrainConfig,
    ablations: &'a AblationFlags,
    data: &'a DataConfig,
}

fn merged_train_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if args.full_scale {
        let full = TrainConfig::full_scale();
        cfg.train.coarse_epochs = full.coarse_epochs;
        cfg.train.fine_epochs = full.fine_epochs;
        cfg.train.desk_scale = false;
    }
    cfg.train.apply_env()?;
    let t = &mut cfg.train;
    if let Some(seed) = args.seed {
        t.seed = seed;
    }
    if let Some(e) = args.epochs {
        match Stage::from(args.stage) {
            Stage::Coarse => t.coarse_epochs = e,
            Stage::Fine => t.fine_epochs = e,
        }
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(l) = args.lambda_l1 {
        t.lambda_l1 = l;
    }
    if let Some(k) = args.kl_weight {
        t.kl_weight = k;
    }
    if let Some(d) = args.desk_scale {
        t.desk_scale = d;
    }
    if let Some(d) = args.deterministic {
        t.deterministic = d;
    }
    if args.non_saturating {
        t.non_saturating = true;
    }
    for a in &args.ablations {
        cfg.ablations.set(*a);
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let started = now();
    let stage = Stage::from(args.stage);
    let cfg = merged_train_config(args)?;
    let coarse_ckpt = if stage == Stage::Fine {
        if !meta_path(&args.ckpt, Stage::Coarse).exists() {
            let found = if meta_path(&args.ckpt, Stage::Fine).exists() {
                "fine"
            } else {
                "none"
            };
            return Err(Error::StageMismatch {
                expected: "coarse".into(),
                found: found.into(),
            }
            .into());
        }
        Some(Checkpoint::load(&args.ckpt, Stage::Coarse)?)
    } else {
        None
    };
    let resume = if args.resume {
        Some(Checkpoint::load(&args.ckpt, stage)?)
    } else {
        None
    };
    let (train_groups, _) = load_split(&args.data, &cfg.data)?;
    let size = ModelConfig::resolve(cfg.train.desk_scale, &cfg.ablations)
        .fine
        .hr_size;
    let samples = make_all_pairs(&train_groups, &cfg.data.tasks, size)?;
    log::info!(
        "training {stage} stage on {} samples from {} groups",
        samples.len(),
        train_groups.len()
    );
    let run = match &coarse_ckpt {
        None => train_coarse(&samples, &cfg.train, &cfg.ablations, resume.as_ref())?,
        Some(c) => train_fine(&samples, c, &cfg.train, &cfg.ablations, resume.as_ref())?,
    };
    ensure_dir(&args.ckpt)?;
    let mut outputs = run.checkpoint.save(&args.ckpt)?;
    let log = log_path(&args.ckpt, stage);
    run.checkpoint.write_loss_csv(&log)?;
    outputs.push(log);
    let d = digest(&TrainDigest {
        stage,
        train: &cfg.train,
        ablations: &cfg.ablations,
        data: &cfg.data,
    })?;
    let mut manifest = RunManifest::new(format!("train-{stage}"), d, cfg.train.seed, started);
    manifest.outputs = outputs;
    Ok(manifest.write(&args.ckpt)?)
}

/// View named by the file stem (`front.png` -> front), if any.
fn view_from_stem(path: &Path) -> Option<ViewLabel> {
    path.file_stem()?.to_str()?.parse().ok()
}

fn load_condition(path: &Path, size: usize) -> Result<ImageTensor, CliError> {
    Ok(ImageTensor::load_png(path)?.resize_square(size)?)
}

fn prior_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn sample(args: &SampleArgs) -> CmdResult {
    let started = now();
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let view = ViewLabel::from(args.view);
    let pipeline = Pipeline::load(&args.ckpt)?;
    let hr = pipeline.hr_size();
    let cond = load_condition(&args.cond, hr)?;
    let cond_view = args
        .cond_view
        .map(ViewLabel::from)
        .or_else(|| view_from_stem(&args.cond));
    if cond_view == Some(view) {
        log::warn!("requested view {view} is the view of the condition image; the model is trained to generate other views");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut rows = Vec::with_capacity(args.n);
    for _ in 0..args.n {
        let noise = prior_noise(&mut rng, pipeline.latent_dim());
        let (coarse, fine) = pipeline.infer(&cond, view, &noise)?;
        rows.push(vec![cond.clone(), coarse.resize_square(hr)?, fine]);
    }
    let grid = image_grid(&rows, hr, 2)?;
    ensure_dir(&args.out)?;
    let path = args.out.join(format!("sample-{view}.png"));
    grid.save_png(&path)?;
    let d = digest(&(
        args.cond.to_string_lossy(),
        view,
        args.n,
        args.ckpt.to_string_lossy(),
    ))?;
    let mut manifest = RunManifest::new("sample", d, args.seed, started);
    manifest.outputs.push(path);
    Ok(manifest.write(&args.out)?)
}

fn fixture_classifier(
    train_groups: &[ImageGroup],
    out: &Path,
    seed: u64,
    epochs: Option<usize>,
) -> Result<(ShapeClassifier, f64, PathBuf), CliError> {
    let mut cfg = ClassifierConfig {
        seed,
        ..ClassifierConfig::default()
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let mut clf = ShapeClassifier::new(&cfg)?;
    let acc = clf.fit_groups(train_groups, 64)?;
    log::info!("classifier training accuracy {acc:.3}");
    clf.save(out, acc)?;
    Ok((clf, acc, out.to_path_buf()))
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let started = now();
    let cfg = RunConfig::load(args.config.as_deref())?;
    let pipeline = Pipeline::load(&args.ckpt)?;
    let loaded = load_grouped_dataset(&args.data)?;
    let (train_groups, test_groups) = match args.split {
        SplitArg::All => (loaded.groups.clone(), loaded.groups),
        SplitArg::Test => {
            split_dataset(&loaded.groups, cfg.data.test_fraction, cfg.data.split_seed)?
        }
    };
    let samples = make_all_pairs(&test_groups, &cfg.data.tasks, pipeline.hr_size())?;
    ensure_dir(&args.out)?;
    let mut outputs = Vec::new();
    let classifier = if args.classifier == "fixture" {
        let dir = args.out.join("classifier");
        let (clf, _, dir) =
            fixture_classifier(&train_groups, &dir, ClassifierConfig::default().seed, None)?;
        outputs.push(dir);
        clf
    } else {
        ShapeClassifier::load(Path::new(&args.classifier))?
    };
    let ssim = match args.ssim_mode {
        SsimModeArg::Global => SsimParams::default(),
        SsimModeArg::Windowed => SsimParams::default().windowed(args.window),
    };
    let options = EvalOptions {
        ssim,
        splits: args.splits,
        noise_seed: args.seed,
        ..EvalOptions::default()
    };
    let report = evaluate(&samples, &pipeline, &classifier, &options)?;
    let json = args.out.join("metrics.json");
    report.write_json(&json)?;
    outputs.push(json);
    if args.per_sample {
        let csv = args.out.join("per_sample.csv");
        report.write_per_sample_csv(&csv)?;
        outputs.push(csv);
    }
    log::info!(
        "SSIM {:.4} +- {:.4}, IS {:.4} +- {:.4} over {} samples",
        report.ssim.mean,
        report.ssim.std,
        report.inception_score.mean,
        report.inception_score.std,
        report.n_samples
    );
    let mut manifest = RunManifest::new("eval", report.config_digest.clone(), args.seed, started);
    manifest.outputs = outputs;
    Ok(manifest.write(&args.out)?)
}

/// Encoder conv 1 and 2 and the two hidden decoder layers that mirror them.
pub const FEATURE_LAYERS: [&str; 4] = ["enc1", "enc2", "dec-2", "dec-1"];

pub fn dump_features(args: &DumpArgs) -> CmdResult {
    let started = now();
    let ckpt = Checkpoint::load(&args.ckpt, Stage::Coarse)?;
    let model = CoarseModel::from_checkpoint(&ckpt)?;
    let gen = &model.generator;
    let cfg = gen.config();
    if cfg.encoder_channels.len() < 2 || cfg.decoder_channels.len() < 3 {
        return Err(CliError::Usage(
            "coarse model is too shallow for feature dumps".into(),
        ));
    }
    let view = ViewLabel::from(args.view);
    let cond = load_condition(&args.cond, cfg.hr_size)?;
    let x = cond.to_tensor(model.store.dtype(), model.store.device())?;
    let enc = gen.encoder_features(&x, Mode::Eval)?;
    let cond_repr = gen.encode(&x, Mode::Eval)?;
    let view_emb = gen.embed(&[view])?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let z = candle_core::Tensor::from_vec(
        prior_noise(&mut rng, cfg.latent_dim),
        (1, cfg.latent_dim),
        model.store.device(),
    )
    .map_err(Error::from)?
    .to_dtype(model.store.dtype())
    .map_err(Error::from)?;
    let dec = gen.decoder_features(&z, &cond_repr, &view_emb, Mode::Eval)?;
    let n = dec.len();
    let maps = [&enc[0], &enc[1], &dec[n - 3], &dec[n - 2]];
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new(
        "dump-features",
        digest(&(args.cond.to_string_lossy(), view, cfg))?,
        args.seed,
        started,
    );
    for (name, map) in FEATURE_LAYERS.iter().zip(maps) {
        let path = args.out.join(format!("{name}.png"));
        feature_grid(map)?.save_png(&path)?;
        log::info!("{name}: {} maps", map.dim(1).map_err(Error::from)?);
        manifest.outputs.push(path);
    }
    Ok(manifest.write(&args.out)?)
}

pub fn train_classifier(args: &ClassifierArgs) -> CmdResult {
    let started = now();
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (train_groups, _) = load_split(&args.data, &cfg.data)?;
    let (clf, _, dir) = fixture_classifier(&train_groups, &args.out, args.seed, args.epochs)?;
    let mut manifest = RunManifest::new(
        "train-classifier",
        digest(clf.config())?,
        args.seed,
        started,
    );
    manifest
        .outputs
        .push(dir.join(varigan::metrics::CLASSIFIER_WEIGHTS));
    manifest
        .outputs
        .push(dir.join(varigan::metrics::CLASSIFIER_META));
    Ok(manifest.write(&args.out)?)
}
