use std::collections::BTreeMap;
use std::sync::mpsc;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{
    Checkpoint, CheckpointMeta, EpochLosses, RngState, Stage, StreamState,
    CHECKPOINT_SCHEMA_VERSION,
};
use super::config::{AblationFlags, ModelConfig, TrainConfig};
use super::models::{
    CoarseModel, FineModel, COARSE_DISC_PREFIX, COARSE_PREFIX, DISC_PREFIX, FINE_PREFIX,
};
use crate::adversary::discriminator_loss_tensor;
use crate::datakit::{stack_images, ImageTensor, TrainingSample, ViewLabel};
use crate::error::{Error, Result};
use crate::fine::generator_loss_tensor;
use crate::nn::{Adam, Mode};

const SHUFFLE_STREAM: &str = "shuffle";
const NOISE_STREAM: &str = "noise";

/// Optimizer update recorded in the step log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Coarse generator update.
    Coarse,
    /// Low-resolution discriminator update (adversarial coarse ablation).
    CoarseDiscriminator,
    Discriminator,
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub phase: Phase,
}

/// Result of a training call: the checkpoint and the ordered optimizer steps taken.
#[derive(Debug, Clone)]
pub struct StageRun {
    pub checkpoint: Checkpoint,
    pub step_log: Vec<StepRecord>,
}

/// All samples of a run stacked once at the working resolution.
struct SampleSet {
    cond: Tensor,
    target: Tensor,
    views: Vec<ViewLabel>,
}

struct Batch {
    cond: Tensor,
    target: Tensor,
    views: Vec<ViewLabel>,
}

impl SampleSet {
    fn new(samples: &[TrainingSample], size: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let fit = |im: &ImageTensor| -> Result<ImageTensor> {
            if im.height() == size && im.width() == size {
                Ok(im.clone())
            } else {
                im.resize_square(size)
            }
        };
        let conds: Vec<ImageTensor> = samples
            .iter()
            .map(|s| fit(&s.cond_image))
            .collect::<Result<_>>()?;
        let targets: Vec<ImageTensor> = samples
            .iter()
            .map(|s| fit(&s.target_image))
            .collect::<Result<_>>()?;
        Ok(Self {
            cond: stack_images(&conds.iter().collect::<Vec<_>>(), DType::F32, &Device::Cpu)?,
            target: stack_images(
                &targets.iter().collect::<Vec<_>>(),
                DType::F32,
                &Device::Cpu,
            )?,
            views: samples.iter().map(|s| s.target_view).collect(),
        })
    }

    fn len(&self) -> usize {
        self.views.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
        let ids = Tensor::new(ids.as_slice(), &Device::Cpu)?;
        Ok(Batch {
            cond: self.cond.index_select(&ids, 0)?,
            target: self.target.index_select(&ids, 0)?,
            views: idx.iter().map(|&i| self.views[i]).collect(),
        })
    }
}

/// Feeds batches of `order` to `step` in order. With `prefetch`, batches are assembled on a
/// helper thread through a bounded queue.
fn for_each_batch(
    set: &SampleSet,
    order: &[usize],
    batch_size: usize,
    prefetch: bool,
    mut step: impl FnMut(usize, Batch) -> Result<()>,
) -> Result<()> {
    if !prefetch {
        for (i, chunk) in order.chunks(batch_size).enumerate() {
            step(i, set.batch(chunk)?)?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(2);
        scope.spawn(move || {
            for chunk in order.chunks(batch_size) {
                if tx.send(set.batch(chunk)).is_err() {
                    break;
                }
            }
        });
        for (i, batch) in rx.iter().enumerate() {
            step(i, batch?)?;
        }
        Ok(())
    })
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor> {
    let v: Vec<f32> = (0..rows * cols)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x as f32
        })
        .collect();
    Ok(Tensor::from_vec(v, (rows, cols), &Device::Cpu)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Per-epoch weighted means of named loss components.
struct EpochMeter {
    sums: BTreeMap<String, f64>,
    count: usize,
}

impl EpochMeter {
    fn new() -> Self {
        Self {
            sums: BTreeMap::new(),
            count: 0,
        }
    }

    fn add(&mut self, n: usize, values: &[(&'static str, f64)]) {
        for (k, v) in values {
            *self.sums.entry((*k).to_string()).or_insert(0.0) += v * n as f64;
        }
        self.count += n;
    }

    fn finish(self) -> EpochLosses {
        let n = self.count.max(1) as f64;
        self.sums.into_iter().map(|(k, v)| (k, v / n)).collect()
    }
}

fn check_finite(
    stage: &'static str,
    epoch: usize,
    batch: usize,
    values: &[(&'static str, f64)],
) -> Result<()> {
    for &(what, value) in values {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage,
                epoch,
                batch,
                what,
                value,
            });
        }
    }
    Ok(())
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Streams {
    seed: u64,
    shuffle: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl Streams {
    fn fresh(seed: u64, stage: Stage) -> Self {
        let base = if stage == Stage::Coarse { 1 } else { 3 };
        Self {
            seed,
            shuffle: stream(seed, base),
            noise: stream(seed, base + 1),
        }
    }

    fn restore(state: &RngState, seed: u64) -> Result<Self> {
        let get = |name: &str| {
            state
                .streams
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks the {name} rng stream")))
                .and_then(|s| s.restore())
        };
        Ok(Self {
            seed,
            shuffle: get(SHUFFLE_STREAM)?,
            noise: get(NOISE_STREAM)?,
        })
    }

    fn capture(&self) -> RngState {
        let mut streams = BTreeMap::new();
        streams.insert(
            SHUFFLE_STREAM.to_string(),
            StreamState::capture(self.seed, &self.shuffle),
        );
        streams.insert(
            NOISE_STREAM.to_string(),
            StreamState::capture(self.seed, &self.noise),
        );
        RngState { streams }
    }
}

struct Resumed {
    start_epoch: usize,
    history: Vec<EpochLosses>,
    streams: Streams,
}

fn resume_state(
    resume: Option<&Checkpoint>,
    stage: Stage,
    models: &ModelConfig,
    config: &TrainConfig,
    optimizers: &mut [(&str, &mut Adam)],
    store: &crate::nn::ParamStore,
) -> Result<Resumed> {
    let Some(ckpt) = resume else {
        return Ok(Resumed {
            start_epoch: 0,
            history: Vec::new(),
            streams: Streams::fresh(config.seed, stage),
        });
    };
    ckpt.expect_stage(stage)?;
    if &ckpt.meta.models != models {
        return Err(Error::ConfigMismatch(format!(
            "{stage} checkpoint was built with a different model configuration"
        )));
    }
    if ckpt.meta.seed != config.seed {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint seed {} differs from the requested seed {}",
            ckpt.meta.seed, config.seed
        )));
    }
    store.load_snapshot(&ckpt.tensors)?;
    for (name, adam) in optimizers.iter_mut() {
        let step = *ckpt
            .meta
            .adam_steps
            .get(*name)
            .ok_or_else(|| Error::MissingTensor(format!("adam step count for {name}")))?;
        adam.load_state(&format!("adam.{name}."), &ckpt.tensors, step)?;
    }
    Ok(Resumed {
        start_epoch: ckpt.meta.epoch,
        history: ckpt.meta.loss_history.clone(),
        streams: Streams::restore(&ckpt.meta.rng_state, config.seed)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_checkpoint(
    stage: Stage,
    epoch: usize,
    models: &ModelConfig,
    config: &TrainConfig,
    flags: &AblationFlags,
    streams: &Streams,
    store: &crate::nn::ParamStore,
    optimizers: &[(&str, &Adam)],
    history: Vec<EpochLosses>,
) -> Checkpoint {
    let mut tensors: std::collections::HashMap<String, Tensor> =
        store.snapshot().into_iter().collect();
    let mut adam_steps = BTreeMap::new();
    for (name, adam) in optimizers {
        tensors.extend(adam.state(&format!("adam.{name}.")));
        adam_steps.insert((*name).to_string(), adam.step_count());
    }
    Checkpoint {
        meta: CheckpointMeta {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            stage,
            epoch,
            seed: config.seed,
            models: models.clone(),
            train: config.clone(),
            ablations: *flags,
            rng_state: streams.capture(),
            adam_steps,
            loss_history: history,
        },
        tensors,
    }
}

/// Trains the coarse stage for `config.coarse_epochs` epochs, optionally continuing `resume`.
pub fn train_coarse(
    samples: &[TrainingSample],
    config: &TrainConfig,
    flags: &AblationFlags,
    resume: Option<&Checkpoint>,
) -> Result<StageRun> {
    config.validate()?;
    let models = ModelConfig::resolve(config.desk_scale, flags);
    let set = SampleSet::new(samples, models.coarse.hr_size)?;
    let model = CoarseModel::new(&models, config.seed, DType::F32)?;
    let mut gen_adam = Adam::new(model.store.vars_with_prefix(COARSE_PREFIX), config.adam())?;
    let mut disc_adam = match &model.disc {
        Some(_) => Some(Adam::new(
            model.store.vars_with_prefix(COARSE_DISC_PREFIX),
            config.adam(),
        )?),
        None => None,
    };
    let resumed = {
        let mut opts: Vec<(&str, &mut Adam)> = vec![("gen", &mut gen_adam)];
        if let Some(d) = disc_adam.as_mut() {
            opts.push(("disc", d));
        }
        resume_state(
            resume,
            Stage::Coarse,
            &models,
            config,
            &mut opts,
            &model.store,
        )?
    };
    let Resumed {
        start_epoch,
        mut history,
        mut streams,
    } = resumed;
    let lambda = config.effective_lambda(flags);
    let form = config.adversarial_form();
    let latent = models.coarse.latent_dim;
    let mut step_log = Vec::new();
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in start_epoch..config.coarse_epochs {
        order.sort_unstable();
        order.shuffle(&mut streams.shuffle);
        let mut meter = EpochMeter::new();
        for_each_batch(
            &set,
            &order,
            config.batch_size,
            !config.deterministic,
            |b, batch| {
                let n = batch.views.len();
                let noise = normal_tensor(&mut streams.noise, n, latent)?;
                let gen = &model.generator;
                match (&model.disc, disc_adam.as_mut()) {
                    (Some(disc), Some(d_adam)) => {
                        let lr_target = gen.low_res_target(&batch.target)?;
                        let lr_cond = gen.low_res_target(&batch.cond)?;
                        let fake = gen.generate(&batch.cond, &batch.views, &noise, Mode::Train)?;
                        let d_real = disc.forward(&lr_cond, &lr_target, Mode::Train)?;
                        let d_fake = disc.forward(&lr_cond, &fake.detach(), Mode::Train)?;
                        let l_d = discriminator_loss_tensor(&d_real, &d_fake)?;
                        let d_val = scalar(&l_d)?;
                        check_finite("coarse", epoch + 1, b, &[("d_loss", d_val)])?;
                        d_adam.step(&l_d.neg()?.backward()?)?;
                        step_log.push(StepRecord {
                            epoch: epoch + 1,
                            batch: b,
                            phase: Phase::CoarseDiscriminator,
                        });
                        let d_fake_g = disc.forward(&lr_cond, &fake, Mode::Train)?;
                        let g = generator_loss_tensor(&d_fake_g, &fake, &lr_target, lambda, form)?;
                        let vals = [
                            ("d_loss", d_val),
                            ("adv", scalar(&g.adv)?),
                            ("recon", scalar(&g.l1)?),
                            ("total", scalar(&g.total)?),
                        ];
                        check_finite("coarse", epoch + 1, b, &vals)?;
                        gen_adam.step(&g.total.backward()?)?;
                        meter.add(n, &vals);
                    }
                    _ => {
                        let terms = gen.elbo(
                            &batch.target,
                            &batch.cond,
                            &batch.views,
                            &noise,
                            config.kl_weight,
                            Mode::Train,
                        )?;
                        let vals = [
                            ("total", scalar(&terms.total)?),
                            ("kl", scalar(&terms.kl)?),
                            ("recon", scalar(&terms.recon)?),
                        ];
                        check_finite("coarse", epoch + 1, b, &vals)?;
                        gen_adam.step(&terms.total.backward()?)?;
                        meter.add(n, &vals);
                    }
                }
                step_log.push(StepRecord {
                    epoch: epoch + 1,
                    batch: b,
                    phase: Phase::Coarse,
                });
                Ok(())
            },
        )?;
        let losses = meter.finish();
        log::info!(
            "coarse epoch {}/{}: {:?}",
            epoch + 1,
            config.coarse_epochs,
            losses
        );
        history.push(losses);
    }
    let mut opts: Vec<(&str, &Adam)> = vec![("gen", &gen_adam)];
    if let Some(d) = disc_adam.as_ref() {
        opts.push(("disc", d));
    }
    let epoch = config.coarse_epochs.max(start_epoch);
    let checkpoint = build_checkpoint(
        Stage::Coarse,
        epoch,
        &models,
        config,
        flags,
        &streams,
        &model.store,
        &opts,
        history,
    );
    Ok(StageRun {
        checkpoint,
        step_log,
    })
}

/// Trains the fine generator and discriminator on top of a frozen coarse checkpoint.
pub fn train_fine(
    samples: &[TrainingSample],
    coarse_ckpt: &Checkpoint,
    config: &TrainConfig,
    flags: &AblationFlags,
    resume: Option<&Checkpoint>,
) -> Result<StageRun> {
    config.validate()?;
    coarse_ckpt.expect_stage(Stage::Coarse)?;
    let resolved = ModelConfig::resolve(config.desk_scale, flags);
    if resolved.coarse != coarse_ckpt.meta.models.coarse {
        return Err(Error::ConfigMismatch(
            "coarse checkpoint configuration differs from the one implied by this run".into(),
        ));
    }
    let models = ModelConfig {
        coarse_disc: coarse_ckpt.meta.models.coarse_disc.clone(),
        ..resolved
    };
    let coarse = CoarseModel::from_checkpoint(coarse_ckpt)?;
    let set = SampleSet::new(samples, models.fine.hr_size)?;
    let model = FineModel::new(&models, config.seed, DType::F32)?;
    let mut gen_adam = Adam::new(model.store.vars_with_prefix(FINE_PREFIX), config.adam())?;
    let mut disc_adam = Adam::new(model.store.vars_with_prefix(DISC_PREFIX), config.adam())?;
    let Resumed {
        start_epoch,
        mut history,
        mut streams,
    } = resume_state(
        resume,
        Stage::Fine,
        &models,
        config,
        &mut [("gen", &mut gen_adam), ("disc", &mut disc_adam)],
        &model.store,
    )?;
    let lambda = config.effective_lambda(flags);
    let form = config.adversarial_form();
    let latent = models.coarse.latent_dim;
    let mut step_log = Vec::new();
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in start_epoch..config.fine_epochs {
        order.sort_unstable();
        order.shuffle(&mut streams.shuffle);
        let mut meter = EpochMeter::new();
        for_each_batch(
            &set,
            &order,
            config.batch_size,
            !config.deterministic,
            |b, batch| {
                let n = batch.views.len();
                let noise = normal_tensor(&mut streams.noise, n, latent)?;
                let coarse_img = coarse
                    .generator
                    .generate(&batch.cond, &batch.views, &noise, Mode::Eval)?
                    .detach();
                let fake = model.generator.forward(
                    &coarse_img,
                    &batch.cond,
                    Some(&batch.views),
                    Mode::Train,
                )?;

                let d_real = model
                    .disc
                    .forward(&batch.cond, &batch.target, Mode::Train)?;
                let d_fake = model
                    .disc
                    .forward(&batch.cond, &fake.detach(), Mode::Train)?;
                let l_d = discriminator_loss_tensor(&d_real, &d_fake)?;
                let d_val = scalar(&l_d)?;
                check_finite("fine", epoch + 1, b, &[("d_loss", d_val)])?;
                disc_adam.step(&l_d.neg()?.backward()?)?;
                step_log.push(StepRecord {
                    epoch: epoch + 1,
                    batch: b,
                    phase: Phase::Discriminator,
                });

                let d_fake_g = model.disc.forward(&batch.cond, &fake, Mode::Train)?;
                let g = generator_loss_tensor(&d_fake_g, &fake, &batch.target, lambda, form)?;
                let vals = [
                    ("d_loss", d_val),
                    ("adv", scalar(&g.adv)?),
                    ("l1", scalar(&g.l1)?),
                    ("total", scalar(&g.total)?),
                ];
                check_finite("fine", epoch + 1, b, &vals)?;
                gen_adam.step(&g.total.backward()?)?;
                step_log.push(StepRecord {
                    epoch: epoch + 1,
                    batch: b,
                    phase: Phase::Generator,
                });
                meter.add(n, &vals);
                Ok(())
            },
        )?;
        let losses = meter.finish();
        log::info!(
            "fine epoch {}/{}: {:?}",
            epoch + 1,
            config.fine_epochs,
            losses
        );
        history.push(losses);
    }
    let epoch = config.fine_epochs.max(start_epoch);
    let checkpoint = build_checkpoint(
        Stage::Fine,
        epoch,
        &models,
        config,
        flags,
        &streams,
        &model.store,
        &[("gen", &gen_adam), ("disc", &disc_adam)],
        history,
    );
    Ok(StageRun {
        checkpoint,
        step_log,
    })
}
