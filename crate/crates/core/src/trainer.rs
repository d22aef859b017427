//! The training loop.
//!
//! Each generator update is preceded by `d_steps_per_g` discriminator updates
//! on consecutive real batches; the epoch runs `ceil(batches / d_steps_per_g)`
//! generator updates, wrapping around the data with a fresh seeded shuffle
//! when it runs out. After each generator update the measures are taken on
//! the most recent real batch and a freshly generated fake batch, both
//! embedded by the current discriminator in training-mode batch norm.
//!
//! Run directory layout:
//!
//! - `metrics.csv`: one row per generator update (see [`crate::metrics`]).
//! - `hist_epochNNNN.txt`: embedding histograms every `hist_every` epochs
//!   and after the last epoch.
//! - `checkpoint_epochNNNN.bin`: generator and discriminator tensors every
//!   `ckpt_every` epochs and after the last epoch.

use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use rand::RngCore;

use crate::data::{self, DatasetHandle, NoisePrior};
use crate::error::{LeganError, Result};
use crate::measures::{
    embedding_histogram, fit_gaussian, legan_step_with_model, EmbeddingBatch, GaussianEma,
    HistogramDump, LeganRecord,
};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::networks::{
    write_checkpoint, Architecture, Discriminator, Generator, NormMode, BN_MOMENTUM, NOISE_DIM,
};
use crate::objectives::{clip_weights, l2_penalty, ObjectiveKind};
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// `count` blob images at the architecture's image size.
    Synthetic { count: usize, seed: u64 },
    /// CIFAR-10 binary batch files.
    Cifar10 { paths: Vec<PathBuf> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub architecture: Architecture,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Discriminator weight bound; `None` disables clipping.
    pub clip_c: Option<f64>,
    pub l2_lambda: f64,
    pub d_steps_per_g: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Decay of the moving-average Gaussian; `None` refits on every batch.
    pub legan_ema: Option<f64>,
    pub noise_prior: NoisePrior,
    pub dataset: DatasetSpec,
    pub hist_every: usize,
    pub hist_bins: usize,
    pub ckpt_every: usize,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveKind::Vanilla,
            architecture: Architecture::Full,
            batch_size: 128,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_c: Some(0.02),
            l2_lambda: 1e-4,
            d_steps_per_g: 5,
            epochs: 1,
            seed: 0,
            legan_ema: None,
            noise_prior: NoisePrior::StandardNormal,
            dataset: DatasetSpec::Synthetic {
                count: 2000,
                seed: 0,
            },
            hist_every: 10,
            hist_bins: 20,
            ckpt_every: 50,
            out_dir: PathBuf::from("run"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(LeganError::invalid("train_config", detail));
        if self.batch_size < 2 {
            return bad(format!("batch_size {} must be at least 2", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {} must be positive", self.adam_eps));
        }
        if let Some(c) = self.clip_c {
            if !(c > 0.0) {
                return bad(format!("clip_c {c} must be positive"));
            }
        }
        if !(self.l2_lambda >= 0.0) {
            return bad(format!("l2_lambda {} must be non-negative", self.l2_lambda));
        }
        if self.d_steps_per_g == 0 {
            return bad("d_steps_per_g must be at least 1".into());
        }
        if let Some(d) = self.legan_ema {
            if !(0.0..1.0).contains(&d) {
                return bad(format!("legan_ema decay {d} outside [0, 1)"));
            }
        }
        if self.hist_every == 0 || self.ckpt_every == 0 {
            return bad("hist_every and ckpt_every must be at least 1".into());
        }
        if self.hist_bins < 2 {
            return bad(format!("hist_bins {} must be at least 2", self.hist_bins));
        }
        if let DatasetSpec::Cifar10 { .. } = self.dataset {
            if self.architecture.image_size() != data::CIFAR_SIDE {
                return bad("CIFAR-10 data needs a 32x32 architecture".into());
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn load_dataset<T: Scalar>(&self) -> Result<DatasetHandle<T>> {
        let shuffle_seed = self.seed;
        match &self.dataset {
            DatasetSpec::Synthetic { count, seed } => {
                let mut d = data::synth_blobs(*count, self.architecture.image_size(), *seed)?;
                d.shuffle_seed = shuffle_seed;
                Ok(d)
            }
            DatasetSpec::Cifar10 { paths } => data::load_cifar10_binary(paths, shuffle_seed),
        }
    }
}

/// Position of an update for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepId {
    pub epoch: usize,
    /// Discriminator update index within the epoch.
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DStep<T> {
    pub loss: T,
    pub critic_distance: Option<T>,
}

/// Embeddings and measures taken after a generator update.
#[derive(Clone, Debug)]
pub struct Measurement<T> {
    pub real: EmbeddingBatch<T>,
    pub fake: EmbeddingBatch<T>,
    pub record: LeganRecord<T>,
}

/// Callbacks for instrumented runs.
pub trait TrainObserver<T> {
    fn on_d_step(&mut self, _gan: &Gan<T>, _at: StepId, _step: &DStep<T>) {}
    fn on_g_step(&mut self, _gan: &Gan<T>, _at: StepId, _measurement: &Measurement<T>) {}
    fn on_epoch(&mut self, _log: &EpochLog) {}
}

/// Observer that does nothing.
pub struct Silent;

impl<T> TrainObserver<T> for Silent {}

/// Per-epoch summary; every field is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub l_real: f64,
    pub l_fake: f64,
    pub l_diff: f64,
    pub l_ratio: f64,
    pub critic_distance: Option<f64>,
    pub seconds: f64,
}

/// Generator, discriminator and their optimizer state.
#[derive(Clone, Debug)]
pub struct Gan<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    objective: ObjectiveKind,
    noise_seed: u64,
    noise_draws: u64,
    ema: Option<GaussianEma<T>>,
}

fn finite_or<T: Scalar>(v: T, quantity: &'static str, at: StepId) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LeganError::NonFinite {
            quantity,
            epoch: at.epoch,
            batch: at.batch,
        })
    }
}

fn all_finite<T: Scalar>(ts: &[Tensor<T>], quantity: &'static str, at: StepId) -> Result<()> {
    if ts.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(LeganError::NonFinite {
            quantity,
            epoch: at.epoch,
            batch: at.batch,
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl<T: Scalar> Gan<T> {
    /// Builds both networks from seeds derived from `cfg.seed`.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut seeds = data::stream_rng(cfg.seed, 0);
        let (g_seed, d_seed, noise_seed) = (seeds.next_u64(), seeds.next_u64(), seeds.next_u64());
        let generator = Generator::build(cfg.architecture, NOISE_DIM, g_seed)?;
        let discriminator = Discriminator::build(cfg.architecture, cfg.objective, d_seed)?;
        let ema = cfg
            .legan_ema
            .map(|d| GaussianEma::new(T::lit(d)))
            .transpose()?;
        Ok(Gan {
            adam_g: AdamState::new(generator.net.params()),
            adam_d: AdamState::new(discriminator.net.params()),
            generator,
            discriminator,
            objective: cfg.objective,
            noise_seed,
            noise_draws: 0,
            ema,
        })
    }

    pub fn objective(&self) -> ObjectiveKind {
        self.objective
    }

    /// Next noise batch from the run's noise stream.
    pub fn draw_noise(&mut self, count: usize, prior: NoisePrior) -> Result<Tensor<T>> {
        let z = data::sample_noise(
            count,
            self.generator.noise_dim,
            self.noise_seed,
            self.noise_draws,
            prior,
        );
        self.noise_draws += 1;
        z
    }

    /// One discriminator update: objective loss plus L2 penalty, Adam on the
    /// discriminator only, then clipping.
    pub fn train_batch_d(
        &mut self,
        real: &Tensor<T>,
        noise: &Tensor<T>,
        cfg: &TrainConfig,
        at: StepId,
    ) -> Result<DStep<T>> {
        let fake = self.generator.generate(noise, NormMode::Train)?;
        let d = &self.discriminator;
        let mut tape = crate::autodiff::Tape::new();
        let xr = tape.constant(real.clone());
        let xf = tape.constant(fake);
        let fr = d.embed_var(&mut tape, xr, NormMode::Train, true)?;
        let ff = d.embed_var(&mut tape, xf, NormMode::Train, true)?;
        let objective = self.objective.d_loss(&mut tape, fr.output, ff.output)?;
        let penalty = l2_penalty(&mut tape, &fr.param_vars, T::lit(cfg.l2_lambda))?;
        let total = tape.add(objective.loss, penalty)?;
        let loss = finite_or(tape.value(total).item()?, "d_loss", at)?;
        let critic_distance = match objective.critic_distance {
            Some(v) => Some(tape.value(v).item()?),
            None => None,
        };
        let mut grads = tape.backward(total)?;
        // The two forwards hold separate leaves for the same parameters.
        let g: Vec<Tensor<T>> = fr
            .param_vars
            .iter()
            .zip(&ff.param_vars)
            .map(|(&a, &b)| {
                let mut ga = grads.take(a);
                for (x, y) in ga.data_mut().iter_mut().zip(grads.take(b).data()) {
                    *x += *y;
                }
                ga
            })
            .collect();
        all_finite(&g, "d_gradient", at)?;
        self.adam_d
            .step(self.discriminator.net.params_mut(), &g, &cfg.adam())?;
        if let Some(c) = cfg.clip_c {
            clip_weights(self.discriminator.net.params_mut(), T::lit(c))?;
        }
        let momentum = T::lit(BN_MOMENTUM);
        self.discriminator
            .net
            .update_running_stats(&fr.stats, momentum);
        self.discriminator
            .net
            .update_running_stats(&ff.stats, momentum);
        Ok(DStep {
            loss,
            critic_distance,
        })
    }

    /// One generator update through the frozen discriminator.
    pub fn train_batch_g(&mut self, noise: &Tensor<T>, cfg: &TrainConfig, at: StepId) -> Result<T> {
        let mut tape = crate::autodiff::Tape::new();
        let z = tape.constant(noise.clone());
        let gf = self
            .generator
            .forward(&mut tape, z, NormMode::Train, true)?;
        let df = self
            .discriminator
            .embed_var(&mut tape, gf.output, NormMode::Train, false)?;
        let loss_var = self.objective.g_loss(&mut tape, df.output)?;
        let loss = finite_or(tape.value(loss_var).item()?, "g_loss", at)?;
        let mut grads = tape.backward(loss_var)?;
        let g: Vec<Tensor<T>> = gf.param_vars.iter().map(|&v| grads.take(v)).collect();
        all_finite(&g, "g_gradient", at)?;
        self.adam_g
            .step(self.generator.net.params_mut(), &g, &cfg.adam())?;
        self.generator
            .net
            .update_running_stats(&gf.stats, T::lit(BN_MOMENTUM));
        Ok(loss)
    }

    /// Embeds `real` and a fresh fake batch and scores them.
    pub fn measure(
        &mut self,
        real: &Tensor<T>,
        cfg: &TrainConfig,
        at: StepId,
    ) -> Result<Measurement<T>> {
        let noise = self.draw_noise(real.shape()[0], cfg.noise_prior)?;
        let fake = self.generator.generate(&noise, NormMode::Train)?;
        let er = self.discriminator.embed(real, NormMode::Train)?;
        let ef = self.discriminator.embed(&fake, NormMode::Train)?;
        let nonfinite = |_| LeganError::NonFinite {
            quantity: "embedding",
            epoch: at.epoch,
            batch: at.batch,
        };
        let real = EmbeddingBatch::real(er.into_data()).map_err(nonfinite)?;
        let fake = EmbeddingBatch::fake(ef.into_data()).map_err(nonfinite)?;
        let fitted = fit_gaussian(&real)?;
        let model = match self.ema.as_mut() {
            Some(ema) => ema.update(&fitted),
            None => fitted,
        };
        let record = legan_step_with_model(&model, &real, &fake, at.epoch, at.batch)?;
        for v in [record.l_real, record.l_fake, record.l_diff, record.l_ratio] {
            finite_or(v, "legan measure", at)?;
        }
        Ok(Measurement { real, fake, record })
    }

    /// One epoch of the schedule. Returns the summary, one metrics row per
    /// generator update, and the last measurement.
    pub fn train_epoch(
        &mut self,
        dataset: &DatasetHandle<T>,
        cfg: &TrainConfig,
        epoch: usize,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<EpochOutput<T>> {
        let start = Instant::now();
        let mut pass = 0u64;
        let epoch_seed = |pass: u64| ((epoch as u64) << 16) | pass;
        let mut order = dataset.batch_order(cfg.batch_size, epoch_seed(pass))?;
        let g_steps = order.len().div_ceil(cfg.d_steps_per_g).max(1);
        let mut cursor = 0;
        let mut d_index = 0;
        let mut rows = Vec::with_capacity(g_steps);
        let mut records = Vec::with_capacity(g_steps);
        let mut last = None;
        for step in 0..g_steps {
            let mut d_losses = Vec::with_capacity(cfg.d_steps_per_g);
            let mut distances = Vec::new();
            let mut real = None;
            for _ in 0..cfg.d_steps_per_g {
                if cursor == order.len() {
                    pass += 1;
                    order = dataset.batch_order(cfg.batch_size, epoch_seed(pass))?;
                    cursor = 0;
                }
                let batch = dataset.gather(&order[cursor])?.into_tensor();
                cursor += 1;
                let at = StepId {
                    epoch,
                    batch: d_index,
                };
                let noise = self.draw_noise(cfg.batch_size, cfg.noise_prior)?;
                let d = self.train_batch_d(&batch, &noise, cfg, at)?;
                observer.on_d_step(self, at, &d);
                d_losses.push(d.loss.to_f64_lossy());
                if let Some(cd) = d.critic_distance {
                    distances.push(cd.to_f64_lossy());
                }
                real = Some(batch);
                d_index += 1;
            }
            let at = StepId {
                epoch,
                batch: d_index - 1,
            };
            let noise = self.draw_noise(cfg.batch_size, cfg.noise_prior)?;
            let g_loss = self.train_batch_g(&noise, cfg, at)?;
            let real = real.expect("at least one discriminator step");
            let m = self.measure(&real, cfg, at)?;
            observer.on_g_step(self, at, &m);
            let r = &m.record;
            rows.push(MetricsRow {
                epoch,
                step,
                objective: self.objective.as_str().to_string(),
                d_loss: mean(&d_losses),
                g_loss: g_loss.to_f64_lossy(),
                l_real: r.l_real.to_f64_lossy(),
                l_fake: r.l_fake.to_f64_lossy(),
                l_diff: r.l_diff.to_f64_lossy(),
                l_ratio: r.l_ratio.to_f64_lossy(),
                critic_distance: (!distances.is_empty()).then(|| mean(&distances)),
                l_diff_perimage: r.per_image.l_diff.to_f64_lossy(),
                l_ratio_perimage: r.per_image.l_ratio.to_f64_lossy(),
            });
            records.push(m.record);
            last = Some(m);
        }
        let col = |f: fn(&MetricsRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        let log = EpochLog {
            epoch,
            d_steps: d_index,
            g_steps,
            d_loss: col(|r| r.d_loss),
            g_loss: col(|r| r.g_loss),
            l_real: col(|r| r.l_real),
            l_fake: col(|r| r.l_fake),
            l_diff: col(|r| r.l_diff),
            l_ratio: col(|r| r.l_ratio),
            critic_distance: rows[0]
                .critic_distance
                .map(|_| col(|r| r.critic_distance.unwrap_or(0.0))),
            seconds: start.elapsed().as_secs_f64(),
        };
        observer.on_epoch(&log);
        Ok(EpochOutput {
            log,
            rows,
            records,
            last: last.expect("at least one generator step"),
        })
    }
}

pub struct EpochOutput<T> {
    pub log: EpochLog,
    pub rows: Vec<MetricsRow>,
    pub records: Vec<LeganRecord<T>>,
    pub last: Measurement<T>,
}

/// Files produced by [`train`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub metrics: PathBuf,
    pub histograms: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub epochs: Vec<EpochLog>,
}

pub fn hist_path(dir: &std::path::Path, epoch: usize) -> PathBuf {
    dir.join(format!("hist_epoch{epoch:04}.txt"))
}

pub fn checkpoint_path(dir: &std::path::Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint_epoch{epoch:04}.bin"))
}

/// Runs `cfg.epochs` epochs and writes the run directory.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let dataset = cfg.load_dataset::<T>()?;
    let mut gan = Gan::<T>::new(cfg)?;
    train_gan(&mut gan, &dataset, cfg, observer)
}

/// Like [`train`] with a prepared model and dataset.
pub fn train_gan<T: Scalar>(
    gan: &mut Gan<T>,
    dataset: &DatasetHandle<T>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<RunSummary> {
    if dataset.image_size != cfg.architecture.image_size() {
        return Err(LeganError::invalid(
            "train",
            format!(
                "dataset images are {0}x{0}, architecture expects {1}x{1}",
                dataset.image_size,
                cfg.architecture.image_size()
            ),
        ));
    }
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| LeganError::io(dir, e))?;
    let metrics = dir.join("metrics.csv");
    let file = fs::File::create(&metrics).map_err(|e| LeganError::io(&metrics, e))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file))?;
    let mut summary = RunSummary {
        metrics: metrics.clone(),
        histograms: Vec::new(),
        checkpoints: Vec::new(),
        epochs: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let out = gan.train_epoch(dataset, cfg, epoch, observer)?;
        for row in &out.rows {
            writer.write(row)?;
        }
        writer
            .flush()
            .map_err(|_| LeganError::io(&metrics, std::io::Error::other("flush failed")))?;
        let last_epoch = epoch + 1 == cfg.epochs;
        if epoch % cfg.hist_every == 0 || last_epoch {
            let dump: HistogramDump<T> =
                embedding_histogram(&out.last.real, &out.last.fake, cfg.hist_bins, epoch)?;
            let path = hist_path(dir, epoch);
            fs::write(&path, dump.to_text()).map_err(|e| LeganError::io(&path, e))?;
            summary.histograms.push(path);
        }
        if (epoch + 1) % cfg.ckpt_every == 0 || last_epoch {
            let path = checkpoint_path(dir, epoch);
            let mut tensors = gan.generator.net.named_tensors();
            tensors.extend(gan.discriminator.net.named_tensors());
            write_checkpoint(&path, &tensors)?;
            summary.checkpoints.push(path);
        }
        summary.epochs.push(out.log);
    }
    Ok(summary)
}
