//! Step one: supervised training of encoder and decoder on labeled
//! synthetic pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{store_grad_norm, Adam};
use super::augment::AugmentConfig;
use super::batch::labeled_batch;
use super::checkpoint::{
    Checkpoint, Component, TrainingStep, ROLE_DECODER, ROLE_ENCODER_SYNTHETIC,
    ROLE_OPTIM_SUPERVISED,
};
use super::log::{LogRecord, TrainLog};
use super::order::{augmentations, BatchStream};
use crate::error::{ensure, Error, Result};
use crate::evalmetrics::MetricAccumulator;
use crate::losses::{supervised_loss, LossWeights, BERHU_K};
use crate::networks::{Decoder, Encoder, ModelConfig};
use crate::synthdata::{derive_seed, PairedSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub loss_weights: LossWeights,
    pub berhu_k: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Stop early after this many iterations.
    pub max_iterations: Option<u64>,
    /// Validate on at most this many frames.
    pub val_max_frames: Option<usize>,
    pub val_batch_size: usize,
    /// Also refresh the `last` checkpoint every this many iterations (0: only
    /// at epoch ends).
    pub checkpoint_every: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            betas: (0.9, 0.999),
            loss_weights: LossWeights::default(),
            berhu_k: BERHU_K,
            augment: AugmentConfig::default(),
            seed: 0,
            max_iterations: None,
            val_max_frames: None,
            val_batch_size: 8,
            checkpoint_every: 0,
        }
    }
}

pub(crate) fn validate_betas(betas: (f64, f64), section: &str) -> Result<()> {
    let ok = |b: f64| (0.0..1.0).contains(&b);
    ensure!(
        ok(betas.0) && ok(betas.1),
        Config,
        "{section}.betas must lie in [0, 1)"
    );
    Ok(())
}

pub(crate) fn validate_augment(a: &AugmentConfig, section: &str) -> Result<()> {
    let ranges = [a.brightness, a.contrast, a.saturation];
    ensure!(
        ranges
            .iter()
            .all(|r| r.is_finite() && (0.0..1.0).contains(r)),
        Config,
        "{section} brightness/contrast/saturation ranges must lie in [0, 1)"
    );
    ensure!(
        a.hue.is_finite() && (0.0..=0.5).contains(&a.hue),
        Config,
        "{section}.hue must lie in [0, 0.5]"
    );
    Ok(())
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.epochs >= 1,
            Config,
            "supervised.epochs must be at least 1"
        );
        ensure!(
            self.batch_size >= 1,
            Config,
            "supervised.batch_size must be at least 1"
        );
        ensure!(
            self.lr.is_finite() && self.lr > 0.0,
            Config,
            "supervised.lr must be positive, got {}",
            self.lr
        );
        validate_betas(self.betas, "supervised")?;
        self.loss_weights.validate()?;
        ensure!(
            self.berhu_k.is_finite() && self.berhu_k > 0.0,
            Config,
            "supervised.berhu_k must be positive"
        );
        validate_augment(&self.augment, "supervised.augment")?;
        ensure!(
            self.max_iterations != Some(0),
            Config,
            "supervised.max_iterations must be positive"
        );
        ensure!(
            self.val_max_frames != Some(0),
            Config,
            "supervised.val_max_frames must be positive"
        );
        ensure!(
            self.val_batch_size >= 1,
            Config,
            "supervised.val_batch_size must be at least 1"
        );
        Ok(())
    }
}

/// Result of one optimizer step.
#[derive(Debug, Clone)]
pub struct StepStats {
    /// Iterations completed after this step.
    pub iteration: u64,
    pub loss: f64,
    pub terms: BTreeMap<String, f64>,
    pub lr: f64,
    pub grad_norms: BTreeMap<String, f64>,
}

#[derive(Debug)]
pub struct SupervisedOutcome {
    pub last: Checkpoint,
    pub best: Option<Checkpoint>,
    pub losses: Vec<f64>,
}

pub struct SupervisedTrainer {
    cfg: SupervisedConfig,
    model_cfg: ModelConfig,
    config_hash: String,
    encoder: Encoder,
    decoder: Decoder,
    optim: Adam,
    iteration: u64,
    train: PairedSplit,
    val: Option<PairedSplit>,
    stream: BatchStream,
    best_val: Option<f64>,
}

const BEST_VAL_KEY: &str = "best_val_abs_rel";
const VAL_KEY: &str = "val_abs_rel";
pub(crate) const PROGRESS_EVERY: u64 = 50;

impl SupervisedTrainer {
    pub fn new(
        cfg: &SupervisedConfig,
        model_cfg: &ModelConfig,
        train: PairedSplit,
        val: Option<PairedSplit>,
        config_hash: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        model_cfg.validate()?;
        ensure!(
            !train.is_empty(),
            Data,
            "the supervised training split is empty"
        );
        for split in std::iter::once(&train).chain(val.as_ref()) {
            ensure!(
                i64::from(split.image_size()) == model_cfg.input_size,
                Config,
                "dataset images are {} px but model.input_size is {}",
                split.image_size(),
                model_cfg.input_size
            );
        }
        let encoder = Encoder::new(model_cfg, derive_seed(cfg.seed, "init-encoder", 0));
        let decoder = Decoder::new(model_cfg, derive_seed(cfg.seed, "init-decoder", 0));
        let optim = Adam::new(
            &[
                ("encoder", encoder.var_store()),
                ("decoder", decoder.var_store()),
            ],
            cfg.betas,
        );
        let stream = BatchStream::new(train.len(), cfg.batch_size, cfg.seed, "supervised-order");
        Ok(SupervisedTrainer {
            cfg: cfg.clone(),
            model_cfg: model_cfg.clone(),
            config_hash: config_hash.to_string(),
            encoder,
            decoder,
            optim,
            iteration: 0,
            train,
            val,
            stream,
            best_val: None,
        })
    }

    /// Continue from a checkpoint written by [`SupervisedTrainer::save`]
    /// under the same configuration.
    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let m = ckpt.manifest();
        ensure!(
            m.step == TrainingStep::Supervised,
            Config,
            "cannot resume supervised training from an {:?} checkpoint",
            m.step
        );
        ensure!(
            m.config_hash == self.config_hash && m.rng_seed == self.cfg.seed,
            Config,
            "checkpoint {} was written under a different configuration",
            ckpt.dir().display()
        );
        ensure!(
            m.model == self.model_cfg,
            Config,
            "checkpoint model configuration differs"
        );
        ckpt.load_weights(ROLE_ENCODER_SYNTHETIC, self.encoder.var_store_mut())?;
        ckpt.load_weights(ROLE_DECODER, self.decoder.var_store_mut())?;
        ckpt.load_optimizer(ROLE_OPTIM_SUPERVISED, &mut self.optim)?;
        ensure!(
            self.optim.steps() == m.iteration,
            Data,
            "optimizer state and manifest disagree on the iteration"
        );
        self.iteration = m.iteration;
        self.best_val = m.metrics.get(BEST_VAL_KEY).copied();
        Ok(())
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        self.train.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_iterations(&self) -> u64 {
        let full = self.cfg.epochs * self.iterations_per_epoch();
        self.cfg.max_iterations.map_or(full, |m| m.min(full))
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn step(&mut self) -> Result<StepStats> {
        let it = self.iteration;
        let indices = self.stream.batch(it);
        let augs = augmentations(
            &self.cfg.augment,
            indices.len(),
            self.cfg.seed,
            "supervised-augment",
            it,
        );
        let (images, gt) = labeled_batch(&self.train, &indices, &augs)?;

        self.optim.zero_grad();
        let out = self.decoder.forward(&self.encoder.forward(&images, true));
        let loss = supervised_loss(&gt, &out, &self.cfg.loss_weights, self.cfg.berhu_k)?;
        loss.total.backward();
        let mut grad_norms = BTreeMap::new();
        grad_norms.insert(
            "encoder".to_string(),
            store_grad_norm(self.encoder.var_store()),
        );
        grad_norms.insert(
            "decoder".to_string(),
            store_grad_norm(self.decoder.var_store()),
        );
        if let Some((name, g)) = grad_norms.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "{name} gradient norm is {g} at iteration {it}"
            )));
        }
        self.optim.step(self.cfg.lr);
        self.iteration += 1;
        Ok(StepStats {
            iteration: self.iteration,
            loss: loss.total_value(),
            terms: loss.breakdown(),
            lr: self.cfg.lr,
            grad_norms,
        })
    }

    /// Pixel-weighted abs-rel on the validation split, or `None` without one.
    pub fn validate(&self) -> Result<Option<f64>> {
        let Some(val) = &self.val else {
            return Ok(None);
        };
        let n = self
            .cfg
            .val_max_frames
            .map_or(val.len(), |m| m.min(val.len()));
        if n == 0 {
            return Ok(None);
        }
        let mut acc = MetricAccumulator::new();
        let indices: Vec<usize> = (0..n).collect();
        for chunk in indices.chunks(self.cfg.val_batch_size) {
            let (images, gt) = labeled_batch(val, chunk, &[])?;
            let depth = tch::no_grad(|| {
                self.decoder
                    .forward(&self.encoder.forward(&images, false))
                    .into_finest()
                    .depth
            });
            for b in 0..chunk.len() as i64 {
                let g = Vec::<f32>::try_from(gt.get(b).flatten(0, -1))?;
                let p = Vec::<f32>::try_from(depth.get(b).flatten(0, -1))?;
                acc.add_slices(&g, &p)?;
            }
        }
        Ok(Some(acc.report()?.abs_rel))
    }

    pub fn save(&self, dir: &Path, metrics: BTreeMap<String, f64>) -> Result<Checkpoint> {
        Checkpoint::save(
            dir,
            TrainingStep::Supervised,
            self.iteration,
            self.cfg.seed,
            &self.config_hash,
            &self.model_cfg,
            &[
                (
                    ROLE_ENCODER_SYNTHETIC,
                    Component::Weights(self.encoder.var_store()),
                ),
                (ROLE_DECODER, Component::Weights(self.decoder.var_store())),
                (ROLE_OPTIM_SUPERVISED, Component::Optimizer(&self.optim)),
            ],
            metrics,
        )
    }

    fn metrics(&self, val: Option<f64>) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if let Some(v) = val {
            m.insert(VAL_KEY.to_string(), v);
        }
        if let Some(b) = self.best_val {
            m.insert(BEST_VAL_KEY.to_string(), b);
        }
        m
    }

    fn snapshot(&self, ckpt_root: &Path, err: &Error) -> Result<()> {
        let dir = ckpt_root.join("nan_snapshot");
        self.save(&dir, BTreeMap::new())?;
        let diag = serde_json::json!({
            "iteration": self.iteration,
            "error": err.to_string(),
            "batch_indices": self.stream.clone().batch(self.iteration),
        });
        let path = dir.join("diagnostic.json");
        fs::write(&path, serde_json::to_string_pretty(&diag)?).map_err(|e| Error::io_at(&path, e))
    }

    /// Train to completion, writing `last` and `best` checkpoints under
    /// `ckpt_root`. A non-finite loss aborts the run after saving the model
    /// state to `ckpt_root/nan_snapshot`.
    pub fn run(&mut self, ckpt_root: &Path, log: &mut TrainLog) -> Result<SupervisedOutcome> {
        let per_epoch = self.iterations_per_epoch();
        let total = self.total_iterations();
        let mut losses = Vec::new();
        let mut last = None;
        let mut best = None;
        while self.iteration < total {
            let stats = match self.step() {
                Ok(s) => s,
                Err(e @ Error::Numeric(_)) => {
                    self.snapshot(ckpt_root, &e)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            losses.push(stats.loss);
            if stats.iteration % PROGRESS_EVERY == 0 {
                log::info!(
                    "supervised iteration {}/{total}: loss {:.4}",
                    stats.iteration,
                    stats.loss
                );
            }
            let epoch = (stats.iteration - 1) / per_epoch;
            let mut record = LogRecord {
                iteration: stats.iteration,
                phase: "supervised".into(),
                epoch: Some(epoch),
                losses: stats.terms,
                lr: stats.lr,
                grad_norms: stats.grad_norms,
                ..Default::default()
            };
            record.losses.insert("total".into(), stats.loss);
            log.write(record)?;

            if stats.iteration % per_epoch == 0 || stats.iteration == total {
                let val = self.validate()?;
                let improved = match (val, self.best_val) {
                    (Some(v), Some(b)) => v < b,
                    (Some(_), None) => true,
                    _ => false,
                };
                if improved {
                    self.best_val = val;
                }
                if let Some(v) = val {
                    log::info!("epoch {epoch}: validation abs-rel {v:.4}");
                }
                let metrics = self.metrics(val);
                log.write(LogRecord {
                    iteration: stats.iteration,
                    phase: "validation".into(),
                    epoch: Some(epoch),
                    lr: stats.lr,
                    metrics: metrics.clone(),
                    ..Default::default()
                })?;
                last = Some(self.save(&ckpt_root.join("last"), metrics.clone())?);
                if improved {
                    best = Some(self.save(&ckpt_root.join("best"), metrics)?);
                }
            } else if self.cfg.checkpoint_every > 0
                && stats.iteration % self.cfg.checkpoint_every == 0
            {
                last = Some(self.save(&ckpt_root.join("last"), self.metrics(None))?);
            }
        }
        let last = match last {
            Some(l) => l,
            None => self.save(&ckpt_root.join("last"), self.metrics(None))?,
        };
        if best.is_none() && ckpt_root.join("best").is_dir() {
            best = Some(Checkpoint::open(&ckpt_root.join("best"))?);
        }
        Ok(SupervisedOutcome { last, best, losses })
    }
}
