//! Step two: adversarial feature adaptation. A copy of the synthetic encoder
//! learns to map real-domain images into features that three patch
//! discriminators cannot tell apart from synthetic ones. The synthetic
//! encoder and the decoder stay frozen.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use super::adam::{store_grad_norm, Adam};
use super::augment::AugmentConfig;
use super::batch::unlabeled_batch;
use super::checkpoint::{
    Checkpoint, Component, TrainingStep, ROLE_DECODER, ROLE_DISCRIMINATORS, ROLE_ENCODER_REAL,
    ROLE_ENCODER_SYNTHETIC, ROLE_OPTIM_DISCRIMINATORS, ROLE_OPTIM_ENCODER,
};
use super::log::{LogRecord, TrainLog};
use super::order::{augmentations, BatchStream};
use super::schedule::{milestones_valid, step_lr};
use super::supervised::{validate_augment, validate_betas, PROGRESS_EVERY};
use crate::error::{ensure, Result};
use crate::losses::{discriminator_loss, encoder_adversarial_loss};
use crate::networks::{
    Decoder, Discriminators, Encoder, FeaturePyramid, ModelConfig, ADVERSARIAL_LEVELS,
};
use crate::synthdata::{derive_seed, UnlabeledSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub iterations: u64,
    /// Shared by the adapted encoder and the discriminators.
    pub lr: f64,
    /// Images per domain per iteration.
    pub batch_size: usize,
    pub betas: (f64, f64),
    pub seed: u64,
    pub synthetic_augment: AugmentConfig,
    pub real_augment: AugmentConfig,
    pub collapse_threshold: f64,
    pub collapse_patience: u64,
    pub checkpoint_every: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            iterations: 12_000,
            lr: 5e-6,
            batch_size: 64,
            betas: (0.9, 0.999),
            seed: 0,
            synthetic_augment: AugmentConfig::default(),
            real_augment: AugmentConfig::flips_only(),
            collapse_threshold: 1e-3,
            collapse_patience: 500,
            checkpoint_every: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            milestones_valid(self.iterations),
            Config,
            "adapt.iterations = {} leaves no room for both learning-rate milestones",
            self.iterations
        );
        ensure!(
            self.lr.is_finite() && self.lr > 0.0,
            Config,
            "adapt.lr must be positive, got {}",
            self.lr
        );
        ensure!(
            self.batch_size >= 1,
            Config,
            "adapt.batch_size must be at least 1"
        );
        validate_betas(self.betas, "adapt")?;
        validate_augment(&self.synthetic_augment, "adapt.synthetic_augment")?;
        validate_augment(&self.real_augment, "adapt.real_augment")?;
        ensure!(
            self.collapse_threshold.is_finite() && self.collapse_threshold >= 0.0,
            Config,
            "adapt.collapse_threshold must be non-negative"
        );
        ensure!(
            self.collapse_patience >= 1,
            Config,
            "adapt.collapse_patience must be at least 1"
        );
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdaptStats {
    pub iteration: u64,
    pub lr: f64,
    pub discriminator_loss: f64,
    pub encoder_loss: f64,
    /// Fraction of patches classified correctly, per level.
    pub discriminator_accuracy: Vec<f64>,
    pub grad_norms: BTreeMap<String, f64>,
    pub collapse_warning: bool,
}

pub struct AdaptTrainer {
    cfg: AdaptConfig,
    model_cfg: ModelConfig,
    config_hash: String,
    encoder_s: Encoder,
    decoder: Decoder,
    encoder_r: Encoder,
    discriminators: Discriminators,
    opt_encoder: Adam,
    opt_discriminators: Adam,
    iteration: u64,
    synthetic: UnlabeledSplit,
    real: UnlabeledSplit,
    synthetic_stream: BatchStream,
    real_stream: BatchStream,
    low_loss_run: u64,
}

fn patch_accuracy(real_logits: &Tensor, fake_logits: &Tensor) -> f64 {
    let hits = real_logits.gt(0.0).to_kind(Kind::Double).sum(Kind::Double)
        + fake_logits.lt(0.0).to_kind(Kind::Double).sum(Kind::Double);
    hits.double_value(&[]) / (real_logits.numel() + fake_logits.numel()) as f64
}

impl AdaptTrainer {
    /// Starts from a supervised checkpoint. Only colour images are read from
    /// either domain.
    pub fn new(
        cfg: &AdaptConfig,
        supervised: &Checkpoint,
        synthetic: UnlabeledSplit,
        real: UnlabeledSplit,
        config_hash: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let m = supervised.manifest();
        ensure!(
            m.step == TrainingStep::Supervised,
            Config,
            "adaptation needs a supervised checkpoint, {} is {:?}",
            supervised.dir().display(),
            m.step
        );
        let model_cfg = m.model.clone();
        ensure!(
            !synthetic.is_empty(),
            Data,
            "the synthetic image set is empty"
        );
        ensure!(!real.is_empty(), Data, "the real-domain image set is empty");
        for (name, size) in [
            ("synthetic", synthetic.image_size()),
            ("real-domain", real.image_size()),
        ] {
            ensure!(
                i64::from(size) == model_cfg.input_size,
                Config,
                "{name} images are {size} px but the checkpoint expects {}",
                model_cfg.input_size
            );
        }

        let mut encoder_s = Encoder::new(&model_cfg, 0);
        let mut decoder = Decoder::new(&model_cfg, 0);
        supervised.load_weights(ROLE_ENCODER_SYNTHETIC, encoder_s.var_store_mut())?;
        supervised.load_weights(ROLE_DECODER, decoder.var_store_mut())?;
        encoder_s.var_store_mut().freeze();
        decoder.var_store_mut().freeze();
        let encoder_r = encoder_s.clone_encoder();
        let discriminators =
            Discriminators::new(&model_cfg, derive_seed(cfg.seed, "init-discriminators", 0));
        let opt_encoder = Adam::new(&[("encoder_r", encoder_r.var_store())], cfg.betas);
        let opt_discriminators =
            Adam::new(&[("discriminators", discriminators.var_store())], cfg.betas);
        let synthetic_stream = BatchStream::new(
            synthetic.len(),
            cfg.batch_size,
            cfg.seed,
            "adapt-synthetic-order",
        );
        let real_stream =
            BatchStream::new(real.len(), cfg.batch_size, cfg.seed, "adapt-real-order");
        Ok(AdaptTrainer {
            cfg: cfg.clone(),
            model_cfg,
            config_hash: config_hash.to_string(),
            encoder_s,
            decoder,
            encoder_r,
            discriminators,
            opt_encoder,
            opt_discriminators,
            iteration: 0,
            synthetic,
            real,
            synthetic_stream,
            real_stream,
            low_loss_run: 0,
        })
    }

    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let m = ckpt.manifest();
        ensure!(
            m.step == TrainingStep::Adapted,
            Config,
            "cannot resume adaptation from a {:?} checkpoint",
            m.step
        );
        ensure!(
            m.config_hash == self.config_hash
                && m.rng_seed == self.cfg.seed
                && m.model == self.model_cfg,
            Config,
            "checkpoint {} was written under a different configuration",
            ckpt.dir().display()
        );
        ckpt.load_weights(ROLE_ENCODER_SYNTHETIC, self.encoder_s.var_store_mut())?;
        ckpt.load_weights(ROLE_DECODER, self.decoder.var_store_mut())?;
        ckpt.load_weights(ROLE_ENCODER_REAL, self.encoder_r.var_store_mut())?;
        ckpt.load_weights(ROLE_DISCRIMINATORS, self.discriminators.var_store_mut())?;
        ckpt.load_optimizer(ROLE_OPTIM_ENCODER, &mut self.opt_encoder)?;
        ckpt.load_optimizer(ROLE_OPTIM_DISCRIMINATORS, &mut self.opt_discriminators)?;
        self.iteration = m.iteration;
        self.low_loss_run = m.metrics.get("low_loss_run").map_or(0, |v| *v as u64);
        Ok(())
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn encoder_synthetic(&self) -> &Encoder {
        &self.encoder_s
    }

    pub fn encoder_real(&self) -> &Encoder {
        &self.encoder_r
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn discriminators(&self) -> &Discriminators {
        &self.discriminators
    }

    pub fn lr(&self) -> f64 {
        step_lr(self.cfg.lr, self.iteration, self.cfg.iterations)
    }

    /// One discriminator update followed by one encoder update.
    pub fn step(&mut self) -> Result<AdaptStats> {
        let it = self.iteration;
        let lr = self.lr();
        let b = self.cfg.batch_size;
        let syn_idx = self.synthetic_stream.batch(it);
        let real_idx = self.real_stream.batch(it);
        let syn_aug = augmentations(
            &self.cfg.synthetic_augment,
            b,
            self.cfg.seed,
            "adapt-synthetic-augment",
            it,
        );
        let real_aug = augmentations(
            &self.cfg.real_augment,
            b,
            self.cfg.seed,
            "adapt-real-augment",
            it,
        );
        let syn = unlabeled_batch(&self.synthetic, &syn_idx, &syn_aug)?;
        let real = unlabeled_batch(&self.real, &real_idx, &real_aug)?;

        let source: FeaturePyramid = tch::no_grad(|| self.encoder_s.forward(&syn, false));
        let target = self.encoder_r.forward(&real, true);

        // discriminator update on detached features
        self.opt_discriminators.zero_grad();
        self.opt_encoder.zero_grad();
        let mut d_loss = Tensor::zeros([], (Kind::Float, tch::Device::Cpu));
        let mut accuracy = Vec::with_capacity(ADVERSARIAL_LEVELS.len());
        for level in 0..ADVERSARIAL_LEVELS.len() {
            let real_logits = self
                .discriminators
                .forward(level, source.adversarial(level));
            let fake_logits = self
                .discriminators
                .forward(level, &target.adversarial(level).detach());
            accuracy.push(patch_accuracy(&real_logits, &fake_logits));
            d_loss += discriminator_loss(&real_logits, &fake_logits);
        }
        d_loss.backward();
        let d_norm = self.opt_discriminators.grad_norm();
        self.opt_discriminators.step(lr);

        // encoder update through the freshly updated discriminators
        self.opt_discriminators.zero_grad();
        let mut e_loss = Tensor::zeros([], (Kind::Float, tch::Device::Cpu));
        for level in 0..ADVERSARIAL_LEVELS.len() {
            let fake_logits = self
                .discriminators
                .forward(level, target.adversarial(level));
            e_loss += encoder_adversarial_loss(&fake_logits);
        }
        e_loss.backward();
        let e_norm = self.opt_encoder.grad_norm();

        let d_value = d_loss.double_value(&[]);
        let e_value = e_loss.double_value(&[]);
        ensure!(
            d_value.is_finite() && e_value.is_finite() && d_norm.is_finite() && e_norm.is_finite(),
            Numeric,
            "adversarial losses diverged at iteration {it} (discriminator {d_value}, encoder {e_value})"
        );
        self.opt_encoder.step(lr);
        self.opt_discriminators.zero_grad();

        let mut grad_norms = BTreeMap::new();
        grad_norms.insert("discriminators".to_string(), d_norm);
        grad_norms.insert("encoder_real".to_string(), e_norm);
        grad_norms.insert(
            "encoder_synthetic".to_string(),
            store_grad_norm(self.encoder_s.var_store()),
        );
        grad_norms.insert(
            "decoder".to_string(),
            store_grad_norm(self.decoder.var_store()),
        );

        if d_value < self.cfg.collapse_threshold {
            self.low_loss_run += 1;
        } else {
            self.low_loss_run = 0;
        }
        let collapse_warning = self.low_loss_run == self.cfg.collapse_patience;
        if collapse_warning {
            log::warn!(
                "possible mode collapse: discriminator loss below {} for {} consecutive iterations",
                self.cfg.collapse_threshold,
                self.cfg.collapse_patience
            );
        }
        self.iteration += 1;
        Ok(AdaptStats {
            iteration: self.iteration,
            lr,
            discriminator_loss: d_value,
            encoder_loss: e_value,
            discriminator_accuracy: accuracy,
            grad_norms,
            collapse_warning,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<Checkpoint> {
        let mut metrics = BTreeMap::new();
        metrics.insert("low_loss_run".to_string(), self.low_loss_run as f64);
        Checkpoint::save(
            dir,
            TrainingStep::Adapted,
            self.iteration,
            self.cfg.seed,
            &self.config_hash,
            &self.model_cfg,
            &[
                (
                    ROLE_ENCODER_SYNTHETIC,
                    Component::Weights(self.encoder_s.var_store()),
                ),
                (ROLE_DECODER, Component::Weights(self.decoder.var_store())),
                (
                    ROLE_ENCODER_REAL,
                    Component::Weights(self.encoder_r.var_store()),
                ),
                (
                    ROLE_DISCRIMINATORS,
                    Component::Weights(self.discriminators.var_store()),
                ),
                (ROLE_OPTIM_ENCODER, Component::Optimizer(&self.opt_encoder)),
                (
                    ROLE_OPTIM_DISCRIMINATORS,
                    Component::Optimizer(&self.opt_discriminators),
                ),
            ],
            metrics,
        )
    }

    pub fn run(&mut self, ckpt_root: &Path, log: &mut TrainLog) -> Result<Checkpoint> {
        let last = ckpt_root.join("adapted");
        while self.iteration < self.cfg.iterations {
            let s = self.step()?;
            if s.iteration % PROGRESS_EVERY == 0 {
                log::info!(
                    "adapt iteration {}/{}: discriminator {:.4}, encoder {:.4}, lr {:.2e}",
                    s.iteration,
                    self.cfg.iterations,
                    s.discriminator_loss,
                    s.encoder_loss,
                    s.lr
                );
            }
            let mut losses = BTreeMap::new();
            losses.insert("discriminator".to_string(), s.discriminator_loss);
            losses.insert("encoder".to_string(), s.encoder_loss);
            let metrics = s
                .discriminator_accuracy
                .iter()
                .enumerate()
                .map(|(i, a)| (format!("discriminator_accuracy_{}", i + 1), *a))
                .collect();
            log.write(LogRecord {
                iteration: s.iteration,
                phase: "adapt".into(),
                losses,
                lr: s.lr,
                grad_norms: s.grad_norms,
                metrics,
                warning: s.collapse_warning.then(|| "mode_collapse".to_string()),
                ..Default::default()
            })?;
            if self.cfg.checkpoint_every > 0 && s.iteration % self.cfg.checkpoint_every == 0 {
                self.save(&last)?;
            }
        }
        self.save(&last)
    }
}
