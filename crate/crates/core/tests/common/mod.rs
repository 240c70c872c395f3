#![allow(dead_code)]

use std::path::Path;

use bronchodepth::networks::ModelConfig;
use bronchodepth::pipeline::checkpoint::Checkpoint;
use bronchodepth::pipeline::supervised::{SupervisedConfig, SupervisedTrainer};
use bronchodepth::synthdata::{
    generate_datasets, DataConfig, DataLayout, PairedSplit, SPLIT_TRAIN, SPLIT_VAL,
};

pub const SIZE: u32 = 128;

pub fn model_config() -> ModelConfig {
    ModelConfig {
        input_size: i64::from(SIZE),
        ..ModelConfig::default()
    }
}

pub fn data_config(synthetic: usize, real_train: usize, real_test: usize, seed: u64) -> DataConfig {
    DataConfig {
        seed,
        image_size: SIZE,
        synthetic_frames: synthetic,
        real_train_frames: real_train,
        real_test_frames: real_test,
        ..DataConfig::default()
    }
}

pub fn generate(root: &Path, cfg: &DataConfig) -> DataLayout {
    let layout = DataLayout::new(root);
    generate_datasets(cfg, &layout).expect("dataset generation");
    layout
}

pub fn supervised_config(batch: usize, iterations: u64, seed: u64) -> SupervisedConfig {
    SupervisedConfig {
        batch_size: batch,
        max_iterations: Some(iterations),
        epochs: 1_000,
        seed,
        val_max_frames: Some(8),
        ..SupervisedConfig::default()
    }
}

pub fn train_split(layout: &DataLayout) -> PairedSplit {
    PairedSplit::open(&layout.synthetic(), SPLIT_TRAIN).unwrap()
}

pub fn val_split(layout: &DataLayout) -> Option<PairedSplit> {
    PairedSplit::open(&layout.synthetic(), SPLIT_VAL)
        .ok()
        .filter(|s| !s.is_empty())
}

/// Briefly trained supervised checkpoint written to `dir`.
pub fn supervised_checkpoint(layout: &DataLayout, dir: &Path, iterations: u64) -> Checkpoint {
    let cfg = supervised_config(2, iterations, 0);
    let mut trainer =
        SupervisedTrainer::new(&cfg, &model_config(), train_split(layout), None, "test").unwrap();
    for _ in 0..iterations {
        trainer.step().unwrap();
    }
    trainer.save(dir, Default::default()).unwrap()
}
