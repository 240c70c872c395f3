//! Training and inference: optimizer, schedules, augmentation, checkpoints,
//! the supervised step and the adversarial adaptation step.

pub mod adam;
pub mod adapt;
pub mod augment;
pub mod batch;
pub mod checkpoint;
pub mod infer;
pub mod log;
pub mod order;
pub mod schedule;
pub mod supervised;
