//! Training, patch-averaged inference and model persistence.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod inference;
pub mod patches;
pub mod synthetic;
pub mod train;

pub use augment::{augment_pair, AugmentFlags, Augmentation};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{load_manifest_samples, load_pair, load_samples, normalize_mos, PairData, Sample};
pub use inference::{pairwise_mean, pairwise_sum, patch_scores, score_pair, score_pair_data};
pub use patches::{axis_offsets, plan_patches, PatchPlan};
pub use synthetic::{synthetic_ladder, write_synthetic_dataset};
pub use train::{train, train_samples, write_loss_log, LossRecord, TrainConfig, TrainOutcome};
