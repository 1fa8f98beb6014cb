//! Losses, triplet mining, augmentation and the optimisation loop.

mod augment;
mod loss;
mod mining;
mod trainer;

pub use augment::{augment, augment_with_transform, AugmentConfig};
pub use loss::{
    find_correspondences, local_consistency_loss, record_local_consistency_loss, record_triplet_loss,
    triplet_loss, CorrespondenceSet, LossConfig, NegativeCandidates,
};
pub use mining::{mine_hard_negatives, sample_queries, MiningConfig, MiningOutcome, TrainingScan, Triplet};
pub use trainer::{
    mine_epoch, scan_descriptors, train_epoch, train_step, EpochStats, Sgd, StepLog, StepLosses, TrainConfig,
};
