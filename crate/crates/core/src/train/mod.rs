//! Losses, optimizer, metrics and the training loop.

pub mod descriptor;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod semantic;
pub mod trainer;

pub use descriptor::{FeatureExtractor, FlattenedCrop, GradientHistogram};
pub use losses::{loss_dssim, loss_l1, loss_tv3d, psnr, ssim3d, Image};
pub use metrics::MetricsRow;
pub use optim::{adam_step, AdamState, LearningRates, OptimSchedule};
pub use semantic::SemConfig;
pub use trainer::{
    total_loss, train_dynamic, train_static, Evaluation, LossTerms, LossWeights, TrainConfig, TrainData, TrainMode,
    TrainOutput, Trainer,
};
