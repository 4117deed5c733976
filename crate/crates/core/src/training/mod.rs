//! Losses, matching, optimization and the training loop.

mod checkpoint;
mod losses;
mod matching;
mod optim;
mod raster;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, OptimizerEntry, TensorEntry, BLOB_FILE, MANIFEST_FILE};
pub use losses::{
    class_targets, loop_cosines, loss_angle, loss_cls, loss_coord, loss_raster, total_loss, AngleLoss, LossSettings, LossTerms,
    LossValues, LossWeights, Target, ANGLE_EPS,
};
pub use matching::{hungarian, match_rooms, pair_cost, MatchResult};
pub use optim::{Adam, ADAM_EPS, BETA1, BETA2};
pub use raster::RasterLoss;
pub use trainer::{epoch_order, prepare_samples, sample_gradients, JsonlLog, QueryInit, StepRecord, TrainConfig, TrainSample, Trainer};
