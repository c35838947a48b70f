//! Bipartite matching, detection losses and the toy training loop.

mod loss;
mod matching;
mod train;

pub use loss::{detection_loss, match_stages, sample_forward, sample_loss, stage_predictions, LossConfig, LossReport};
pub use matching::{assignment_cost, hungarian, match_cost, CostMatrixSpec};
pub use train::{
    curve_endpoints, draw_sample, train_checkpointed, train_from, train_toy, write_loss_csv, CheckpointedRun, LossRow,
    TrainConfig, TrainOutput,
};
