//! Detection metrics, per-view fusion and the view-count and token-budget
//! sweeps.

mod metrics;
mod sweep;

pub use metrics::{
    average_precision, evaluate, fuse_per_view_predictions, match_detections, ClassResult, EvalResult,
    DEFAULT_THRESHOLDS,
};
pub use sweep::{
    detect_scenes, evaluate_suite, run_online, run_token_sweep, run_view_sweep, scene_ground_truth, OnlineFrame,
    SceneDetections, SweepRow, ViewSelection, DEFAULT_BUDGETS, DEFAULT_VIEW_COUNTS,
};
