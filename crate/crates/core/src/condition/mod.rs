//! Structure conditions: poses, heatmaps, the synthetic corpus and the pose forecaster.

pub mod forecaster;
pub mod heatmap;
pub mod pose;
pub mod synth;

pub use heatmap::{render_heatmaps, render_heatmaps_tensor, DEFAULT_SIGMA};
pub use pose::{KeypointFile, Pose, PoseSequence};
pub use synth::{synthesize_dataset, DatasetConfig, DatasetManifest, Split};
pub use forecaster::{forecast_poses, train_pose_forecaster, ForecasterArch, ForecasterCheckpoint, FreezeLastPose, PoseForecaster};
