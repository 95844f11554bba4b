//! Synthetic scene generation and the per-frame refinement loop.

pub mod error;
pub mod scene;

pub use error::{HarnessError, Result};
pub use scene::{generate_scene, CameraSpec, NoiseSpec, Occluder, PoseSampler, SampleKind, SceneSample, SceneSpec, Shape};
pub mod refine;

pub use refine::{
    decode_pose, encode_state, initial_state, prepare_sample, pseudo_points, scene_pseudo_label, total_loss, LossBreakdown, PreparedSample,
    RefineConfig, TrainableState,
};
pub mod optimize;
pub use optimize::{optimize, write_trace_csv, OptimizeOutput, OptimizerSpec, TraceRow};
pub mod dataset;
pub use dataset::{generate_dataset, load_dataset, load_scene, write_dataset, DatasetSpec, KindPlan};
