//! Reward shaping from vision-language embeddings.
//!
//! Observation and instruction embeddings are pulled toward a task
//! direction before their cosine is taken, the resulting score is gated
//! against a noise floor calibrated online, and the gated score is added to
//! the environment reward at a small weight. Long tasks are split into
//! stages that advance when the observation stays close to the stage goal.
//!
//! The remaining modules exercise that pipeline: a synthetic embedding
//! world, tabular Q-learning on a gridworld, a toy scene/view
//! disentanglement trainer, and embedding file IO.

pub mod agent;
pub mod config;
pub mod disentangle;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod shaping;
pub mod stage;
pub mod verify;
pub mod world;

pub use agent::{Arm, EpisodeLog, ExperimentConfig, GridConfig, QTable};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use fusion::{fuse, FusionConfig};
pub use geometry::{
    apply_projection, cosine_similarity, make_projector, project_image, project_text,
    text_direction, Embedding, ProjectionConfig, Projector, TaskDirection,
};
pub use io::{EmbeddingDataset, Kind, StageManifest};
pub use pipeline::{score_trajectory, ShapeRow};
pub use shaping::{gate, GateConfig, NoiseCalibrator, Shaper, ShapingConfig};
pub use stage::{StageMachine, StageSpec, StartPolicy, TransitionConfig};
pub use verify::{run_verify, Fault, VerifyReport};
