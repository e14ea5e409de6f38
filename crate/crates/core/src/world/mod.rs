//! Synthetic embedding world used to exercise the shaping pipeline without a
//! simulator or a real vision-language model.

mod grid;
mod latent;
mod scenario;
mod viewpoint;

pub use grid::{Action, Cell, GridStep, GridState, GridWorld};
pub use latent::{
    measure_snr, monotonicity_violation_rate, orthogonal_noise, LatentTaskModel, Progress,
    SnrReport, TrajectoryPoint,
};
pub use scenario::{AlignedScenario, ScenarioParams};
pub use viewpoint::{
    view_variance_report, viewpoint_shift, SceneAligner, ShiftedTrajectory, ViewRobustness,
    ViewpointModel,
};
