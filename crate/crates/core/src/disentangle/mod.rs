//! Scene/view disentanglement on synthetic multi-view data with linear
//! encoders, a linear decoder and hand-written gradients.

mod data;
mod export;
mod loss;
mod model;
mod train;

pub use data::{Batch, FactorDataset, FactorParams, Quad, Sample};
pub use export::{export_encoders, import_encoders};
pub use loss::{
    consistency_loss, evaluate, grad_check, infonce_loss, infonce_targeted, recon_loss,
    shuffle_loss, total_loss, LossBreakdown, LossWeights,
};
pub use model::{ParamSet, ToyDecoder, ToyEncoders, ToyModel};
pub use train::{
    diagonal_dominance, disentanglement_metrics, train, write_history_csv, DisentanglementMetrics,
    EpochRecord, StageSummary, TrainConfig, TrainReport,
};
