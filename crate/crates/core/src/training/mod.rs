//! Reconstruction loss, the training loop, position-error metrics,
//! evaluation reports and the zero-velocity baseline.

mod eval;
mod loss;
mod metrics;
mod train;

pub use eval::{
    evaluate, evaluate_baseline, evaluate_with, horizon_frames, zero_velocity_baseline, MetricReport, MetricRow,
    ReportMeta,
};
pub use loss::{rec_loss, rec_loss_value, stack_persons, LOSS_EPS};
pub use metrics::{ape, fde, jpe};
pub use train::{apply_ablation, evaluate_loss, make_samples, split_indices, train, Sample, TrainConfig, TrainReport};
