//! The forecasting transformer: configuration, parameters, attention,
//! forward pass and checkpoints.

mod attention;
mod checkpoint;
mod config;
mod forward;
mod params;

pub use attention::{multi_head_attention, AttentionBias, AttentionWeights};
pub use checkpoint::{checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Ablation, ModelConfig};
pub use forward::{split_persons, AttentionDump, ForwardOptions, ForwardOutput, Model, PreparedScene};
pub use params::{check_params, init_params, param_specs, Init, ParamSpec};
