//! Temporal/identity encodings and the trajectory-aware attention bias.

mod dtw;
mod positional;
mod trpe;

pub use dtw::{sl_dtw, soft_dtw, windowed_euclidean, Point};
pub use positional::{identity_encoding, temporal_positional_encoding};
pub use trpe::{build_psi, g_index, trpe_bias, DistanceKind, TrajectorySimilarity, TrpeConfig, TrpeIndexMatrix};
