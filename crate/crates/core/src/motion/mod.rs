//! Scene data model, displacement transforms, temporal DCT, synthetic
//! scenes, and scene files.

mod dct;
mod displacement;
mod io;
mod scene;
mod skeleton;
mod synth;

pub use dct::{dct_matrix, dct_tensor, dct_time, idct_tensor, idct_time, lowpass_smooth};
pub use displacement::{differences, integrate_displacements, to_displacements, DisplacementScene};
pub use io::{load_scene, load_scene_file, save_scene, save_scene_with, scene_from_json, scene_to_json, SceneFile};
pub use scene::{Scene, Sequence, Unit};
pub use skeleton::{BodyPart, Skeleton, NUM_PARTS};
pub use synth::{synth_scene, Behavior, SynthConfig, MIN_SYNTH_FRAMES};
