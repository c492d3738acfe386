//! JSON scene files.
//!
//! ```json
//! {"fps": 25, "unit": "m", "joint_names": [...], "part_map": [...],
//!  "root_joint": 0, "persons": [[[[x, y, z], ...], ...], ...]}
//! ```
//!
//! `persons` is indexed person → frame → joint → xyz. Prediction output adds
//! an integer `predicted_from_frame`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::{Scene, Sequence, Unit};
use super::skeleton::Skeleton;
use crate::error::{Error, Result};

#[derive(Serialize)]
struct SceneFileOut<'a> {
    fps: f64,
    unit: Unit,
    joint_names: &'a [String],
    part_map: &'a [usize],
    root_joint: usize,
    persons: Vec<Vec<Vec<[f64; 3]>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_from_frame: Option<usize>,
}

#[derive(Deserialize)]
struct SceneFileIn {
    fps: Option<f64>,
    unit: Option<String>,
    joint_names: Option<Vec<String>>,
    part_map: Option<Vec<usize>>,
    root_joint: Option<usize>,
    persons: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    predicted_from_frame: Option<usize>,
}

/// A loaded scene plus the optional prediction marker.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFile {
    pub scene: Scene,
    pub predicted_from_frame: Option<usize>,
}

pub fn scene_to_json(scene: &Scene, predicted_from_frame: Option<usize>) -> Result<String> {
    scene.validate()?;
    let persons = scene
        .persons
        .iter()
        .map(|seq| {
            (0..seq.frames())
                .map(|t| (0..seq.joints()).map(|j| seq.point(t, j)).collect())
                .collect()
        })
        .collect();
    let out = SceneFileOut {
        fps: scene.fps,
        unit: scene.unit,
        joint_names: &scene.skeleton.joint_names,
        part_map: &scene.skeleton.part_map,
        root_joint: scene.skeleton.root_joint,
        persons,
        predicted_from_frame,
    };
    serde_json::to_string(&out).map_err(|e| Error::Parse {
        context: "scene serialization".into(),
        message: e.to_string(),
    })
}

pub fn scene_from_json(text: &str) -> Result<SceneFile> {
    let raw: SceneFileIn = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("scene file (line {}, column {})", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let missing = |f: &str| Error::validation(f, "missing field");
    let fps = raw.fps.ok_or_else(|| missing("fps"))?;
    let unit = match raw.unit.as_deref().ok_or_else(|| missing("unit"))? {
        "m" => Unit::Meters,
        "mm" => Unit::Millimeters,
        other => return Err(Error::validation("unit", format!("unknown unit `{other}`"))),
    };
    let skeleton = Skeleton::new(
        raw.joint_names.ok_or_else(|| missing("joint_names"))?,
        raw.part_map.ok_or_else(|| missing("part_map"))?,
        raw.root_joint.ok_or_else(|| missing("root_joint"))?,
    )?;
    let j = skeleton.num_joints();
    let persons = raw
        .persons
        .ok_or_else(|| missing("persons"))?
        .into_iter()
        .enumerate()
        .map(|(p, frames)| {
            let n = frames.len();
            let mut data = Vec::with_capacity(n * j * 3);
            for (t, joints) in frames.into_iter().enumerate() {
                if joints.len() != j {
                    return Err(Error::validation(
                        format!("persons[{p}][{t}]"),
                        format!("{} joints, skeleton has {j}", joints.len()),
                    ));
                }
                for (k, xyz) in joints.into_iter().enumerate() {
                    if xyz.len() != 3 {
                        return Err(Error::validation(
                            format!("persons[{p}][{t}][{k}]"),
                            format!("expected 3 coordinates, got {}", xyz.len()),
                        ));
                    }
                    data.extend(xyz);
                }
            }
            Sequence::new(n, j, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let scene = Scene::new(fps, unit, skeleton, persons)?;
    if let Some(f) = raw.predicted_from_frame {
        if f > scene.num_frames() {
            return Err(Error::validation(
                "predicted_from_frame",
                format!("{f} beyond clip length"),
            ));
        }
    }
    Ok(SceneFile {
        scene,
        predicted_from_frame: raw.predicted_from_frame,
    })
}

pub fn save_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    save_scene_with(path, scene, None)
}

pub fn save_scene_with(path: impl AsRef<Path>, scene: &Scene, predicted_from_frame: Option<usize>) -> Result<()> {
    let path = path.as_ref();
    let text = scene_to_json(scene, predicted_from_frame)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    Ok(load_scene_file(path)?.scene)
}

pub fn load_scene_file(path: impl AsRef<Path>) -> Result<SceneFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scene_from_json(&text).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}
