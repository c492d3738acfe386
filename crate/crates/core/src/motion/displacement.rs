use super::scene::{Scene, Sequence};
use super::skeleton::Skeleton;
use crate::error::{Error, Result};

/// Per-frame pose differences plus the final absolute pose.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementScene {
    /// `T × J × 3` per person, `y_i = x_{i+1} − x_i`.
    pub persons: Vec<Sequence>,
    /// Pose at frame `T+1`, flattened `J·3`, per person.
    pub last_pose: Vec<Vec<f64>>,
    /// Pose at frame 1, flattened `J·3`, per person.
    pub first_pose: Vec<Vec<f64>>,
    pub fps: f64,
    pub skeleton: Skeleton,
}

pub fn to_displacements(scene: &Scene) -> Result<DisplacementScene> {
    let frames = scene.num_frames();
    if frames < 2 {
        return Err(Error::SequenceTooShort {
            what: "to_displacements",
            needed: 2,
            got: frames,
        });
    }
    let persons = scene.persons.iter().map(differences).collect();
    Ok(DisplacementScene {
        persons,
        last_pose: scene.last_poses(),
        first_pose: scene.persons.iter().map(|s| s.frame(0).to_vec()).collect(),
        fps: scene.fps,
        skeleton: scene.skeleton.clone(),
    })
}

/// `y_i = x_{i+1} − x_i` for one sequence.
pub fn differences(seq: &Sequence) -> Sequence {
    let t = seq.frames() - 1;
    let mut out = Sequence::zeros(t, seq.joints());
    for i in 0..t {
        let (a, b) = (seq.frame(i), seq.frame(i + 1));
        out.frame_mut(i)
            .iter_mut()
            .zip(a.iter().zip(b))
            .for_each(|(o, (x0, x1))| *o = x1 - x0);
    }
    out
}

/// Running sum `x_k = start + Σ_{i≤k} y_i`; returns the `N` integrated poses
/// (the start pose is not included).
pub fn integrate_displacements(start_pose: &[Vec<f64>], disp: &[Sequence]) -> Result<Vec<Sequence>> {
    if start_pose.len() != disp.len() {
        return Err(Error::dim(
            "integrate_displacements",
            &[start_pose.len()],
            &[disp.len()],
        ));
    }
    start_pose
        .iter()
        .zip(disp)
        .map(|(start, y)| {
            if start.len() != y.joints() * 3 {
                return Err(Error::dim("integrate_displacements", &[start.len()], &[y.joints(), 3]));
            }
            let mut out = Sequence::zeros(y.frames(), y.joints());
            let mut cur = start.clone();
            for k in 0..y.frames() {
                cur.iter_mut().zip(y.frame(k)).for_each(|(c, d)| *c += d);
                out.frame_mut(k).copy_from_slice(&cur);
            }
            Ok(out)
        })
        .collect()
}

impl DisplacementScene {
    /// Rebuilds the absolute scene by integrating from the first pose.
    pub fn reconstruct(&self, unit: super::scene::Unit) -> Result<Scene> {
        let tail = integrate_displacements(&self.first_pose, &self.persons)?;
        let persons = self
            .first_pose
            .iter()
            .zip(tail)
            .map(|(first, rest)| Sequence::new(1, rest.joints(), first.clone())?.concat(&rest))
            .collect::<Result<Vec<_>>>()?;
        Scene::new(self.fps, unit, self.skeleton.clone(), persons)
    }
}
