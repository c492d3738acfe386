use serde::{Deserialize, Serialize};

use super::skeleton::Skeleton;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m")]
    Meters,
    #[serde(rename = "mm")]
    Millimeters,
}

impl Unit {
    /// Factor converting this unit to millimeters.
    pub fn to_mm(self) -> f64 {
        match self {
            Unit::Meters => 1000.0,
            Unit::Millimeters => 1.0,
        }
    }
}

/// `frames × joints × 3` block of coordinates, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * joints * 3 {
            return Err(Error::dim("sequence", &[frames, joints, 3], &[data.len()]));
        }
        Ok(Self { frames, joints, data })
    }

    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            data: vec![0.0; frames * joints * 3],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// All joints of frame `t`, flattened to `joints·3` values.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.joints * 3;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let w = self.joints * 3;
        &mut self.data[t * w..(t + 1) * w]
    }

    pub fn point(&self, t: usize, j: usize) -> [f64; 3] {
        let o = (t * self.joints + j) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_point(&mut self, t: usize, j: usize, p: [f64; 3]) {
        let o = (t * self.joints + j) * 3;
        self.data[o..o + 3].copy_from_slice(&p);
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let w = self.joints * 3;
        Self {
            frames: end - start,
            joints: self.joints,
            data: self.data[start * w..end * w].to_vec(),
        }
    }

    /// Positions of one joint over time.
    pub fn trajectory(&self, j: usize) -> Vec<[f64; 3]> {
        (0..self.frames).map(|t| self.point(t, j)).collect()
    }

    pub fn concat(&self, other: &Sequence) -> Result<Self> {
        if self.joints != other.joints {
            return Err(Error::dim("sequence concat", &[self.joints], &[other.joints]));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            frames: self.frames + other.frames,
            joints: self.joints,
            data,
        })
    }
}

/// Multi-person motion clip in absolute world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub fps: f64,
    pub unit: Unit,
    pub skeleton: Skeleton,
    pub persons: Vec<Sequence>,
}

impl Scene {
    pub fn new(fps: f64, unit: Unit, skeleton: Skeleton, persons: Vec<Sequence>) -> Result<Self> {
        let s = Self {
            fps,
            unit,
            skeleton,
            persons,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    /// Frame count (`T+1` for an observed clip).
    pub fn num_frames(&self) -> usize {
        self.persons.first().map_or(0, Sequence::frames)
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::validation("fps", format!("must be positive, got {}", self.fps)));
        }
        self.skeleton.validate()?;
        if self.persons.is_empty() {
            return Err(Error::validation("persons", "scene has no persons"));
        }
        let frames = self.persons[0].frames();
        let joints = self.skeleton.num_joints();
        for (p, seq) in self.persons.iter().enumerate() {
            if seq.joints() != joints {
                return Err(Error::validation(
                    format!("persons[{p}]"),
                    format!("{} joints, skeleton has {joints}", seq.joints()),
                ));
            }
            if seq.frames() != frames {
                return Err(Error::validation(
                    format!("persons[{p}]"),
                    format!("{} frames, persons[0] has {frames}", seq.frames()),
                ));
            }
            if !seq.data().iter().all(|v| v.is_finite()) {
                return Err(Error::validation(format!("persons[{p}]"), "non-finite coordinate"));
            }
        }
        if frames < 2 {
            return Err(Error::validation(
                "persons",
                format!("need at least 2 frames, got {frames}"),
            ));
        }
        Ok(())
    }

    /// Frames `[start, end)` of every person.
    pub fn slice_frames(&self, start: usize, end: usize) -> Scene {
        Scene {
            fps: self.fps,
            unit: self.unit,
            skeleton: self.skeleton.clone(),
            persons: self.persons.iter().map(|s| s.slice(start, end)).collect(),
        }
    }

    /// Reorders persons: output person `k` is input person `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Scene {
        Scene {
            persons: order.iter().map(|&i| self.persons[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Root-joint trajectory of person `p`.
    pub fn root_trajectory(&self, p: usize) -> Vec<[f64; 3]> {
        self.persons[p].trajectory(self.skeleton.root_joint)
    }

    /// Pose at the final frame for every person.
    pub fn last_poses(&self) -> Vec<Vec<f64>> {
        let t = self.num_frames() - 1;
        self.persons.iter().map(|s| s.frame(t).to_vec()).collect()
    }
}
