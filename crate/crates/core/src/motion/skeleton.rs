use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of body parts every skeleton is partitioned into.
pub const NUM_PARTS: usize = 5;

/// Body part labels, in part-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyPart {
    LeftArm = 0,
    RightArm = 1,
    LeftLeg = 2,
    RightLeg = 3,
    Torso = 4,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    /// Part index in `0..NUM_PARTS` for every joint.
    pub part_map: Vec<usize>,
    pub root_joint: usize,
}

impl Skeleton {
    pub fn new(joint_names: Vec<String>, part_map: Vec<usize>, root_joint: usize) -> Result<Self> {
        let s = Self {
            joint_names,
            part_map,
            root_joint,
        };
        s.validate()?;
        Ok(s)
    }

    /// The default 15-joint layout: pelvis (root), neck, head, then
    /// shoulder/elbow/wrist/hip/knee/ankle for the left and right sides.
    pub fn default_15() -> Self {
        use BodyPart::*;
        let mut names: Vec<String> = ["pelvis", "neck", "head"].map(String::from).to_vec();
        let mut parts = vec![Torso, Torso, Torso];
        for (side, arm, leg) in [("left", LeftArm, LeftLeg), ("right", RightArm, RightLeg)] {
            for (j, p) in [
                ("shoulder", arm),
                ("elbow", arm),
                ("wrist", arm),
                ("hip", leg),
                ("knee", leg),
                ("ankle", leg),
            ] {
                names.push(format!("{side}_{j}"));
                parts.push(p);
            }
        }
        Self {
            joint_names: names,
            part_map: parts.into_iter().map(|p| p as usize).collect(),
            root_joint: 0,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Joint indices belonging to each part.
    pub fn part_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); NUM_PARTS];
        for (j, &p) in self.part_map.iter().enumerate() {
            if p < NUM_PARTS {
                out[p].push(j);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_names.len();
        if j == 0 {
            return Err(Error::validation("joint_names", "skeleton has no joints"));
        }
        if self.part_map.len() != j {
            return Err(Error::validation(
                "part_map",
                format!("{} entries for {j} joints", self.part_map.len()),
            ));
        }
        if let Some(&bad) = self.part_map.iter().find(|&&p| p >= NUM_PARTS) {
            return Err(Error::validation(
                "part_map",
                format!("part index {bad} outside 0..{NUM_PARTS}"),
            ));
        }
        if let Some(p) = self.part_members().iter().position(Vec::is_empty) {
            return Err(Error::validation("part_map", format!("body part {p} has no joints")));
        }
        if self.root_joint >= j {
            return Err(Error::validation(
                "root_joint",
                format!("index {} outside 0..{j}", self.root_joint),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_layout() {
        let s = Skeleton::default_15();
        s.validate().unwrap();
        assert_eq!(s.num_joints(), 15);
        assert_eq!(s.joint_names[s.root_joint], "pelvis");
        let members = s.part_members();
        assert_eq!(members[BodyPart::Torso as usize], vec![0, 1, 2]);
        assert_eq!(members[BodyPart::LeftArm as usize].len(), 3);
        assert_eq!(members[BodyPart::RightLeg as usize].len(), 3);
        assert_eq!(s.joint_index("right_knee"), Some(13));
    }

    #[test]
    fn empty_part_rejected() {
        let err = Skeleton::new((0..5).map(|i| format!("j{i}")).collect(), vec![0, 0, 1, 2, 3], 0).unwrap_err();
        assert!(err.to_string().contains("part_map"));
    }
}
