//! Body-part partitioning, temporal projection, and multi-person
//! concatenation into one token stream.

use crate::autodiff::{conv_output_len, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::motion::{Sequence, Skeleton};

/// Token coordinates: person `m`, window `ι`, part `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenIndex {
    pub person: usize,
    pub window: usize,
    pub part: usize,
}

/// Person-major, then window, then part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub persons: usize,
    pub windows: usize,
    pub parts: usize,
}

impl TokenLayout {
    /// Tokens per person, `U = L·B`.
    pub fn per_person(&self) -> usize {
        self.windows * self.parts
    }

    /// Total tokens, `M = P·L·B`.
    pub fn len(&self) -> usize {
        self.persons * self.per_person()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, idx: TokenIndex) -> usize {
        (idx.person * self.windows + idx.window) * self.parts + idx.part
    }

    pub fn token(&self, row: usize) -> TokenIndex {
        TokenIndex {
            person: row / self.per_person(),
            window: (row / self.parts) % self.windows,
            part: row % self.parts,
        }
    }

    pub fn index_map(&self) -> Vec<TokenIndex> {
        (0..self.len()).map(|r| self.token(r)).collect()
    }

    /// Person of every row.
    pub fn person_of_rows(&self) -> Vec<usize> {
        (0..self.len()).map(|r| r / self.per_person()).collect()
    }
}

/// The concatenated `M×D` token features with their layout.
#[derive(Clone, Copy, Debug)]
pub struct MpbpSequence {
    pub features: Var,
    pub layout: TokenLayout,
}

/// Averages each part's joints per frame: `T×J×3` → `T×B×3`.
pub fn partition_pool(y: &Sequence, skeleton: &Skeleton) -> Result<Tensor> {
    if y.joints() != skeleton.num_joints() {
        return Err(Error::dim("partition_pool", &[y.joints()], &[skeleton.num_joints()]));
    }
    let members = skeleton.part_members();
    if let Some(p) = members.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("body part {p} has no joints")));
    }
    let parts = members.len();
    let mut out = vec![0.0; y.frames() * parts * 3];
    for t in 0..y.frames() {
        for (b, joints) in members.iter().enumerate() {
            let o = &mut out[(t * parts + b) * 3..][..3];
            for &j in joints {
                let p = y.point(t, j);
                for c in 0..3 {
                    o[c] += p[c];
                }
            }
            let n = joints.len() as f64;
            o.iter_mut().for_each(|v| *v /= n);
        }
    }
    Tensor::new([y.frames(), parts, 3], out)
}

/// Every joint as its own token column: `T×J×3` (used when part pooling is
/// switched off).
pub fn joint_tokens(y: &Sequence) -> Tensor {
    Tensor::new([y.frames(), y.joints(), 3], y.data().to_vec()).expect("sequence shape")
}

/// Temporal `l×1` convolution of one person's pooled sequence → `L×B×D`.
pub fn project(tape: &mut Tape, pooled: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
    tape.conv_time_part(pooled, weight, bias, stride)
}

/// Window count after projection.
pub fn window_count(frames: usize, kernel: usize, stride: usize) -> usize {
    conv_output_len(frames, kernel, stride)
}

/// Stacks per-person `L×B×D` maps into the `M×D` token stream.
pub fn concat_mpbp(tape: &mut Tape, projected: &[Var]) -> Result<MpbpSequence> {
    let Some(&first) = projected.first() else {
        return Err(Error::Config("no persons to concatenate".into()));
    };
    let shape = tape.shape(first).to_vec();
    let [windows, parts, d] = shape[..] else {
        return Err(Error::dim("concat_mpbp", &shape, &[0, 0, 0]));
    };
    let mut rows = Vec::with_capacity(projected.len());
    for &p in projected {
        if tape.shape(p) != shape.as_slice() {
            return Err(Error::dim("concat_mpbp", &shape, tape.shape(p)));
        }
        rows.push(tape.reshape(p, [windows * parts, d])?);
    }
    let features = tape.concat_rows(&rows)?;
    Ok(MpbpSequence {
        features,
        layout: TokenLayout {
            persons: projected.len(),
            windows,
            parts,
        },
    })
}
