//! Position errors in millimeters. Sequences are per person `N×J×3`;
//! `frame` is a 0-based index into the predicted frames.

use super::loss::check_pair;
use crate::error::{Error, Result};
use crate::motion::{Sequence, Unit};

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn check_frame(pred: &[Sequence], frame: usize) -> Result<()> {
    let n = pred[0].frames();
    if frame >= n {
        return Err(Error::validation(
            "frame",
            format!("{frame} out of range for {n} predicted frames"),
        ));
    }
    Ok(())
}

/// Mean joint position error at `frame`, including global trajectory.
pub fn jpe(pred: &[Sequence], truth: &[Sequence], frame: usize, unit: Unit) -> Result<f64> {
    check_pair("jpe", pred, truth)?;
    check_frame(pred, frame)?;
    let joints = pred[0].joints();
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| {
            (0..joints)
                .map(|j| dist(a.point(frame, j), b.point(frame, j)))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (pred.len() * joints) as f64 * unit.to_mm())
}

/// Joint error after subtracting each person's own root joint position.
pub fn ape(pred: &[Sequence], truth: &[Sequence], frame: usize, root: usize, unit: Unit) -> Result<f64> {
    check_pair("ape", pred, truth)?;
    check_frame(pred, frame)?;
    let joints = pred[0].joints();
    if root >= joints {
        return Err(Error::validation("root_joint", format!("{root} >= {joints}")));
    }
    let rel = |s: &Sequence, j: usize| {
        let (p, r) = (s.point(frame, j), s.point(frame, root));
        [p[0] - r[0], p[1] - r[1], p[2] - r[2]]
    };
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (0..joints).map(|j| dist(rel(a, j), rel(b, j))).sum::<f64>())
        .sum();
    Ok(total / (pred.len() * joints) as f64 * unit.to_mm())
}

/// Mean root-joint error at the final predicted frame.
pub fn fde(pred: &[Sequence], truth: &[Sequence], root: usize, unit: Unit) -> Result<f64> {
    check_pair("fde", pred, truth)?;
    let last = pred[0].frames() - 1;
    if root >= pred[0].joints() {
        return Err(Error::validation(
            "root_joint",
            format!("{root} >= {}", pred[0].joints()),
        ));
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| dist(a.point(last, root), b.point(last, root)))
        .sum();
    Ok(total / pred.len() as f64 * unit.to_mm())
}
