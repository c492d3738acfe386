//! Dynamic time warping between 3-D point sequences, and the shifted local
//! variant that scores sliding windows of two trajectories.

use crate::autodiff::conv_output_len;
use crate::error::{Error, Result};

pub type Point = [f64; 3];

fn sq_dist(a: &Point, b: &Point) -> f64 {
    (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum()
}

/// Smoothed minimum `−γ·ln Σ exp(−x/γ)`; `γ = 0` is the exact minimum.
fn soft_min(values: [f64; 3], gamma: f64) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if gamma == 0.0 || !min.is_finite() {
        return min;
    }
    let s: f64 = values
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| (-(v - min) / gamma).exp())
        .sum();
    min - gamma * s.ln()
}

/// Alignment cost `D(n, k)` of `a` against `b` with squared Euclidean point
/// cost and moves `(i−1, j)`, `(i, j−1)`, `(i−1, j−1)`.
pub fn soft_dtw(a: &[Point], b: &[Point], gamma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("DTW over an empty sequence".into()));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("soft-DTW smoothing must be >= 0, got {gamma}")));
    }
    let k = b.len();
    // Rolling rows of the (n+1)×(k+1) table with an infinite border.
    let mut prev = vec![f64::INFINITY; k + 1];
    let mut cur = vec![f64::INFINITY; k + 1];
    prev[0] = 0.0;
    for ai in a {
        cur[0] = f64::INFINITY;
        for j in 1..=k {
            cur[j] = sq_dist(ai, &b[j - 1]) + soft_min([prev[j], cur[j - 1], prev[j - 1]], gamma);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[k])
}

/// One DTW cost per window `[w·stride, w·stride + l)` of two equally long
/// trajectories; `⌊(T−l+1)/stride⌋` windows.
pub fn sl_dtw(a: &[Point], b: &[Point], window: usize, stride: usize, gamma: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::dim("sl_dtw", &[a.len(), 3], &[b.len(), 3]));
    }
    check_window(a.len(), window, stride)?;
    (0..conv_output_len(a.len(), window, stride))
        .map(|w| {
            let s = w * stride;
            soft_dtw(&a[s..s + window], &b[s..s + window], gamma)
        })
        .collect()
}

/// Mean lock-step Euclidean distance per window (no warping).
pub fn windowed_euclidean(a: &[Point], b: &[Point], window: usize, stride: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::dim("windowed_euclidean", &[a.len(), 3], &[b.len(), 3]));
    }
    check_window(a.len(), window, stride)?;
    Ok((0..conv_output_len(a.len(), window, stride))
        .map(|w| {
            let s = w * stride;
            (s..s + window).map(|t| sq_dist(&a[t], &b[t]).sqrt()).sum::<f64>() / window as f64
        })
        .collect())
}

fn check_window(len: usize, window: usize, stride: usize) -> Result<()> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be >= 1".into()));
    }
    if len < window {
        return Err(Error::SequenceTooShort {
            what: "sliding-window DTW",
            needed: window,
            got: len,
        });
    }
    Ok(())
}
