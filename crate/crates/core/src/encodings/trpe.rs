//! Trajectory-aware relative position encoding: pairwise window distances
//! between root trajectories, a piecewise log index, the token-pair index
//! matrix, and the bias lookup used inside attention.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dtw::{sl_dtw, windowed_euclidean, Point};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tbpm::TokenLayout;

/// Constants of the piecewise index and the distance feeding it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpeConfig {
    pub alpha: u32,
    pub beta: u32,
    pub gamma: f64,
    /// Stand-in distance for cross-person, cross-window pairs.
    pub eta: f64,
    /// Multiplies window distances before indexing.
    pub scale: f64,
    /// Soft-DTW smoothing; 0 is the exact minimum.
    pub dtw_gamma: f64,
}

impl Default for TrpeConfig {
    fn default() -> Self {
        Self {
            alpha: 1,
            beta: 9,
            gamma: 2000.0,
            eta: 2000.0,
            scale: 1.0,
            dtw_gamma: 0.0,
        }
    }
}

impl TrpeConfig {
    pub fn validate(&self) -> Result<()> {
        let a = self.alpha as f64;
        if !(self.alpha > 0 && self.beta > self.alpha && self.gamma > a) {
            return Err(Error::Config(format!(
                "piecewise index needs gamma > alpha > 0 and beta > alpha (alpha={}, beta={}, gamma={})",
                self.alpha, self.beta, self.gamma
            )));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0 && self.eta.is_finite() && self.dtw_gamma >= 0.0) {
            return Err(Error::Config(
                "TRPE scale, eta and dtw_gamma must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Embedding table rows, `β + 1`.
    pub fn table_rows(&self) -> usize {
        self.beta as usize + 1
    }

    pub fn index(&self, e: f64) -> i32 {
        g_index(e, self.alpha, self.beta, self.gamma)
    }
}

/// Piecewise index: `round(e)` for `|e| ≤ α`, otherwise
/// `sign(e)·min(β, round(α + ln(|e|/α)/ln(γ/α)·(β−α)))`.
/// Rounding is half away from zero, so `g(−e) = −g(e)`.
pub fn g_index(e: f64, alpha: u32, beta: u32, gamma: f64) -> i32 {
    let a = alpha as f64;
    let b = beta as f64;
    let mag = e.abs();
    if mag <= a {
        return e.round() as i32;
    }
    let v = (a + (mag / a).ln() / (gamma / a).ln() * (b - a)).round().min(b);
    (e.signum() * v) as i32
}

/// Per-window distances between every pair of persons, `P×P×L`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySimilarity {
    pub persons: usize,
    pub windows: usize,
    pub window_len: usize,
    pub stride: usize,
    values: Vec<f64>,
}

/// How window distances are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    SlDtw,
    Euclidean,
}

impl TrajectorySimilarity {
    pub fn compute(
        roots: &[Vec<Point>],
        window_len: usize,
        stride: usize,
        kind: DistanceKind,
        dtw_gamma: f64,
    ) -> Result<Self> {
        let p = roots.len();
        if p == 0 {
            return Err(Error::Config("no trajectories".into()));
        }
        let windows = crate::autodiff::conv_output_len(roots[0].len(), window_len, stride);
        let mut values = vec![0.0; p * p * windows];
        for m in 0..p {
            for n in m + 1..p {
                let d = match kind {
                    DistanceKind::SlDtw => sl_dtw(&roots[m], &roots[n], window_len, stride, dtw_gamma)?,
                    DistanceKind::Euclidean => windowed_euclidean(&roots[m], &roots[n], window_len, stride)?,
                };
                for (w, v) in d.into_iter().enumerate() {
                    // Soft-DTW can dip below zero; distances are clamped.
                    let v = v.max(0.0);
                    values[(m * p + n) * windows + w] = v;
                    values[(n * p + m) * windows + w] = v;
                }
            }
        }
        if p == 1 && roots[0].len() < window_len {
            return Err(Error::SequenceTooShort {
                what: "trajectory similarity",
                needed: window_len,
                got: roots[0].len(),
            });
        }
        Ok(Self {
            persons: p,
            windows,
            window_len,
            stride,
            values,
        })
    }

    pub fn get(&self, m: usize, n: usize, w: usize) -> f64 {
        self.values[(m * self.persons + n) * self.windows + w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Symmetric `M×M` matrix of embedding-table indices in `[0, β]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrpeIndexMatrix {
    size: usize,
    indices: Arc<Vec<u16>>,
}

impl TrpeIndexMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.indices[i * self.size + j]
    }

    pub fn indices(&self) -> &Arc<Vec<u16>> {
        &self.indices
    }

    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> u16) -> Self {
        let mut v = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                v.push(f(i, j));
            }
        }
        Self {
            size,
            indices: Arc::new(v),
        }
    }
}

/// Index for token pair `(i, j)` with persons `m, n` and windows `ι, κ`:
/// same person → `g(0)`; different persons, same window → `g(scale·D̃[m][n][ι])`;
/// otherwise `g(η)`. Parts never matter.
pub fn build_psi(sim: &TrajectorySimilarity, layout: TokenLayout, cfg: &TrpeConfig) -> Result<TrpeIndexMatrix> {
    cfg.validate()?;
    if sim.windows != layout.windows || sim.persons != layout.persons {
        return Err(Error::dim(
            "build_psi",
            &[sim.persons, sim.windows],
            &[layout.persons, layout.windows],
        ));
    }
    let to_index = |e: f64| cfg.index(e).max(0) as u16;
    let same = to_index(0.0);
    let far = to_index(cfg.eta);
    let p = layout.persons;
    // Pre-index every (m, n, window) once.
    let mut window_idx = vec![same; p * p * layout.windows];
    for m in 0..p {
        for n in 0..p {
            if m != n {
                for w in 0..layout.windows {
                    window_idx[(m * p + n) * layout.windows + w] = to_index(cfg.scale * sim.get(m, n, w));
                }
            }
        }
    }
    let tokens = layout.index_map();
    Ok(TrpeIndexMatrix::from_fn(layout.len(), |i, j| {
        let (a, b) = (tokens[i], tokens[j]);
        if a.person == b.person {
            same
        } else if a.window == b.window {
            window_idx[(a.person * p + b.person) * layout.windows + a.window]
        } else {
            far
        }
    }))
}

/// `bias[i][j] = q[i] · table[ψ(i, j)]`, differentiable in `q` and `table`.
pub fn trpe_bias(tape: &mut Tape, q: Var, psi: &TrpeIndexMatrix, table: Var) -> Result<Var> {
    if tape.shape(q)[0] != psi.size() {
        return Err(Error::dim("trpe_bias", tape.shape(q), &[psi.size(), psi.size()]));
    }
    tape.gather_dot(q, table, Arc::clone(psi.indices()), psi.size())
}
