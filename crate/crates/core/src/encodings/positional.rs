use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::tbpm::TokenLayout;

/// Sinusoidal encoding of each token's window index, `M×d`.
///
/// Window `ι` gets `[sin(ι/10000^{0/d}), cos(ι/10000^{0/d}), sin(ι/10000^{2/d}), …]`;
/// the vector repeats for every part of that window and is identical across
/// persons.
pub fn temporal_positional_encoding(layout: TokenLayout, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 == 1 {
        return Err(Error::Config(format!(
            "positional encoding width must be even, got {d}"
        )));
    }
    let per_window = window_table(layout.windows, d);
    let mut out = Vec::with_capacity(layout.len() * d);
    for _ in 0..layout.persons {
        for w in 0..layout.windows {
            for _ in 0..layout.parts {
                out.extend_from_slice(&per_window[w * d..(w + 1) * d]);
            }
        }
    }
    Tensor::new([layout.len(), d], out)
}

fn window_table(windows: usize, d: usize) -> Vec<f64> {
    let mut t = vec![0.0; windows * d];
    for w in 0..windows {
        for i in 0..d / 2 {
            let freq = 10000f64.powf(-((2 * i) as f64) / d as f64);
            let a = w as f64 * freq;
            t[w * d + 2 * i] = a.sin();
            t[w * d + 2 * i + 1] = a.cos();
        }
    }
    t
}

/// Broadcasts learnable per-person rows over all of that person's tokens.
pub fn identity_encoding(tape: &mut Tape, table: Var, layout: TokenLayout) -> Result<Var> {
    let rows = tape.shape(table)[0];
    if layout.persons > rows {
        return Err(Error::Config(format!(
            "scene has {} persons but the identity table holds {rows}",
            layout.persons
        )));
    }
    tape.gather_rows(table, layout.person_of_rows())
}
