use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared on an absolute scale: with
/// `δ = 1e-5` in 64-bit arithmetic, central differences resolve about `1e-11`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Which coordinates of each input to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// At most this many coordinates per input, evenly spaced, plus the
    /// coordinate with the largest analytic gradient.
    Sample(usize),
}

/// Compares reverse-mode gradients of the scalar `f` against
/// `(f(x+δ) − f(x−δ)) / 2δ` for every probed coordinate of every input.
///
/// The relative error for a coordinate is `|g_fd − g| / max(|g|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], delta: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, delta, Coverage::All)
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], delta: f64, coverage: Coverage) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).data()[0].is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        let zeros = vec![0.0; x.len()];
        let analytic = grads.wrt(vars[k]).unwrap_or(&zeros);
        for idx in coordinates(analytic, coverage) {
            let orig = x.data()[idx];
            probe[k].data_mut()[idx] = orig + delta;
            let fp = eval(&probe)?;
            probe[k].data_mut()[idx] = orig - delta;
            let fm = eval(&probe)?;
            probe[k].data_mut()[idx] = orig;
            let fd = (fp - fm) / (2.0 * delta);
            let g = analytic[idx];
            let abs = (fd - g).abs();
            let rel = abs / g.abs().max(REL_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

fn coordinates(analytic: &[f64], coverage: Coverage) -> Vec<usize> {
    let n = analytic.len();
    match coverage {
        Coverage::All => (0..n).collect(),
        Coverage::Sample(k) if k >= n => (0..n).collect(),
        Coverage::Sample(k) => {
            let mut idx: Vec<usize> = (0..k).map(|i| i * n / k).collect();
            let argmax = analytic
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map_or(0, |(i, _)| i);
            if !idx.contains(&argmax) {
                idx.push(argmax);
            }
            idx
        }
    }
}
