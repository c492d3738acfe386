use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::motion::Sequence;

/// Added under the square root of every joint norm.
pub const LOSS_EPS: f64 = 1e-8;

/// Mean per-joint Euclidean displacement error over persons, frames and
/// joints. `pred` is `(P·N) × (J·3)`; `target` has the same element count.
///
/// Every person contributes the same `N·J` terms, so the mean over persons of
/// per-person means equals the flat mean.
pub fn rec_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    let n = tape.value(pred).len();
    if target.len() != n || !n.is_multiple_of(3) {
        return Err(Error::dim("rec_loss", tape.shape(pred), target.shape()));
    }
    let p = tape.reshape(pred, [n / 3, 3])?;
    let t = tape.constant(target.clone().reshaped([n / 3, 3])?);
    let diff = tape.sub(p, t)?;
    let norms = tape.row_norms(diff, LOSS_EPS)?;
    Ok(tape.mean(norms))
}

/// Value of [`rec_loss`] for per-person `N×J×3` sequences.
pub fn rec_loss_value(pred: &[Sequence], truth: &[Sequence]) -> Result<f64> {
    check_pair("rec_loss", pred, truth)?;
    let mut total = 0.0;
    for (a, b) in pred.iter().zip(truth) {
        let terms = a.frames() * a.joints();
        let s: f64 = a
            .data()
            .chunks(3)
            .zip(b.data().chunks(3))
            .map(|(x, y)| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2) + LOSS_EPS).sqrt())
            .sum();
        total += s / terms as f64;
    }
    Ok(total / pred.len() as f64)
}

/// Flattens per-person sequences into a `(P·N) × (J·3)` tensor.
pub fn stack_persons(seqs: &[Sequence]) -> Result<Tensor> {
    let Some(first) = seqs.first() else {
        return Err(Error::Config("no persons".into()));
    };
    let (frames, joints) = (first.frames(), first.joints());
    let mut data = Vec::with_capacity(seqs.len() * first.data().len());
    for s in seqs {
        if (s.frames(), s.joints()) != (frames, joints) {
            return Err(Error::dim(
                "stack_persons",
                &[frames, joints],
                &[s.frames(), s.joints()],
            ));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new([seqs.len() * frames, joints * 3], data)
}

pub(crate) fn check_pair(op: &'static str, pred: &[Sequence], truth: &[Sequence]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::dim(op, &[pred.len()], &[truth.len()]));
    }
    for (a, b) in pred.iter().zip(truth) {
        if (a.frames(), a.joints()) != (b.frames(), b.joints()) {
            return Err(Error::dim(
                op,
                &[a.frames(), a.joints(), 3],
                &[b.frames(), b.joints(), 3],
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let s = vec![Sequence::new(2, 2, (0..12).map(f64::from).collect()).unwrap()];
        let v = rec_loss_value(&s, &s).unwrap();
        assert!((v - LOSS_EPS.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn one_joint_off_by_unit() {
        let (n, j) = (4, 15);
        let truth = vec![Sequence::zeros(n, j)];
        let mut pred = truth.clone();
        pred[0].set_point(2, 7, [0.0, 0.0, 1.0]);
        let v = rec_loss_value(&pred, &truth).unwrap();
        let expect = (1.0 + LOSS_EPS).sqrt() / (j * n) as f64 + (j * n - 1) as f64 * LOSS_EPS.sqrt() / (j * n) as f64;
        assert!((v - expect).abs() < 1e-15);

        let mut tape = Tape::new();
        let p = tape.constant(stack_persons(&pred).unwrap());
        let l = rec_loss(&mut tape, p, &stack_persons(&truth).unwrap()).unwrap();
        assert!((tape.value(l).data()[0] - v).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::zeros([2, 6]));
        assert!(rec_loss(&mut tape, p, &Tensor::zeros([3, 6])).is_err());
        assert!(rec_loss_value(&[Sequence::zeros(2, 2)], &[Sequence::zeros(3, 2)]).is_err());
    }
}
