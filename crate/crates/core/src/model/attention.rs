use std::sync::Arc;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::encodings::TrpeIndexMatrix;
use crate::error::Result;

/// Projection weights of one multi-head attention layer, bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub b_o: Var,
}

impl AttentionWeights {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_q: tape.param_by_name(store, &format!("{prefix}.w_q"))?,
            w_k: tape.param_by_name(store, &format!("{prefix}.w_k"))?,
            w_v: tape.param_by_name(store, &format!("{prefix}.w_v"))?,
            w_o: tape.param_by_name(store, &format!("{prefix}.w_o"))?,
            b_o: tape.param_by_name(store, &format!("{prefix}.b_o"))?,
        })
    }
}

/// Extra terms added to the attention logits.
#[derive(Clone, Default)]
pub struct AttentionBias<'a> {
    /// Trajectory index matrix and its embedding table.
    pub trpe: Option<(&'a TrpeIndexMatrix, Var)>,
    /// Group label per token; tokens only attend within their group.
    pub groups: Option<Arc<Vec<usize>>>,
}

/// Multi-head attention of `queries` over `keys_values`.
///
/// Per head `h`: `A_h = softmax((Q_h K_hᵀ + bias_h) / √d_z)`, with
/// `bias_h[i][j] = Q_h[i] · table[ψ(i, j)]`; heads are concatenated and
/// projected by `W_O`. With `record`, also returns the head-averaged
/// attention weights.
pub fn multi_head_attention(
    tape: &mut Tape,
    queries: Var,
    keys_values: Var,
    w: &AttentionWeights,
    heads: usize,
    bias: AttentionBias<'_>,
    record: bool,
) -> Result<(Var, Option<Tensor>)> {
    let q = tape.matmul(queries, w.w_q)?;
    let k = tape.matmul(keys_values, w.w_k)?;
    let v = tape.matmul(keys_values, w.w_v)?;
    let d = tape.shape(q)[1];
    let dz = d / heads;
    let inv = 1.0 / (dz as f64).sqrt();
    let trpe = bias.trpe.map(|(psi, table)| (table, Arc::clone(psi.indices())));
    let mut outs = Vec::with_capacity(heads);
    let mut avg: Option<Vec<f64>> = None;
    for h in 0..heads {
        let (lo, hi) = (h * dz, (h + 1) * dz);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let o = tape.attention_head(qh, kh, vh, trpe.clone(), bias.groups.clone(), inv)?;
        if record {
            let vals = tape.attention_probs(o).expect("attention node");
            match avg.as_mut() {
                Some(acc) => acc.iter_mut().zip(vals).for_each(|(s, x)| *s += x),
                None => avg = Some(vals.to_vec()),
            }
        }
        outs.push(o);
    }
    let cat = tape.concat_cols(&outs)?;
    let proj = tape.matmul(cat, w.w_o)?;
    let out = tape.add_row(proj, w.b_o)?;
    let recorded = match avg {
        Some(mut acc) => {
            acc.iter_mut().for_each(|x| *x /= heads as f64);
            let rows = tape.shape(queries)[0];
            let cols = tape.shape(keys_values)[0];
            Some(Tensor::new([rows, cols], acc)?)
        }
        None => None,
    };
    Ok((out, recorded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_with;
    use crate::autodiff::Coverage;

    fn det(shape: [usize; 2], seed: f64) -> Tensor {
        let n = shape[0] * shape[1];
        Tensor::new(shape, (0..n).map(|i| ((i as f64 + seed) * 0.731).sin() * 0.5).collect()).unwrap()
    }

    /// Direct nested-loop evaluation of the same attention.
    #[allow(clippy::too_many_arguments)]
    fn naive(
        x: &Tensor,
        wq: &Tensor,
        wk: &Tensor,
        wv: &Tensor,
        wo: &Tensor,
        heads: usize,
        psi: &TrpeIndexMatrix,
        table: &Tensor,
    ) -> Vec<f64> {
        let (m, d) = x.dims2().unwrap();
        let dz = d / heads;
        let proj = |w: &Tensor| {
            let mut o = vec![0.0; m * d];
            for i in 0..m {
                for c in 0..d {
                    o[i * d + c] = (0..d).map(|k| x.at2(i, k) * w.at2(k, c)).sum();
                }
            }
            o
        };
        let (q, k, v) = (proj(wq), proj(wk), proj(wv));
        let mut cat = vec![0.0; m * d];
        for h in 0..heads {
            for i in 0..m {
                let mut s: Vec<f64> = (0..m)
                    .map(|j| {
                        let mut acc = 0.0;
                        for c in 0..dz {
                            let qi = q[i * d + h * dz + c];
                            acc += qi * k[j * d + h * dz + c] + qi * table.at2(psi.get(i, j) as usize, c);
                        }
                        acc / (dz as f64).sqrt()
                    })
                    .collect();
                let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                s.iter_mut().for_each(|x| *x = (*x - mx).exp());
                let z: f64 = s.iter().sum();
                for c in 0..dz {
                    cat[i * d + h * dz + c] = (0..m).map(|j| s[j] / z * v[j * d + h * dz + c]).sum();
                }
            }
        }
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            for c in 0..d {
                out[i * d + c] = (0..d).map(|k| cat[i * d + k] * wo.at2(k, c)).sum();
            }
        }
        out
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let (m, d, heads) = (6, 8, 2);
        let x = det([m, d], 0.0);
        let ws: Vec<Tensor> = (1..5).map(|s| det([d, d], s as f64 * 17.0)).collect();
        let table = det([4, d / heads], 99.0);
        let psi = TrpeIndexMatrix::from_fn(m, |i, j| ((i / 3 + j / 3 + (i % 3 == j % 3) as usize) % 4) as u16);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = AttentionWeights {
            w_q: tape.constant(ws[0].clone()),
            w_k: tape.constant(ws[1].clone()),
            w_v: tape.constant(ws[2].clone()),
            w_o: tape.constant(ws[3].clone()),
            b_o: tape.constant(Tensor::zeros([d])),
        };
        let tv = tape.constant(table.clone());
        let bias = AttentionBias {
            trpe: Some((&psi, tv)),
            groups: None,
        };
        let (out, rec) = multi_head_attention(&mut tape, xv, xv, &w, heads, bias, true).unwrap();
        let expect = naive(&x, &ws[0], &ws[1], &ws[2], &ws[3], heads, &psi, &table);
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let rec = rec.unwrap();
        for i in 0..m {
            let s: f64 = rec.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_blocks_other_persons() {
        let (m, d) = (4, 4);
        let mut tape = Tape::new();
        let xv = tape.constant(det([m, d], 1.0));
        let w = AttentionWeights {
            w_q: tape.constant(det([d, d], 2.0)),
            w_k: tape.constant(det([d, d], 3.0)),
            w_v: tape.constant(det([d, d], 4.0)),
            w_o: tape.constant(det([d, d], 5.0)),
            b_o: tape.constant(Tensor::zeros([d])),
        };
        let bias = AttentionBias {
            trpe: None,
            groups: Some(Arc::new(vec![0, 0, 1, 1])),
        };
        let (_, rec) = multi_head_attention(&mut tape, xv, xv, &w, 2, bias, true).unwrap();
        let rec = rec.unwrap();
        assert_eq!(rec.at2(0, 2), 0.0);
        assert_eq!(rec.at2(3, 1), 0.0);
        assert!(rec.at2(0, 1) > 0.0);
    }

    #[test]
    fn masked_gradients_match_finite_differences() {
        let (m, d) = (4, 4);
        let target = det([m, d], 7.0);
        let f = |t: &mut Tape, v: &[Var]| {
            let w = AttentionWeights {
                w_q: v[1],
                w_k: v[2],
                w_v: v[3],
                w_o: v[4],
                b_o: v[5],
            };
            let bias = AttentionBias {
                trpe: None,
                groups: Some(Arc::new(vec![0, 1, 0, 1])),
            };
            let (o, _) = multi_head_attention(t, v[0], v[0], &w, 2, bias, false)?;
            let tv = t.constant(target.clone());
            let p = t.mul(o, tv)?;
            Ok(t.sum(p))
        };
        let inputs = vec![
            det([m, d], 0.5),
            det([d, d], 1.5),
            det([d, d], 2.5),
            det([d, d], 3.5),
            det([d, d], 4.5),
            Tensor::zeros([d]),
        ];
        let r = grad_check_with(f, &inputs, 1e-5, Coverage::All).unwrap();
        assert!(r.max_rel_error < 1e-5 || r.max_abs_error < 1e-9, "{r:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (m, d, heads) = (5, 4, 2);
        let psi = TrpeIndexMatrix::from_fn(m, |i, j| ((i + j) % 3) as u16);
        let target = det([m, d], 42.0);
        let f = |t: &mut Tape, v: &[Var]| {
            let w = AttentionWeights {
                w_q: v[1],
                w_k: v[2],
                w_v: v[3],
                w_o: v[4],
                b_o: v[5],
            };
            let bias = AttentionBias {
                trpe: Some((&psi, v[6])),
                groups: None,
            };
            let (o, _) = multi_head_attention(t, v[0], v[0], &w, heads, bias, false)?;
            let tv = t.constant(target.clone());
            let p = t.mul(o, tv)?;
            Ok(t.sum(p))
        };
        let inputs = vec![
            det([m, d], 0.0),
            det([d, d], 1.0),
            det([d, d], 2.0),
            det([d, d], 3.0),
            det([d, d], 4.0),
            Tensor::new([d], vec![0.1, -0.2, 0.3, 0.0]).unwrap(),
            det([3, d / heads], 5.0),
        ];
        let r = grad_check_with(f, &inputs, 1e-5, Coverage::All).unwrap();
        assert!(r.max_rel_error < 1e-5 || r.max_abs_error < 1e-9, "{r:?}");
    }
}
