//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every differentiable operation pushes one node holding its forward value.
//! [`Tape::backward`] walks the nodes in exact reverse order and accumulates
//! vector-Jacobian products into per-node gradient buffers.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::param::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv {
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
    },
    Dropout(Var, Vec<f64>),
    GatherDot {
        q: Var,
        table: Var,
        index: Arc<Vec<u16>>,
    },
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    RowNorms(Var),
    AttentionHead {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<(Var, Arc<Vec<u16>>)>,
        scale: f64,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.needs_grad()
    }

    fn push(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.needs(v));
        value.set_requires_grad(rg);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients flow to it only if `t.needs_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.requires_grad(false))
    }

    /// A leaf whose gradient is tracked (used for gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t.requires_grad(true))
    }

    /// Binds a parameter. Repeated calls return the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.get(id).value.clone().requires_grad(true);
        self.nodes.push(Node { value, op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        Ok(self.param(store, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            0.0,
            &mut out,
        );
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMulNT(a, b), &[a, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a vector along the last axis of `a` (bias broadcast).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = self.value(a).last_dim();
        if self.shape(bias) != [n] {
            return Err(Error::dim("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        }
        Ok(self.push(t, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x *= s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let n = t.last_dim();
        for row in t.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(t, Op::SoftmaxRows(a), &[a])
    }

    /// Normalizes each last-axis slice to zero mean / unit variance, then
    /// applies `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(shift) != [d] {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + s[c];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            &[x, gain, shift],
        ))
    }

    /// Convolution over the time axis with an `l×1` kernel that never mixes
    /// the part axis. `x: T×B×C`, `w: l×1×C×D`, `bias: D` → `L×B×D` with
    /// `L = ⌊(T−l+1)/stride⌋` and no padding.
    pub fn conv_time_part(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Result<Var> {
        let (t_len, parts, c_in) = match self.shape(x) {
            [t, b, c] => (*t, *b, *c),
            other => return Err(Error::dim("conv_time_part", other, &[0, 0, 0])),
        };
        let (l, d_out) = match self.shape(w) {
            [l, 1, c, d] if *c == c_in => (*l, *d),
            other => return Err(Error::dim("conv_time_part", self.shape(x), other)),
        };
        if self.shape(bias) != [d_out] {
            return Err(Error::dim("conv_time_part", self.shape(w), self.shape(bias)));
        }
        if stride == 0 {
            return Err(Error::Config("convolution stride must be >= 1".into()));
        }
        if t_len < l {
            return Err(Error::SequenceTooShort {
                what: "conv_time_part",
                needed: l,
                got: t_len,
            });
        }
        let windows = conv_output_len(t_len, l, stride);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; windows * parts * d_out];
        for win in 0..windows {
            for b in 0..parts {
                let o = &mut out[(win * parts + b) * d_out..(win * parts + b + 1) * d_out];
                o.copy_from_slice(bd);
                for t in 0..l {
                    let xrow = &xd[((win * stride + t) * parts + b) * c_in..][..c_in];
                    for (c, &xv) in xrow.iter().enumerate() {
                        let wrow = &wd[(t * c_in + c) * d_out..][..d_out];
                        o.iter_mut().zip(wrow).for_each(|(acc, &wv)| *acc += xv * wv);
                    }
                }
            }
        }
        let t = Tensor::new([windows, parts, d_out], out)?;
        Ok(self.push(t, Op::Conv { x, w, bias, stride }, &[x, w, bias]))
    }

    /// Inverted dropout with an explicit seed. Identity when `!training` or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64, training: bool) -> Var {
        if !training || p <= 0.0 {
            return x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.push(t, Op::Dropout(x, mask), &[x])
    }

    /// `out[i][j] = q[i] · table[index[i][j]]` for `q: n×d`, `table: R×d`,
    /// `index: n×c` (row-major, entries < R).
    pub fn gather_dot(&mut self, q: Var, table: Var, index: Arc<Vec<u16>>, cols: usize) -> Result<Var> {
        let (n, d) = self.value(q).dims2()?;
        let (r, d2) = self.value(table).dims2()?;
        if d != d2 || index.len() != n * cols {
            return Err(Error::dim("gather_dot", self.shape(q), self.shape(table)));
        }
        if let Some(&bad) = index.iter().find(|&&k| k as usize >= r) {
            return Err(Error::Config(format!("bias index {bad} outside table of {r} rows")));
        }
        // Per-row dot products with every table entry, then a lookup.
        let mut dots = vec![0.0; n * r];
        gemm(
            n,
            d,
            r,
            self.value(q).data(),
            false,
            self.value(table).data(),
            true,
            0.0,
            &mut dots,
        );
        let mut out = vec![0.0; n * cols];
        for i in 0..n {
            let drow = &dots[i * r..(i + 1) * r];
            for (o, &k) in out[i * cols..(i + 1) * cols]
                .iter_mut()
                .zip(&index[i * cols..(i + 1) * cols])
            {
                *o = drow[k as usize];
            }
        }
        let t = Tensor::new([n, cols], out)?;
        Ok(self.push(t, Op::GatherDot { q, table, index }, &[q, table]))
    }

    /// Selects rows of a 2-D table.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, d) = self.value(table).dims2()?;
        if idx.is_empty() {
            return Err(Error::Config("gather_rows with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Config(format!("row index {bad} outside table of {r} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new([idx.len(), d], out)?;
        Ok(self.push(t, Op::GatherRows(table, idx), &[table]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start >= end || end > n {
            return Err(Error::dim("slice_cols", &[m, n], &[start, end]));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let t = Tensor::new([m, w], out)?;
        Ok(self.push(t, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pm != m {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                out[i * n + off..i * n + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::new([m, n], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Slice `[start, end)` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if start >= end || end > shape[0] {
            return Err(Error::dim("slice_rows", &shape, &[start, end]));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * inner..end * inner].to_vec();
        let mut new_shape = shape;
        new_shape[0] = end - start;
        let t = Tensor::new(new_shape, data)?;
        Ok(self.push(t, Op::SliceRows(x, start), &[x]))
    }

    /// Concatenation along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != first[1..] {
                return Err(Error::dim("concat_rows", &first, s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = first;
        shape[0] = rows;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Euclidean norm of every last-axis slice, `sqrt(Σx² + eps)`.
    pub fn row_norms(&mut self, x: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(d)
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>() + eps).sqrt())
            .collect();
        let n = data.len();
        let t = Tensor::new([n], data)?;
        Ok(self.push(t, Op::RowNorms(x), &[x]))
    }

    /// One attention head: `softmax(s·(q kᵀ + bias)) · v` with
    /// `bias[i][j] = q[i] · table[index[i][j]]` when given. With `groups`,
    /// row `i` only attends to columns `j` with `groups[j] == groups[i]`
    /// (self-attention only). Stores just the probabilities.
    pub fn attention_head(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<(Var, Arc<Vec<u16>>)>,
        groups: Option<Arc<Vec<usize>>>,
        scale: f64,
    ) -> Result<Var> {
        let (n, d) = self.value(q).dims2()?;
        let (m, d2) = self.value(k).dims2()?;
        let (m2, dv) = self.value(v).dims2()?;
        if d != d2 || m != m2 {
            return Err(Error::dim("attention_head", self.shape(q), self.shape(k)));
        }
        let mut s = vec![0.0; n * m];
        gemm(
            n,
            d,
            m,
            self.value(q).data(),
            false,
            self.value(k).data(),
            true,
            0.0,
            &mut s,
        );
        if let Some((table, index)) = &bias {
            let (r, d3) = self.value(*table).dims2()?;
            if d3 != d || index.len() != n * m {
                return Err(Error::dim("attention_head bias", self.shape(q), self.shape(*table)));
            }
            if let Some(&bad) = index.iter().find(|&&x| x as usize >= r) {
                return Err(Error::Config(format!("bias index {bad} outside table of {r} rows")));
            }
            let mut dots = vec![0.0; n * r];
            gemm(
                n,
                d,
                r,
                self.value(q).data(),
                false,
                self.value(*table).data(),
                true,
                0.0,
                &mut dots,
            );
            for i in 0..n {
                let drow = &dots[i * r..(i + 1) * r];
                for (x, &idx) in s[i * m..(i + 1) * m].iter_mut().zip(&index[i * m..(i + 1) * m]) {
                    *x += drow[idx as usize];
                }
            }
        }
        if let Some(g) = &groups {
            if g.len() != n || n != m {
                return Err(Error::dim("attention_head groups", &[g.len()], &[n, m]));
            }
        }
        for (i, row) in s.chunks_mut(m).enumerate() {
            row.iter_mut().for_each(|x| *x *= scale);
            match &groups {
                Some(g) => masked_softmax_in_place(row, g, g[i]),
                None => softmax_in_place(row),
            }
        }
        let mut out = vec![0.0; n * dv];
        gemm(n, m, dv, &s, false, self.value(v).data(), false, 0.0, &mut out);
        let mut inputs = vec![q, k, v];
        if let Some((t, _)) = &bias {
            inputs.push(*t);
        }
        let op = Op::AttentionHead {
            q,
            k,
            v,
            bias,
            scale,
            probs: s,
        };
        Ok(self.push(Tensor::new([n, dv], out)?, op, &inputs))
    }

    /// Probabilities stored by an [`attention_head`](Self::attention_head) node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::AttentionHead { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Runs reverse accumulation from a scalar `loss`.
    ///
    /// Nodes are visited in exact reverse execution order; gradients are
    /// summed into per-node buffers.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.needs_grad() {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            // Only leaf gradients are reported; intermediate buffers are freed.
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                grads[i] = Some(g);
            }
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[1];
                if self.needs(*a) {
                    let b_data = self.value(*b).data();
                    acc_with(grads, *a, m * k, |ga| gemm(m, n, k, g, false, b_data, true, 1.0, ga));
                }
                if self.needs(*b) {
                    let a_data = self.value(*a).data();
                    acc_with(grads, *b, k * n, |gb| gemm(k, m, n, a_data, true, g, false, 1.0, gb));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[0];
                if self.needs(*a) {
                    let b_data = self.value(*b).data();
                    acc_with(grads, *a, m * k, |ga| gemm(m, n, k, g, false, b_data, false, 1.0, ga));
                }
                if self.needs(*b) {
                    let a_data = self.value(*a).data();
                    acc_with(grads, *b, n * k, |gb| gemm(n, m, k, g, true, a_data, false, 1.0, gb));
                }
            }
            Op::Add(a, b) => {
                self.acc_slice(grads, *a, g);
                self.acc_slice(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc_slice(grads, *a, g);
                if self.needs(*b) {
                    acc_with(grads, *b, g.len(), |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    acc_with(grads, *a, g.len(), |ga| {
                        for ((x, gy), y) in ga.iter_mut().zip(g).zip(bv) {
                            *x += gy * y;
                        }
                    });
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    acc_with(grads, *b, g.len(), |gb| {
                        for ((x, gy), y) in gb.iter_mut().zip(g).zip(av) {
                            *x += gy * y;
                        }
                    });
                }
            }
            Op::AddRow(a, bias) => {
                self.acc_slice(grads, *a, g);
                if self.needs(*bias) {
                    let n = out.last_dim();
                    acc_with(grads, *bias, n, |gb| {
                        for row in g.chunks(n) {
                            gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    acc_with(grads, *a, g.len(), |ga| {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)
                    });
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let y = out.data();
                    acc_with(grads, *a, g.len(), |ga| {
                        for ((x, gy), yv) in ga.iter_mut().zip(g).zip(y) {
                            if *yv > 0.0 {
                                *x += gy;
                            }
                        }
                    });
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(*a) {
                    let n = out.last_dim();
                    let y = out.data();
                    acc_with(grads, *a, g.len(), |ga| {
                        for ((gar, gr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                            for ((x, gy), yv) in gar.iter_mut().zip(gr).zip(yr) {
                                *x += yv * (gy - dot);
                            }
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let d = out.last_dim();
                let gv = self.value(*gain).data();
                if self.needs(*x) {
                    acc_with(grads, *x, g.len(), |gx| {
                        for (r, ((gxr, gr), hr)) in gx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                            // dxhat = g ⊙ gain; dx = inv_std·(dxhat − mean(dxhat) − xhat·mean(dxhat⊙xhat))
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for c in 0..d {
                                let dh = gr[c] * gv[c];
                                m1 += dh;
                                m2 += dh * hr[c];
                            }
                            m1 /= d as f64;
                            m2 /= d as f64;
                            for c in 0..d {
                                let dh = gr[c] * gv[c];
                                gxr[c] += inv_std[r] * (dh - m1 - hr[c] * m2);
                            }
                        }
                    });
                }
                if self.needs(*gain) {
                    acc_with(grads, *gain, d, |gg| {
                        for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for c in 0..d {
                                gg[c] += gr[c] * hr[c];
                            }
                        }
                    });
                }
                if self.needs(*shift) {
                    acc_with(grads, *shift, d, |gs| {
                        for gr in g.chunks(d) {
                            gs.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Conv { x, w, bias, stride } => {
                let (windows, parts, d_out) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                let l = self.value(*w).shape()[0];
                let c_in = self.value(*x).shape()[2];
                if self.needs(*bias) {
                    acc_with(grads, *bias, d_out, |gb| {
                        for row in g.chunks(d_out) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                    });
                }
                if self.needs(*w) {
                    let xd = self.value(*x).data();
                    let len = self.value(*w).len();
                    acc_with(grads, *w, len, |gw| {
                        for win in 0..windows {
                            for b in 0..parts {
                                let grow = &g[(win * parts + b) * d_out..][..d_out];
                                for t in 0..l {
                                    let xrow = &xd[((win * stride + t) * parts + b) * c_in..][..c_in];
                                    for (c, &xv) in xrow.iter().enumerate() {
                                        let gwrow = &mut gw[(t * c_in + c) * d_out..][..d_out];
                                        gwrow.iter_mut().zip(grow).for_each(|(a, gy)| *a += xv * gy);
                                    }
                                }
                            }
                        }
                    });
                }
                if self.needs(*x) {
                    let wd = self.value(*w).data();
                    let len = self.value(*x).len();
                    acc_with(grads, *x, len, |gx| {
                        for win in 0..windows {
                            for b in 0..parts {
                                let grow = &g[(win * parts + b) * d_out..][..d_out];
                                for t in 0..l {
                                    for c in 0..c_in {
                                        let wrow = &wd[(t * c_in + c) * d_out..][..d_out];
                                        let s: f64 = wrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                                        gx[((win * stride + t) * parts + b) * c_in + c] += s;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Dropout(x, mask) => {
                if self.needs(*x) {
                    acc_with(grads, *x, g.len(), |gx| {
                        for ((a, gy), m) in gx.iter_mut().zip(g).zip(mask) {
                            *a += gy * m;
                        }
                    });
                }
            }
            Op::GatherDot { q, table, index } => {
                let (n, d) = self.value(*q).dims2().unwrap();
                let r = self.value(*table).shape()[0];
                let cols = out.shape()[1];
                // Bucket the upstream gradient by table row: s[i][k] = Σ_{j: idx=k} g[i][j].
                let mut s = vec![0.0; n * r];
                for i in 0..n {
                    let srow = &mut s[i * r..(i + 1) * r];
                    for (gy, &k) in g[i * cols..(i + 1) * cols].iter().zip(&index[i * cols..(i + 1) * cols]) {
                        srow[k as usize] += gy;
                    }
                }
                if self.needs(*q) {
                    let td = self.value(*table).data();
                    acc_with(grads, *q, n * d, |gq| gemm(n, r, d, &s, false, td, false, 1.0, gq));
                }
                if self.needs(*table) {
                    let qd = self.value(*q).data();
                    acc_with(grads, *table, r * d, |gt| gemm(r, n, d, &s, true, qd, false, 1.0, gt));
                }
            }
            Op::GatherRows(table, idx) => {
                if self.needs(*table) {
                    let d = out.last_dim();
                    let len = self.value(*table).len();
                    acc_with(grads, *table, len, |gt| {
                        for (row, &i) in idx.iter().enumerate() {
                            let src = &g[row * d..(row + 1) * d];
                            gt[i * d..(i + 1) * d].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    });
                }
            }
            Op::Reshape(x) => self.acc_slice(grads, *x, g),
            Op::SliceCols(x, start) => {
                if self.needs(*x) {
                    let (m, n) = self.value(*x).dims2().unwrap();
                    let w = out.shape()[1];
                    acc_with(grads, *x, m * n, |gx| {
                        for i in 0..m {
                            let dst = &mut gx[i * n + start..i * n + start + w];
                            dst.iter_mut().zip(&g[i * w..(i + 1) * w]).for_each(|(a, b)| *a += b);
                        }
                    });
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (out.shape()[0], out.shape()[1]);
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.needs(p) {
                        acc_with(grads, p, m * w, |gp| {
                            for i in 0..m {
                                let src = &g[i * n + off..i * n + off + w];
                                gp[i * w..(i + 1) * w].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                            }
                        });
                    }
                    off += w;
                }
            }
            Op::SliceRows(x, start) => {
                if self.needs(*x) {
                    let inner: usize = out.shape()[1..].iter().product();
                    let len = self.value(*x).len();
                    let off = start * inner;
                    acc_with(grads, *x, len, |gx| {
                        gx[off..off + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc_slice(grads, p, &g[off..off + len]);
                    off += len;
                }
            }
            Op::RowNorms(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let d = xv.last_dim();
                    let norms = out.data();
                    acc_with(grads, *x, xv.len(), |gx| {
                        for (r, (gxr, xr)) in gx.chunks_mut(d).zip(xv.data().chunks(d)).enumerate() {
                            let f = g[r] / norms[r];
                            gxr.iter_mut().zip(xr).for_each(|(a, v)| *a += f * v);
                        }
                    });
                }
            }
            Op::AttentionHead {
                q,
                k,
                v,
                bias,
                scale,
                probs,
            } => {
                let (n, d) = self.value(*q).dims2().unwrap();
                let m = self.value(*k).shape()[0];
                let dv = self.value(*v).shape()[1];
                if self.needs(*v) {
                    acc_with(grads, *v, m * dv, |gv| gemm(m, n, dv, probs, true, g, false, 1.0, gv));
                }
                let need_scores =
                    self.needs(*q) || self.needs(*k) || bias.as_ref().is_some_and(|(t, _)| self.needs(*t));
                if need_scores {
                    // dP = g·vᵀ, then the softmax Jacobian; masked entries have P = 0.
                    let mut ds = vec![0.0; n * m];
                    gemm(n, dv, m, g, false, self.value(*v).data(), true, 0.0, &mut ds);
                    for (dr, pr) in ds.chunks_mut(m).zip(probs.chunks(m)) {
                        let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        dr.iter_mut().zip(pr).for_each(|(x, p)| *x = scale * p * (*x - dot));
                    }
                    if self.needs(*q) {
                        let kd = self.value(*k).data();
                        acc_with(grads, *q, n * d, |gq| gemm(n, m, d, &ds, false, kd, false, 1.0, gq));
                    }
                    if self.needs(*k) {
                        let qd = self.value(*q).data();
                        acc_with(grads, *k, m * d, |gk| gemm(m, n, d, &ds, true, qd, false, 1.0, gk));
                    }
                    if let Some((table, index)) = bias {
                        let r = self.value(*table).shape()[0];
                        let mut bucket = vec![0.0; n * r];
                        for i in 0..n {
                            let br = &mut bucket[i * r..(i + 1) * r];
                            for (x, &idx) in ds[i * m..(i + 1) * m].iter().zip(&index[i * m..(i + 1) * m]) {
                                br[idx as usize] += x;
                            }
                        }
                        if self.needs(*q) {
                            let td = self.value(*table).data();
                            acc_with(grads, *q, n * d, |gq| gemm(n, r, d, &bucket, false, td, false, 1.0, gq));
                        }
                        if self.needs(*table) {
                            let qd = self.value(*q).data();
                            acc_with(grads, *table, r * d, |gt| {
                                gemm(r, n, d, &bucket, true, qd, false, 1.0, gt)
                            });
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let len = self.value(*x).len();
                    acc_with(grads, *x, len, |gx| gx.iter_mut().for_each(|a| *a += g[0]));
                }
            }
            Op::Mean(x) => {
                if self.needs(*x) {
                    let len = self.value(*x).len();
                    let f = g[0] / len as f64;
                    acc_with(grads, *x, len, |gx| gx.iter_mut().for_each(|a| *a += f));
                }
            }
        }
    }

    fn acc_slice(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if self.needs(v) {
            acc_with(grads, v, g.len(), |gv| gv.iter_mut().zip(g).for_each(|(a, b)| *a += b));
        }
    }
}

fn acc_with(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Softmax over the entries of `row` whose group equals `own`; others get 0.
fn masked_softmax_in_place(row: &mut [f64], groups: &[usize], own: usize) {
    let max = row
        .iter()
        .zip(groups)
        .filter(|(_, &g)| g == own)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (v, &g) in row.iter_mut().zip(groups) {
        if g == own {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Window count of an unpadded strided convolution.
pub fn conv_output_len(t_len: usize, kernel: usize, stride: usize) -> usize {
    if t_len < kernel {
        0
    } else {
        (t_len - kernel + 1) / stride
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every bound parameter's gradient into `store` (never overwrites).
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        self.accumulate_scaled(store, 1.0);
    }

    pub fn accumulate_scaled(&self, store: &mut ParamStore, scale: f64) {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                let dst = store.get_mut(id).grad.data_mut();
                dst.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
            }
        }
    }
}
