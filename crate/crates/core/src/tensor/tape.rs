//! Reverse-mode differentiation over a linear operation record.
//!
//! Every operation appends a node holding its `f64` output and the inputs it
//! read. [`Tape::backward`] walks the nodes once in reverse order and applies
//! each node's local gradient rule. A tape lives for one forward pass.

use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Sigmoid,
    Tanh,
    Mul,
    Add,
    Sub,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat {
        a: Var,
        b: Var,
        outer: usize,
        a_chunk: usize,
        b_chunk: usize,
    },
    Narrow {
        x: Var,
        outer: usize,
        src_chunk: usize,
        offset: usize,
        len: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    PickRows {
        x: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        keep: Vec<bool>,
        a: Var,
        b: Var,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumAll(Var),
    CosineRows {
        u: Var,
        v: Var,
        norms: Vec<(f64, f64)>,
    },
    Stack(Vec<Var>),
    AttnScores {
        query: Var,
        states: Var,
    },
    AttnContext {
        weights: Var,
        states: Var,
    },
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; `None` if it did not influence the loss or does not
    /// require gradients.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, zero-filled when `var` did not influence the loss.
    pub fn get_or_zero(&self, var: Var) -> Vec<f64> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.shapes[var.0].iter().product()],
        }
    }
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        _ => {
            let cols = shape[shape.len() - 1];
            (shape[..shape.len() - 1].iter().product(), cols)
        }
    }
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smallest vector norm accepted by cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Copies a node out as an `f32` tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::from_fn(node.shape.clone(), |i| node.value[i] as f32)
    }

    /// Records a tensor as a leaf; it receives gradients iff the tensor
    /// requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = t.values().iter().map(|&v| f64::from(v)).collect();
        self.push(t.shape().to_vec(), value, Op::Leaf, t.requires_grad())
    }

    /// Records a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::shape("constant", &shape, &[value.len()]));
        }
        Ok(self.push(shape, value, Op::Leaf, false))
    }

    pub fn variable(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let v = self.constant(shape, value)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        check_finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        check_finite(name, &out)?;
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * k).collect();
        check_finite("scale", &out)?;
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Scale(x, k), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Tanh(x), rg))
    }

    /// Dispatches an elementwise operation by kind.
    pub fn pointwise(&mut self, kind: Pointwise, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            Pointwise::Sigmoid | Pointwise::Tanh => 1,
            _ => 2,
        };
        if inputs.len() != arity {
            return Err(Error::shape("pointwise", &[arity], &[inputs.len()]));
        }
        match kind {
            Pointwise::Sigmoid => self.sigmoid(inputs[0]),
            Pointwise::Tanh => self.tanh(inputs[0]),
            Pointwise::Mul => self.mul(inputs[0], inputs[1]),
            Pointwise::Add => self.add(inputs[0], inputs[1]),
            Pointwise::Sub => self.sub(inputs[0], inputs[1]),
        }
    }

    /// `x[r, :] + bias` for every row `r`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if self.value(bias).len() != cols {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks(cols.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        check_finite("add_row", &out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRow(x, bias), rg))
    }

    /// `x[r, :] * col[r]` for every row `r`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if self.value(col).len() != rows {
            return Err(Error::shape("mul_col", self.shape(x), self.shape(col)));
        }
        let c = self.value(col);
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * c[i / cols])
            .collect();
        check_finite("mul_col", &out)?;
        let rg = self.rg(x) || self.rg(col);
        Ok(self.push(self.shape(x).to_vec(), out, Op::MulCol(x, col), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len()
            || axis >= sa.len()
            || sa
                .iter()
                .zip(&sb)
                .enumerate()
                .any(|(d, (x, y))| d != axis && x != y)
        {
            return Err(Error::shape("concat", &sa, &sb));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let a_chunk = sa[axis] * inner;
        let b_chunk = sb[axis] * inner;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for o in 0..outer {
            out.extend_from_slice(&av[o * a_chunk..(o + 1) * a_chunk]);
            out.extend_from_slice(&bv[o * b_chunk..(o + 1) * b_chunk]);
        }
        let mut shape = sa;
        shape[axis] += sb[axis];
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                a,
                b,
                outer,
                a_chunk,
                b_chunk,
            },
            rg,
        ))
    }

    /// Sub-range `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(Error::shape("narrow", &sx, &[axis, start, len]));
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let src_chunk = sx[axis] * inner;
        let (offset, width) = (start * inner, len * inner);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * src_chunk + offset;
            out.extend_from_slice(&xv[base..base + width]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(
            shape,
            out,
            Op::Narrow {
                x,
                outer,
                src_chunk,
                offset,
                len: width,
            },
            rg,
        ))
    }

    /// Embedding lookup: rows `ids` of a `[n, d]` table, giving `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::shape("gather_rows", st, &[2]));
        }
        let (n, d) = (st[0], st[1]);
        let mut idx = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= n {
                return Err(Error::IdOutOfRange { id, size: n });
            }
            idx.push(id as usize);
        }
        let tv = self.value(table);
        let out: Vec<f64> = idx
            .iter()
            .flat_map(|&i| tv[i * d..(i + 1) * d].iter().copied())
            .collect();
        let rg = self.rg(table);
        Ok(self.push(vec![ids.len(), d], out, Op::GatherRows { table, ids: idx }, rg))
    }

    /// Picks `x[r, ids[r]]` for every row, giving a `[rows, 1]` column.
    pub fn pick_rows(&mut self, x: Var, ids: &[u32]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if ids.len() != rows {
            return Err(Error::shape("pick_rows", self.shape(x), &[ids.len()]));
        }
        let mut idx = Vec::with_capacity(rows);
        for &id in ids {
            if id as usize >= cols {
                return Err(Error::IdOutOfRange { id, size: cols });
            }
            idx.push(id as usize);
        }
        let xv = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &c)| xv[r * cols + c]).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![rows, 1], out, Op::PickRows { x, ids: idx }, rg))
    }

    /// Row `r` of the result is row `r` of `a` when `keep[r]`, else of `b`.
    pub fn select_rows(&mut self, keep: &[bool], a: Var, b: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(a));
        if self.shape(a) != self.shape(b) || keep.len() != rows {
            return Err(Error::shape("select_rows", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(av.len());
        for (r, &k) in keep.iter().enumerate() {
            let src = if k { av } else { bv };
            out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            self.shape(a).to_vec(),
            out,
            Op::SelectRows {
                keep: keep.to_vec(),
                a,
                b,
            },
            rg,
        ))
    }

    /// Row-wise softmax; the last dimension is normalized.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if cols == 0 || self.value(x).is_empty() {
            return Err(Error::EmptyInput("softmax"));
        }
        let out = softmax_rows(self.value(x), cols, None)?;
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::SoftmaxRows(x), rg))
    }

    /// Row-wise softmax where entries with `mask == false` get exactly zero
    /// weight. `mask` has one flag per element of `x`.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if cols == 0 || self.value(x).is_empty() {
            return Err(Error::EmptyInput("softmax"));
        }
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("masked_softmax", self.shape(x), &[mask.len()]));
        }
        let out = softmax_rows(self.value(x), cols, Some(mask))?;
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::SoftmaxRows(x), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if cols == 0 || self.value(x).is_empty() {
            return Err(Error::EmptyInput("log_softmax"));
        }
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        check_finite("log_softmax", &out)?;
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::LogSoftmaxRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).iter().sum();
        check_finite("sum", &[total])?;
        let rg = self.rg(x);
        Ok(self.push(vec![1], vec![total], Op::SumAll(x), rg))
    }

    /// Cosine similarity of corresponding rows, giving a `[rows, 1]` column.
    /// Fails with [`Error::DegenerateVector`] if any row has norm below
    /// [`COSINE_EPS`].
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        if self.shape(u) != self.shape(v) {
            return Err(Error::shape("cosine", self.shape(u), self.shape(v)));
        }
        let (rows, cols) = rows_cols(self.shape(u));
        let (uv, vv) = (self.value(u), self.value(v));
        let mut out = Vec::with_capacity(rows);
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let a = &uv[r * cols..(r + 1) * cols];
            let b = &vv[r * cols..(r + 1) * cols];
            let nu = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu < COSINE_EPS || nv < COSINE_EPS {
                return Err(Error::DegenerateVector(COSINE_EPS));
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            out.push((dot / (nu * nv)).clamp(-1.0, 1.0));
            norms.push((nu, nv));
        }
        let rg = self.rg(u) || self.rg(v);
        Ok(self.push(vec![rows, 1], out, Op::CosineRows { u, v, norms }, rg))
    }

    /// Stacks equally shaped `[b, d]` nodes into `[b, parts.len(), d]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("stack"))?;
        let shape = self.shape(first).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("stack", &shape, &[2]));
        }
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::shape("stack", &shape, self.shape(p)));
            }
        }
        let (b, d, s) = (shape[0], shape[1], parts.len());
        let mut out = vec![0.0; b * s * d];
        for (i, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            for r in 0..b {
                out[(r * s + i) * d..(r * s + i + 1) * d].copy_from_slice(&pv[r * d..(r + 1) * d]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![b, s, d], out, Op::Stack(parts.to_vec()), rg))
    }

    /// Dot-product attention scores: `query [b, d]` against `states [b, s, d]`
    /// gives `[b, s]`.
    pub fn attn_scores(&mut self, query: Var, states: Var) -> Result<Var> {
        let (sq, ss) = (self.shape(query), self.shape(states));
        if sq.len() != 2 || ss.len() != 3 || sq[0] != ss[0] || sq[1] != ss[2] {
            return Err(Error::shape("attn_scores", sq, ss));
        }
        let (b, s, d) = (ss[0], ss[1], ss[2]);
        let (qv, sv) = (self.value(query), self.value(states));
        let mut out = vec![0.0; b * s];
        for r in 0..b {
            let q = &qv[r * d..(r + 1) * d];
            for i in 0..s {
                let h = &sv[(r * s + i) * d..(r * s + i + 1) * d];
                out[r * s + i] = q.iter().zip(h).map(|(x, y)| x * y).sum();
            }
        }
        check_finite("attn_scores", &out)?;
        let rg = self.rg(query) || self.rg(states);
        Ok(self.push(vec![b, s], out, Op::AttnScores { query, states }, rg))
    }

    /// Weighted sum of `states [b, s, d]` by `weights [b, s]`, giving `[b, d]`.
    pub fn attn_context(&mut self, weights: Var, states: Var) -> Result<Var> {
        let (sw, ss) = (self.shape(weights), self.shape(states));
        if sw.len() != 2 || ss.len() != 3 || sw[0] != ss[0] || sw[1] != ss[1] {
            return Err(Error::shape("attn_context", sw, ss));
        }
        let (b, s, d) = (ss[0], ss[1], ss[2]);
        let (wv, sv) = (self.value(weights), self.value(states));
        let mut out = vec![0.0; b * d];
        for r in 0..b {
            let o = &mut out[r * d..(r + 1) * d];
            for i in 0..s {
                let w = wv[r * s + i];
                let h = &sv[(r * s + i) * d..(r * s + i + 1) * d];
                for (x, y) in o.iter_mut().zip(h) {
                    *x += w * y;
                }
            }
        }
        let rg = self.rg(weights) || self.rg(states);
        Ok(self.push(vec![b, d], out, Op::AttnContext { weights, states }, rg))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if loss_node.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Intermediate nodes are not part of the public result.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o += x));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                });
            }
            Op::Scale(x, k) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * k));
            }
            Op::AddRow(x, bias) => {
                let cols = self.nodes[bias.0].value.len();
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(*bias, &mut |gb| {
                    for row in g.chunks(cols.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::MulCol(x, col) => {
                let (_, cols) = rows_cols(&self.nodes[x.0].shape);
                let (xv, cv) = (&self.nodes[x.0].value, &self.nodes[col.0].value);
                acc(*x, &mut |gx| {
                    for (i, (o, v)) in gx.iter_mut().zip(g).enumerate() {
                        *o += v * cv[i / cols];
                    }
                });
                acc(*col, &mut |gc| {
                    for (r, o) in gc.iter_mut().enumerate() {
                        let span = r * cols..(r + 1) * cols;
                        *o += g[span.clone()].iter().zip(&xv[span]).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((o, v), y) in gx.iter_mut().zip(g).zip(y) {
                        *o += v * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((o, v), y) in gx.iter_mut().zip(g).zip(y) {
                        *o += v * (1.0 - y * y);
                    }
                });
            }
            Op::Concat {
                a,
                b,
                outer,
                a_chunk,
                b_chunk,
            } => {
                let stride = a_chunk + b_chunk;
                acc(*a, &mut |ga| {
                    for o in 0..*outer {
                        let src = &g[o * stride..o * stride + a_chunk];
                        ga[o * a_chunk..(o + 1) * a_chunk]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                });
                acc(*b, &mut |gb| {
                    for o in 0..*outer {
                        let src = &g[o * stride + a_chunk..(o + 1) * stride];
                        gb[o * b_chunk..(o + 1) * b_chunk]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::Narrow {
                x,
                outer,
                src_chunk,
                offset,
                len,
            } => {
                acc(*x, &mut |gx| {
                    for o in 0..*outer {
                        let base = o * src_chunk + offset;
                        gx[base..base + len]
                            .iter_mut()
                            .zip(&g[o * len..(o + 1) * len])
                            .for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = self.nodes[table.0].shape[1];
                acc(*table, &mut |gt| {
                    for (r, &i) in ids.iter().enumerate() {
                        gt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::PickRows { x, ids } => {
                let (_, cols) = rows_cols(&self.nodes[x.0].shape);
                acc(*x, &mut |gx| {
                    for (r, &c) in ids.iter().enumerate() {
                        gx[r * cols + c] += g[r];
                    }
                });
            }
            Op::SelectRows { keep, a, b } => {
                let (_, cols) = rows_cols(&node.shape);
                for (src, want) in [(*a, true), (*b, false)] {
                    acc(src, &mut |gs| {
                        for (r, &k) in keep.iter().enumerate() {
                            if k == want {
                                gs[r * cols..(r + 1) * cols]
                                    .iter_mut()
                                    .zip(&g[r * cols..(r + 1) * cols])
                                    .for_each(|(o, v)| *o += v);
                            }
                        }
                    });
                }
            }
            Op::SoftmaxRows(x) => {
                let (_, cols) = rows_cols(&node.shape);
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((gxr, yr), gr) in gx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in gxr.iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let (_, cols) = rows_cols(&node.shape);
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((gxr, yr), gr) in gx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let total: f64 = gr.iter().sum();
                        for ((o, yv), gv) in gxr.iter_mut().zip(yr).zip(gr) {
                            *o += gv - yv.exp() * total;
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::CosineRows { u, v, norms } => {
                let (_, cols) = rows_cols(&self.nodes[u.0].shape);
                let (uv, vv) = (&self.nodes[u.0].value, &self.nodes[v.0].value);
                let cos = &node.value;
                for (target, this, other, first) in [(*u, uv, vv, true), (*v, vv, uv, false)] {
                    acc(target, &mut |gt| {
                        for (r, &(nu, nv)) in norms.iter().enumerate() {
                            let (n_this, n_other) = if first { (nu, nv) } else { (nv, nu) };
                            let span = r * cols..(r + 1) * cols;
                            let scale = g[r] / (n_this * n_other);
                            let self_term = g[r] * cos[r] / (n_this * n_this);
                            for ((o, t), w) in gt[span.clone()]
                                .iter_mut()
                                .zip(&this[span.clone()])
                                .zip(&other[span])
                            {
                                *o += scale * w - self_term * t;
                            }
                        }
                    });
                }
            }
            Op::Stack(parts) => {
                let (b, s, d) = (node.shape[0], node.shape[1], node.shape[2]);
                for (i, &p) in parts.iter().enumerate() {
                    acc(p, &mut |gp| {
                        for r in 0..b {
                            gp[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(&g[(r * s + i) * d..(r * s + i + 1) * d])
                                .for_each(|(o, v)| *o += v);
                        }
                    });
                }
            }
            Op::AttnScores { query, states } => {
                let ss = &self.nodes[states.0].shape;
                let (b, s, d) = (ss[0], ss[1], ss[2]);
                let (qv, sv) = (&self.nodes[query.0].value, &self.nodes[states.0].value);
                acc(*query, &mut |gq| {
                    for r in 0..b {
                        for i in 0..s {
                            let w = g[r * s + i];
                            let h = &sv[(r * s + i) * d..(r * s + i + 1) * d];
                            gq[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(h)
                                .for_each(|(o, y)| *o += w * y);
                        }
                    }
                });
                acc(*states, &mut |gs| {
                    for r in 0..b {
                        let q = &qv[r * d..(r + 1) * d];
                        for i in 0..s {
                            let w = g[r * s + i];
                            gs[(r * s + i) * d..(r * s + i + 1) * d]
                                .iter_mut()
                                .zip(q)
                                .for_each(|(o, y)| *o += w * y);
                        }
                    }
                });
            }
            Op::AttnContext { weights, states } => {
                let ss = &self.nodes[states.0].shape;
                let (b, s, d) = (ss[0], ss[1], ss[2]);
                let (wv, sv) = (&self.nodes[weights.0].value, &self.nodes[states.0].value);
                acc(*weights, &mut |gw| {
                    for r in 0..b {
                        let gr = &g[r * d..(r + 1) * d];
                        for i in 0..s {
                            let h = &sv[(r * s + i) * d..(r * s + i + 1) * d];
                            gw[r * s + i] += gr.iter().zip(h).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*states, &mut |gs| {
                    for r in 0..b {
                        let gr = &g[r * d..(r + 1) * d];
                        for i in 0..s {
                            let w = wv[r * s + i];
                            gs[(r * s + i) * d..(r * s + i + 1) * d]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(o, y)| *o += w * y);
                        }
                    }
                });
            }
        }
    }
}

fn softmax_rows(x: &[f64], cols: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    for (r, (row, dst)) in x.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let live = |c: usize| mask.is_none_or(|m| m[r * cols + c]);
        let max = (0..cols)
            .filter(|&c| live(c))
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMasked);
        }
        let mut total = 0.0;
        for c in 0..cols {
            if live(c) {
                dst[c] = (row[c] - max).exp();
                total += dst[c];
            }
        }
        dst.iter_mut().for_each(|v| *v /= total);
    }
    check_finite("softmax", &out)?;
    Ok(out)
}
