//! Dense tensors with reverse-mode automatic differentiation on a tape.
//!
//! A [`Tape`] records every primitive applied during a forward pass; the
//! reverse sweep visits nodes in exact reverse order and accumulates adjoints
//! into every node that `requires_grad`. Repeated `backward` calls on the same
//! tape accumulate (they do not overwrite), matching optimizer semantics where
//! gradients are zeroed explicitly.
//!
//! Reductions that cross the token axis (softmax row sums and the
//! attention-weights-times-values product) accumulate contributions in a
//! canonical sorted order, so the forward pass is bit-stable under any
//! permutation of the rows feeding them.

use crate::scalar::{layer_norm_eps, Scalar};
use crate::{Result, SpikeError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub usize);

/// A plain tensor value: row-major data plus an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub requires_grad: bool,
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SpikeError::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); n], requires_grad: false, grad: None }
    }

    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

enum Op<S: Scalar> {
    Leaf,
    MatMul { a: TensorId, b: TensorId, _stable: bool },
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    MulElem(TensorId, TensorId),
    Scale(TensorId, S),
    AddRow { x: TensorId, bias: TensorId },
    Relu(TensorId),
    Abs(TensorId),
    SoftmaxRows(TensorId),
    MaxReduce { x: TensorId, _axis: usize, argmax: Vec<usize> },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, normed: Vec<S>, inv_std: Vec<S> },
    ConcatCols(Vec<TensorId>),
    SliceCols { x: TensorId, start: usize, end: usize },
    Reshape(TensorId),
    Transpose(TensorId),
    SumAll(TensorId),
}

struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Records primitive operations for the reverse sweep. Single-owner: one
/// forward/backward execution per tape at a time.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Sum a buffer of contributions in a canonical order so the result does not
/// depend on how the caller ordered them.
fn stable_sum<S: Scalar>(vals: &mut [S]) -> S {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut acc = S::zero();
    for v in vals.iter() {
        acc = acc + *v;
    }
    acc
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Approximate tape footprint in bytes (node data + grad buffers).
    pub fn bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                (n.data.len() + n.grad.as_ref().map_or(0, |g| g.len())) * std::mem::size_of::<S>()
            })
            .sum()
    }

    /// Drops all nodes and intermediate references.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, t: Tensor<S>) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape: t.shape,
            data: t.data,
            grad: None,
            requires_grad: t.requires_grad,
            op: Op::Leaf,
        });
        id
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor<S>) -> TensorId {
        self.leaf(t)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self, id: TensorId) {
        self.nodes[id.0].grad = None;
    }

    /// Materializes the node as a plain tensor value.
    pub fn tensor(&self, id: TensorId) -> Tensor<S> {
        let n = &self.nodes[id.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.data.clone(),
            requires_grad: n.requires_grad,
            grad: n.grad.clone(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, requires_grad: bool, op: Op<S>) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { shape, data, grad: None, requires_grad, op });
        id
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn dims2(&self, id: TensorId, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(SpikeError::Dimension(format!("{what}: expected 2-D tensor, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.matmul_impl(a, b, false)
    }

    /// Matmul whose inner-dimension reduction is permutation-stable. Used
    /// where the inner dimension is the token axis (attention times values).
    pub fn matmul_stable(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: TensorId, b: TensorId, stable: bool) -> Result<TensorId> {
        let (p, q) = self.dims2(a, "matmul lhs")?;
        let (q2, s) = self.dims2(b, "matmul rhs")?;
        if q != q2 {
            return Err(SpikeError::Dimension(format!(
                "matmul: inner dimensions disagree, lhs {:?} vs rhs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = if stable {
            raw_matmul_stable(self.data(a), self.data(b), p, q, s)
        } else {
            raw_matmul(self.data(a), self.data(b), p, q, s)
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![p, s], out, rg, Op::MatMul { a, b, _stable: stable }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let data: Vec<S> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x + *y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<S> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x - *y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Sub(a, b)))
    }

    pub fn mul_elem(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul_elem")?;
        let data: Vec<S> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x * *y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::MulElem(a, b)))
    }

    pub fn scale(&mut self, x: TensorId, k: S) -> TensorId {
        let data: Vec<S> = self.data(x).iter().map(|v| *v * k).collect();
        let rg = self.rg(x);
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Scale(x, k))
    }

    /// Adds a length-`cols` bias vector to every row of a 2-D tensor.
    pub fn add_row(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "add_row input")?;
        if self.shape(bias) != [cols] {
            return Err(SpikeError::Dimension(format!(
                "add_row: bias shape {:?} does not match {} columns",
                self.shape(bias),
                cols
            )));
        }
        let mut data = self.data(x).to_vec();
        let b = self.data(bias).to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] = data[r * cols + c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(vec![rows, cols], data, rg, Op::AddRow { x, bias }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data: Vec<S> = self.data(x).iter().map(|v| if *v > S::zero() { *v } else { S::zero() }).collect();
        let rg = self.rg(x);
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Relu(x))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let data: Vec<S> = self.data(x).iter().map(|v| v.abs()).collect();
        let rg = self.rg(x);
        self.push(self.nodes[x.0].shape.clone(), data, rg, Op::Abs(x))
    }

    /// Row-wise softmax, stabilized by subtracting the row max. The exp sum
    /// is accumulated in sorted order so row permutations upstream cannot
    /// perturb the result.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "softmax_rows")?;
        if self.data(x).iter().any(|v| v.is_nan()) {
            return Err(SpikeError::Numeric("softmax_rows: NaN in input".into()));
        }
        let xd = self.data(x).to_vec();
        let mut out = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut exps: Vec<S> = row.iter().map(|v| (*v - mx).exp()).collect();
            let mut sorted = exps.clone();
            let denom = stable_sum(&mut sorted);
            for c in 0..cols {
                out[r * cols + c] = exps[c] / denom;
            }
            exps.clear();
        }
        let rg = self.rg(x);
        Ok(self.push(vec![rows, cols], out, rg, Op::SoftmaxRows(x)))
    }

    /// Elementwise max along `axis`. Gradient flows only to the first
    /// (lowest-index) maximal element along the axis.
    pub fn max_reduce(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(SpikeError::Dimension(format!(
                "max_reduce: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let extent = shape[axis];
        if extent == 0 {
            return Err(SpikeError::Dimension("max_reduce: empty axis extent".into()));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let xd = self.data(x);
        let mut out = vec![S::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = xd[(o * extent) * inner + i];
                let mut best_j = 0usize;
                for j in 1..extent {
                    let v = xd[(o * extent + j) * inner + i];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = (o * extent + best_j) * inner + i;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out_shape, out, rg, Op::MaxReduce { x, _axis: axis, argmax }))
    }

    /// Normalizes the last axis to zero mean / unit variance, then applies
    /// the affine pair (gain, bias), each of length last-axis.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> Result<TensorId> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or_else(|| SpikeError::Dimension("layer_norm: rank-0 input".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(SpikeError::Dimension(format!(
                "layer_norm: affine shapes {:?}/{:?} do not match last axis {}",
                self.shape(gain),
                self.shape(bias),
                d
            )));
        }
        let rows = self.data(x).len() / d;
        let eps = layer_norm_eps::<S>();
        let xd = self.data(x).to_vec();
        let g = self.data(gain).to_vec();
        let b = self.data(bias).to_vec();
        let mut normed = vec![S::zero(); rows * d];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); rows * d];
        let dn = S::from_usize_(d);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().fold(S::zero(), |a, v| a + *v) / dn;
            let var = row.iter().fold(S::zero(), |a, v| a + (*v - mean) * (*v - mean)) / dn;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let nv = (row[c] - mean) * is;
                normed[r * d + c] = nv;
                out[r * d + c] = nv * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(shape, out, rg, Op::LayerNorm { x, gain, bias, normed, inv_std }))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(SpikeError::Dimension("concat_cols: no inputs".into()));
        }
        let (rows, _) = self.dims2(parts[0], "concat_cols")?;
        let mut total = 0usize;
        for p in parts {
            let (r, c) = self.dims2(*p, "concat_cols")?;
            if r != rows {
                return Err(SpikeError::Dimension(format!(
                    "concat_cols: row counts differ ({rows} vs {r})"
                )));
            }
            total += c;
        }
        let mut data = vec![S::zero(); rows * total];
        let mut off = 0usize;
        for p in parts {
            let (_, c) = self.dims2(*p, "concat_cols")?;
            let pd = self.data(*p).to_vec();
            for r in 0..rows {
                data[r * total + off..r * total + off + c].copy_from_slice(&pd[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(vec![rows, total], data, rg, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "slice_cols")?;
        if start >= end || end > cols {
            return Err(SpikeError::Dimension(format!(
                "slice_cols: range {start}..{end} invalid for {cols} columns"
            )));
        }
        let w = end - start;
        let xd = self.data(x);
        let mut data = vec![S::zero(); rows * w];
        for r in 0..rows {
            data[r * w..(r + 1) * w].copy_from_slice(&xd[r * cols + start..r * cols + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![rows, w], data, rg, Op::SliceCols { x, start, end }))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let n: usize = shape.iter().product();
        if n != self.data(x).len() {
            return Err(SpikeError::Dimension(format!(
                "reshape: {:?} incompatible with {} elements",
                shape,
                self.data(x).len()
            )));
        }
        let data = self.data(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, data, rg, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(x, "transpose")?;
        let xd = self.data(x);
        let mut data = vec![S::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = xd[r * cols + c];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![cols, rows], data, rg, Op::Transpose(x)))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s = self.data(x).iter().fold(S::zero(), |a, v| a + *v);
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::SumAll(x))
    }

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(SpikeError::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar loss. Adjoints are accumulated into the
    /// persistent grad of every `requires_grad` node, so calling twice
    /// without zeroing doubles the gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(SpikeError::Dimension(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<S>>> = vec![None; n];
        adj[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let dy = match adj[i].take() {
                Some(d) => d,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &dy, &mut adj);
            let g = self.nodes[i].grad.get_or_insert_with(|| vec![S::zero(); dy.len()]);
            for (gv, dv) in g.iter_mut().zip(dy.iter()) {
                *gv = *gv + *dv;
            }
        }
        Ok(())
    }

    fn accumulate(adj: &mut [Option<Vec<S>>], id: TensorId, contrib: &[S]) {
        let slot = adj[id.0].get_or_insert_with(|| vec![S::zero(); contrib.len()]);
        for (a, c) in slot.iter_mut().zip(contrib) {
            *a = *a + *c;
        }
    }

    fn propagate(&self, i: usize, dy: &[S], adj: &mut [Option<Vec<S>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, .. } => {
                let (p, q) = (self.shape(*a)[0], self.shape(*a)[1]);
                let s = self.shape(*b)[1];
                if self.rg(*a) {
                    // dA = dC * B^T
                    let bd = self.data(*b);
                    let mut da = vec![S::zero(); p * q];
                    for r in 0..p {
                        for k in 0..q {
                            let mut acc = S::zero();
                            for c in 0..s {
                                acc = acc + dy[r * s + c] * bd[k * s + c];
                            }
                            da[r * q + k] = acc;
                        }
                    }
                    Self::accumulate(adj, *a, &da);
                }
                if self.rg(*b) {
                    // dB = A^T * dC
                    let ad = self.data(*a);
                    let mut db = vec![S::zero(); q * s];
                    for k in 0..q {
                        for c in 0..s {
                            let mut acc = S::zero();
                            for r in 0..p {
                                acc = acc + ad[r * q + k] * dy[r * s + c];
                            }
                            db[k * s + c] = acc;
                        }
                    }
                    Self::accumulate(adj, *b, &db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    Self::accumulate(adj, *a, dy);
                }
                if self.rg(*b) {
                    Self::accumulate(adj, *b, dy);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    Self::accumulate(adj, *a, dy);
                }
                if self.rg(*b) {
                    let neg: Vec<S> = dy.iter().map(|v| -*v).collect();
                    Self::accumulate(adj, *b, &neg);
                }
            }
            Op::MulElem(a, b) => {
                if self.rg(*a) {
                    let da: Vec<S> = dy.iter().zip(self.data(*b)).map(|(d, v)| *d * *v).collect();
                    Self::accumulate(adj, *a, &da);
                }
                if self.rg(*b) {
                    let db: Vec<S> = dy.iter().zip(self.data(*a)).map(|(d, v)| *d * *v).collect();
                    Self::accumulate(adj, *b, &db);
                }
            }
            Op::Scale(x, k) => {
                if self.rg(*x) {
                    let dx: Vec<S> = dy.iter().map(|v| *v * *k).collect();
                    Self::accumulate(adj, *x, &dx);
                }
            }
            Op::AddRow { x, bias } => {
                let (rows, cols) = (self.shape(*x)[0], self.shape(*x)[1]);
                if self.rg(*x) {
                    Self::accumulate(adj, *x, dy);
                }
                if self.rg(*bias) {
                    let mut db = vec![S::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] = db[c] + dy[r * cols + c];
                        }
                    }
                    Self::accumulate(adj, *bias, &db);
                }
            }
            Op::Relu(x) => {
                if self.rg(*x) {
                    let dx: Vec<S> = self
                        .data(*x)
                        .iter()
                        .zip(dy)
                        .map(|(v, d)| if *v > S::zero() { *d } else { S::zero() })
                        .collect();
                    Self::accumulate(adj, *x, &dx);
                }
            }
            Op::Abs(x) => {
                if self.rg(*x) {
                    let dx: Vec<S> = self
                        .data(*x)
                        .iter()
                        .zip(dy)
                        .map(|(v, d)| {
                            if *v > S::zero() {
                                *d
                            } else if *v < S::zero() {
                                -*d
                            } else {
                                S::zero()
                            }
                        })
                        .collect();
                    Self::accumulate(adj, *x, &dx);
                }
            }
            Op::SoftmaxRows(x) => {
                if self.rg(*x) {
                    let (rows, cols) = (self.shape(i_id(i))[0], self.shape(i_id(i))[1]);
                    let y = self.data(i_id(i));
                    let mut dx = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        let mut dot = S::zero();
                        for c in 0..cols {
                            dot = dot + dy[r * cols + c] * y[r * cols + c];
                        }
                        for c in 0..cols {
                            dx[r * cols + c] = y[r * cols + c] * (dy[r * cols + c] - dot);
                        }
                    }
                    Self::accumulate(adj, *x, &dx);
                }
            }
            Op::MaxReduce { x, argmax, .. } => {
                if self.rg(*x) {
                    let mut dx = vec![S::zero(); self.data(*x).len()];
                    for (out_idx, src_idx) in argmax.iter().enumerate() {
                        dx[*src_idx] = dx[*src_idx] + dy[out_idx];
                    }
                    Self::accumulate(adj, *x, &dx);
                }
            }
            Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                let d = *self.shape(*x).last().unwrap();
                let rows = self.data(*x).len() / d;
                let g = self.data(*gain);
                let dn = S::from_usize_(d);
                if self.rg(*x) {
                    let mut dx = vec![S::zero(); rows * d];
                    for r in 0..rows {
                        let mut m1 = S::zero(); // mean of dy*g
                        let mut m2 = S::zero(); // mean of dy*g*normed
                        for c in 0..d {
                            let dg = dy[r * d + c] * g[c];
                            m1 = m1 + dg;
                            m2 = m2 + dg * normed[r * d + c];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for c in 0..d {
                            let dg = dy[r * d + c] * g[c];
                            dx[r * d + c] = inv_std[r] * (dg - m1 - normed[r * d + c] * m2);
                        }
                    }
                    Self::accumulate(adj, *x, &dx);
                }
                if self.rg(*gain) {
                    let mut dg = vec![S::zero(); d];
                    for r in 0..rows {
                        for c in 0..d {
                            dg[c] = dg[c] + dy[r * d + c] * normed[r * d + c];
                        }
                    }
                    Self::accumulate(adj, *gain, &dg);
                }
                if self.rg(*bias) {
                    let mut db = vec![S::zero(); d];
                    for r in 0..rows {
                        for c in 0..d {
                            db[c] = db[c] + dy[r * d + c];
                        }
                    }
                    Self::accumulate(adj, *bias, &db);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = self.shape(i_id(i))[0];
                let total = self.shape(i_id(i))[1];
                let mut off = 0usize;
                for p in parts {
                    let c = self.shape(*p)[1];
                    if self.rg(*p) {
                        let mut dp = vec![S::zero(); rows * c];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c]
                                .copy_from_slice(&dy[r * total + off..r * total + off + c]);
                        }
                        Self::accumulate(adj, *p, &dp);
                    }
                    off += c;
                }
            }
            Op::SliceCols { x, start, end } => {
                if self.rg(*x) {
                    let (rows, cols) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let w = end - start;
                    let mut dx = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + end].copy_from_slice(&dy[r * w..(r + 1) * w]);
                    }
                    Self::accumulate(adj, *x, &dx);
                }
            }
            Op::Reshape(x) => {
                if self.rg(*x) {
                    Self::accumulate(adj, *x, dy);
                }
            }
            Op::Transpose(x) => {
                if self.rg(*x) {
                    let (rows, cols) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let mut dx = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] = dy[c * rows + r];
                        }
                    }
                    Self::accumulate(adj, *x, &dx);
                }
            }
            Op::SumAll(x) => {
                if self.rg(*x) {
                    let dx = vec![dy[0]; self.data(*x).len()];
                    Self::accumulate(adj, *x, &dx);
                }
            }
        }
    }
}

fn i_id(i: usize) -> TensorId {
    TensorId(i)
}

fn raw_matmul<S: Scalar>(a: &[S], b: &[S], p: usize, q: usize, s: usize) -> Vec<S> {
    let mut out = vec![S::zero(); p * s];
    for r in 0..p {
        for k in 0..q {
            let av = a[r * q + k];
            if av == S::zero() {
                continue;
            }
            for c in 0..s {
                out[r * s + c] = out[r * s + c] + av * b[k * s + c];
            }
        }
    }
    out
}

fn raw_matmul_stable<S: Scalar>(a: &[S], b: &[S], p: usize, q: usize, s: usize) -> Vec<S> {
    let mut out = vec![S::zero(); p * s];
    let mut contrib = vec![S::zero(); q];
    for r in 0..p {
        for c in 0..s {
            for k in 0..q {
                contrib[k] = a[r * q + k] * b[k * s + c];
            }
            out[r * s + c] = stable_sum(&mut contrib);
        }
    }
    out
}

/// Central-difference gradient estimate of a scalar-valued function.
pub fn finite_diff_grad<S: Scalar>(
    mut f: impl FnMut(&[S]) -> S,
    params: &[S],
    step: S,
) -> Vec<S> {
    let mut p = params.to_vec();
    let mut grad = vec![S::zero(); p.len()];
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let fp = f(&p);
        p[i] = orig - step;
        let fm = f(&p);
        p[i] = orig;
        grad[i] = (fp - fm) / (step + step);
    }
    grad
}

/// Max relative error between an analytic gradient and a reference,
/// guarding small denominators.
pub fn max_rel_err<S: Scalar>(analytic: &[S], reference: &[S]) -> f64 {
    let mut worst = 0.0f64;
    for (a, r) in analytic.iter().zip(reference) {
        let a = a.as_f64();
        let r = r.as_f64();
        let denom = a.abs().max(r.abs()).max(1e-6);
        let e = (a - r).abs() / denom;
        if e > worst {
            worst = e;
        }
    }
    worst
}
