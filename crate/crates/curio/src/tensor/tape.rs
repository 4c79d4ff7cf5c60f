//! Eager tape of tensor operations with exact reverse-mode gradients.
//!
//! Values are computed at node creation; `backward` walks the tape in
//! reverse and accumulates gradients. Graphs are built per forward pass
//! and dropped afterwards, parameters live in a [`super::ParamStore`]
//! and enter the tape as named leaves.

use std::collections::BTreeMap;

use super::{ParamStore, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Real> {
    Leaf { param: Option<String> },
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    MulElem(usize, usize),
    Scale(usize, T),
    AddBias(usize, usize),
    MatMul(usize, usize),
    MatMulSorted(usize, usize),
    Transpose(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Clamp(usize, T, T),
    MinElem(usize, usize),
    SoftmaxRows(usize),
    SoftmaxRowsSorted(usize),
    LogSoftmaxRows(usize),
    SoftmaxXentSum { logits: usize, targets: Vec<Option<usize>> },
    Sum(usize),
    Mean(usize),
    SumSquares(usize),
    LayerNorm { input: usize, gain: usize, bias: usize },
    ConcatCols(Vec<usize>),
    SliceCols { input: usize, start: usize, len: usize },
    GatherRows { table: usize, indices: Vec<usize> },
    PickPerRow { input: usize, cols: Vec<usize> },
    AddConst(usize),
    MulConst(usize, Tensor<T>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of the loss w.r.t. `v` (zeros if the node is unreachable).
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }

    /// Collect gradients for every named parameter leaf on the tape.
    /// Multiple leaves with the same name accumulate.
    pub fn into_param_grads(mut self, tape: &Tape<T>) -> BTreeMap<String, Tensor<T>> {
        let mut out: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                let g = self.grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.get_mut(name) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
            }
        }
        out
    }
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf with no gradient sink.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { param: None })
    }

    /// A leaf that gradients are collected for under `name`.
    pub fn leaf(&mut self, name: &str, t: Tensor<T>) -> Var {
        self.push(
            t,
            Op::Leaf {
                param: Some(name.to_string()),
            },
        )
    }

    /// Pull a trainable parameter out of the store onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let p = store.get(name)?;
        if p.frozen {
            return Err(TensorError::Contract(format!(
                "parameter '{name}' is frozen and cannot join a training graph"
            )));
        }
        Ok(self.leaf(name, p.value.clone()))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: self.value(a).shape().to_vec(),
                got: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a.0))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul_elem", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::MulElem(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    /// `matrix + bias` with the bias row broadcast over every row.
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (mv, bv) = (self.value(m), self.value(bias));
        if bv.rank() != 1 || bv.len() != mv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                expected: vec![mv.cols()],
                got: bv.shape().to_vec(),
            });
        }
        let cols = mv.cols();
        let mut out = mv.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        Ok(self.push(out, Op::AddBias(m.0, bias.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let v = matmul_raw(av, bv);
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    /// Matrix product whose inner sums are accumulated in value-sorted
    /// order, so the result is invariant under permutation of the
    /// contracted axis. Used by attention so that reordering keys/values
    /// reorders outputs bit-exactly.
    pub fn matmul_sorted(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_sorted",
                expected: av.shape().to_vec(),
                got: bv.shape().to_vec(),
            });
        }
        let v = matmul_sorted_raw(av, bv);
        Ok(self.push(v, Op::MatMulSorted(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = transpose_raw(self.value(a));
        self.push(v, Op::Transpose(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.value(a).map(|x| if x < lo { lo } else if x > hi { hi } else { x });
        self.push(v, Op::Clamp(a.0, lo, hi))
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("min_elem", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| if x <= y { x } else { y });
        Ok(self.push(v, Op::MinElem(a.0, b.0)))
    }

    /// Numerically stabilized softmax along `axis` (0 or the last axis).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let rank = self.value(a).rank().max(1);
        if axis >= rank {
            return Err(TensorError::Contract(format!(
                "softmax axis {axis} out of range for rank {rank}"
            )));
        }
        if rank == 2 && axis == 0 {
            let t = self.transpose(a);
            let s = self.softmax_rows(t)?;
            return Ok(self.transpose(s));
        }
        self.softmax_rows(a)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(TensorError::NonFinite("softmax"));
        }
        let v = softmax_rows_raw(self.value(a));
        Ok(self.push(v, Op::SoftmaxRows(a.0)))
    }

    /// Row softmax whose denominator is accumulated in value-sorted order,
    /// making the per-row weights invariant under column permutation.
    pub fn softmax_rows_sorted(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(TensorError::NonFinite("softmax_sorted"));
        }
        let av = self.value(a);
        let cols = av.cols();
        let mut out = av.clone();
        for r in 0..av.rows() {
            let row = av.row(r);
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut exps: Vec<T> = row.iter().map(|&x| (x - mx).exp()).collect();
            let mut terms = exps.clone();
            terms.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
            let denom = terms.iter().fold(T::zero(), |s, &e| s + e);
            for (c, e) in exps.iter_mut().enumerate() {
                out.data_mut()[r * cols + c] = *e / denom;
            }
        }
        Ok(self.push(out, Op::SoftmaxRowsSorted(a.0)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        if !self.value(a).all_finite() {
            return Err(TensorError::NonFinite("log_softmax"));
        }
        let av = self.value(a);
        let cols = av.cols();
        let mut out = av.clone();
        for r in 0..av.rows() {
            let row = av.row(r);
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let lse = row
                .iter()
                .map(|&x| (x - mx).exp())
                .fold(T::zero(), |s, e| s + e)
                .ln()
                + mx;
            for c in 0..cols {
                out.data_mut()[r * cols + c] = row[c] - lse;
            }
        }
        Ok(self.push(out, Op::LogSoftmaxRows(a.0)))
    }

    /// Fused softmax + cross-entropy, summed over rows with a target;
    /// `None` rows (padding) contribute nothing. Returns a scalar.
    pub fn softmax_xent_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(TensorError::Contract(format!(
                "{} targets for {} logit rows",
                targets.len(),
                lv.rows()
            )));
        }
        if !lv.all_finite() {
            return Err(TensorError::NonFinite("softmax_xent"));
        }
        let cols = lv.cols();
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                if *t >= cols {
                    return Err(TensorError::Contract(format!(
                        "target {t} out of range for {cols} classes"
                    )));
                }
                let row = lv.row(r);
                let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let lse = row
                    .iter()
                    .map(|&x| (x - mx).exp())
                    .fold(T::zero(), |s, e| s + e)
                    .ln()
                    + mx;
                total += lse - row[*t];
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::SoftmaxXentSum {
                logits: logits.0,
                targets: targets.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |s, &x| s + x);
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_f64(self.value(a).len() as f64);
        let s = self.value(a).data().iter().fold(T::zero(), |s, &x| s + x) / n;
        self.push(Tensor::scalar(s), Op::Mean(a.0))
    }

    /// `sum(x^2)` as a scalar.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |s, &x| s + x * x);
        self.push(Tensor::scalar(s), Op::SumSquares(a.0))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let cols = x.cols();
        for (v, nm) in [(gain, "gain"), (bias, "bias")] {
            let t = self.value(v);
            if t.rank() != 1 || t.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: if nm == "gain" { "layer_norm gain" } else { "layer_norm bias" },
                    expected: vec![cols],
                    got: t.shape().to_vec(),
                });
            }
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let (g, b) = (self.value(gain).clone(), self.value(bias).clone());
        let x = self.value(input);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = x.row(r);
            let n = T::from_f64(cols as f64);
            let mu = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mu) * (v - mu)) / n;
            let inv = (var + eps).sqrt().recip();
            for c in 0..cols {
                out.data_mut()[r * cols + c] = g.data()[c] * (row[c] - mu) * inv + b.data()[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                input: input.0,
                gain: gain.0,
                bias: bias.0,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Contract("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0usize;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    expected: vec![rows],
                    got: vec![self.value(p).rows()],
                });
            }
            cols += self.value(p).cols();
        }
        let mut out = Tensor::zeros(&[rows, cols]);
        let mut off = 0usize;
        for &p in parts {
            let pv = self.value(p);
            let pc = pv.cols();
            for r in 0..rows {
                for c in 0..pc {
                    out.data_mut()[r * cols + off + c] = pv.at(r, c);
                }
            }
            off += pc;
        }
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|v| v.0).collect())))
    }

    pub fn slice_cols(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let iv = self.value(input);
        if start + len > iv.cols() {
            return Err(TensorError::Contract(format!(
                "slice_cols {start}..{} exceeds {} columns",
                start + len,
                iv.cols()
            )));
        }
        let rows = iv.rows();
        let mut out = Tensor::zeros(&[rows, len]);
        for r in 0..rows {
            for c in 0..len {
                out.data_mut()[r * len + c] = iv.at(r, start + c);
            }
        }
        Ok(self.push(
            out,
            Op::SliceCols {
                input: input.0,
                start,
                len,
            },
        ))
    }

    /// Embedding lookup: rows of `table` selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = (tv.rows(), tv.cols());
        for &i in indices {
            if i >= rows {
                return Err(TensorError::Contract(format!(
                    "gather index {i} out of range for {rows} rows"
                )));
            }
        }
        let mut out = Tensor::zeros(&[indices.len(), cols]);
        for (r, &i) in indices.iter().enumerate() {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(tv.row(i));
        }
        Ok(self.push(
            out,
            Op::GatherRows {
                table: table.0,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Select one column per row, yielding an `n x 1` matrix.
    pub fn pick_per_row(&mut self, input: Var, cols: &[usize]) -> Result<Var> {
        let iv = self.value(input);
        if cols.len() != iv.rows() {
            return Err(TensorError::Contract(format!(
                "{} picks for {} rows",
                cols.len(),
                iv.rows()
            )));
        }
        let w = iv.cols();
        for &c in cols {
            if c >= w {
                return Err(TensorError::Contract(format!(
                    "pick column {c} out of range for {w} columns"
                )));
            }
        }
        let mut out = Tensor::zeros(&[cols.len(), 1]);
        for (r, &c) in cols.iter().enumerate() {
            out.data_mut()[r] = iv.at(r, c);
        }
        Ok(self.push(
            out,
            Op::PickPerRow {
                input: input.0,
                cols: cols.to_vec(),
            },
        ))
    }

    /// Add a constant tensor (no gradient into the constant).
    pub fn add_const(&mut self, a: Var, t: Tensor<T>) -> Result<Var> {
        if self.value(a).shape() != t.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add_const",
                expected: self.value(a).shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        let v = zip_map_t(self.value(a), &t, |x, y| x + y);
        Ok(self.push(v, Op::AddConst(a.0)))
    }

    /// Multiply by a constant mask (dropout, stop-gradient scaling).
    pub fn mul_const(&mut self, a: Var, t: Tensor<T>) -> Result<Var> {
        if self.value(a).shape() != t.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                expected: self.value(a).shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        let v = zip_map_t(self.value(a), &t, |x, y| x * y);
        Ok(self.push(v, Op::MulConst(a.0, t)))
    }

    /// `x W + b` — the workhorse affine layer.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.all_finite() {
            return Err(TensorError::NonFinite("backward loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()]).unwrap());
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn accum(grads: &mut [Option<Tensor<T>>], idx: usize, contrib: Tensor<T>) {
        match &mut grads[idx] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(contrib.data()) {
                    *a += *b;
                }
            }
            None => grads[idx] = Some(contrib),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                Self::accum(grads, *a, g.clone());
                Self::accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accum(grads, *a, g.clone());
                Self::accum(grads, *b, g.map(|x| -x));
            }
            Op::Neg(a) => Self::accum(grads, *a, g.map(|x| -x)),
            Op::MulElem(a, b) => {
                Self::accum(grads, *a, zip_map(g, val(*b), |x, y| x * y));
                Self::accum(grads, *b, zip_map(g, val(*a), |x, y| x * y));
            }
            Op::Scale(a, c) => Self::accum(grads, *a, g.map(|x| x * *c)),
            Op::AddBias(m, b) => {
                Self::accum(grads, *m, g.clone());
                let cols = g.cols();
                let mut gb = Tensor::zeros(&[cols]);
                for (k, &x) in g.data().iter().enumerate() {
                    gb.data_mut()[k % cols] += x;
                }
                Self::accum(grads, *b, gb);
            }
            Op::MatMul(a, b) | Op::MatMulSorted(a, b) => {
                let bt = transpose_raw(val(*b));
                Self::accum(grads, *a, matmul_raw(g, &bt));
                let at = transpose_raw(val(*a));
                Self::accum(grads, *b, matmul_raw(&at, g));
            }
            Op::Transpose(a) => Self::accum(grads, *a, transpose_raw(g)),
            Op::Relu(a) => {
                let contrib = zip_map(g, val(*a), |gx, x| if x > T::zero() { gx } else { T::zero() });
                Self::accum(grads, *a, contrib);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                Self::accum(grads, *a, zip_map(g, y, |gx, y| gx * (T::one() - y * y)));
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                Self::accum(grads, *a, zip_map(g, y, |gx, y| gx * y));
            }
            Op::Clamp(a, lo, hi) => {
                let contrib = zip_map(g, val(*a), |gx, x| {
                    if x > *lo && x < *hi {
                        gx
                    } else {
                        T::zero()
                    }
                });
                Self::accum(grads, *a, contrib);
            }
            Op::MinElem(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                for k in 0..g.len() {
                    if av.data()[k] <= bv.data()[k] {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                Self::accum(grads, *a, ga);
                Self::accum(grads, *b, gb);
            }
            Op::SoftmaxRows(a) | Op::SoftmaxRowsSorted(a) => {
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let mut ga = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot = yr
                        .iter()
                        .zip(gr)
                        .fold(T::zero(), |s, (&yv, &gv)| s + yv * gv);
                    for c in 0..cols {
                        ga.data_mut()[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                Self::accum(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let mut ga = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let gsum = gr.iter().fold(T::zero(), |s, &v| s + v);
                    for c in 0..cols {
                        ga.data_mut()[r * cols + c] = gr[c] - yr[c].exp() * gsum;
                    }
                }
                Self::accum(grads, *a, ga);
            }
            Op::SoftmaxXentSum { logits, targets } => {
                let lv = val(*logits);
                let sm = softmax_rows_raw(lv);
                let cols = lv.cols();
                let gs = g.item();
                let mut ga = Tensor::zeros(lv.shape());
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for c in 0..cols {
                            let delta = if c == *t { T::one() } else { T::zero() };
                            ga.data_mut()[r * cols + c] = gs * (sm.at(r, c) - delta);
                        }
                    }
                }
                Self::accum(grads, *logits, ga);
            }
            Op::Sum(a) => {
                let gs = g.item();
                Self::accum(grads, *a, Tensor::full(val(*a).shape(), gs));
            }
            Op::Mean(a) => {
                let n = T::from_f64(val(*a).len() as f64);
                let gs = g.item() / n;
                Self::accum(grads, *a, Tensor::full(val(*a).shape(), gs));
            }
            Op::SumSquares(a) => {
                let gs = g.item();
                let two = T::from_f64(2.0);
                Self::accum(grads, *a, val(*a).map(|x| two * x * gs));
            }
            Op::LayerNorm { input, gain, bias } => {
                let x = val(*input);
                let gv = val(*gain);
                let cols = x.cols();
                let n = T::from_f64(cols as f64);
                let eps = T::from_f64(LAYER_NORM_EPS);
                let mut gx = Tensor::zeros(x.shape());
                let mut ggain = Tensor::zeros(&[cols]);
                let mut gbias = Tensor::zeros(&[cols]);
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let gr = g.row(r);
                    let mu = row.iter().fold(T::zero(), |s, &v| s + v) / n;
                    let var = row.iter().fold(T::zero(), |s, &v| s + (v - mu) * (v - mu)) / n;
                    let inv = (var + eps).sqrt().recip();
                    // xhat and the two row means the gradient needs
                    let xhat: Vec<T> = row.iter().map(|&v| (v - mu) * inv).collect();
                    let gg: Vec<T> = (0..cols).map(|c| gv.data()[c] * gr[c]).collect();
                    let mean_gg = gg.iter().fold(T::zero(), |s, &v| s + v) / n;
                    let mean_gg_xhat = gg
                        .iter()
                        .zip(&xhat)
                        .fold(T::zero(), |s, (&a, &b)| s + a * b)
                        / n;
                    for c in 0..cols {
                        gx.data_mut()[r * cols + c] =
                            (gg[c] - mean_gg - xhat[c] * mean_gg_xhat) * inv;
                        ggain.data_mut()[c] += gr[c] * xhat[c];
                        gbias.data_mut()[c] += gr[c];
                    }
                }
                Self::accum(grads, *input, gx);
                Self::accum(grads, *gain, ggain);
                Self::accum(grads, *bias, gbias);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let cols = g.cols();
                let mut off = 0usize;
                for &p in parts {
                    let pc = val(p).cols();
                    let mut gp = Tensor::zeros(val(p).shape());
                    for r in 0..rows {
                        for c in 0..pc {
                            gp.data_mut()[r * pc + c] = g.data()[r * cols + off + c];
                        }
                    }
                    Self::accum(grads, p, gp);
                    off += pc;
                }
            }
            Op::SliceCols { input, start, len } => {
                let iv = val(*input);
                let (rows, cols) = (iv.rows(), iv.cols());
                let mut gi = Tensor::zeros(iv.shape());
                for r in 0..rows {
                    for c in 0..*len {
                        gi.data_mut()[r * cols + start + c] = g.data()[r * len + c];
                    }
                }
                Self::accum(grads, *input, gi);
            }
            Op::GatherRows { table, indices } => {
                let tv = val(*table);
                let cols = tv.cols();
                let mut gt = Tensor::zeros(tv.shape());
                for (r, &idx) in indices.iter().enumerate() {
                    for c in 0..cols {
                        gt.data_mut()[idx * cols + c] += g.data()[r * cols + c];
                    }
                }
                Self::accum(grads, *table, gt);
            }
            Op::PickPerRow { input, cols } => {
                let iv = val(*input);
                let w = iv.cols();
                let mut gi = Tensor::zeros(iv.shape());
                for (r, &c) in cols.iter().enumerate() {
                    gi.data_mut()[r * w + c] = g.data()[r];
                }
                Self::accum(grads, *input, gi);
            }
            Op::AddConst(a) => Self::accum(grads, *a, g.clone()),
            Op::MulConst(a, t) => Self::accum(grads, *a, zip_map_t(g, t, |x, y| x * y)),
        }
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o = f(*o, bv);
    }
    out
}

fn zip_map_t<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    zip_map(a, b, f)
}

pub(crate) fn matmul_raw<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out.data_mut()[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = b.row(p);
            for q in 0..n {
                orow[q] += av * brow[q];
            }
        }
        let _ = k;
    }
    out
}

/// Matrix product with each inner sum accumulated in value-sorted order;
/// invariant under any permutation applied jointly to the columns of `a`
/// and the rows of `b`.
pub(crate) fn matmul_sorted_raw<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    let mut terms: Vec<T> = Vec::with_capacity(k);
    for i in 0..m {
        let arow = a.row(i);
        for q in 0..n {
            terms.clear();
            for (p, &av) in arow.iter().enumerate() {
                terms.push(av * b.at(p, q));
            }
            terms.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
            out.data_mut()[i * n + q] = terms.iter().fold(T::zero(), |s, &t| s + t);
        }
    }
    out
}

fn transpose_raw<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            out.data_mut()[j * m + i] = a.at(i, j);
        }
    }
    out
}

fn softmax_rows_raw<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let cols = a.cols();
    let mut out = a.clone();
    for r in 0..a.rows() {
        let row = a.row(r);
        let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for c in 0..cols {
            let e = (row[c] - mx).exp();
            out.data_mut()[r * cols + c] = e;
            sum += e;
        }
        for c in 0..cols {
            out.data_mut()[r * cols + c] = out.data()[r * cols + c] / sum;
        }
    }
    out
}
