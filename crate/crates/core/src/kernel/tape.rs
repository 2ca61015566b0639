use std::sync::Arc;

use super::tensor::gemm;
use super::{KernelError, KernelResult, Tensor};

/// Shared row-index array (edge endpoints, negative pools, node subsets).
pub type Index = Arc<[usize]>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Index),
    ScatterAddRows(Var, Index),
    SegmentSoftmax(Var, Index),
    ScaleRows(Var, Var),
    EdgeScores {
        a: Var,
        b: Var,
        bias: Var,
        w: Var,
        src: Index,
        dst: Index,
        /// `tanh` activations, `E x h`.
        hidden: Tensor,
    },
    WeightedScatter {
        x: Var,
        alpha: Var,
        src: Index,
        dst: Index,
    },
    RowDot(Var, Var),
    L2NormalizeRows(Var),
    Sum(Var),
    Mean(Var),
    ExpSimilaritySum {
        s: Var,
        pool: Index,
        per_row: usize,
        inv_tau: f64,
        chunk_rows: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Record of executed operations, replayed in reverse by
/// [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn check_shape(op: &'static str, a: &Tensor, b: &Tensor) -> KernelResult<()> {
    if a.shape() != b.shape() {
        return Err(KernelError::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn check_index(op: &'static str, index: &[usize], bound: usize) -> KernelResult<()> {
    match index.iter().find(|&&i| i >= bound) {
        Some(&i) => Err(KernelError::Index {
            op,
            index: i,
            bound,
        }),
        None => Ok(()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
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

    /// Clears accumulated gradients so `backward` may run again.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Drops every node, keeping the allocation for the next graph.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> KernelResult<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(KernelError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input (model parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A fixed input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last `backward`, if the variable lies on
    /// a path from a leaf to the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> KernelResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(KernelError::Shape {
                op: "matmul",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        gemm(
            ta.data(),
            ta.rows(),
            ta.cols(),
            false,
            tb.data(),
            tb.rows(),
            tb.cols(),
            false,
            out.data_mut(),
            0.0,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    /// Adds a `1 x cols` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> KernelResult<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(KernelError::Shape {
                op: "add_bias",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let mut out = ta.clone();
        let cols = ta.cols();
        if cols > 0 {
            for row in out.data_mut().chunks_exact_mut(cols) {
                for (x, b) in row.iter_mut().zip(tb.data()) {
                    *x += b;
                }
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        self.push("add_bias", out, Op::AddBias(a, bias), ng)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> KernelResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(name, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> KernelResult<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> KernelResult<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> KernelResult<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> KernelResult<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        let ng = self.needs(a);
        self.push(name, out, op, ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> KernelResult<Var> {
        self.map("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> KernelResult<Var> {
        self.map("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> KernelResult<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> KernelResult<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> KernelResult<Var> {
        self.map("log", a, f64::ln, Op::Log(a))
    }

    /// Row-wise concatenation `[a | b]`: row `i` of the output is row `i` of
    /// `a` followed by row `i` of `b`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> KernelResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(KernelError::Shape {
                op: "concat_cols",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let cols = ta.cols() + tb.cols();
        let mut data = Vec::with_capacity(ta.rows() * cols);
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::new(ta.rows(), cols, data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("concat_cols", out, Op::ConcatCols(a, b), ng)
    }

    /// Output row `i` is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &Index) -> KernelResult<Var> {
        let tx = self.value(x);
        check_index("gather_rows", index, tx.rows())?;
        let cols = tx.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::new(index.len(), cols, data)?;
        let ng = self.needs(x);
        self.push("gather_rows", out, Op::GatherRows(x, index.clone()), ng)
    }

    /// Sums row `i` of `x` into output row `index[i]`; the output has
    /// `n_rows` rows. Adjoint of [`Tape::gather_rows`].
    pub fn scatter_add_rows(&mut self, x: Var, index: &Index, n_rows: usize) -> KernelResult<Var> {
        let tx = self.value(x);
        if index.len() != tx.rows() {
            return Err(KernelError::Shape {
                op: "scatter_add_rows",
                lhs: tx.shape(),
                rhs: (index.len(), 1),
            });
        }
        check_index("scatter_add_rows", index, n_rows)?;
        let mut out = Tensor::zeros(n_rows, tx.cols());
        for (r, &i) in index.iter().enumerate() {
            axpy(1.0, tx.row(r), out.row_mut(i));
        }
        let ng = self.needs(x);
        self.push("scatter_add_rows", out, Op::ScatterAddRows(x, index.clone()), ng)
    }

    /// Softmax of a column of scores within groups sharing the same
    /// `segment[i]` (e.g. all edges arriving at one node).
    pub fn segment_softmax(&mut self, scores: Var, segment: &Index, n_segments: usize) -> KernelResult<Var> {
        let ts = self.value(scores);
        if ts.cols() != 1 || ts.rows() != segment.len() {
            return Err(KernelError::Shape {
                op: "segment_softmax",
                lhs: ts.shape(),
                rhs: (segment.len(), 1),
            });
        }
        check_index("segment_softmax", segment, n_segments)?;
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (&x, &s) in ts.data().iter().zip(segment.iter()) {
            max[s] = max[s].max(x);
        }
        let mut out: Vec<f64> = ts
            .data()
            .iter()
            .zip(segment.iter())
            .map(|(&x, &s)| (x - max[s]).exp())
            .collect();
        let mut total = vec![0.0; n_segments];
        for (&e, &s) in out.iter().zip(segment.iter()) {
            total[s] += e;
        }
        for (e, &s) in out.iter_mut().zip(segment.iter()) {
            *e /= total[s];
        }
        let out = Tensor::new(segment.len(), 1, out)?;
        let ng = self.needs(scores);
        self.push("segment_softmax", out, Op::SegmentSoftmax(scores, segment.clone()), ng)
    }

    /// Multiplies each row of `x` by the matching entry of the column `w`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> KernelResult<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.cols() != 1 || tw.rows() != tx.rows() {
            return Err(KernelError::Shape {
                op: "scale_rows",
                lhs: tx.shape(),
                rhs: tw.shape(),
            });
        }
        let mut out = tx.clone();
        for r in 0..tx.rows() {
            let s = tw.data()[r];
            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let ng = self.needs(x) || self.needs(w);
        self.push("scale_rows", out, Op::ScaleRows(x, w), ng)
    }

    /// Two-layer edge scorer: entry `e` of the `E x 1` output is
    /// `sum_k w[k] * tanh(a[src[e], k] + b[dst[e], k] + bias[k])`.
    ///
    /// Same values as gathering both sides, adding, `add_bias`, `tanh` and a
    /// matmul with `w`, but only the activations are kept.
    pub fn edge_scores(&mut self, a: Var, b: Var, bias: Var, w: Var, src: &Index, dst: &Index) -> KernelResult<Var> {
        let (ta, tb, tbias, tw) = (self.value(a), self.value(b), self.value(bias), self.value(w));
        let h = ta.cols();
        if tb.cols() != h || tbias.shape() != (1, h) || tw.shape() != (h, 1) || src.len() != dst.len() {
            return Err(KernelError::Shape {
                op: "edge_scores",
                lhs: ta.shape(),
                rhs: tw.shape(),
            });
        }
        check_index("edge_scores", src, ta.rows())?;
        check_index("edge_scores", dst, tb.rows())?;
        let mut hidden = Vec::with_capacity(src.len() * h);
        let mut scores = Vec::with_capacity(src.len());
        for (&u, &v) in src.iter().zip(dst.iter()) {
            let mut score = 0.0;
            for (((&x, &y), &c), &wk) in ta.row(u).iter().zip(tb.row(v)).zip(tbias.data()).zip(tw.data()) {
                let t = (x + y + c).tanh();
                hidden.push(t);
                score += t * wk;
            }
            scores.push(score);
        }
        let hidden = Tensor::new(src.len(), h, hidden)?;
        let out = Tensor::new(src.len(), 1, scores)?;
        let ng = self.needs(a) || self.needs(b) || self.needs(bias) || self.needs(w);
        let op = Op::EdgeScores {
            a,
            b,
            bias,
            w,
            src: src.clone(),
            dst: dst.clone(),
            hidden,
        };
        self.push("edge_scores", out, op, ng)
    }

    /// Output row `dst[e]` accumulates `alpha[e] * x[src[e]]`, edges in
    /// order; the output has `n_rows` rows. Same values as `gather_rows`,
    /// `scale_rows` and `scatter_add_rows` without the `E x h` messages.
    pub fn weighted_scatter(&mut self, x: Var, alpha: Var, src: &Index, dst: &Index, n_rows: usize) -> KernelResult<Var> {
        let (tx, ta) = (self.value(x), self.value(alpha));
        if ta.shape() != (src.len(), 1) || src.len() != dst.len() {
            return Err(KernelError::Shape {
                op: "weighted_scatter",
                lhs: tx.shape(),
                rhs: ta.shape(),
            });
        }
        check_index("weighted_scatter", src, tx.rows())?;
        check_index("weighted_scatter", dst, n_rows)?;
        let mut out = Tensor::zeros(n_rows, tx.cols());
        for ((&u, &v), &w) in src.iter().zip(dst.iter()).zip(ta.data()) {
            for (o, &xi) in out.row_mut(v).iter_mut().zip(tx.row(u)) {
                *o += xi * w;
            }
        }
        let ng = self.needs(x) || self.needs(alpha);
        let op = Op::WeightedScatter {
            x,
            alpha,
            src: src.clone(),
            dst: dst.clone(),
        };
        self.push("weighted_scatter", out, op, ng)
    }

    /// Per-row inner product, giving a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> KernelResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_shape("row_dot", ta, tb)?;
        let data = (0..ta.rows()).map(|r| dot(ta.row(r), tb.row(r))).collect();
        let out = Tensor::new(ta.rows(), 1, data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("row_dot", out, Op::RowDot(a, b), ng)
    }

    /// Scales every row to unit Euclidean norm. All-zero rows stay zero and
    /// pass no gradient.
    pub fn l2_normalize_rows(&mut self, x: Var) -> KernelResult<Var> {
        let tx = self.value(x);
        let mut out = tx.clone();
        for r in 0..tx.rows() {
            let norm = dot(tx.row(r), tx.row(r)).sqrt();
            if norm > 0.0 {
                out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
            }
        }
        let ng = self.needs(x);
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> KernelResult<Var> {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> KernelResult<Var> {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(x);
        self.push("mean", Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// For every row `v` of `s`, `sum_k exp(inv_tau * <s_v, s_j>)` over the
    /// `per_row` indices `j = pool[v * per_row + k]`. Rows are processed in
    /// blocks of `chunk_rows`, so at most `chunk_rows * per_row` similarity
    /// values are live at once; neither pass materialises the gathered
    /// `rows * per_row * cols` tensor.
    ///
    /// The result does not depend on `chunk_rows`: every row's terms are
    /// summed in pool order and gradients are merged in row order.
    pub fn exp_similarity_sum(&mut self, s: Var, pool: &Index, per_row: usize, inv_tau: f64, chunk_rows: usize) -> KernelResult<Var> {
        let ts = self.value(s);
        let n = ts.rows();
        if pool.len() != n * per_row {
            return Err(KernelError::Shape {
                op: "exp_similarity_sum",
                lhs: ts.shape(),
                rhs: (pool.len(), per_row),
            });
        }
        check_index("exp_similarity_sum", pool, n)?;
        let chunk_rows = chunk_rows.max(1);
        let mut out = vec![0.0; n];
        let mut block = Vec::with_capacity(chunk_rows.min(n) * per_row);
        for start in (0..n).step_by(chunk_rows) {
            let end = (start + chunk_rows).min(n);
            block.clear();
            for v in start..end {
                let sv = ts.row(v);
                for &j in &pool[v * per_row..(v + 1) * per_row] {
                    block.push((inv_tau * dot(sv, ts.row(j))).exp());
                }
            }
            for (v, terms) in (start..end).zip(block.chunks_exact(per_row.max(1))) {
                out[v] = terms.iter().sum();
            }
        }
        let out = Tensor::new(n, 1, out)?;
        let ng = self.needs(s);
        self.push(
            "exp_similarity_sum",
            out,
            Op::ExpSimilaritySum {
                s,
                pool: pool.clone(),
                per_row,
                inv_tau,
                chunk_rows,
            },
            ng,
        )
    }

    /// Accumulates d`loss`/d`x` into every node that depends on a leaf.
    pub fn backward(&mut self, loss: Var) -> KernelResult<()> {
        if self.backward_done {
            return Err(KernelError::BackwardTwice);
        }
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(KernelError::NotScalar { rows, cols });
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(gout) = self.nodes[id].grad.take() else {
                continue;
            };
            self.propagate(id, &gout);
            self.nodes[id].grad = Some(gout);
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, g: &Tensor) {
        // Inputs always precede outputs on the tape, so splitting at `id`
        // lets us read the output value while mutating input gradients.
        let (before, rest) = self.nodes.split_at_mut(id);
        let node = &rest[0];
        let out = &node.value;
        let grad_of = |before: &mut [Node], v: Var, f: &mut dyn FnMut(&[Node], &mut Tensor)| {
            if !before[v.0].needs_grad {
                return;
            }
            let shape = before[v.0].value.shape();
            let mut slot = before[v.0].grad.take();
            {
                let gt = slot.get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
                f(before, gt);
            }
            before[v.0].grad = slot;
        };
        // d(out)/d(v) is the identity: the first contribution is a copy.
        let pass_through = |before: &mut [Node], v: Var| {
            if !before[v.0].needs_grad {
                return;
            }
            match &mut before[v.0].grad {
                Some(gv) => axpy(1.0, g.data(), gv.data_mut()),
                slot @ None => *slot = Some(g.clone()),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                grad_of(before, a, &mut |nodes, ga| {
                    let tb = &nodes[b.0].value;
                    gemm(g.data(), g.rows(), g.cols(), false, tb.data(), tb.rows(), tb.cols(), true, ga.data_mut(), 1.0);
                });
                grad_of(before, b, &mut |nodes, gb| {
                    let ta = &nodes[a.0].value;
                    gemm(ta.data(), ta.rows(), ta.cols(), true, g.data(), g.rows(), g.cols(), false, gb.data_mut(), 1.0);
                });
            }
            Op::AddBias(a, bias) => {
                pass_through(before, *a);
                grad_of(before, *bias, &mut |_, gb| {
                    let cols = g.cols();
                    if cols > 0 {
                        for row in g.data().chunks_exact(cols) {
                            axpy(1.0, row, gb.data_mut());
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                pass_through(before, *a);
                pass_through(before, *b);
            }
            Op::Sub(a, b) => {
                pass_through(before, *a);
                grad_of(before, *b, &mut |_, gb| axpy(-1.0, g.data(), gb.data_mut()));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                grad_of(before, a, &mut |nodes, ga| {
                    let tb = &nodes[b.0].value;
                    for ((x, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *x += gi * bi;
                    }
                });
                grad_of(before, b, &mut |nodes, gb| {
                    let ta = &nodes[a.0].value;
                    for ((x, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *x += gi * ai;
                    }
                });
            }
            Op::AddScalar(a) => {
                grad_of(before, *a, &mut |_, ga| axpy(1.0, g.data(), ga.data_mut()));
            }
            Op::Scale(a, s) => {
                let s = *s;
                grad_of(before, *a, &mut |_, ga| axpy(s, g.data(), ga.data_mut()));
            }
            Op::Tanh(a) => {
                grad_of(before, *a, &mut |_, ga| {
                    for ((x, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += gi * (1.0 - y * y);
                    }
                });
            }
            Op::Exp(a) => {
                grad_of(before, *a, &mut |_, ga| {
                    for ((x, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += gi * y;
                    }
                });
            }
            Op::Log(a) => {
                let a = *a;
                grad_of(before, a, &mut |nodes, ga| {
                    let ta = &nodes[a.0].value;
                    for ((x, gi), xi) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *x += gi / xi;
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                grad_of(before, a, &mut |_, ga| {
                    let ca = ga.cols();
                    for r in 0..ga.rows() {
                        axpy(1.0, &g.row(r)[..ca], ga.row_mut(r));
                    }
                });
                grad_of(before, b, &mut |nodes, gb| {
                    let ca = nodes[a.0].value.cols();
                    for r in 0..gb.rows() {
                        axpy(1.0, &g.row(r)[ca..], gb.row_mut(r));
                    }
                });
            }
            Op::GatherRows(x, index) => {
                grad_of(before, *x, &mut |_, gx| {
                    for (r, &i) in index.iter().enumerate() {
                        axpy(1.0, g.row(r), gx.row_mut(i));
                    }
                });
            }
            Op::ScatterAddRows(x, index) => {
                grad_of(before, *x, &mut |_, gx| {
                    for (r, &i) in index.iter().enumerate() {
                        axpy(1.0, g.row(i), gx.row_mut(r));
                    }
                });
            }
            Op::SegmentSoftmax(scores, segment) => {
                let n_seg = segment.iter().max().map_or(0, |m| m + 1);
                let mut weighted = vec![0.0; n_seg];
                for ((&y, &gi), &s) in out.data().iter().zip(g.data()).zip(segment.iter()) {
                    weighted[s] += y * gi;
                }
                grad_of(before, *scores, &mut |_, gs| {
                    for (((x, &y), &gi), &s) in gs
                        .data_mut()
                        .iter_mut()
                        .zip(out.data())
                        .zip(g.data())
                        .zip(segment.iter())
                    {
                        *x += y * (gi - weighted[s]);
                    }
                });
            }
            Op::ScaleRows(x, w) => {
                let (x, w) = (*x, *w);
                grad_of(before, x, &mut |nodes, gx| {
                    let tw = &nodes[w.0].value;
                    for r in 0..gx.rows() {
                        axpy(tw.data()[r], g.row(r), gx.row_mut(r));
                    }
                });
                grad_of(before, w, &mut |nodes, gw| {
                    let tx = &nodes[x.0].value;
                    for r in 0..tx.rows() {
                        gw.data_mut()[r] += dot(g.row(r), tx.row(r));
                    }
                });
            }
            Op::EdgeScores {
                a,
                b,
                bias,
                w,
                src,
                dst,
                hidden,
            } => {
                let (a, b, bias, w) = (*a, *b, *bias, *w);
                let h = hidden.cols();
                // Gradient of the pre-activation for edge `e`, written into `d`.
                let pre = |nodes: &[Node], e: usize, d: &mut [f64]| {
                    let tw = nodes[w.0].value.data();
                    let ge = g.data()[e];
                    for ((di, &t), &wk) in d.iter_mut().zip(hidden.row(e)).zip(tw) {
                        *di = ge * wk * (1.0 - t * t);
                    }
                };
                let mut d = vec![0.0; h];
                grad_of(before, w, &mut |_, gw| {
                    for e in 0..hidden.rows() {
                        axpy(g.data()[e], hidden.row(e), gw.data_mut());
                    }
                });
                grad_of(before, bias, &mut |nodes, gb| {
                    for e in 0..hidden.rows() {
                        pre(nodes, e, &mut d);
                        axpy(1.0, &d, gb.data_mut());
                    }
                });
                grad_of(before, a, &mut |nodes, ga| {
                    for (e, &u) in src.iter().enumerate() {
                        pre(nodes, e, &mut d);
                        axpy(1.0, &d, ga.row_mut(u));
                    }
                });
                grad_of(before, b, &mut |nodes, gb| {
                    for (e, &v) in dst.iter().enumerate() {
                        pre(nodes, e, &mut d);
                        axpy(1.0, &d, gb.row_mut(v));
                    }
                });
            }
            Op::WeightedScatter { x, alpha, src, dst } => {
                let (x, alpha) = (*x, *alpha);
                grad_of(before, x, &mut |nodes, gx| {
                    let ta = nodes[alpha.0].value.data();
                    for ((&u, &v), &w) in src.iter().zip(dst.iter()).zip(ta) {
                        axpy(w, g.row(v), gx.row_mut(u));
                    }
                });
                grad_of(before, alpha, &mut |nodes, ga| {
                    let tx = &nodes[x.0].value;
                    for (e, (&u, &v)) in src.iter().zip(dst.iter()).enumerate() {
                        ga.data_mut()[e] += dot(tx.row(u), g.row(v));
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (a, b) = (*a, *b);
                grad_of(before, a, &mut |nodes, ga| {
                    let tb = &nodes[b.0].value;
                    for r in 0..tb.rows() {
                        axpy(g.data()[r], tb.row(r), ga.row_mut(r));
                    }
                });
                grad_of(before, b, &mut |nodes, gb| {
                    let ta = &nodes[a.0].value;
                    for r in 0..ta.rows() {
                        axpy(g.data()[r], ta.row(r), gb.row_mut(r));
                    }
                });
            }
            Op::L2NormalizeRows(x) => {
                let x = *x;
                grad_of(before, x, &mut |nodes, gx| {
                    let tx = &nodes[x.0].value;
                    for r in 0..tx.rows() {
                        let norm = dot(tx.row(r), tx.row(r)).sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let y = out.row(r);
                        let gy = g.row(r);
                        let proj = dot(y, gy);
                        for ((d, &yi), &gi) in gx.row_mut(r).iter_mut().zip(y).zip(gy) {
                            *d += (gi - yi * proj) / norm;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gi = g.item();
                grad_of(before, *x, &mut |_, gx| gx.data_mut().iter_mut().for_each(|v| *v += gi));
            }
            Op::Mean(x) => {
                let x = *x;
                grad_of(before, x, &mut |_, gx| {
                    let gi = g.item() / gx.len() as f64;
                    gx.data_mut().iter_mut().for_each(|v| *v += gi);
                });
            }
            Op::ExpSimilaritySum {
                s,
                pool,
                per_row,
                inv_tau,
                chunk_rows,
            } => {
                let (s, per_row, inv_tau, chunk_rows) = (*s, *per_row, *inv_tau, *chunk_rows);
                grad_of(before, s, &mut |nodes, gs| {
                    let ts = &nodes[s.0].value;
                    let n = ts.rows();
                    let mut coef = Vec::with_capacity(chunk_rows.min(n) * per_row);
                    for start in (0..n).step_by(chunk_rows) {
                        let end = (start + chunk_rows).min(n);
                        coef.clear();
                        for v in start..end {
                            let sv = ts.row(v);
                            let gv = g.data()[v] * inv_tau;
                            for &j in &pool[v * per_row..(v + 1) * per_row] {
                                coef.push(gv * (inv_tau * dot(sv, ts.row(j))).exp());
                            }
                        }
                        for (v, cs) in (start..end).zip(coef.chunks_exact(per_row.max(1))) {
                            for (&j, &c) in pool[v * per_row..(v + 1) * per_row].iter().zip(cs) {
                                axpy(c, ts.row(j), gs.row_mut(v));
                                axpy(c, ts.row(v), gs.row_mut(j));
                            }
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{finite_difference_check, random_tensor};
    use crate::Rng;

    fn idx(v: &[usize]) -> Index {
        Arc::from(v)
    }

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x).unwrap();
        assert_eq!(t.value(y).item(), 0.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 1.0);
    }

    #[test]
    fn single_edge_softmax_is_one() {
        let mut t = Tape::new();
        let s = t.leaf(Tensor::new(3, 1, vec![-40.0, 3.0, 17.5]).unwrap());
        let y = t.segment_softmax(s, &idx(&[0, 1, 1]), 2).unwrap();
        assert_eq!(t.value(y).data()[0], 1.0);
        let d = t.value(y).data();
        assert!((d[1] + d[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_twice_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let y = t.scale(x, 3.0).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.backward(y), Err(KernelError::BackwardTwice));
        t.reset();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 3.0);
    }

    #[test]
    fn non_scalar_backward_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(KernelError::NotScalar { .. })));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3));
        let b = t.leaf(Tensor::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(KernelError::Shape { .. })));
        let i = idx(&[0, 5]);
        assert!(matches!(t.gather_rows(a, &i), Err(KernelError::Index { .. })));
    }

    #[cfg(debug_assertions)]
    #[test]
    fn nan_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(-1.0));
        assert_eq!(t.log(x), Err(KernelError::NonFinite { op: "log" }));
    }

    #[test]
    fn matmul_sum_gradient_matches_fd() {
        let mut rng = Rng::new(3);
        let a = random_tensor(&mut rng, 3, 4, 1.0);
        let b = random_tensor(&mut rng, 4, 2, 1.0);
        let err = finite_difference_check(&[a, b], 1e-4, |t, v| {
            let c = t.matmul(v[0], v[1])?;
            t.sum(c)
        });
        assert!(err < 1e-5, "{err}");
    }

    /// Value and input gradients of `build` for leaves `inputs`.
    fn eval(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> KernelResult<Var>) -> (Tensor, Vec<Tensor>) {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let y = build(&mut t, &vars).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        (t.value(y).clone(), vars.iter().map(|&v| t.grad(v).unwrap().clone()).collect())
    }

    fn assert_close(a: &Tensor, b: &Tensor) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn fused_edge_ops_match_composition() {
        let mut rng = Rng::new(11);
        let (src, dst) = (idx(&[0, 3, 3, 1, 2, 0]), idx(&[2, 0, 1, 1, 0, 2]));
        let inputs = [
            random_tensor(&mut rng, 4, 3, 1.0),
            random_tensor(&mut rng, 3, 3, 1.0),
            random_tensor(&mut rng, 1, 3, 1.0),
            random_tensor(&mut rng, 3, 1, 1.0),
        ];
        let fused = eval(&inputs, |t, v| t.edge_scores(v[0], v[1], v[2], v[3], &src, &dst));
        let composed = eval(&inputs, |t, v| {
            let a = t.gather_rows(v[0], &src)?;
            let b = t.gather_rows(v[1], &dst)?;
            let h = t.add(a, b)?;
            let h = t.add_bias(h, v[2])?;
            let h = t.tanh(h)?;
            t.matmul(h, v[3])
        });
        assert_close(&fused.0, &composed.0);
        fused.1.iter().zip(&composed.1).for_each(|(a, b)| assert_close(a, b));

        let inputs = [random_tensor(&mut rng, 4, 3, 1.0), random_tensor(&mut rng, 6, 1, 1.0)];
        let fused = eval(&inputs, |t, v| t.weighted_scatter(v[0], v[1], &src, &dst, 3));
        let composed = eval(&inputs, |t, v| {
            let m = t.gather_rows(v[0], &src)?;
            let m = t.scale_rows(m, v[1])?;
            t.scatter_add_rows(m, &dst, 3)
        });
        assert_eq!(fused.0, composed.0);
        fused.1.iter().zip(&composed.1).for_each(|(a, b)| assert_close(a, b));
    }

    #[test]
    fn l2_zero_row_maps_to_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap());
        let y = t.l2_normalize_rows(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 0.6, 0.8]);
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(&t.grad(x).unwrap().data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn exp_similarity_sum_chunk_independent() {
        let mut rng = Rng::new(11);
        let s = random_tensor(&mut rng, 9, 3, 1.0);
        let pool: Vec<usize> = (0..9 * 4).map(|_| rng.below(9)).collect();
        let pool = idx(&pool);
        let run = |chunk: usize| {
            let mut t = Tape::new();
            let v = t.leaf(s.clone());
            let y = t.exp_similarity_sum(v, &pool, 4, 2.0, chunk).unwrap();
            let l = t.sum(y).unwrap();
            t.backward(l).unwrap();
            (t.value(y).clone(), t.grad(v).unwrap().clone())
        };
        let full = run(9);
        for c in [1, 2, 4, 100] {
            assert_eq!(run(c), full);
        }
    }
}
