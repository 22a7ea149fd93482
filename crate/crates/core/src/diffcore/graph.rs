//! Eager reverse-mode differentiation over dense matrices.
//!
//! Every node holds its value at construction time. [`Graph::grad`] walks the
//! tape backwards and expresses each adjoint as new graph nodes, so a gradient
//! is itself differentiable. That is what makes the gradient-penalty term
//! trainable: differentiate the critic w.r.t. its input, build the penalty
//! from that gradient, then differentiate again w.r.t. the critic weights.
//!
//! Second-order correctness holds for every op except [`Graph::softmax_xent`],
//! whose adjoint treats `softmax - onehot` as a constant.

use std::rc::Rc;

use super::matrix::{softmax, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Mul(Var, Var),
    /// Elementwise product with a constant mask.
    MulConst(Var, Rc<Matrix>),
    /// Value is clamped; adjoint passes through the constant mask.
    Clamp(Var, Rc<Matrix>),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Recip(Var),
    Transpose(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    BroadcastScalar(Var),
    Gather(Var, Rc<Vec<usize>>),
    ScatterRows(Var, Rc<Vec<usize>>),
    SoftmaxXent(Var, Rc<Matrix>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// `a` is `n x m`, `row` is `1 x m`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a).add_row(self.value(row));
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, mask: Rc<Matrix>) -> Var {
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
        self.mul_const(a, Rc::new(mask))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let mask = self.value(a).map(|x| if x >= 0.0 { 1.0 } else { -1.0 });
        self.mul_const(a, Rc::new(mask))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let src = self.value(a);
        let mask = src.map(|x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 });
        let v = src.map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, Rc::new(mask)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).data().len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over rows: `n x m -> 1 x m`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_rows();
        self.push(v, Op::SumRows(a))
    }

    /// Sum over columns: `n x m -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_cols();
        self.push(v, Op::SumCols(a))
    }

    /// `1 x m -> rows x m`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), 1);
        let mut v = Matrix::zeros(rows, src.cols());
        for i in 0..rows {
            v.row_mut(i).copy_from_slice(src.data());
        }
        self.push(v, Op::BroadcastRows(a))
    }

    /// `n x 1 -> n x cols`.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.cols(), 1);
        let mut v = Matrix::zeros(src.rows(), cols);
        for i in 0..src.rows() {
            v.row_mut(i).fill(src.data()[i]);
        }
        self.push(v, Op::BroadcastCols(a))
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let s = self.scalar(a);
        self.push(Matrix::filled(rows, cols, s), Op::BroadcastScalar(a))
    }

    /// Row lookup (embedding): output row `i` is `table[idx[i]]`.
    pub fn gather(&mut self, table: Var, idx: Rc<Vec<usize>>) -> Var {
        let v = self.value(table).select_rows(&idx);
        self.push(v, Op::Gather(table, idx))
    }

    /// Adjoint of [`Graph::gather`]: scatter-add rows of `a` into a
    /// `table_rows x m` matrix.
    fn scatter_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, table_rows: usize) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros(table_rows, src.cols());
        for (i, &r) in idx.iter().enumerate() {
            for (o, x) in v.row_mut(r).iter_mut().zip(src.row(i)) {
                *o += x;
            }
        }
        self.push(v, Op::ScatterRows(a, idx))
    }

    /// Per-row cross-entropy `-ln softmax(logits)[target]`, shape `n x 1`.
    /// First-order only.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len());
        let mut delta = Matrix::zeros(l.rows(), l.cols());
        let mut out = Matrix::zeros(l.rows(), 1);
        for (i, &t) in targets.iter().enumerate() {
            let row = l.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            out[(i, 0)] = lse - row[t];
            let p = softmax(row);
            let d = delta.row_mut(i);
            d.copy_from_slice(&p);
            d[t] -= 1.0;
        }
        self.push(out, Op::SoftmaxXent(logits, Rc::new(delta)))
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Returned vars live in this graph and may be differentiated again.
    /// A `wrt` entry that `output` does not depend on gets a zero node.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.value(output).shape(), (1, 1), "grad needs a scalar output");
        let seed = self.constant(Matrix::scalar(1.0));
        self.backprop(output, seed, wrt)
    }

    /// Vector-Jacobian product: gradients of `sum(output * upstream)`.
    pub fn vjp(&mut self, output: Var, upstream: Matrix, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.value(output).shape(), upstream.shape(), "upstream shape mismatch");
        let seed = self.constant(upstream);
        self.backprop(output, seed, wrt)
    }

    fn backprop(&mut self, output: Var, seed: Var, wrt: &[Var]) -> Vec<Var> {
        let end = output.0 + 1;
        let mut needs = vec![false; end];
        for w in wrt {
            if w.0 < end {
                needs[w.0] = true;
            }
        }
        for i in 0..end {
            if needs[i] {
                continue;
            }
            needs[i] = self.inputs(i).iter().any(|v| needs[v.0]);
        }

        let mut adj: Vec<Option<Var>> = vec![None; end];
        adj[output.0] = Some(seed);
        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !needs[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let contributions = self.adjoint(Var(i), &op, g);
            for (input, contrib) in contributions {
                if !needs[input.0] {
                    continue;
                }
                adj[input.0] = Some(match adj[input.0] {
                    Some(prev) => self.add(prev, contrib),
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.value(w).shape();
                    self.constant(Matrix::zeros(r, c))
                }
            })
            .collect()
    }

    fn inputs(&self, i: usize) -> Vec<Var> {
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::MulConst(a, _)
            | Op::Clamp(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Transpose(a)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::BroadcastScalar(a)
            | Op::Gather(a, _)
            | Op::ScatterRows(a, _)
            | Op::SoftmaxXent(a, _) => vec![*a],
        }
    }

    fn adjoint(&mut self, node: Var, op: &Op, g: Var) -> Vec<(Var, Var)> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let bt = self.transpose(*b);
                let da = self.matmul(g, bt);
                let at = self.transpose(*a);
                let db = self.matmul(at, g);
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g), (*b, g)],
            Op::AddRow(a, row) => {
                let dr = self.sum_rows(g);
                vec![(*a, g), (*row, dr)]
            }
            Op::Scale(a, c) => vec![(*a, self.scale(g, *c))],
            Op::AddScalar(a) => vec![(*a, g)],
            Op::Mul(a, b) => {
                let da = self.mul(g, *b);
                let db = self.mul(g, *a);
                vec![(*a, da), (*b, db)]
            }
            Op::MulConst(a, mask) | Op::Clamp(a, mask) => vec![(*a, self.mul_const(g, mask.clone()))],
            Op::Tanh(a) => {
                // 1 - y^2
                let y2 = self.mul(node, node);
                let neg = self.scale(y2, -1.0);
                let d = self.add_scalar(neg, 1.0);
                vec![(*a, self.mul(g, d))]
            }
            Op::Exp(a) => vec![(*a, self.mul(g, node))],
            Op::Sqrt(a) => {
                let r = self.recip(node);
                let half = self.scale(r, 0.5);
                vec![(*a, self.mul(g, half))]
            }
            Op::Recip(a) => {
                let y2 = self.mul(node, node);
                let neg = self.scale(y2, -1.0);
                vec![(*a, self.mul(g, neg))]
            }
            Op::Transpose(a) => vec![(*a, self.transpose(g))],
            Op::SumAll(a) => {
                let (r, c) = self.value(*a).shape();
                vec![(*a, self.broadcast_scalar(g, r, c))]
            }
            Op::SumRows(a) => {
                let r = self.value(*a).rows();
                vec![(*a, self.broadcast_rows(g, r))]
            }
            Op::SumCols(a) => {
                let c = self.value(*a).cols();
                vec![(*a, self.broadcast_cols(g, c))]
            }
            Op::BroadcastRows(a) => vec![(*a, self.sum_rows(g))],
            Op::BroadcastCols(a) => vec![(*a, self.sum_cols(g))],
            Op::BroadcastScalar(a) => vec![(*a, self.sum_all(g))],
            Op::Gather(table, idx) => {
                let rows = self.value(*table).rows();
                vec![(*table, self.scatter_rows(g, idx.clone(), rows))]
            }
            Op::ScatterRows(a, idx) => vec![(*a, self.gather(g, idx.clone()))],
            Op::SoftmaxXent(logits, delta) => {
                let c = delta.cols();
                let gb = self.broadcast_cols(g, c);
                vec![(*logits, self.mul_const(gb, delta.clone()))]
            }
        }
    }
}
