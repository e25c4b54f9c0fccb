//! Matrix-valued reverse-mode autodiff.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are
//! either constants or parameters; only trainable parameter leaves (and
//! the nodes downstream of them) carry gradients, so frozen weights are
//! never differentiated.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use super::params::ParamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a . b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Tanh(Var),
    Silu(Var),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    FoldRows(Var, usize),
    MeanSquare(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients of a scalar with respect to the trainable parameter leaves.
#[derive(Debug, Default)]
pub struct Gradients {
    pub by_param: Vec<(ParamId, Array2<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.by_param.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&mut self, value: Arc<Array2<f64>>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId, value: Arc<Array2<f64>>, trainable: bool) -> Var {
        let v = self.push_arc(value, Op::Leaf, trainable);
        if trainable {
            self.params.push((id, v));
        }
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + &r.row(0);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    /// Multiplies `a` by the `1 x 1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) * k;
        let ng = self.ng(a) || self.ng(s);
        self.push(v, Op::ScaleBy(a, s), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Zero-pads rows to a multiple of `k` and packs each group of `k`
    /// consecutive rows into one row of width `k * cols`.
    pub fn fold_rows(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (r, c) = x.dim();
        let groups = r.div_ceil(k);
        let mut v = Array2::zeros((groups, k * c));
        for i in 0..r {
            let (g, off) = (i / k, i % k);
            v.slice_mut(s![g, off * c..(off + 1) * c]).assign(&x.row(i));
        }
        let ng = self.ng(a);
        self.push(v, Op::FoldRows(a, k), ng)
    }

    pub fn mean_square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.iter().map(|e| e * e).sum::<f64>() / x.len() as f64;
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), v), Op::MeanSquare(a), ng)
    }

    /// Back-propagates from the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[loss.0] = Some(Array2::ones(self.value(loss).raw_dim()));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(e) => *e += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, -g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::ScaleBy(a, s) => {
                    if self.ng(*s) {
                        let ds = (&g * self.value(*a)).sum();
                        acc(&mut grads, *s, Array2::from_elem((1, 1), ds));
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g * self.scalar(*s));
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Silu(a) => {
                    let d = self.value(*a).mapv(|x| {
                        let sg = sigmoid(x);
                        sg * (1.0 + x * (1.0 - sg))
                    });
                    acc(&mut grads, *a, &g * &d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Array2::zeros(y.raw_dim());
                    for ((gr, yr), mut dr) in g.rows().into_iter().zip(y.rows()).zip(d.rows_mut()) {
                        let dot = gr.dot(&yr);
                        dr.assign(&(&yr * &(&gr - dot)));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        if self.ng(*p) {
                            acc(&mut grads, *p, g.slice(s![start..start + rows, ..]).to_owned());
                        }
                        start += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = d.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::FoldRows(a, k) => {
                    let (r, c) = self.value(*a).dim();
                    let mut d = Array2::zeros((r, c));
                    for i in 0..r {
                        let (grp, off) = (i / k, i % k);
                        d.row_mut(i).assign(&g.slice(s![grp, off * c..(off + 1) * c]));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::MeanSquare(a) => {
                    let x = self.value(*a);
                    let k = 2.0 * g[[0, 0]] / x.len() as f64;
                    acc(&mut grads, *a, x * k);
                }
            }
        }

        let by_param = self
            .params
            .iter()
            .map(|&(id, v)| {
                let g = grads[v.0].take().unwrap_or_else(|| Array2::zeros(self.value(v).raw_dim()));
                (id, g)
            })
            .collect();
        Gradients { by_param }
    }
}
