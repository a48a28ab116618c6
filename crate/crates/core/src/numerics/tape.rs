use super::matrix::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{log_softmax_in_place, sigmoid_scalar, softmax_in_place, Matrix, LOG_FLOOR};
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
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// (r×c) plus a (1×c) row broadcast over every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogClamped(Var),
    Pick(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Sum(Var),
}

struct Node {
    op: Op,
    // `None` for parameters, whose values live in the borrowed slice.
    value: Option<Matrix>,
}

/// Records matrix operations for one reverse-mode sweep.
///
/// Parameters are borrowed, not copied; each parameter tensor gets exactly
/// one leaf node no matter how often it is used, so its adjoint collects
/// every contribution. Nodes are appended in evaluation order, which makes
/// the reverse of the recording order a valid reverse topological order.
pub struct Tape<'p> {
    params: &'p [Matrix],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Error {
    Error::Shape { op, left, right }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    /// A tape with no parameters, for differentiating plain inputs.
    pub fn detached() -> Tape<'static> {
        Tape::new(&[])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        for v in self.param_vars.iter_mut() {
            if v.is_some_and(|var| var.0 >= len) {
                *v = None;
            }
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params[*i],
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Constant input; its adjoint is still available after backward.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Input, value)
    }

    /// Leaf for parameter tensor `index`, created on first use.
    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        matmul_acc(av, bv, &mut out);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av.shape(), rv.shape()));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += x;
            }
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid_scalar);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        if out.cols() == 0 {
            return Err(Error::Domain("softmax of an empty row".into()));
        }
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        Ok(self.push(Op::SoftmaxRows(a), out))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        if out.cols() == 0 {
            return Err(Error::Domain("log-softmax of an empty row".into()));
        }
        for r in 0..out.rows() {
            log_softmax_in_place(out.row_mut(r));
        }
        Ok(self.push(Op::LogSoftmaxRows(a), out))
    }

    /// Elementwise `ln(max(x, LOG_FLOOR))`; clamped entries get zero gradient.
    pub fn log_clamped(&mut self, a: Var) -> Var {
        let out = self.value(a).map(super::clamped_ln);
        self.push(Op::LogClamped(a), out)
    }

    /// The single entry at (`row`, `col`) as a 1×1 value.
    pub fn pick(&mut self, a: Var, row: usize, col: usize) -> Result<Var> {
        let av = self.value(a);
        if row >= av.rows() || col >= av.cols() {
            return Err(shape_err("pick", av.shape(), (row, col)));
        }
        let out = Matrix::filled(1, 1, av.get(row, col));
        Ok(self.push(Op::Pick(a, row, col), out))
    }

    /// Rows of `table` selected by `indices`, in order (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let mut out = Matrix::zeros(indices.len(), tv.cols());
        for (k, &i) in indices.iter().enumerate() {
            if i >= tv.rows() {
                return Err(Error::Domain(format!(
                    "row index {i} out of range for table with {} rows",
                    tv.rows()
                )));
            }
            out.row_mut(k).copy_from_slice(tv.row(i));
        }
        Ok(self.push(Op::GatherRows(table, indices.to_vec()), out))
    }

    /// Single row `r` as a 1×c value.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let av = self.value(a);
        if r >= av.rows() {
            return Err(shape_err("row", av.shape(), (r, 0)));
        }
        let out = Matrix::row_vector(av.row(r));
        Ok(self.push(Op::SliceRows(a, r), out))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(shape_err("slice_cols", av.shape(), (start, len)));
        }
        let mut out = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(shape_err("concat_cols", (rows, cols), pv.shape()));
            }
            cols += pv.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", (rows, cols), pv.shape()));
            }
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out)
    }

    /// Sum of all entries as a 1×1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(shape_err("backward", shape, (1, 1)));
        }
        let mut adj: Vec<Option<Matrix>> = Vec::new();
        adj.resize_with(self.nodes.len(), || None);
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        Ok(Gradients {
            shapes: (0..self.nodes.len()).map(|i| self.value(Var(i)).shape()).collect(),
            adjoints: adj,
            param_vars: self.param_vars.clone(),
            param_shapes: self.params.iter().map(Matrix::shape).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let y = || node.value.as_ref().expect("derived node has a value");
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                matmul_nt_acc(g, bv, slot(adj, *a, av.shape()));
                matmul_tn_acc(av, g, slot(adj, *b, bv.shape()));
            }
            Op::Add(a, b) => {
                slot(adj, *a, g.shape()).add_assign(g);
                slot(adj, *b, g.shape()).add_assign(g);
            }
            Op::Sub(a, b) => {
                slot(adj, *a, g.shape()).add_assign(g);
                let gb = slot(adj, *b, g.shape());
                for (o, &x) in gb.data_mut().iter_mut().zip(g.data()) {
                    *o -= x;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = slot(adj, *a, g.shape());
                for ((o, &x), &w) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                    *o += x * w;
                }
                let gb = slot(adj, *b, g.shape());
                for ((o, &x), &w) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *o += x * w;
                }
            }
            Op::AddRow(a, row) => {
                slot(adj, *a, g.shape()).add_assign(g);
                let gr = slot(adj, *row, (1, g.cols()));
                for r in 0..g.rows() {
                    for (o, &x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = slot(adj, *a, g.shape());
                for (o, &x) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += s * x;
                }
            }
            Op::Tanh(a) => {
                let ga = slot(adj, *a, g.shape());
                for ((o, &x), &t) in ga.data_mut().iter_mut().zip(g.data()).zip(y().data()) {
                    *o += x * (1.0 - t * t);
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(adj, *a, g.shape());
                for ((o, &x), &s) in ga.data_mut().iter_mut().zip(g.data()).zip(y().data()) {
                    *o += x * s * (1.0 - s);
                }
            }
            Op::SoftmaxRows(a) => {
                let yv = y();
                let ga = slot(adj, *a, g.shape());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), yv.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(x, p)| x * p).sum();
                    for ((o, &x), &p) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o += p * (x - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let yv = y();
                let ga = slot(adj, *a, g.shape());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), yv.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((o, &x), &lp) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o += x - lp.exp() * total;
                    }
                }
            }
            Op::LogClamped(a) => {
                let av = self.value(*a);
                let ga = slot(adj, *a, g.shape());
                for ((o, &x), &v) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    if v > LOG_FLOOR {
                        *o += x / v;
                    }
                }
            }
            Op::Pick(a, r, c) => {
                let shape = self.value(*a).shape();
                let ga = slot(adj, *a, shape);
                let cur = ga.get(*r, *c);
                ga.set(*r, *c, cur + g.get(0, 0));
            }
            Op::GatherRows(table, indices) => {
                let shape = self.value(*table).shape();
                let gt = slot(adj, *table, shape);
                for (k, &idx) in indices.iter().enumerate() {
                    for (o, &x) in gt.row_mut(idx).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
            }
            Op::SliceRows(a, r) => {
                let shape = self.value(*a).shape();
                let ga = slot(adj, *a, shape);
                for (o, &x) in ga.row_mut(*r).iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
            Op::SliceCols(a, start) => {
                let shape = self.value(*a).shape();
                let ga = slot(adj, *a, shape);
                for r in 0..g.rows() {
                    let dst = &mut ga.row_mut(r)[*start..*start + g.cols()];
                    for (o, &x) in dst.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape();
                    let gp = slot(adj, p, shape);
                    for r in 0..g.rows() {
                        let src = &g.row(r)[offset..offset + shape.1];
                        for (o, &x) in gp.row_mut(r).iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                    offset += shape.1;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape();
                    let n = shape.0 * shape.1;
                    let src = &g.data()[offset..offset + n];
                    let gp = slot(adj, p, shape);
                    for (o, &x) in gp.data_mut().iter_mut().zip(src) {
                        *o += x;
                    }
                    offset += n;
                }
            }
            Op::Transpose(a) => {
                let ga = slot(adj, *a, (g.cols(), g.rows()));
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let cur = ga.get(c, r);
                        ga.set(c, r, cur + g.get(r, c));
                    }
                }
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                let s = g.get(0, 0);
                slot(adj, *a, shape).data_mut().iter_mut().for_each(|o| *o += s);
            }
        }
    }
}

fn slot(adj: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    adj[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    param_vars: Vec<Option<Var>>,
    param_shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; exactly zero when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.adjoints[v.0] {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Gradient for every parameter tensor, zero for unused ones.
    pub fn params(&self) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = self
            .param_shapes
            .iter()
            .map(|&(r, c)| Matrix::zeros(r, c))
            .collect();
        self.accumulate_params(&mut out);
        out
    }

    /// Adds parameter gradients into `acc`.
    pub fn accumulate_params(&self, acc: &mut [Matrix]) {
        for (slot, var) in acc.iter_mut().zip(&self.param_vars) {
            if let Some(m) = var.and_then(|v| self.adjoints[v.0].as_ref()) {
                slot.add_assign(m);
            }
        }
    }
}
