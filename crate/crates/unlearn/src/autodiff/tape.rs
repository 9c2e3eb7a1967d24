//! Reverse-mode differentiation on a Wengert tape of matrix operations.
//!
//! Every operation records its inputs and an eagerly computed value. A
//! backward pass does not write raw numbers into gradient buffers — it
//! *emits new tape operations* that compute the adjoints. Because the
//! emitted operations are themselves differentiable, a gradient obtained
//! from [`Tape::backward`] can feed into further scalar expressions (dot
//! products, cosines) and be differentiated again. Two passes give the
//! second-order derivatives the orthogonality regularizer needs; nothing
//! in the design caps the order.
//!
//! Values are `f64` matrices throughout. Scalars are 1×1 matrices.

use ndarray::{Array2, Axis};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Parameter (differentiable) or constant (opaque) input.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    /// Elementwise product.
    Mul(usize, usize),
    /// Elementwise quotient.
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// `a · b`
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulNT(usize, usize),
    /// `aᵀ · b`
    MatMulTN(usize, usize),
    /// (n,m) + (1,m) broadcast over rows.
    AddRow(usize, usize),
    /// (n,m) + (n,1) broadcast over columns.
    AddCol(usize, usize),
    /// (n,m) × (1,1) broadcast.
    MulScalar(usize, usize),
    /// (1,1) filled out to the recorded value's shape.
    Bcast(usize),
    /// (1,m) replicated down over rows.
    BcastRow(usize),
    /// (n,1) replicated across columns.
    BcastCol(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sqrt(usize),
    /// Clamp into [lo, hi]; gradient passes only strictly inside.
    Clamp(usize, f64, f64),
    /// Total sum → (1,1).
    Sum(usize),
    /// Sum over rows: (n,m) → (1,m).
    SumRows(usize),
    /// Sum over columns: (n,m) → (n,1).
    SumCols(usize),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Evaluation record of expressions over model parameters.
///
/// A tape is cheap to create and meant to live for one evaluation (one
/// training or unlearning step). Evaluation is single-threaded; separate
/// tapes are independent and may run in parallel.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded node.
    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node as a plain scalar.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = &self.nodes[v.0].value;
        assert_eq!(a.dim(), (1, 1), "expected scalar node");
        a[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Differentiable input (a parameter tensor).
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Opaque input; no gradient flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Re-enters a recorded value as a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a.0, b.0), v, self.ng(a.0) || self.ng(b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(Op::Sub(a.0, b.0), v, self.ng(a.0) || self.ng(b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(Op::Mul(a.0, b.0), v, self.ng(a.0) || self.ng(b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(Op::Div(a.0, b.0), v, self.ng(a.0) || self.ng(b.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| -x);
        self.push(Op::Neg(a.0), v, self.ng(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| c * x);
        self.push(Op::Scale(a.0, c), v, self.ng(a.0))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(Op::AddScalar(a.0), v, self.ng(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(Op::MatMul(a.0, b.0), v, self.ng(a.0) || self.ng(b.0))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        self.push(Op::MatMulNT(a.0, b.0), v, self.ng(a.0) || self.ng(b.0))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.t().dot(&self.nodes[b.0].value);
        self.push(Op::MatMulTN(a.0, b.0), v, self.ng(a.0) || self.ng(b.0))
    }

    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        debug_assert_eq!(self.nodes[row.0].value.nrows(), 1);
        let v = &self.nodes[m.0].value + &self.nodes[row.0].value;
        self.push(Op::AddRow(m.0, row.0), v, self.ng(m.0) || self.ng(row.0))
    }

    pub fn add_col(&mut self, m: Var, col: Var) -> Var {
        debug_assert_eq!(self.nodes[col.0].value.ncols(), 1);
        let v = &self.nodes[m.0].value + &self.nodes[col.0].value;
        self.push(Op::AddCol(m.0, col.0), v, self.ng(m.0) || self.ng(col.0))
    }

    pub fn mul_scalar(&mut self, m: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let v = self.nodes[m.0].value.mapv(|x| x * sv);
        self.push(Op::MulScalar(m.0, s.0), v, self.ng(m.0) || self.ng(s.0))
    }

    pub fn bcast(&mut self, s: Var, rows: usize, cols: usize) -> Var {
        let sv = self.scalar(s);
        let v = Array2::from_elem((rows, cols), sv);
        self.push(Op::Bcast(s.0), v, self.ng(s.0))
    }

    pub fn bcast_row(&mut self, row: Var, n: usize) -> Var {
        debug_assert_eq!(self.nodes[row.0].value.nrows(), 1);
        let r = self.nodes[row.0].value.row(0).to_owned();
        let v = Array2::from_shape_fn((n, r.len()), |(_, j)| r[j]);
        self.push(Op::BcastRow(row.0), v, self.ng(row.0))
    }

    pub fn bcast_col(&mut self, col: Var, m: usize) -> Var {
        debug_assert_eq!(self.nodes[col.0].value.ncols(), 1);
        let c = self.nodes[col.0].value.column(0).to_owned();
        let v = Array2::from_shape_fn((c.len(), m), |(i, _)| c[i]);
        self.push(Op::BcastCol(col.0), v, self.ng(col.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(Op::Exp(a.0), v, self.ng(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::ln);
        self.push(Op::Ln(a.0), v, self.ng(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(Op::Tanh(a.0), v, self.ng(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a.0), v, self.ng(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::sqrt);
        self.push(Op::Sqrt(a.0), v, self.ng(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a.0, lo, hi), v, self.ng(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push(Op::Sum(a.0), v, self.ng(a.0))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(Op::SumRows(a.0), v, self.ng(a.0))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::SumCols(a.0), v, self.ng(a.0))
    }

    /// Mean of all entries → (1,1).
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of elementwise products of two equally shaped nodes → (1,1).
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    fn accumulate(&mut self, slot: &mut Option<Var>, contribution: Var) {
        *slot = Some(match *slot {
            None => contribution,
            Some(existing) => self.add(existing, contribution),
        });
    }

    /// Reverse pass from a scalar `output`, returning `∂output/∂wrt` for
    /// each requested leaf as *new tape variables*. Parameters the output
    /// does not depend on get zero-valued constants of matching shape.
    ///
    /// May be called repeatedly on the same tape, including on scalars
    /// built from previously returned adjoints.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(
            self.nodes[output.0].value.dim(),
            (1, 1),
            "backward needs a scalar output"
        );
        let upto = output.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; upto];
        adj[output.0] = Some(self.scalar_const(1.0));

        for i in (0..upto).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            match self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.ng(a) {
                        self.accumulate(&mut adj[a], g);
                    }
                    if self.ng(b) {
                        self.accumulate(&mut adj[b], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(a) {
                        self.accumulate(&mut adj[a], g);
                    }
                    if self.ng(b) {
                        let c = self.neg(g);
                        self.accumulate(&mut adj[b], c);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(a) {
                        let c = self.mul(g, Var(b));
                        self.accumulate(&mut adj[a], c);
                    }
                    if self.ng(b) {
                        let c = self.mul(g, Var(a));
                        self.accumulate(&mut adj[b], c);
                    }
                }
                Op::Div(a, b) => {
                    if self.ng(a) {
                        let c = self.div(g, Var(b));
                        self.accumulate(&mut adj[a], c);
                    }
                    if self.ng(b) {
                        // d(a/b)/db = -a/b² = -y/b
                        let y_over_b = self.div(Var(i), Var(b));
                        let gy = self.mul(g, y_over_b);
                        let c = self.neg(gy);
                        self.accumulate(&mut adj[b], c);
                    }
                }
                Op::Neg(a) => {
                    if self.ng(a) {
                        let c = self.neg(g);
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::Scale(a, k) => {
                    if self.ng(a) {
                        let c = self.scale(g, k);
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::AddScalar(a) => {
                    if self.ng(a) {
                        self.accumulate(&mut adj[a], g);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.ng(a) {
                        let c = self.matmul_nt(g, Var(b));
                        self.accumulate(&mut adj[a], c);
                    }
                    if self.ng(b) {
                        let c = self.matmul_tn(Var(a), g);
                        self.accumulate(&mut adj[b], c);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.ng(a) {
                        let c = self.matmul(g, Var(b));
                        self.accumulate(&mut adj[a], c);
                    }
                    if self.ng(b) {
                        let c = self.matmul_tn(g, Var(a));
                        self.accumulate(&mut adj[b], c);
                    }
                }
                Op::MatMulTN(a, b) => {
                    if self.ng(a) {
                        let c = self.matmul_nt(Var(b), g);
                        self.accumulate(&mut adj[a], c);
                    }
                    if self.ng(b) {
                        let c = self.matmul(Var(a), g);
                        self.accumulate(&mut adj[b], c);
                    }
                }
                Op::AddRow(m, r) => {
                    if self.ng(m) {
                        self.accumulate(&mut adj[m], g);
                    }
                    if self.ng(r) {
                        let c = self.sum_rows(g);
                        self.accumulate(&mut adj[r], c);
                    }
                }
                Op::AddCol(m, cc) => {
                    if self.ng(m) {
                        self.accumulate(&mut adj[m], g);
                    }
                    if self.ng(cc) {
                        let c = self.sum_cols(g);
                        self.accumulate(&mut adj[cc], c);
                    }
                }
                Op::MulScalar(m, s) => {
                    if self.ng(m) {
                        let c = self.mul_scalar(g, Var(s));
                        self.accumulate(&mut adj[m], c);
                    }
                    if self.ng(s) {
                        let c = self.dot(g, Var(m));
                        self.accumulate(&mut adj[s], c);
                    }
                }
                Op::Bcast(s) => {
                    if self.ng(s) {
                        let c = self.sum(g);
                        self.accumulate(&mut adj[s], c);
                    }
                }
                Op::BcastRow(r) => {
                    if self.ng(r) {
                        let c = self.sum_rows(g);
                        self.accumulate(&mut adj[r], c);
                    }
                }
                Op::BcastCol(cc) => {
                    if self.ng(cc) {
                        let c = self.sum_cols(g);
                        self.accumulate(&mut adj[cc], c);
                    }
                }
                Op::Exp(a) => {
                    if self.ng(a) {
                        let c = self.mul(g, Var(i));
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::Ln(a) => {
                    if self.ng(a) {
                        let c = self.div(g, Var(a));
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::Tanh(a) => {
                    if self.ng(a) {
                        // 1 - y²
                        let yy = self.mul(Var(i), Var(i));
                        let nyy = self.neg(yy);
                        let one_m = self.add_scalar(nyy, 1.0);
                        let c = self.mul(g, one_m);
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.ng(a) {
                        // y(1 - y)
                        let ny = self.neg(Var(i));
                        let one_m = self.add_scalar(ny, 1.0);
                        let y1my = self.mul(Var(i), one_m);
                        let c = self.mul(g, y1my);
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::Sqrt(a) => {
                    if self.ng(a) {
                        // 1/(2√a) = 0.5/y
                        let gh = self.scale(g, 0.5);
                        let c = self.div(gh, Var(i));
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    if self.ng(a) {
                        let mask = self.nodes[a]
                            .value
                            .mapv(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
                        let m = self.constant(mask);
                        let c = self.mul(g, m);
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::Sum(a) => {
                    if self.ng(a) {
                        let (r, cdim) = self.nodes[a].value.dim();
                        let c = self.bcast(g, r, cdim);
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::SumRows(a) => {
                    if self.ng(a) {
                        let n = self.nodes[a].value.nrows();
                        let c = self.bcast_row(g, n);
                        self.accumulate(&mut adj[a], c);
                    }
                }
                Op::SumCols(a) => {
                    if self.ng(a) {
                        let m = self.nodes[a].value.ncols();
                        let c = self.bcast_col(g, m);
                        self.accumulate(&mut adj[a], c);
                    }
                }
            }
        }

        wrt.iter()
            .map(|v| match adj[v.0] {
                Some(g) => g,
                None => {
                    let shape = self.nodes[v.0].value.dim();
                    self.constant(Array2::zeros(shape))
                }
            })
            .collect()
    }
}

