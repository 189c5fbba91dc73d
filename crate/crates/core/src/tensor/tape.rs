use std::sync::Arc;

use super::feast::{self, FeastSaved};
use super::{gemm, Matrix, Real};
use crate::error::{Error, Result};
use crate::mesh::Adjacency;
use crate::sparse::SparseMatrix;

/// Norms below this get a zero gradient in [`Tape::l2_norm`].
pub const NORM_GRAD_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Sqrt(Var),
    L2Norm(Var),
    Sum(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatCols(Var, Var),
    MeanRows(Var),
    BroadcastRow(Var),
    ScaleRows(Var, Var),
    LeakyRelu(Var, T),
    SoftmaxRows(Var),
    Sparse(Var, Arc<SparseMatrix>),
    FeaStConv(Box<FeastSaved<T>>),
}

struct Node<T: Real> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation graph. Confined to one thread; build one tape per
/// forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Operands of a fused feature-steered convolution.
#[derive(Debug, Clone, Copy)]
pub struct FeastInputs {
    /// `N × F_in` vertex features.
    pub x: Var,
    /// `F_in × (M·F_out)`: head `m` occupies columns `m·F_out .. (m+1)·F_out`.
    pub weight: Var,
    /// `F_in × M` steering directions.
    pub steer: Var,
    /// `1 × M` steering offsets.
    pub steer_bias: Var,
    /// `1 × F_out`.
    pub bias: Var,
}

/// Gradients of a scalar with respect to every leaf created with
/// `requires_grad`.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as an `f64` matrix; zeros when the leaf did not influence the
    /// loss.
    pub fn matrix(&self, v: Var) -> Matrix {
        let (r, c) = self.shapes[v.0];
        match self.get(v) {
            Some(g) => Matrix::from_vec(r, c, g.iter().map(|x| x.to_f64()).collect()).unwrap(),
            None => Matrix::zeros(r, c),
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Variables created
    /// after that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, m: &Matrix, requires_grad: bool) -> Var {
        let value = m.as_slice().iter().map(|&x| T::from_f64(x)).collect();
        self.push(m.rows(), m.cols(), value, Op::Leaf, requires_grad)
    }

    pub fn leaf_raw(&mut self, rows: usize, cols: usize, value: Vec<T>, requires_grad: bool) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} leaf", value.len())));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, m: &Matrix) -> Var {
        self.leaf(m, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    pub fn to_matrix(&self, v: Var) -> Matrix {
        let n = self.node(v);
        Matrix::from_vec(n.rows, n.cols, n.value.iter().map(|x| x.to_f64()).collect()).unwrap()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Shape(format!("matmul: {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![T::ZERO; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let g = self.grad_flag(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), g))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let g = self.grad_flag(&[a, b]);
        Ok(self.push(r, c, out, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let g = self.grad_flag(&[a]);
        self.push(r, c, out, op, g)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).iter().find(|&&x| x < T::ZERO) {
            return Err(Error::Domain(format!("sqrt of negative value {bad}")));
        }
        Ok(self.map(a, |x| x.sqrt(), Op::Sqrt(a)))
    }

    /// Euclidean (Frobenius) norm of all entries, as a `1 × 1` tensor.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let s: T = self.value(a).iter().map(|&x| x * x).sum();
        let g = self.grad_flag(&[a]);
        self.push(1, 1, vec![s.sqrt()], Op::L2Norm(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).iter().copied().sum();
        let g = self.grad_flag(&[a]);
        self.push(1, 1, vec![s], Op::Sum(a), g)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::Shape(format!("reshape {r}x{c} to {rows}x{cols}")));
        }
        let out = self.value(a).to_vec();
        let g = self.grad_flag(&[a]);
        Ok(self.push(rows, cols, out, Op::Reshape(a), g))
    }

    /// Row-major flatten to `1 × (rows·cols)`.
    pub fn flatten(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        self.reshape(a, 1, r * c).expect("flatten preserves size")
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {c} columns")));
        }
        let w = end - start;
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let g = self.grad_flag(&[a]);
        Ok(self.push(r, w, out, Op::SliceCols(a, start), g))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ra != rb {
            return Err(Error::Shape(format!("concat_cols: {ra} rows vs {rb} rows")));
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&self.value(a)[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&self.value(b)[i * cb..(i + 1) * cb]);
        }
        let g = self.grad_flag(&[a, b]);
        Ok(self.push(ra, ca + cb, out, Op::ConcatCols(a, b), g))
    }

    /// Column means, `1 × cols`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(Error::Shape("mean_rows of an empty matrix".into()));
        }
        let inv = T::from_f64(1.0 / r as f64);
        let src = self.value(a);
        let mut out = vec![T::ZERO; c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let g = self.grad_flag(&[a]);
        Ok(self.push(1, c, out, Op::MeanRows(a), g))
    }

    /// Repeats a `1 × n` row `rows` times.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(Error::Shape(format!("broadcast_row needs 1 row, got {r}")));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(src);
        }
        let g = self.grad_flag(&[a]);
        Ok(self.push(rows, c, out, Op::BroadcastRow(a), g))
    }

    /// `diag(w) · x` for `x: m × n`, `w: m × 1`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let ((r, c), (rw, cw)) = (self.shape(x), self.shape(w));
        if rw != r || cw != 1 {
            return Err(Error::Shape(format!("scale_rows: {r}x{c} by {rw}x{cw}")));
        }
        let (xs, ws) = (self.value(x), self.value(w));
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(xs[i * c..(i + 1) * c].iter().map(|&v| v * ws[i]));
        }
        let g = self.grad_flag(&[x, w]);
        Ok(self.push(r, c, out, Op::ScaleRows(x, w), g))
    }

    /// `x ↦ x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.map(a, |x| if x >= T::ZERO { x } else { s * x }, Op::LeakyRelu(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            softmax_into(&src[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let g = self.grad_flag(&[a]);
        self.push(r, c, out, Op::SoftmaxRows(a), g)
    }

    /// Sparse-dense product `m · x`.
    pub fn sparse_mul(&mut self, m: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if m.cols() != r {
            return Err(Error::Shape(format!(
                "sparse {}x{} · {r}x{c}",
                m.rows(),
                m.cols()
            )));
        }
        let out = m.mul_dense(self.value(x), c);
        let g = self.grad_flag(&[x]);
        Ok(self.push(m.rows(), c, out, Op::Sparse(x, Arc::clone(m)), g))
    }

    /// Fused feature-steered graph convolution over `adj` with `heads`
    /// attention heads. See [`crate::layers::feastconv`] for the formula.
    pub fn feastconv(&mut self, inp: FeastInputs, adj: &Arc<Adjacency>, heads: usize) -> Result<Var> {
        let (n, f_in) = self.shape(inp.x);
        let check = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Shape(format!("feastconv: {what}")))
            }
        };
        check(heads >= 1, "need at least one head")?;
        check(adj.vertex_count() == n, "adjacency size differs from feature rows")?;
        let (wr, wc) = self.shape(inp.weight);
        check(wr == f_in && wc % heads == 0, "weight must be F_in x (heads*F_out)")?;
        let f_out = wc / heads;
        check(self.shape(inp.steer) == (f_in, heads), "steer must be F_in x heads")?;
        check(self.shape(inp.steer_bias) == (1, heads), "steer bias must be 1 x heads")?;
        check(self.shape(inp.bias) == (1, f_out), "bias must be 1 x F_out")?;

        let (out, saved) = feast::forward(
            inp,
            Arc::clone(adj),
            heads,
            f_out,
            self.value(inp.x),
            self.value(inp.weight),
            self.value(inp.steer),
            self.value(inp.steer_bias),
            self.value(inp.bias),
        );
        let g = self.grad_flag(&[inp.x, inp.weight, inp.steer, inp.steer_bias, inp.bias]);
        Ok(self.push(n, f_out, out, Op::FeaStConv(Box::new(saved)), g))
    }

    /// Reverse pass from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        // Only leaves keep gradients.
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| (n.rows, n.cols)).collect(),
        })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.shape(*a), self.shape(*b));
                if self.node(*a).needs_grad {
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, self.value(*b), true, ga, true);
                }
                if self.node(*b).needs_grad {
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, self.value(*a), true, g, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |x| x);
                self.acc_map(grads, *b, g, |x| x);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |x| x);
                self.acc_map(grads, *b, g, |x| -x);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.node(*a).needs_grad {
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *d += gi * y;
                    }
                }
                if self.node(*b).needs_grad {
                    let gb = slot(grads, *b, g.len());
                    for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(va) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc_map(grads, *a, g, |x| x * s);
            }
            Op::AddScalar(a) | Op::Reshape(a) => self.acc_map(grads, *a, g, |x| x),
            Op::Square(a) => {
                if self.node(*a).needs_grad {
                    let va = self.value(*a);
                    let two = T::from_f64(2.0);
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(va) {
                        *d += two * x * gi;
                    }
                }
            }
            Op::Sqrt(a) => {
                if self.node(*a).needs_grad {
                    let half = T::from_f64(0.5);
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                        if y > T::ZERO {
                            *d += half * gi / y;
                        }
                    }
                }
            }
            Op::L2Norm(a) => {
                let norm = node.value[0];
                if self.node(*a).needs_grad && norm.to_f64() >= NORM_GRAD_FLOOR {
                    let coef = g[0] / norm;
                    let va = self.value(*a);
                    let ga = slot(grads, *a, va.len());
                    for (d, &x) in ga.iter_mut().zip(va) {
                        *d += coef * x;
                    }
                }
            }
            Op::Sum(a) => {
                if self.node(*a).needs_grad {
                    let len = self.value(*a).len();
                    slot(grads, *a, len).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SliceCols(a, start) => {
                if self.node(*a).needs_grad {
                    let (r, c) = self.shape(*a);
                    let w = node.cols;
                    let ga = slot(grads, *a, r * c);
                    for i in 0..r {
                        let dst = &mut ga[i * c + start..i * c + start + w];
                        for (d, &gi) in dst.iter_mut().zip(&g[i * w..(i + 1) * w]) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.shape(*a);
                let cb = self.shape(*b).1;
                let w = ca + cb;
                if self.node(*a).needs_grad {
                    let ga = slot(grads, *a, r * ca);
                    for i in 0..r {
                        for (d, &gi) in ga[i * ca..(i + 1) * ca].iter_mut().zip(&g[i * w..i * w + ca]) {
                            *d += gi;
                        }
                    }
                }
                if self.node(*b).needs_grad {
                    let gb = slot(grads, *b, r * cb);
                    for i in 0..r {
                        for (d, &gi) in gb[i * cb..(i + 1) * cb].iter_mut().zip(&g[i * w + ca..(i + 1) * w]) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                if self.node(*a).needs_grad {
                    let (r, c) = self.shape(*a);
                    let inv = T::from_f64(1.0 / r as f64);
                    let ga = slot(grads, *a, r * c);
                    for i in 0..r {
                        for (d, &gi) in ga[i * c..(i + 1) * c].iter_mut().zip(g) {
                            *d += gi * inv;
                        }
                    }
                }
            }
            Op::BroadcastRow(a) => {
                if self.node(*a).needs_grad {
                    let c = node.cols;
                    let ga = slot(grads, *a, c);
                    for i in 0..node.rows {
                        for (d, &gi) in ga.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::ScaleRows(x, w) => {
                let (r, c) = self.shape(*x);
                let (xs, ws) = (self.value(*x), self.value(*w));
                if self.node(*x).needs_grad {
                    let gx = slot(grads, *x, r * c);
                    for i in 0..r {
                        for (d, &gi) in gx[i * c..(i + 1) * c].iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *d += gi * ws[i];
                        }
                    }
                }
                if self.node(*w).needs_grad {
                    let gw = slot(grads, *w, r);
                    for i in 0..r {
                        let dot: T = g[i * c..(i + 1) * c]
                            .iter()
                            .zip(&xs[i * c..(i + 1) * c])
                            .map(|(&a, &b)| a * b)
                            .sum();
                        gw[i] += dot;
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.node(*a).needs_grad {
                    let slope = *slope;
                    let va = self.value(*a);
                    let ga = slot(grads, *a, g.len());
                    for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(va) {
                        // The kink at 0 takes the negative-side slope.
                        *d += if x > T::ZERO { gi } else { slope * gi };
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.node(*a).needs_grad {
                    let c = node.cols;
                    let ga = slot(grads, *a, g.len());
                    for i in 0..node.rows {
                        let y = &node.value[i * c..(i + 1) * c];
                        let gi = &g[i * c..(i + 1) * c];
                        let dot: T = y.iter().zip(gi).map(|(&a, &b)| a * b).sum();
                        for k in 0..c {
                            ga[i * c + k] += y[k] * (gi[k] - dot);
                        }
                    }
                }
            }
            Op::Sparse(x, m) => {
                if self.node(*x).needs_grad {
                    let (r, c) = self.shape(*x);
                    let gx = slot(grads, *x, r * c);
                    m.mul_transpose_dense_acc(g, c, gx);
                }
            }
            Op::FeaStConv(saved) => {
                let inp = saved.inputs;
                let needs = |v: Var| self.node(v).needs_grad;
                let lens = |v: Var| self.value(v).len();
                let mut outs = feast::Backward {
                    x: needs(inp.x).then(|| vec![T::ZERO; lens(inp.x)]),
                    weight: needs(inp.weight).then(|| vec![T::ZERO; lens(inp.weight)]),
                    steer: needs(inp.steer).then(|| vec![T::ZERO; lens(inp.steer)]),
                    steer_bias: needs(inp.steer_bias).then(|| vec![T::ZERO; lens(inp.steer_bias)]),
                    bias: needs(inp.bias).then(|| vec![T::ZERO; lens(inp.bias)]),
                };
                feast::backward(
                    saved,
                    g,
                    self.value(inp.x),
                    self.value(inp.weight),
                    self.value(inp.steer),
                    &mut outs,
                );
                for (v, buf) in [
                    (inp.x, outs.x),
                    (inp.weight, outs.weight),
                    (inp.steer, outs.steer),
                    (inp.steer_bias, outs.steer_bias),
                    (inp.bias, outs.bias),
                ] {
                    if let Some(buf) = buf {
                        let dst = slot(grads, v, buf.len());
                        for (d, s) in dst.iter_mut().zip(buf) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    fn acc_map(&self, grads: &mut [Option<Vec<T>>], a: Var, g: &[T], f: impl Fn(T) -> T) {
        if !self.node(a).needs_grad {
            return;
        }
        let ga = slot(grads, a, g.len());
        for (d, &gi) in ga.iter_mut().zip(g) {
            *d += f(gi);
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::ZERO; len])
}

pub(crate) fn softmax_into<T: Real>(src: &[T], dst: &mut [T]) {
    let max = src.iter().copied().fold(src[0], T::max);
    let mut total = T::ZERO;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d = *d / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        let cols = rows[0].len();
        Matrix::from_vec(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn matmul_hand_case_and_identity() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(&m(&[&[1.0, 2.0], &[3.0, 4.0]]), false);
        let ones = t.leaf(&m(&[&[1.0], &[1.0]]), false);
        let y = t.matmul(a, ones).unwrap();
        assert_eq!(t.value(y), &[3.0, 7.0]);
        let id = t.leaf(&Matrix::identity(2), false);
        let y = t.matmul(a, id).unwrap();
        assert_eq!(t.value(y), t.value(a));
        assert!(t.matmul(ones, ones).is_err());
    }

    #[test]
    fn leaky_relu_values_and_slopes() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&m(&[&[5.0, -3.0, -2.0, 0.0]]), true);
        let y = t.leaky_relu(x, 0.01);
        assert_eq!(t.value(y)[0], 5.0);
        assert!((t.value(y)[1] + 0.03).abs() < 1e-15);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 0.01, 0.01, 0.01]);
    }

    #[test]
    fn relu_values() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&m(&[&[-1.0, 2.0]]), false);
        let y = t.relu(x);
        assert_eq!(t.value(y), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_closed_forms() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&m(&[&[0.0, 0.0], &[2f64.ln(), 0.0]]), false);
        let y = t.softmax_rows(x);
        let v = t.value(y);
        assert_eq!(&v[..2], &[0.5, 0.5]);
        assert!((v[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(&m(&[&[1000.0, 999.0, -1000.0]]), false);
        let y = t.softmax_rows(x);
        let v = t.value(y);
        assert!(v.iter().all(|p| p.is_finite()));
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn concat_mean_and_norm_hand_cases() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(&m(&[&[1.0], &[2.0]]), false);
        let b = t.leaf(&m(&[&[3.0, 4.0], &[5.0, 6.0]]), false);
        let c = t.concat_cols(a, b).unwrap();
        assert_eq!(t.shape(c), (2, 3));
        assert_eq!(t.value(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let empty = t.leaf(&Matrix::zeros(2, 0), false);
        let same = t.concat_cols(b, empty).unwrap();
        assert_eq!(t.value(same), t.value(b));

        let x = t.leaf(&m(&[&[1.0, 3.0], &[3.0, 5.0]]), false);
        let mean = t.mean_rows(x).unwrap();
        assert_eq!(t.value(mean), &[2.0, 4.0]);

        let v = t.leaf(&m(&[&[3.0, 4.0]]), false);
        let n = t.l2_norm(v);
        assert_eq!(t.scalar(n), 5.0);
    }

    #[test]
    fn sum_gradient_is_all_ones_and_square_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::filled(2, 3, 0.7), true);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0));

        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::filled(1, 1, 3.0), true);
        let y = t.square(x);
        assert_eq!(t.backward(y).unwrap().get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn shared_operand_gradients_accumulate() {
        // y = x·x + 3x through two consumers vs the single-path rewrite x² + 3x.
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::filled(1, 1, 2.0), true);
        let sq = t.mul(x, x).unwrap();
        let lin = t.scale(x, 3.0);
        let y = t.add(sq, lin).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0 * 2.0 + 3.0]);
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::filled(1, 2, -1.0), false);
        assert!(matches!(t.sqrt(x), Err(Error::Domain(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::filled(1, 2, 1.0), true);
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn norm_gradient_zero_at_origin() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::zeros(1, 3), true);
        let n = t.l2_norm(x);
        let g = t.backward(n).unwrap();
        assert_eq!(g.matrix(x).as_slice(), &[0.0, 0.0, 0.0]);
    }
}
