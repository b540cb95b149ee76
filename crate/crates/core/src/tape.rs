//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients for every node that transitively depends on a
//! trainable leaf.

use std::sync::Arc;

use crate::matrix::{gemm_into, Csr, Matrix};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct GruCache<T> {
    r: Matrix<T>,
    z: Matrix<T>,
    n: Matrix<T>,
    /// Hidden-side candidate pre-activation `h * W_hn + b_hn`.
    hn: Matrix<T>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Adds a `1 x cols` row to every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SpMM(Arc<Csr<T>>, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    Mean(Vec<Var>),
    Gru {
        x: Var,
        h: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        cache: Box<GruCache<T>>,
    },
    /// Scalar output whose partial derivatives were computed during the
    /// forward pass.
    Local(Vec<(Var, Matrix<T>)>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "bias must be a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "bias width mismatch");
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `x * w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, alpha: T) -> Var {
        let value = self.value(a).map(|x| x * alpha);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, alpha), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Constant sparse matrix times a dense node.
    pub fn spmm(&mut self, sparse: Arc<Csr<T>>, a: Var) -> Var {
        let value = sparse.mul_dense(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SpMM(sparse, a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "nothing to concatenate");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "row mismatch in concat");
                let w = src.cols();
                value.row_mut(r)[offset..offset + w].copy_from_slice(src.row(r));
                offset += w;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Var {
        let src = self.value(a);
        let mut value = Matrix::zeros(index.len(), src.cols());
        for (i, &j) in index.iter().enumerate() {
            value.row_mut(i).copy_from_slice(src.row(j));
        }
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, index), rg)
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean of nothing");
        let inv = T::one() / T::from_usize_lossy(parts.len());
        let mut value = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            value.add_assign(self.value(p));
        }
        value.scale(inv);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Mean(parts.to_vec()), rg)
    }

    /// One gated recurrent step over a batch of rows.
    ///
    /// `w_ih` is `in x 3h`, `w_hh` is `h x 3h`, biases are `1 x 3h`; the
    /// three column blocks are the reset, update and candidate gates:
    ///
    /// ```text
    /// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
    /// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
    /// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    /// h' = (1 - z) * n + z * h
    /// ```
    pub fn gru_cell(&mut self, x: Var, h: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Var {
        let xv = self.value(x);
        let hv = self.value(h);
        let hid = hv.cols();
        let rows = xv.rows();
        assert_eq!(hv.rows(), rows, "gru batch mismatch");
        assert_eq!(self.value(w_ih).shape(), (xv.cols(), 3 * hid), "w_ih shape");
        assert_eq!(self.value(w_hh).shape(), (hid, 3 * hid), "w_hh shape");
        assert_eq!(self.value(b_ih).shape(), (1, 3 * hid), "b_ih shape");
        assert_eq!(self.value(b_hh).shape(), (1, 3 * hid), "b_hh shape");

        let mut gi = Matrix::zeros(rows, 3 * hid);
        gemm_into(xv, false, self.value(w_ih), false, T::one(), T::zero(), &mut gi);
        let mut gh = Matrix::zeros(rows, 3 * hid);
        gemm_into(hv, false, self.value(w_hh), false, T::one(), T::zero(), &mut gh);
        let bi = self.value(b_ih).as_slice();
        let bh = self.value(b_hh).as_slice();

        let mut r = Matrix::zeros(rows, hid);
        let mut z = Matrix::zeros(rows, hid);
        let mut n = Matrix::zeros(rows, hid);
        let mut hn = Matrix::zeros(rows, hid);
        let mut out = Matrix::zeros(rows, hid);
        for i in 0..rows {
            let gi_row = gi.row(i);
            let gh_row = gh.row(i);
            let h_row = hv.row(i);
            for j in 0..hid {
                let rv = sigmoid(gi_row[j] + bi[j] + gh_row[j] + bh[j]);
                let zv = sigmoid(gi_row[hid + j] + bi[hid + j] + gh_row[hid + j] + bh[hid + j]);
                let hnv = gh_row[2 * hid + j] + bh[2 * hid + j];
                let nv = (gi_row[2 * hid + j] + bi[2 * hid + j] + rv * hnv).tanh();
                r[(i, j)] = rv;
                z[(i, j)] = zv;
                n[(i, j)] = nv;
                hn[(i, j)] = hnv;
                out[(i, j)] = (T::one() - zv) * nv + zv * h_row[j];
            }
        }
        let rg = [x, h, w_ih, w_hh, b_ih, b_hh].iter().any(|&v| self.rg(v));
        self.push(
            out,
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache: Box::new(GruCache { r, z, n, hn }),
            },
            rg,
        )
    }

    /// Scalar node with caller-supplied partial derivatives.
    pub fn custom_scalar(&mut self, value: T, partials: Vec<(Var, Matrix<T>)>) -> Var {
        for (v, g) in &partials {
            assert_eq!(self.value(*v).shape(), g.shape(), "partial shape mismatch");
        }
        let rg = partials.iter().any(|(v, _)| self.rg(*v));
        let partials = partials.into_iter().filter(|(v, _)| self.rg(*v)).collect();
        self.push(Matrix::scalar(value), Op::Local(partials), rg)
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut total = T::zero();
        let mut partials = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            total += w * self.value(v).item();
            partials.push((v, Matrix::scalar(w)));
        }
        self.custom_scalar(total, partials)
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let total = v.as_slice().iter().map(|&x| x * x).sum();
        let two = T::one() + T::one();
        let grad = v.map(|x| two * x);
        self.custom_scalar(total, vec![(a, grad)])
    }

    /// Sum of absolute values; the subgradient at zero is taken as zero.
    pub fn sum_abs(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let total = v.as_slice().iter().map(|&x| x.abs()).sum();
        let grad = v.map(|x| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        });
        self.custom_scalar(total, vec![(a, grad)])
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let one = T::one();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let buf = acc(grads, *a, self.value(*a).shape());
                    gemm_into(g, false, self.value(*b), true, one, one, buf);
                }
                if self.rg(*b) {
                    let buf = acc(grads, *b, self.value(*b).shape());
                    gemm_into(self.value(*a), true, g, false, one, one, buf);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        acc(grads, v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.shape()).add_assign(g);
                }
                if self.rg(*b) {
                    acc(grads, *b, g.shape()).axpy(-one, g);
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    acc(grads, *a, g.shape()).add_assign(g);
                }
                if self.rg(*row) {
                    acc(grads, *row, (1, g.cols())).add_assign(&g.col_sums());
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.zip_map(self.value(*b), |x, y| x * y);
                    acc(grads, *a, g.shape()).add_assign(&d);
                }
                if self.rg(*b) {
                    let d = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(grads, *b, g.shape()).add_assign(&d);
                }
            }
            Op::Scale(a, alpha) => {
                acc(grads, *a, g.shape()).axpy(*alpha, g);
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |x, y| if y > T::zero() { x } else { T::zero() });
                acc(grads, *a, g.shape()).add_assign(&d);
            }
            Op::Tanh(_) | Op::Sigmoid(_) => {
                let (a, d) = match &node.op {
                    Op::Tanh(a) => (*a, g.zip_map(&node.value, |x, y| x * (one - y * y))),
                    Op::Sigmoid(a) => (*a, g.zip_map(&node.value, |x, y| x * y * (one - y))),
                    _ => unreachable!(),
                };
                acc(grads, a, g.shape()).add_assign(&d);
            }
            Op::SpMM(sparse, a) => {
                let d = sparse.transpose_mul_dense(g);
                acc(grads, *a, d.shape()).add_assign(&d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let buf = acc(grads, p, (g.rows(), w));
                        for r in 0..g.rows() {
                            for (o, &x) in buf.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += x;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let shape = self.value(*a).shape();
                let buf = acc(grads, *a, shape);
                for r in 0..g.rows() {
                    for (o, &x) in buf.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::GatherRows(a, index) => {
                let shape = self.value(*a).shape();
                let buf = acc(grads, *a, shape);
                for (i, &j) in index.iter().enumerate() {
                    for (o, &x) in buf.row_mut(j).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
            }
            Op::Mean(parts) => {
                let inv = one / T::from_usize_lossy(parts.len());
                for &p in parts {
                    if self.rg(p) {
                        acc(grads, p, g.shape()).axpy(inv, g);
                    }
                }
            }
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                cache,
            } => self.gru_backward(g, [*x, *h, *w_ih, *w_hh, *b_ih, *b_hh], cache, grads),
            Op::Local(partials) => {
                let up = g.item();
                for (v, d) in partials {
                    acc(grads, *v, d.shape()).axpy(up, d);
                }
            }
        }
    }

    fn gru_backward(
        &self,
        g: &Matrix<T>,
        [x, h, w_ih, w_hh, b_ih, b_hh]: [Var; 6],
        cache: &GruCache<T>,
        grads: &mut [Option<Matrix<T>>],
    ) {
        let one = T::one();
        let rows = g.rows();
        let hid = g.cols();
        let hv = self.value(h);
        let mut dgi = Matrix::zeros(rows, 3 * hid);
        let mut dgh = Matrix::zeros(rows, 3 * hid);
        let mut dh_direct = Matrix::zeros(rows, hid);
        for i in 0..rows {
            for j in 0..hid {
                let gv = g[(i, j)];
                let r = cache.r[(i, j)];
                let z = cache.z[(i, j)];
                let n = cache.n[(i, j)];
                let hn = cache.hn[(i, j)];
                let dz = gv * (hv[(i, j)] - n);
                let dn = gv * (one - z);
                dh_direct[(i, j)] = gv * z;
                let dan = dn * (one - n * n);
                let dr = dan * hn;
                let dar = dr * r * (one - r);
                let daz = dz * z * (one - z);
                dgi[(i, j)] = dar;
                dgi[(i, hid + j)] = daz;
                dgi[(i, 2 * hid + j)] = dan;
                dgh[(i, j)] = dar;
                dgh[(i, hid + j)] = daz;
                dgh[(i, 2 * hid + j)] = dan * r;
            }
        }
        if self.rg(x) {
            let buf = acc(grads, x, self.value(x).shape());
            gemm_into(&dgi, false, self.value(w_ih), true, one, one, buf);
        }
        if self.rg(h) {
            let buf = acc(grads, h, hv.shape());
            buf.add_assign(&dh_direct);
            gemm_into(&dgh, false, self.value(w_hh), true, one, one, buf);
        }
        if self.rg(w_ih) {
            let buf = acc(grads, w_ih, self.value(w_ih).shape());
            gemm_into(self.value(x), true, &dgi, false, one, one, buf);
        }
        if self.rg(w_hh) {
            let buf = acc(grads, w_hh, self.value(w_hh).shape());
            gemm_into(hv, true, &dgh, false, one, one, buf);
        }
        if self.rg(b_ih) {
            acc(grads, b_ih, (1, 3 * hid)).add_assign(&dgi.col_sums());
        }
        if self.rg(b_hh) {
            acc(grads, b_hh, (1, 3 * hid)).add_assign(&dgh.col_sums());
        }
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, shape: (usize, usize)) -> &mut Matrix<T> {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the output w.r.t. `v`, or `None` when `v` does not
    /// influence it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
