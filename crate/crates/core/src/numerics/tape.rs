//! Matrix-valued reverse-mode tape.
//!
//! Nodes are appended in evaluation order; `backward` walks them in reverse
//! and only materialises gradients for nodes that depend on a parameter.

use super::matrix::DenseMatrix;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    SpMatMul(&'a SparseMatrix, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    MulRowBroadcast(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    ClampMin(Var, f64),
    Recip(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var, f64),
    Gather(Var, Vec<(usize, usize)>),
    Sum(Var),
    Mean(Var),
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMatMul(..) => "spmm",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRowBroadcast(..) => "add_row",
            Op::MulRowBroadcast(..) => "mul_row",
            Op::ScaleRows(..) => "scale_rows",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Softplus(..) => "softplus",
            Op::ClampMin(..) => "clamp_min",
            Op::Recip(..) => "recip",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Log(..) => "log",
            Op::Gather(..) => "gather",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

struct Node<'a> {
    value: DenseMatrix,
    op: Op<'a>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    first_nonfinite: Option<(&'static str, usize)>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op<'a>, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some((op.name(), idx));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(idx)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Operation name and index of the first node holding a NaN or infinity.
    pub fn first_nonfinite(&self) -> Option<(&'static str, usize)> {
        self.first_nonfinite
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: DenseMatrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn param(&mut self, m: DenseMatrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    pub fn spmm(&mut self, s: &'a SparseMatrix, x: Var) -> Result<Var> {
        let v = s.matmul(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::SpMatMul(s, x), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// `x + 1·b` for a `1×c` row `b`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "add_row",
                format!("{:?} plus row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut v = xv.clone();
        for i in 0..v.rows() {
            for (o, &c) in v.row_mut(i).iter_mut().zip(bv.data()) {
                *o += c;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(v, Op::AddRowBroadcast(x, b), ng))
    }

    /// `x ⊙ (1·w)` for a `1×c` row `w`.
    pub fn mul_row(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rows() != 1 || wv.cols() != xv.cols() {
            return Err(shape_err(
                "mul_row",
                format!("{:?} times row {:?}", xv.shape(), wv.shape()),
            ));
        }
        let mut v = xv.clone();
        for i in 0..v.rows() {
            for (o, &c) in v.row_mut(i).iter_mut().zip(wv.data()) {
                *o *= c;
            }
        }
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(v, Op::MulRowBroadcast(x, w), ng))
    }

    /// Multiplies row `i` of `x` by `s[i]` for an `n×1` column `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.cols() != 1 || sv.rows() != xv.rows() {
            return Err(shape_err(
                "scale_rows",
                format!("{:?} scaled by {:?}", xv.shape(), sv.shape()),
            ));
        }
        let mut v = xv.clone();
        for i in 0..v.rows() {
            let c = sv.get(i, 0);
            v.row_mut(i).iter_mut().for_each(|o| *o *= c);
        }
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(v, Op::ScaleRows(x, s), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e * c);
        let ng = self.ng(x);
        self.push(v, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(0.0));
        let ng = self.ng(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|e| if e > 0.0 { e } else { slope * e });
        let ng = self.ng(x);
        self.push(v, Op::LeakyRelu(x, slope), ng)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(softplus);
        let ng = self.ng(x);
        self.push(v, Op::Softplus(x), ng)
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        let v = self.value(x).map(|e| e.max(lo));
        let ng = self.ng(x);
        self.push(v, Op::ClampMin(x, lo), ng)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| 1.0 / e);
        let ng = self.ng(x);
        self.push(v, Op::Recip(x), ng)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::Softmax(x), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&e| (e - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|e| *e -= lse);
        }
        let ng = self.ng(x);
        self.push(v, Op::LogSoftmax(x), ng)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).map(|e| e.max(floor).ln());
        let ng = self.ng(x);
        self.push(v, Op::Log(x, floor), ng)
    }

    /// Column of `x[r, c]` for each `(r, c)` in `at`.
    pub fn gather(&mut self, x: Var, at: Vec<(usize, usize)>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&(r, c)) = at.iter().find(|&&(r, c)| r >= xv.rows() || c >= xv.cols()) {
            return Err(shape_err(
                "gather",
                format!("index ({r}, {c}) outside {:?}", xv.shape()),
            ));
        }
        let v = DenseMatrix::column(at.iter().map(|&(r, c)| xv.get(r, c)).collect());
        let ng = self.ng(x);
        Ok(self.push(v, Op::Gather(x, at), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = DenseMatrix::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(v, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = DenseMatrix::scalar(xv.sum() / xv.data().len().max(1) as f64);
        let ng = self.ng(x);
        self.push(v, Op::Mean(x), ng)
    }

    /// Gradients of the scalar `out` with respect to every node that needs one.
    pub fn backward(&self, out: Var) -> Vec<Option<DenseMatrix>> {
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(DenseMatrix::filled(
            self.value(out).rows(),
            self.value(out).cols(),
            1.0,
        ));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g
                            .matmul_t(self.value(*b))
                            .expect("shape checked on forward");
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self
                            .value(*a)
                            .t_matmul(&g)
                            .expect("shape checked on forward");
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::SpMatMul(s, x) => {
                    let gx = s.t_matmul(&g).expect("shape checked on forward");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.zip_map(self.value(*b), |p, q| p * q).unwrap();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = g.zip_map(self.value(*a), |p, q| p * q).unwrap();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRowBroadcast(x, b) => {
                    if self.ng(*b) {
                        let mut gb = DenseMatrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (o, &e) in gb.data_mut().iter_mut().zip(g.row(i)) {
                                *o += e;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.ng(*x) {
                        accumulate(&mut grads, *x, g.clone());
                    }
                }
                Op::MulRowBroadcast(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    if self.ng(*w) {
                        let mut gw = DenseMatrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for ((o, &e), &xe) in
                                gw.data_mut().iter_mut().zip(g.row(i)).zip(xv.row(i))
                            {
                                *o += e * xe;
                            }
                        }
                        accumulate(&mut grads, *w, gw);
                    }
                    if self.ng(*x) {
                        let mut gx = g.clone();
                        for i in 0..gx.rows() {
                            for (o, &c) in gx.row_mut(i).iter_mut().zip(wv.data()) {
                                *o *= c;
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::ScaleRows(x, s) => {
                    let (xv, sv) = (self.value(*x), self.value(*s));
                    if self.ng(*s) {
                        let gs = DenseMatrix::column(
                            (0..g.rows())
                                .map(|i| super::matrix::dot(g.row(i), xv.row(i)))
                                .collect(),
                        );
                        accumulate(&mut grads, *s, gs);
                    }
                    if self.ng(*x) {
                        let mut gx = g.clone();
                        for i in 0..gx.rows() {
                            let c = sv.get(i, 0);
                            gx.row_mut(i).iter_mut().for_each(|o| *o *= c);
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, g.map(|e| e * c));
                }
                Op::Relu(x) => {
                    let gx = g
                        .zip_map(self.value(*x), |e, v| if v > 0.0 { e } else { 0.0 })
                        .unwrap();
                    accumulate(&mut grads, *x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let slope = *slope;
                    let gx = g
                        .zip_map(self.value(*x), |e, v| if v > 0.0 { e } else { slope * e })
                        .unwrap();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softplus(x) => {
                    let gx = g.zip_map(self.value(*x), |e, v| e * sigmoid(v)).unwrap();
                    accumulate(&mut grads, *x, gx);
                }
                Op::ClampMin(x, lo) => {
                    let lo = *lo;
                    let gx = g
                        .zip_map(self.value(*x), |e, v| if v > lo { e } else { 0.0 })
                        .unwrap();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Recip(x) => {
                    let gx = g.zip_map(y, |e, r| -e * r * r).unwrap();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let mut gx = DenseMatrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let inner = super::matrix::dot(gr, yr);
                        for ((o, &ge), &ye) in gx.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *o = ye * (ge - inner);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogSoftmax(x) => {
                    let mut gx = g.clone();
                    for i in 0..g.rows() {
                        let total: f64 = g.row(i).iter().sum();
                        for (o, &ly) in gx.row_mut(i).iter_mut().zip(y.row(i)) {
                            *o -= ly.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Log(x, floor) => {
                    let floor = *floor;
                    let gx = g
                        .zip_map(self.value(*x), |e, v| if v > floor { e / v } else { 0.0 })
                        .unwrap();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather(x, at) => {
                    let xv = self.value(*x);
                    let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for (k, &(r, c)) in at.iter().enumerate() {
                        let cur = gx.get(r, c);
                        gx.set(r, c, cur + g.get(k, 0));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        DenseMatrix::filled(xv.rows(), xv.cols(), g.item()),
                    );
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let n = xv.data().len().max(1) as f64;
                    accumulate(
                        &mut grads,
                        *x,
                        DenseMatrix::filled(xv.rows(), xv.cols(), g.item() / n),
                    );
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_are_distributions() {
        let x = DenseMatrix::from_rows(&[vec![1000.0, 0.0, -1000.0], vec![0.1, 0.2, 0.3]]).unwrap();
        let p = softmax_rows(&x);
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn softplus_is_positive_and_stable() {
        for x in [-800.0, -30.0, -1.0, 0.0, 1.0, 30.0, 800.0] {
            let v = softplus(x);
            assert!(v > 0.0 || x < -700.0, "softplus({x}) = {v}");
            assert!(v.is_finite());
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn first_nonfinite_is_reported() {
        let mut t = Tape::new();
        let a = t.constant(DenseMatrix::scalar(0.0));
        let r = t.recip(a);
        let _ = t.scale(r, 2.0);
        assert_eq!(t.first_nonfinite(), Some(("recip", 1)));
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut t = Tape::new();
        let a = t.constant(DenseMatrix::zeros(2, 2));
        assert!(t.gather(a, vec![(2, 0)]).is_err());
    }
}
