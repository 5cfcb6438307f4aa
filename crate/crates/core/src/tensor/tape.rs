use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{accumulate_grad_lhs, accumulate_grad_rhs, matmul};
use super::{Tensor, TensorError};
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise single-argument primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Sigmoid,
    Relu,
    Softplus,
    Exp,
    Log,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Sigmoid => math::sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Softplus => math::softplus(x),
            Unary::Exp => math::exp(x),
            Unary::Log => math::ln(x),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => math::sigmoid(x),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Unary, Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    RowMatVec(Var, Var),
    RowOuter(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Values live on the tape; parameters are copied in with [`Tape::param`] and
/// their gradients read back from [`Gradients`] after [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every tape value that needs one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when no gradient reached `var` (it is constant or unused).
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `var` into the gradient slot of `target`.
    pub fn accumulate_into(&self, var: Var, target: &mut Tensor) {
        let slot = target.grad_mut();
        if let Some(g) = self.wrt(var) {
            for (s, v) in slot.iter_mut().zip(g) {
                *s += v;
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, data: Vec<f64>, shape: &[usize], op: Op, requires_grad: bool) -> Var {
        let value = Tensor::new(shape, data).expect("tape op produced a consistent shape");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, tensor: &Tensor, requires_grad: bool) -> Var {
        let mut value = tensor.clone();
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor, false)
    }

    /// Records a trainable input whose gradient is tracked.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor, true)
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn dims(&self, var: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        let t = self.value(var);
        t.dims2().map_err(|_| TensorError::Rank {
            op,
            shape: t.shape().to_vec(),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, &[m, n], Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.numel() == 1 {
            ta.shape().to_vec()
        } else if ta.numel() == 1 {
            tb.shape().to_vec()
        } else {
            let name = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            };
            return Err(shape_err(name, ta, tb));
        };
        let n = shape.iter().product::<usize>();
        let (da, db) = (ta.data(), tb.data());
        let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let data = (0..n)
            .map(|i| {
                let (x, y) = (pick(da, i), pick(db, i));
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, &shape, Op::Binary(kind, a, b), rg))
    }

    /// Elementwise sum; equal shapes or one scalar operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    /// Adds a `1×n` bias row to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x, "add_bias")?;
        let (br, bn) = self.dims(bias, "add_bias")?;
        if br != 1 || bn != n {
            return Err(shape_err("add_bias", self.value(x), self.value(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            add_into(row, b);
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(data, &[m, n], Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|v| v * s).collect();
        let rg = self.rg(x);
        self.push(data, &shape, Op::Scale(x, s), rg)
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|v| v + c).collect();
        let rg = self.rg(x);
        self.push(data, &shape, Op::Offset(x), rg)
    }

    pub fn unary(&mut self, f: Unary, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if f == Unary::Log && t.data().iter().any(|&v| !(v > 0.0)) {
            return Err(TensorError::Domain { op: "log" });
        }
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|&v| f.apply(v)).collect();
        let rg = self.rg(x);
        Ok(self.push(data, &shape, Op::Unary(f, x), rg))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Unary::Neg, x).expect("neg is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x).expect("relu is total")
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x).expect("softplus is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x).expect("exp is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Log, x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let rg = self.rg(x);
        self.push(data, &shape, Op::Clamp(x, lo, hi), rg)
    }

    /// Sum of all entries, as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(vec![s], &[1, 1], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(x);
        self.push(vec![s], &[1, 1], Op::Mean(x), rg)
    }

    /// Per-row sum: `m×n -> m×1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x, "row_sum")?;
        let data = self
            .value(x)
            .data()
            .chunks_exact(n)
            .map(|r| r.iter().sum())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(data, &[m, 1], Op::RowSum(x), rg))
    }

    /// Columns `start..start + width` of an `m×n` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x, "slice_cols")?;
        if width == 0 || start + width > n {
            return Err(TensorError::Shape {
                op: "slice_cols",
                lhs: self.value(x).shape().to_vec(),
                rhs: vec![start, width],
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * width);
        for row in src.chunks_exact(n) {
            data.extend_from_slice(&row[start..start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(data, &[m, width], Op::SliceCols(x, start), rg))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Shape {
            op: "concat_cols",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (m, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != m {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(data, &[m, total], Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row-wise matrix-vector product.
    ///
    /// Row `i` of `mat` (`m × p·q`) holds a row-major `p×q` matrix that
    /// multiplies row `i` of `v` (`m×q`); the result is `m×p`.
    pub fn row_matvec(&mut self, mat: Var, v: Var) -> Result<Var, TensorError> {
        let (m, pq) = self.dims(mat, "row_matvec")?;
        let (mv, q) = self.dims(v, "row_matvec")?;
        if mv != m || pq % q != 0 {
            return Err(shape_err("row_matvec", self.value(mat), self.value(v)));
        }
        let p = pq / q;
        let (md, vd) = (self.value(mat).data(), self.value(v).data());
        let mut data = vec![0.0; m * p];
        for i in 0..m {
            let vrow = &vd[i * q..(i + 1) * q];
            for a in 0..p {
                let mrow = &md[i * pq + a * q..i * pq + (a + 1) * q];
                data[i * p + a] = mrow.iter().zip(vrow).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.rg(mat) || self.rg(v);
        Ok(self.push(data, &[m, p], Op::RowMatVec(mat, v), rg))
    }

    /// Row-wise outer product: rows `w_i` (`m×p`) and `r_i` (`m×q`) give the
    /// flattened `w_i r_iᵀ` (`m × p·q`).
    pub fn row_outer(&mut self, w: Var, r: Var) -> Result<Var, TensorError> {
        let (m, p) = self.dims(w, "row_outer")?;
        let (mr, q) = self.dims(r, "row_outer")?;
        if mr != m {
            return Err(shape_err("row_outer", self.value(w), self.value(r)));
        }
        let (wd, rd) = (self.value(w).data(), self.value(r).data());
        let mut data = Vec::with_capacity(m * p * q);
        for i in 0..m {
            for a in 0..p {
                for b in 0..q {
                    data.push(wd[i * p + a] * rd[i * q + b]);
                }
            }
        }
        let rg = self.rg(w) || self.rg(r);
        Ok(self.push(data, &[m, p * q], Op::RowOuter(w, r), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let out = self.value(loss);
        if out.numel() != 1 {
            return Err(TensorError::NonScalarLoss(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], var: Var) -> Option<&'g mut Vec<f64>> {
        if !self.rg(var) {
            return None;
        }
        let n = self.value(var).numel();
        Some(grads[var.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).cols();
                if let Some(ga) = self.slot(grads, *a) {
                    accumulate_grad_lhs(g, self.value(*b).data(), ga, m, k, n);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    accumulate_grad_rhs(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::Binary(kind, a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                let (sa, sb) = match kind {
                    Binary::Add => (1.0, 1.0),
                    Binary::Sub => (1.0, -1.0),
                    Binary::Mul => (0.0, 0.0),
                };
                for (operand, other, sign) in [(*a, db, sa), (*b, da, sb)] {
                    if let Some(gx) = self.slot(grads, operand) {
                        let broadcast = gx.len() == 1 && g.len() > 1;
                        for (i, &gi) in g.iter().enumerate() {
                            let contrib = match kind {
                                Binary::Mul => gi * pick(other, i),
                                _ => gi * sign,
                            };
                            if broadcast {
                                gx[0] += contrib;
                            } else {
                                gx[i] += contrib;
                            }
                        }
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let n = gb.len();
                    for row in g.chunks_exact(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (d, v) in gx.iter_mut().zip(g) {
                        *d += s * v;
                    }
                }
            }
            Op::Offset(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
            }
            Op::Unary(f, x) => {
                let xin = self.value(*x).data();
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * f.derivative(xin[i], y[i]);
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xin = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        if xin[i] >= *lo && xin[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::RowSum(x) => {
                let n = self.value(*x).cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (row, &gi) in gx.chunks_exact_mut(n).zip(g) {
                        row.iter_mut().for_each(|d| *d += gi);
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let n = self.value(*x).cols();
                let w = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (row, grow) in gx.chunks_exact_mut(n).zip(g.chunks_exact(w)) {
                        add_into(&mut row[*start..*start + w], grow);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.slot(grads, p) {
                        for (row, grow) in gp.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                            add_into(row, &grow[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::RowMatVec(mat, v) => {
                let (m, pq) = self.value(*mat).dims2().unwrap();
                let q = self.value(*v).cols();
                let p = pq / q;
                let (md, vd) = (self.value(*mat).data(), self.value(*v).data());
                if let Some(gm) = self.slot(grads, *mat) {
                    for i in 0..m {
                        for a in 0..p {
                            let ga = g[i * p + a];
                            for b in 0..q {
                                gm[i * pq + a * q + b] += ga * vd[i * q + b];
                            }
                        }
                    }
                }
                if let Some(gv) = self.slot(grads, *v) {
                    for i in 0..m {
                        for a in 0..p {
                            let ga = g[i * p + a];
                            for b in 0..q {
                                gv[i * q + b] += ga * md[i * pq + a * q + b];
                            }
                        }
                    }
                }
            }
            Op::RowOuter(w, r) => {
                let (m, p) = self.value(*w).dims2().unwrap();
                let q = self.value(*r).cols();
                let (wd, rd) = (self.value(*w).data(), self.value(*r).data());
                if let Some(gw) = self.slot(grads, *w) {
                    for i in 0..m {
                        for a in 0..p {
                            for b in 0..q {
                                gw[i * p + a] += g[i * p * q + a * q + b] * rd[i * q + b];
                            }
                        }
                    }
                }
                if let Some(gr) = self.slot(grads, *r) {
                    for i in 0..m {
                        for a in 0..p {
                            for b in 0..q {
                                gr[i * q + b] += g[i * p * q + a * q + b] * wd[i * p + a];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_value(tape: &Tape, v: Var) -> f64 {
        tape.value(v).data()[0]
    }

    #[test]
    fn elementwise_reference_points() {
        let mut tape = Tape::new();
        let zero = tape.constant(&Tensor::scalar(0.0));
        let s = tape.sigmoid(zero);
        assert_eq!(scalar_value(&tape, s), 0.5);
        let sp = tape.softplus(zero);
        assert!((scalar_value(&tape, sp) - core::f64::consts::LN_2).abs() < 1e-15);
        let x = tape.constant(&Tensor::row(alloc::vec![-3.0, 3.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 3.0]);
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::row(alloc::vec![1.0, 0.0]));
        assert_eq!(tape.log(x), Err(TensorError::Domain { op: "log" }));
    }

    #[test]
    fn square_has_derivative_two_x() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_loss_has_no_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(&Tensor::row(alloc::vec![1.0, 2.0]));
        let c = tape.constant(&Tensor::scalar(4.0));
        let _unused = tape.sum(p);
        let loss = tape.scale(c, 2.0);
        let g = tape.backward(loss).unwrap();
        let mut t = Tensor::row(alloc::vec![1.0, 2.0]);
        g.accumulate_into(p, &mut t);
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(&Tensor::row(alloc::vec![1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x*a + x*b with x used twice
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(2.0));
        let a = tape.constant(&Tensor::scalar(3.0));
        let b = tape.constant(&Tensor::scalar(5.0));
        let xa = tape.mul(x, a).unwrap();
        let xb = tape.mul(x, b).unwrap();
        let f = tape.add(xa, xb).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[8.0]);
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut tape = Tape::new();
        let s = tape.param(&Tensor::scalar(2.0));
        let v = tape.param(&Tensor::row(alloc::vec![1.0, 2.0, 3.0]));
        let p = tape.mul(s, v).unwrap();
        let f = tape.sum(p);
        let g = tape.backward(f).unwrap();
        assert_eq!(g.wrt(s).unwrap(), &[6.0]);
        assert_eq!(g.wrt(v).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(2, 3));
        let b = tape.constant(&Tensor::zeros(3, 2));
        assert!(tape.add(a, b).is_err());
        assert!(tape.matmul(a, a).is_err());
        let bias = tape.constant(&Tensor::zeros(1, 2));
        assert!(tape.add_bias(a, bias).is_err());
    }

    #[test]
    fn row_matvec_and_outer() {
        let mut tape = Tape::new();
        let m = tape.constant(&Tensor::matrix(1, 4, alloc::vec![1.0, 2.0, 3.0, 4.0]));
        let v = tape.constant(&Tensor::row(alloc::vec![1.0, -1.0]));
        let out = tape.row_matvec(m, v).unwrap();
        assert_eq!(tape.value(out).data(), &[-1.0, -1.0]);
        let w = tape.constant(&Tensor::row(alloc::vec![1.0, 2.0]));
        let o = tape.row_outer(w, v).unwrap();
        assert_eq!(tape.value(o).data(), &[1.0, -1.0, 2.0, -2.0]);
    }
}
