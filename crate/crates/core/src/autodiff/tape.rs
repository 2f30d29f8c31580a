use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Elementwise; either side may be a scalar.
    Add,
    Sub,
    Mul,
    MatMul,
    Silu,
    Relu,
    Sum,
    Mean,
    Square,
    /// Column-wise concatenation of matrices with equal row counts.
    Concat,
    /// `x · w + b` with `b` broadcast over rows.
    Affine,
    /// Multiply by a constant.
    Scale(f64),
    /// Multiply row `i` by the constant `s[i]`.
    ScaleRows(Vec<f64>),
    /// Embedding lookup: rows of a table.
    Gather(Vec<usize>),
    StopGradient,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Silu => "silu",
            OpKind::Relu => "relu",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Square => "square",
            OpKind::Concat => "concat",
            OpKind::Affine => "affine",
            OpKind::Scale(_) => "scale",
            OpKind::ScaleRows(_) => "scale_rows",
            OpKind::Gather(_) => "gather",
            OpKind::StopGradient => "stop_gradient",
        }
    }
}

#[derive(Debug)]
enum Origin {
    Param,
    Constant,
    Op(OpKind, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    origin: Origin,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a forward computation. Rebuilt every training step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn mismatch(kind: &OpKind, ts: &[&Tensor]) -> Error {
    Error::ShapeMismatch {
        op: kind.name(),
        shapes: ts.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn elementwise(
    kind: &OpKind,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        Ok(a.zip_map(b, f))
    } else if a.is_scalar() {
        let s = a.item();
        Ok(b.map(|v| f(s, v)))
    } else if b.is_scalar() {
        let s = b.item();
        Ok(a.map(|v| f(v, s)))
    } else {
        Err(mismatch(kind, &[a, b]))
    }
}

fn forward(kind: &OpKind, xs: &[&Tensor]) -> Result<Tensor> {
    let arity = match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => Some(2),
        OpKind::Affine => Some(3),
        OpKind::Concat => None,
        _ => Some(1),
    };
    if let Some(n) = arity {
        if xs.len() != n {
            return Err(mismatch(kind, xs));
        }
    } else if xs.is_empty() {
        return Err(mismatch(kind, xs));
    }
    match kind {
        OpKind::Add => elementwise(kind, xs[0], xs[1], |a, b| a + b),
        OpKind::Sub => elementwise(kind, xs[0], xs[1], |a, b| a - b),
        OpKind::Mul => elementwise(kind, xs[0], xs[1], |a, b| a * b),
        OpKind::MatMul | OpKind::Affine => {
            let (a, w) = (xs[0], xs[1]);
            if a.shape().len() != 2 || w.shape().len() != 2 || a.cols() != w.rows() {
                return Err(mismatch(kind, xs));
            }
            let (m, k, n) = (a.rows(), a.cols(), w.cols());
            let mut out = vec![0.0; m * n];
            if let OpKind::Affine = kind {
                let b = xs[2];
                if b.numel() != n || b.shape().len() > 2 || (b.shape().len() == 2 && b.rows() != 1)
                {
                    return Err(mismatch(kind, xs));
                }
                for row in out.chunks_mut(n) {
                    row.copy_from_slice(b.data());
                }
                gemm(a.data(), w.data(), m, k, n, false, false, &mut out, true);
            } else {
                gemm(a.data(), w.data(), m, k, n, false, false, &mut out, false);
            }
            Ok(Tensor::from_vec(vec![m, n], out))
        }
        OpKind::Silu => Ok(xs[0].map(silu)),
        OpKind::Relu => Ok(xs[0].map(|v| v.max(0.0))),
        OpKind::Sum => Ok(Tensor::scalar(xs[0].sum())),
        OpKind::Mean => {
            if xs[0].numel() == 0 {
                return Err(mismatch(kind, xs));
            }
            Ok(Tensor::scalar(xs[0].sum() / xs[0].numel() as f64))
        }
        OpKind::Square => Ok(xs[0].map(|v| v * v)),
        OpKind::Scale(c) => Ok(xs[0].map(|v| v * c)),
        OpKind::StopGradient => Ok(xs[0].clone()),
        OpKind::ScaleRows(s) => {
            let x = xs[0];
            if x.shape().len() != 2 || s.len() != x.rows() {
                return Err(mismatch(kind, xs));
            }
            let mut out = x.clone();
            for (i, &si) in s.iter().enumerate() {
                out.row_mut(i).iter_mut().for_each(|v| *v *= si);
            }
            Ok(out)
        }
        OpKind::Gather(idx) => {
            let table = xs[0];
            if table.shape().len() != 2 || idx.iter().any(|&i| i >= table.rows()) {
                return Err(mismatch(kind, xs));
            }
            Ok(table.select_rows(idx))
        }
        OpKind::Concat => {
            if xs.iter().all(|t| t.shape().len() == 1) {
                let data = xs.iter().flat_map(|t| t.data().iter().copied()).collect();
                return Ok(Tensor::vector(data));
            }
            let rows = xs[0].rows();
            if xs.iter().any(|t| t.shape().len() != 2 || t.rows() != rows) {
                return Err(mismatch(kind, xs));
            }
            let cols: usize = xs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in xs {
                    data.extend_from_slice(t.row(r));
                }
            }
            Ok(Tensor::from_vec(vec![rows, cols], data))
        }
    }
}

/// Reduce an upstream gradient to the shape of a broadcast scalar operand.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if target.is_scalar() && !g.is_scalar() {
        Tensor::scalar(g.sum())
    } else {
        g
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

    fn push(&mut self, origin: Origin, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            origin,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Origin::Param, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Origin::Constant, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn apply_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(&kind, &values)?;
        if !out.is_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let requires_grad = !matches!(kind, OpKind::StopGradient)
            && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Origin::Op(kind, inputs.to_vec()), out, requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_op(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_op(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_op(OpKind::Mul, &[a, b])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_op(OpKind::MatMul, &[a, b])
    }
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply_op(OpKind::Affine, &[x, w, b])
    }
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.apply_op(OpKind::Silu, &[x])
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply_op(OpKind::Relu, &[x])
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply_op(OpKind::Sum, &[x])
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply_op(OpKind::Mean, &[x])
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.apply_op(OpKind::Square, &[x])
    }
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply_op(OpKind::Concat, xs)
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply_op(OpKind::Scale(c), &[x])
    }
    pub fn scale_rows(&mut self, x: Var, s: Vec<f64>) -> Result<Var> {
        self.apply_op(OpKind::ScaleRows(s), &[x])
    }
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        self.apply_op(OpKind::Gather(idx), &[table])
    }
    /// Identity in value, zero in gradient.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        self.apply_op(OpKind::StopGradient, &[x])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::scalar(1.0));
        }
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Origin::Op(kind, inputs) = &node.origin else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = self.vjp(kind, inputs, &node.value, &g);
            grads[id] = Some(g);
            for (input, contribution) in inputs.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    /// Vector-Jacobian products for each input of one node.
    fn vjp(&self, kind: &OpKind, inputs: &[Var], out: &Tensor, g: &Tensor) -> Vec<Option<Tensor>> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let needs = |i: usize| self.nodes[inputs[i].0].requires_grad;
        match kind {
            OpKind::Add => vec![
                needs(0).then(|| unbroadcast(g.clone(), val(0))),
                needs(1).then(|| unbroadcast(g.clone(), val(1))),
            ],
            OpKind::Sub => vec![
                needs(0).then(|| unbroadcast(g.clone(), val(0))),
                needs(1).then(|| unbroadcast(g.map(|v| -v), val(1))),
            ],
            OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                let ga = needs(0).then(|| {
                    let full = if b.is_scalar() {
                        g.map(|v| v * b.item())
                    } else if g.is_scalar() {
                        b.map(|v| v * g.item())
                    } else {
                        g.zip_map(b, |x, y| x * y)
                    };
                    unbroadcast(full, a)
                });
                let gb = needs(1).then(|| {
                    let full = if a.is_scalar() {
                        g.map(|v| v * a.item())
                    } else if g.is_scalar() {
                        a.map(|v| v * g.item())
                    } else {
                        g.zip_map(a, |x, y| x * y)
                    };
                    unbroadcast(full, b)
                });
                vec![ga, gb]
            }
            OpKind::MatMul | OpKind::Affine => {
                let (a, w) = (val(0), val(1));
                let (m, k, n) = (a.rows(), a.cols(), w.cols());
                let ga = needs(0).then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm(g.data(), w.data(), m, n, k, false, true, &mut d, false);
                    Tensor::from_vec(vec![m, k], d)
                });
                let gw = needs(1).then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm(a.data(), g.data(), k, m, n, true, false, &mut d, false);
                    Tensor::from_vec(vec![k, n], d)
                });
                let mut out = vec![ga, gw];
                if let OpKind::Affine = kind {
                    out.push(needs(2).then(|| {
                        let mut d = vec![0.0; n];
                        for r in 0..m {
                            for (acc, v) in d.iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                        Tensor::from_vec(val(2).shape().to_vec(), d)
                    }));
                }
                out
            }
            OpKind::Silu => vec![Some(val(0).zip_map(g, |x, gy| {
                let s = sigmoid(x);
                gy * s * (1.0 + x * (1.0 - s))
            }))],
            OpKind::Relu => {
                vec![Some(
                    val(0).zip_map(g, |x, gy| if x > 0.0 { gy } else { 0.0 }),
                )]
            }
            OpKind::Sum => vec![Some(Tensor::full(val(0).shape(), g.item()))],
            OpKind::Mean => {
                let n = val(0).numel() as f64;
                vec![Some(Tensor::full(val(0).shape(), g.item() / n))]
            }
            OpKind::Square => vec![Some(val(0).zip_map(g, |x, gy| 2.0 * x * gy))],
            OpKind::Scale(c) => vec![Some(g.map(|v| v * c))],
            OpKind::ScaleRows(s) => {
                let mut d = g.clone();
                for (i, &si) in s.iter().enumerate() {
                    d.row_mut(i).iter_mut().for_each(|v| *v *= si);
                }
                vec![Some(d)]
            }
            OpKind::Gather(idx) => {
                let table = val(0);
                let mut d = Tensor::zeros(table.shape());
                for (r, &i) in idx.iter().enumerate() {
                    for (acc, v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                vec![Some(d)]
            }
            OpKind::StopGradient => vec![None],
            OpKind::Concat => {
                if out.shape().len() == 1 {
                    let mut offset = 0;
                    return inputs
                        .iter()
                        .enumerate()
                        .map(|(i, _)| {
                            let len = val(i).numel();
                            let part = Tensor::vector(g.data()[offset..offset + len].to_vec());
                            offset += len;
                            needs(i).then_some(part)
                        })
                        .collect();
                }
                let rows = out.rows();
                let mut offset = 0;
                (0..inputs.len())
                    .map(|i| {
                        let c = val(i).cols();
                        let part = needs(i).then(|| {
                            let mut d = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                d.extend_from_slice(&g.row(r)[offset..offset + c]);
                            }
                            Tensor::from_vec(vec![rows, c], d)
                        });
                        offset += c;
                        part
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_elementwise() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 3.0, 7.0, 1e-3]).unwrap();
        let i = tape.constant(Tensor::eye(3));
        let av = tape.constant(a.clone());
        let out = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0), 0.0);
        // 10 * sigmoid(10) = 10 / (1 + e^-10)
        assert!((silu(10.0) - 9.999_546_021_312_976).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match tape.add(a, b) {
            Err(Error::ShapeMismatch { op, shapes }) => {
                assert_eq!(op, "add");
                assert_eq!(shapes, vec![vec![2], vec![3]]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1e200));
        assert!(matches!(
            tape.square(a),
            Err(Error::NonFinite { op: "square" })
        ));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = tape.square(x).unwrap();
        let root = tape.sum(sq).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn mean_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![3.0, -1.0, 0.0, 8.0]));
        let root = tape.mean(x).unwrap();
        assert_eq!(tape.backward(root).unwrap().wrt(x).data(), &[0.25; 4]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.param(Tensor::vector(vec![5.0, 6.0, 7.0]));
        let root = tape.sum(x).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(y).data(), &[0.0; 3]);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.5, -2.0, 0.25]));
        let w = tape.param(Tensor::vector(vec![0.3, 0.7, -1.1]));
        let xs = tape.stop_gradient(x).unwrap();
        assert_eq!(tape.value(xs), tape.value(x));
        let prod = tape.mul(xs, w).unwrap();
        let root = tape.sum(prod).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0; 3]);
        assert_eq!(g.wrt(w).data(), tape.value(x).data());
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut tape = Tape::new();
        let s = tape.param(Tensor::scalar(2.0));
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let p = tape.mul(s, x).unwrap();
        let root = tape.sum(p).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(s).item(), 6.0);
        assert_eq!(g.wrt(x).data(), &[2.0; 3]);
    }
}
