//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so inputs always precede the nodes
//! that consume them and [`Tape::backward`] can sweep the record once in
//! reverse. Tapes are cheap to build and are rebuilt for every forward pass,
//! which keeps unrolled recurrences of any length straightforward.

use std::fmt;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiation rule families, used to name rules in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Hadamard,
    Scale,
    AddColumn,
    MulColumn,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Exp,
    Log,
    Square,
    Clamp,
    VStack,
    RowSlice,
    LayerNorm,
    Sum,
    Mean,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Hadamard,
        OpKind::Scale,
        OpKind::AddColumn,
        OpKind::MulColumn,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::LeakyRelu,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Square,
        OpKind::Clamp,
        OpKind::VStack,
        OpKind::RowSlice,
        OpKind::LayerNorm,
        OpKind::Sum,
        OpKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::Scale => "scale",
            OpKind::AddColumn => "add_column",
            OpKind::MulColumn => "mul_column",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Clamp => "clamp",
            OpKind::VStack => "vstack",
            OpKind::RowSlice => "row_slice",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    AddColumn(NodeId, NodeId),
    MulColumn(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LeakyRelu(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    VStack(NodeId, NodeId),
    RowSlice(NodeId, usize),
    /// Column-wise normalisation; caches `1/sigma` per column.
    LayerNorm(NodeId, Vec<f64>),
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Scale(..) => OpKind::Scale,
            Op::AddColumn(..) => OpKind::AddColumn,
            Op::MulColumn(..) => OpKind::MulColumn,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Square(_) => OpKind::Square,
            Op::Clamp(..) => OpKind::Clamp,
            Op::VStack(..) => OpKind::VStack,
            Op::RowSlice(..) => OpKind::RowSlice,
            Op::LayerNorm(..) => OpKind::LayerNorm,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x
    }
}

/// Normalises each column of `x` to zero mean and unit (eps-damped) variance.
/// Returns the normalised matrix and `1/sigma` per column.
pub fn normalize_columns(x: &Matrix, eps: f64) -> (Matrix, Vec<f64>) {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(cols);
    let n = rows as f64;
    for c in 0..cols {
        let mean = (0..rows).map(|r| x.get(r, c)).sum::<f64>() / n;
        let var = (0..rows).map(|r| (x.get(r, c) - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for r in 0..rows {
            out.set(r, c, (x.get(r, c) - mean) * inv);
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when the node did not
    /// influence the root.
    pub fn get_or_zeros(&self, id: NodeId, like: &Matrix) -> Matrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    corrupted: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: the vector-Jacobian rule for `kind` is deliberately
    /// perturbed during [`Tape::backward`]. Used as a negative control for
    /// gradient checking.
    pub fn with_corrupted_rule(kind: OpKind) -> Self {
        Tape {
            nodes: Vec::new(),
            corrupted: Some(kind),
        }
    }

    pub fn corrupted_rule(&self) -> Option<OpKind> {
        self.corrupted
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn op_kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value)
    }

    /// Adds the `rows x 1` column `bias` to every column of `a`.
    pub fn add_column(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = broadcast_column(self.value(a), self.value(bias), "add_column", |x, b| x + b)?;
        Ok(self.push(Op::AddColumn(a, bias), value))
    }

    /// Multiplies every column of `a` elementwise by the `rows x 1` column `gain`.
    pub fn mul_column(&mut self, a: NodeId, gain: NodeId) -> Result<NodeId> {
        let value = broadcast_column(self.value(a), self.value(gain), "mul_column", |x, g| x * g)?;
        Ok(self.push(Op::MulColumn(a, gain), value))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn leaky_relu(&mut self, a: NodeId, alpha: f64) -> NodeId {
        let value = self.value(a).map(|x| leaky_relu(x, alpha));
        self.push(Op::LeakyRelu(a, alpha), value)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let input = self.value(a);
        if let Some(bad) = input.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive entry {bad}"),
            });
        }
        let value = input.map(f64::ln);
        Ok(self.push(Op::Log(a), value))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), value)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), value)
    }

    /// Stacks `a` on top of `b` (row concatenation).
    pub fn vstack(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (top, bottom) = (self.value(a), self.value(b));
        if top.cols() != bottom.cols() {
            return Err(Error::Shape {
                op: "vstack",
                left: top.shape(),
                right: bottom.shape(),
            });
        }
        let mut data = Vec::with_capacity(top.len() + bottom.len());
        data.extend_from_slice(top.data());
        data.extend_from_slice(bottom.data());
        let value = Matrix::from_vec(top.rows() + bottom.rows(), top.cols(), data)?;
        Ok(self.push(Op::VStack(a, b), value))
    }

    pub fn row_slice(&mut self, a: NodeId, row: usize) -> Result<NodeId> {
        let input = self.value(a);
        if row >= input.rows() {
            return Err(Error::Shape {
                op: "row_slice",
                left: input.shape(),
                right: (row, 0),
            });
        }
        let value = Matrix::row(input.row_slice(row));
        Ok(self.push(Op::RowSlice(a, row), value))
    }

    /// Column-wise layer normalisation without affine parameters.
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let input = self.value(a);
        if input.rows() < 2 {
            return Err(Error::Domain {
                op: "layer_norm",
                msg: format!("needs at least 2 features, got {}", input.rows()),
            });
        }
        let (value, inv_std) = normalize_columns(input, eps);
        Ok(self.push(Op::LayerNorm(a, inv_std), value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let input = self.value(a);
        if input.is_empty() {
            return Err(Error::Domain {
                op: "mean",
                msg: "empty input".into(),
            });
        }
        let value = Matrix::scalar(input.sum() / input.len() as f64);
        Ok(self.push(Op::Mean(a), value))
    }

    /// Reverse sweep from a scalar `root`, seeded with 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward (root must be scalar)",
                left: root_value.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let contributions = self.vjp(node, &grad)?;
            for (input, mut g) in contributions {
                if self.corrupted == Some(node.op.kind()) {
                    g = g.map(|x| 1.5 * x + 1e-3);
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node, grad: &Matrix) -> Result<Vec<(NodeId, Matrix)>> {
        let out = &node.value;
        let v = |id: NodeId| self.value(id);
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => vec![
                (*a, grad.matmul_t(v(*b))?),
                (*b, v(*a).t_matmul(grad)?),
            ],
            Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
            Op::Sub(a, b) => vec![(*a, grad.clone()), (*b, grad.scale(-1.0))],
            Op::Hadamard(a, b) => vec![
                (*a, grad.hadamard(v(*b))?),
                (*b, grad.hadamard(v(*a))?),
            ],
            Op::Scale(a, f) => vec![(*a, grad.scale(*f))],
            Op::AddColumn(a, bias) => vec![(*a, grad.clone()), (*bias, row_sums(grad))],
            Op::MulColumn(a, gain) => {
                let da = broadcast_column(grad, v(*gain), "mul_column", |g, s| g * s)?;
                let dgain = row_sums(&grad.hadamard(v(*a))?);
                vec![(*a, da), (*gain, dgain)]
            }
            Op::Tanh(a) => vec![(*a, grad.zip_map(out, "tanh", |g, y| g * (1.0 - y * y))?)],
            Op::Sigmoid(a) => vec![(*a, grad.zip_map(out, "sigmoid", |g, y| g * y * (1.0 - y))?)],
            Op::LeakyRelu(a, alpha) => {
                let alpha = *alpha;
                vec![(
                    *a,
                    grad.zip_map(v(*a), "leaky_relu", |g, x| if x >= 0.0 { g } else { alpha * g })?,
                )]
            }
            Op::Exp(a) => vec![(*a, grad.hadamard(out)?)],
            Op::Log(a) => vec![(*a, grad.zip_map(v(*a), "log", |g, x| g / x)?)],
            Op::Square(a) => vec![(*a, grad.zip_map(v(*a), "square", |g, x| 2.0 * g * x)?)],
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                vec![(
                    *a,
                    grad.zip_map(v(*a), "clamp", |g, x| if x < lo || x > hi { 0.0 } else { g })?,
                )]
            }
            Op::VStack(a, b) => {
                let split = v(*a).len();
                let (top, bottom) = grad.data().split_at(split);
                vec![
                    (*a, Matrix::from_vec(v(*a).rows(), grad.cols(), top.to_vec())?),
                    (*b, Matrix::from_vec(v(*b).rows(), grad.cols(), bottom.to_vec())?),
                ]
            }
            Op::RowSlice(a, row) => {
                let input = v(*a);
                let mut g = Matrix::zeros(input.rows(), input.cols());
                for c in 0..input.cols() {
                    g.set(*row, c, grad.get(0, c));
                }
                vec![(*a, g)]
            }
            Op::LayerNorm(a, inv_std) => {
                // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)), per column
                let (rows, cols) = out.shape();
                let n = rows as f64;
                let mut dx = Matrix::zeros(rows, cols);
                for c in 0..cols {
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for r in 0..rows {
                        mean_g += grad.get(r, c);
                        mean_gx += grad.get(r, c) * out.get(r, c);
                    }
                    mean_g /= n;
                    mean_gx /= n;
                    for r in 0..rows {
                        let val = inv_std[c] * (grad.get(r, c) - mean_g - out.get(r, c) * mean_gx);
                        dx.set(r, c, val);
                    }
                }
                vec![(*a, dx)]
            }
            Op::Sum(a) => {
                let input = v(*a);
                vec![(*a, Matrix::filled(input.rows(), input.cols(), grad.data()[0]))]
            }
            Op::Mean(a) => {
                let input = v(*a);
                let g = grad.data()[0] / input.len() as f64;
                vec![(*a, Matrix::filled(input.rows(), input.cols(), g))]
            }
        })
    }
}

fn broadcast_column(
    a: &Matrix,
    column: &Matrix,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Matrix> {
    if column.cols() != 1 || column.rows() != a.rows() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: column.shape(),
        });
    }
    let mut out = a.clone();
    let cols = a.cols();
    for (r, row) in out.data_mut().chunks_mut(cols.max(1)).enumerate() {
        let c = column.data()[r];
        for x in row.iter_mut() {
            *x = f(*x, c);
        }
    }
    Ok(out)
}

fn row_sums(m: &Matrix) -> Matrix {
    let sums: Vec<f64> = (0..m.rows()).map(|r| m.row_slice(r).iter().sum()).collect();
    Matrix::column(&sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{finite_difference_gradient, relative_error};

    #[test]
    fn elementwise_analytic_values() {
        let mut tape = Tape::new();
        let zero = tape.leaf(Matrix::scalar(0.0));
        let t = tape.tanh(zero);
        let s = tape.sigmoid(zero);
        assert_eq!(tape.value(t).item(), Some(0.0));
        assert_eq!(tape.value(s).item(), Some(0.5));

        let x = tape.leaf(Matrix::row(&[-2.0, 2.0]));
        let l = tape.leaky_relu(x, 0.3);
        let got = tape.value(l).data();
        assert!((got[0] + 0.6).abs() < 1e-15);
        assert_eq!(got[1], 2.0);

        let a = tape.leaf(Matrix::row(&[1.0, 2.0]));
        let b = tape.leaf(Matrix::row(&[3.0, 4.0]));
        let h = tape.hadamard(a, b).unwrap();
        assert_eq!(tape.value(h).data(), &[3.0, 8.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row(&[1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::zeros(2, 1));
        let b = tape.leaf(Matrix::zeros(1, 2));
        assert!(tape.add(a, b).is_err());
        assert!(tape.hadamard(a, b).is_err());
    }

    #[test]
    fn power_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(3.0));
        let y = tape.square(x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(6.0));
    }

    #[test]
    fn tanh_slope_at_origin() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(0.0));
        let y = tape.tanh(x);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(1.0));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 1));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn matrix_vector_sum_gradient_broadcasts_v() {
        let w = Matrix::from_rows(&[
            vec![0.3, -1.2, 0.7],
            vec![1.5, 0.1, -0.4],
            vec![-0.9, 0.8, 1.1],
        ])
        .unwrap();
        let v = Matrix::column(&[0.5, -1.0, 2.0]);
        let mut tape = Tape::new();
        let wn = tape.leaf(w.clone());
        let vn = tape.leaf(v.clone());
        let prod = tape.matmul(wn, vn).unwrap();
        let total = tape.sum(prod);
        let grads = tape.backward(total).unwrap();
        let g = grads.get(wn).unwrap();

        let f = |theta: &[f64]| {
            let w = Matrix::from_vec(3, 3, theta.to_vec()).unwrap();
            w.matmul(&v).unwrap().sum()
        };
        let fd = finite_difference_gradient(f, w.data(), 1e-6);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(g.get(r, c), v.data()[c]);
                assert!(relative_error(g.get(r, c), fd[r * 3 + c]) < 1e-4);
            }
        }
    }

    #[test]
    fn backward_visits_shared_inputs_once_each_path() {
        // f(x) = x*x + x  => f'(x) = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(1.5));
        let sq = tape.hadamard(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(4.0));
    }

    #[test]
    fn corrupted_rule_changes_gradient() {
        let mut tape = Tape::with_corrupted_rule(OpKind::Tanh);
        let x = tape.leaf(Matrix::scalar(0.0));
        let y = tape.tanh(x);
        let grads = tape.backward(y).unwrap();
        assert_ne!(grads.get(x).unwrap().item(), Some(1.0));
    }

    #[test]
    fn op_names_round_trip() {
        for kind in OpKind::ALL {
            assert_eq!(OpKind::from_name(kind.name()), Some(kind));
        }
    }
}
