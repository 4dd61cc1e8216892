//! Define-by-run computation graph.
//!
//! Every op evaluates eagerly when it is appended, so building the graph *is*
//! the forward pass. Node values stay cached on the graph for [`Graph::backward`].
//! Nodes can only reference earlier nodes, which makes insertion order a valid
//! topological order.

use std::collections::BTreeMap;

use super::tensor::{gemm, Tensor};
use super::NumError;

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Named leaf that receives a gradient (parameter or named input).
    Leaf(String),
    /// Unnamed leaf; gradients are computed but not reported by name.
    Const,
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Mean(Var),
    RowNorm(Var),
    RowDot(Var, Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Dropout(Var, Tensor),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::BiasAdd(..) => "bias_add",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowNorm(_) => "l2_norm",
            Op::RowDot(..) => "dot",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sigmoid(_) => "sigmoid",
            Op::Dropout(..) => "dropout",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    named: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradients of named leaves, summed over every leaf sharing a name.
    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.named
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named.get(name)
    }

    /// Gradient with respect to any node, `None` if the node does not reach the root.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.per_node.get(var.0).and_then(Option::as_ref)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf. Gradients of leaves sharing a name are accumulated.
    pub fn param(&mut self, name: impl Into<String>, value: &Tensor) -> Result<Var, NumError> {
        self.leaf(Op::Leaf(name.into()), value.clone())
    }

    /// Named input leaf; its gradient is reported like a parameter's.
    pub fn input(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var, NumError> {
        self.leaf(Op::Leaf(name.into()), value)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, NumError> {
        self.leaf(Op::Const, value)
    }

    /// Copies a node's value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var, NumError> {
        let value = self.get(v)?.clone();
        self.leaf(Op::Const, value)
    }

    fn leaf(&mut self, op: Op, value: Tensor) -> Result<Var, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn get(&self, v: Var) -> Result<&Tensor, NumError> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(NumError::UnknownNode(v.0))
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ta, tb) = (self.get(a)?, self.get(b)?);
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 {
            return Err(NumError::ShapeMismatch(format!(
                "matmul [{m}×{k}]·[{k2}×{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            &mut out,
        );
        let value = Tensor::matrix(m, n, out)?;
        self.push(Op::MatMul(a, b), value)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (tx, tb) = (self.get(x)?, self.get(bias)?);
        let (_, n) = tx.dims2()?;
        if tb.shape() != [n] {
            return Err(NumError::ShapeMismatch(format!(
                "bias {:?} for {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let mut value = tx.clone();
        for row in value.data_mut().chunks_mut(n.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += *b;
            }
        }
        self.push(Op::BiasAdd(x, bias), value)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumError> {
        let value = self.get(x)?.map(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumError> {
        let value = self.get(x)?.map(f32::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NumError> {
        let value = self.get(x)?.map(f32::exp);
        self.push(Op::Exp(x), value)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, NumError> {
        let value = self.get(x)?.map(f32::ln);
        self.push(Op::Log(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumError> {
        let value = self.get(x)?.map(sigmoid);
        self.push(Op::Sigmoid(x), value)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var, NumError> {
        let (ta, tb) = (self.get(a)?, self.get(b)?);
        if !ta.same_shape(tb) {
            return Err(NumError::ShapeMismatch(format!(
                "{} of {:?} and {:?}",
                op.name(),
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumError> {
        let s: f64 = self.get(x)?.data().iter().map(|&v| f64::from(v)).sum();
        self.push(Op::Sum(x), Tensor::scalar(s as f32))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumError> {
        let t = self.get(x)?;
        if t.is_empty() {
            return Err(NumError::EmptyReduction);
        }
        let s: f64 = t.data().iter().map(|&v| f64::from(v)).sum();
        let value = Tensor::scalar((s / t.len() as f64) as f32);
        self.push(Op::Mean(x), value)
    }

    /// Euclidean norm of every row: `m×n → m×1`. A zero row is an error.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var, NumError> {
        let t = self.get(x)?;
        let (m, _) = t.dims2()?;
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let ss: f64 = t.row(i).iter().map(|&v| f64::from(v) * f64::from(v)).sum();
            if ss == 0.0 {
                return Err(NumError::ZeroNorm { row: i });
            }
            out.push(ss.sqrt() as f32);
        }
        let value = Tensor::matrix(m, 1, out)?;
        self.push(Op::RowNorm(x), value)
    }

    /// Row-wise inner product: `m×n, m×n → m×1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ta, tb) = (self.get(a)?, self.get(b)?);
        let (m, _) = ta.dims2()?;
        if !ta.same_shape(tb) {
            return Err(NumError::ShapeMismatch(format!(
                "dot of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = (0..m)
            .map(|i| {
                ta.row(i)
                    .iter()
                    .zip(tb.row(i))
                    .map(|(&x, &y)| f64::from(x) * f64::from(y))
                    .sum::<f64>() as f32
            })
            .collect();
        let value = Tensor::matrix(m, 1, out)?;
        self.push(Op::RowDot(a, b), value)
    }

    /// Multiplies by a precomputed (already rescaled) dropout mask.
    pub fn dropout(&mut self, x: Var, mask: Tensor) -> Result<Var, NumError> {
        let t = self.get(x)?;
        if !t.same_shape(&mask) {
            return Err(NumError::ShapeMismatch(format!(
                "dropout mask {:?} for {:?}",
                mask.shape(),
                t.shape()
            )));
        }
        let data = t.data().iter().zip(mask.data()).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(Op::Dropout(x, mask), value)
    }

    /// Backward pass from a scalar root, seeded with 1.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumError> {
        let seed = Tensor::full(self.get(root)?.shape(), 1.0);
        self.backward_with(root, seed)
    }

    /// Backward pass seeded with `output_grad` (same shape as the root value).
    pub fn backward_with(&self, root: Var, output_grad: Tensor) -> Result<Gradients, NumError> {
        if root.0 >= self.nodes.len() {
            return Err(NumError::NotForwarded);
        }
        if self.nodes[root.0].value.shape() != output_grad.shape() {
            return Err(NumError::ShapeMismatch(format!(
                "output grad {:?} for root {:?}",
                output_grad.shape(),
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(output_grad);

        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let contributions = self.local_grads(node, &gout)?;
            grads[idx] = Some(gout);
            for (input, g) in contributions {
                if !g.is_finite() {
                    return Err(NumError::NonFinite { op: node.op.name() });
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        if !acc.same_shape(&g) {
                            return Err(NumError::ShapeMismatch(format!(
                                "gradient accumulation {:?} into {:?}",
                                g.shape(),
                                acc.shape()
                            )));
                        }
                        acc.add_assign(&g);
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut named: BTreeMap<String, Tensor> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if let Op::Leaf(name) = &node.op {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match named.get_mut(name) {
                    Some(acc) => {
                        if !acc.same_shape(&g) {
                            return Err(NumError::ShapeMismatch(format!(
                                "leaves named {name} have different shapes"
                            )));
                        }
                        acc.add_assign(&g);
                    }
                    None => {
                        named.insert(name.clone(), g);
                    }
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            per_node: grads,
            named,
        })
    }

    /// Vector-Jacobian products of one node with respect to each of its inputs.
    fn local_grads(&self, node: &Node, gout: &Tensor) -> Result<Vec<(Var, Tensor)>, NumError> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        let elementwise = |x: &Tensor, f: &dyn Fn(f32, f32) -> f32| -> Result<Tensor, NumError> {
            let data = x.data().iter().zip(gout.data()).map(|(&a, &g)| f(a, g)).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        Ok(match &node.op {
            Op::Leaf(_) | Op::Const => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2()?;
                let (_, n) = tb.dims2()?;
                // dA = dC·Bᵀ, dB = Aᵀ·dC via stride swaps.
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, gout.data(), (n as isize, 1), tb.data(), (1, n as isize), &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, ta.data(), (1, k as isize), gout.data(), (n as isize, 1), &mut gb);
                vec![
                    (*a, Tensor::matrix(m, k, ga)?),
                    (*b, Tensor::matrix(k, n, gb)?),
                ]
            }
            Op::BiasAdd(x, b) => {
                let n = val(*b).len();
                let mut gb = vec![0.0f64; n];
                for row in gout.data().chunks(n.max(1)) {
                    for (acc, &g) in gb.iter_mut().zip(row) {
                        *acc += f64::from(g);
                    }
                }
                let gb = gb.into_iter().map(|v| v as f32).collect();
                vec![(*x, gout.clone()), (*b, Tensor::vector(gb))]
            }
            Op::Relu(x) => vec![(*x, elementwise(val(*x), &|a, g| if a > 0.0 { g } else { 0.0 })?)],
            Op::Tanh(x) => {
                let data = out.data().iter().zip(gout.data()).map(|(&y, &g)| g * (1.0 - y * y)).collect();
                vec![(*x, Tensor::new(out.shape().to_vec(), data)?)]
            }
            Op::Exp(x) => {
                let data = out.data().iter().zip(gout.data()).map(|(&y, &g)| g * y).collect();
                vec![(*x, Tensor::new(out.shape().to_vec(), data)?)]
            }
            Op::Log(x) => vec![(*x, elementwise(val(*x), &|a, g| g / a)?)],
            Op::Sigmoid(x) => {
                let data = out.data().iter().zip(gout.data()).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                vec![(*x, Tensor::new(out.shape().to_vec(), data)?)]
            }
            Op::Add(a, b) => vec![(*a, gout.clone()), (*b, gout.clone())],
            Op::Sub(a, b) => vec![(*a, gout.clone()), (*b, gout.map(|g| -g))],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                vec![
                    (*a, elementwise(tb, &|y, g| g * y)?),
                    (*b, elementwise(ta, &|x, g| g * x)?),
                ]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), gout.item()))],
            Op::Mean(x) => {
                let t = val(*x);
                vec![(*x, Tensor::full(t.shape(), gout.item() / t.len() as f32))]
            }
            Op::RowNorm(x) => {
                let t = val(*x);
                let c = t.cols();
                let mut data = Vec::with_capacity(t.len());
                for i in 0..t.rows() {
                    let scale = gout.data()[i] / out.data()[i];
                    data.extend(t.row(i).iter().map(|&v| v * scale));
                }
                debug_assert_eq!(data.len(), t.rows() * c);
                vec![(*x, Tensor::new(t.shape().to_vec(), data)?)]
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = ta.cols();
                let mut ga = Vec::with_capacity(ta.len());
                let mut gb = Vec::with_capacity(tb.len());
                for i in 0..ta.rows() {
                    let g = gout.data()[i];
                    ga.extend(tb.row(i).iter().map(|&v| v * g));
                    gb.extend(ta.row(i).iter().map(|&v| v * g));
                }
                debug_assert_eq!(ga.len(), ta.rows() * c);
                vec![
                    (*a, Tensor::new(ta.shape().to_vec(), ga)?),
                    (*b, Tensor::new(tb.shape().to_vec(), gb)?),
                ]
            }
            Op::Dropout(x, mask) => vec![(*x, elementwise(mask, &|m, g| g * m)?)],
        })
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_passes_vector_through() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2)).unwrap();
        let v = g.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap()).unwrap();
        let out = g.matmul(i, v).unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_and_tanh_definitions() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::scalar(0.0)).unwrap();
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut g = Graph::new();
        let x = g.param("x", &Tensor::scalar(3.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get("x").unwrap().item(), 6.0);
    }

    #[test]
    fn sum_of_identity_times_ones_gives_all_ones_weight_grad() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::identity(2)).unwrap();
        let v = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
        let wv = g.matmul(w, v).unwrap();
        let s = g.sum(wv).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_on_unknown_node_is_an_error() {
        let g = Graph::new();
        assert!(matches!(g.backward_with(Var(0), Tensor::scalar(1.0)), Err(NumError::NotForwarded)));
    }

    #[test]
    fn output_grad_shape_checked() {
        let mut g = Graph::new();
        let x = g.param("x", &Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(
            g.backward_with(x, Tensor::scalar(1.0)),
            Err(NumError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(NumError::ShapeMismatch(_))));
        let z = g.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(g.log(z), Err(NumError::NonFinite { op: "log" })));
        let zero_row = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        assert!(matches!(g.l2_norm(zero_row), Err(NumError::ZeroNorm { row: 0 })));
    }

    #[test]
    fn repeated_leaf_names_accumulate() {
        let mut g = Graph::new();
        let a = g.param("p", &Tensor::scalar(2.0)).unwrap();
        let b = g.param("p", &Tensor::scalar(2.0)).unwrap();
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get("p").unwrap().item(), 4.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", &Tensor::scalar(3.0)).unwrap();
        let d = g.detach(x).unwrap();
        let y = g.mul(x, d).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get("x").unwrap().item(), 3.0);
    }

    #[test]
    fn empty_batch_matmul_keeps_width() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[0, 4])).unwrap();
        let w = g.constant(Tensor::zeros(&[4, 3])).unwrap();
        let y = g.matmul(x, w).unwrap();
        assert_eq!(g.value(y).shape(), &[0, 3]);
    }
}
