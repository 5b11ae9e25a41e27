//! Minimal reverse-mode automatic differentiation on a define-by-run tape.
//!
//! The tape records matrix-valued nodes in construction order (which is a
//! topological order by construction) and replays them backwards. Besides the
//! standard linear-algebra rules it carries the custom rules this crate is
//! built around:
//!
//! * ReLU masks with a strict `input > 0` indicator (subgradient 0 at the
//!   kink),
//! * the sign nonlinearity with a straight-through backward that clips the
//!   incoming gradient to [-1, 1] (or passes it through for the xnor/dorefa
//!   schemes),
//! * Hadamard composition.
//!
//! Gradients accumulate across `backward` calls until `zero_grads` is called;
//! a fresh tape is built every training step.

use crate::binarize::{self, SignScheme};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    MatMul,
    Hadamard,
    Relu,
    Abs,
    Sigmoid,
    Sign { scheme: SignScheme, gate_on_input: bool },
    Add,
    Scale(f64),
    Sum,
    /// Mean over all entries of (pred - target)²; parents are (pred, target).
    MeanSquaredError,
}

#[derive(Debug)]
struct Node {
    op: Op,
    parents: Vec<NodeId>,
    value: Matrix,
    grad: Option<Matrix>,
}

/// Elementwise clamp with the three-branch definition: `lo` below `lo`, the
/// value inside `[lo, hi)`, `hi` otherwise. Requires `lo < hi`.
pub fn clip(g: &Matrix, lo: f64, hi: f64) -> Result<Matrix> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "clip bounds must satisfy lo < hi, got lo={lo}, hi={hi}"
        )));
    }
    Ok(g.map(|x| {
        if x < lo {
            lo
        } else if x < hi {
            x
        } else {
            hi
        }
    }))
}

/// upstream ⊙ 1[saved_input > 0]; strict inequality, so the gradient is zero
/// at exactly-zero inputs.
pub fn relu_backward(upstream: &Matrix, saved_input: &Matrix) -> Result<Matrix> {
    if upstream.shape() != saved_input.shape() {
        return Err(Error::shape_mismatch(
            "relu_backward",
            upstream.shape(),
            saved_input.shape(),
        ));
    }
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(saved_input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

/// Straight-through backward for the sign nonlinearity: the incoming gradient
/// clipped to [-1, 1]. The saved input is ignored by this scheme (the clip
/// applies to the gradient value, not to a function of the input).
pub fn sign_backward_ste(upstream: &Matrix, saved_input: &Matrix) -> Result<Matrix> {
    if upstream.shape() != saved_input.shape() {
        return Err(Error::shape_mismatch(
            "sign_backward_ste",
            upstream.shape(),
            saved_input.shape(),
        ));
    }
    clip(upstream, -1.0, 1.0)
}

/// Reverse-mode differentiation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Matrix) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            parents,
            value,
            grad: None,
        });
        id
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Register a leaf matrix; trainable leaves are the optimization targets.
    pub fn leaf(&mut self, value: Matrix, trainable: bool) -> NodeId {
        self.push(Op::Leaf { trainable }, vec![], value)
    }

    /// Non-trainable leaf (inputs, targets, frozen weights).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.node(id).value
    }

    /// Accumulated gradient of a node, if backward has reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.node(id).grad.as_ref()
    }

    /// Accumulated gradient, or zeros of the node's shape.
    pub fn grad_or_zeros(&self, id: NodeId) -> Matrix {
        let n = self.node(id);
        n.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols()))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let value = self.node(lhs).value.matmul(&self.node(rhs).value)?;
        Ok(self.push(Op::MatMul, vec![lhs, rhs], value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.hadamard(&self.node(b).value)?;
        Ok(self.push(Op::Hadamard, vec![a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.add(&self.node(b).value)?;
        Ok(self.push(Op::Add, vec![a, b], value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.node(x).value.relu();
        self.push(Op::Relu, vec![x], value)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.node(x).value.abs_act();
        self.push(Op::Abs, vec![x], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.node(x).value.sigmoid_act();
        self.push(Op::Sigmoid, vec![x], value)
    }

    pub fn sign(&mut self, x: NodeId, scheme: SignScheme, gate_on_input: bool) -> NodeId {
        let value = binarize::sign_forward(&self.node(x).value, scheme);
        self.push(Op::Sign { scheme, gate_on_input }, vec![x], value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.node(x).value.scale(c);
        self.push(Op::Scale(c), vec![x], value)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![self.node(x).value.sum()]).unwrap();
        self.push(Op::Sum, vec![x], value)
    }

    /// Mean over all entries of (pred - target)², as a 1x1 node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let diff = self.node(pred).value.sub(&self.node(target).value)?;
        let n = diff.data().len() as f64;
        let value = Matrix::from_vec(1, 1, vec![diff.data().iter().map(|d| d * d).sum::<f64>() / n])
            .unwrap();
        Ok(self.push(Op::MeanSquaredError, vec![pred, target], value))
    }

    /// Propagate gradients from a scalar loss node into every reachable node,
    /// accumulating into existing gradient buffers.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Autodiff(format!(
                "backward before forward: node {} is not on the tape (len {})",
                loss.0,
                self.nodes.len()
            )));
        }
        let loss_shape = self.node(loss).value.shape();
        if loss_shape != (1, 1) {
            return Err(Error::Autodiff(format!(
                "loss must be a 1x1 scalar node, got {}x{}",
                loss_shape.0, loss_shape.1
            )));
        }

        // Per-pass adjoints; folded into node.grad at the end so repeated
        // backward calls accumulate.
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::ones(1, 1));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj)?;
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(buf) => buf.add_assign(&g)?,
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[id];
        let add_to = |adj: &mut [Option<Matrix>], pid: NodeId, contribution: Matrix| -> Result<()> {
            match &mut adj[pid.0] {
                Some(buf) => buf.add_assign(&contribution)?,
                slot @ None => *slot = Some(contribution),
            }
            Ok(())
        };

        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul => {
                let (l, r) = (node.parents[0], node.parents[1]);
                let gl = g.matmul(&self.node(r).value.transpose())?;
                let gr = self.node(l).value.transpose().matmul(g)?;
                add_to(adj, l, gl)?;
                add_to(adj, r, gr)?;
            }
            Op::Hadamard => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let ga = g.hadamard(&self.node(b).value)?;
                let gb = g.hadamard(&self.node(a).value)?;
                add_to(adj, a, ga)?;
                add_to(adj, b, gb)?;
            }
            Op::Relu => {
                let x = node.parents[0];
                add_to(adj, x, relu_backward(g, &self.node(x).value)?)?;
            }
            Op::Abs => {
                let x = node.parents[0];
                let input = &self.node(x).value;
                let mut gx = g.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(input.data()) {
                    *gv *= if xv > 0.0 {
                        1.0
                    } else if xv < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                add_to(adj, x, gx)?;
            }
            Op::Sigmoid => {
                // d/dx sigmoid = s(1-s), with s the saved output.
                let x = node.parents[0];
                let s = &node.value;
                let mut gx = g.clone();
                for (gv, &sv) in gx.data_mut().iter_mut().zip(s.data()) {
                    *gv *= sv * (1.0 - sv);
                }
                add_to(adj, x, gx)?;
            }
            Op::Sign { scheme, gate_on_input } => {
                let x = node.parents[0];
                let input = &self.node(x).value;
                let mut gx = binarize::sign_backward(g, input, *scheme)?;
                if *gate_on_input && *scheme == SignScheme::Ste {
                    // Conventional BNN gate: zero where |input| > 1.
                    for (gv, &xv) in gx.data_mut().iter_mut().zip(input.data()) {
                        if xv.abs() > 1.0 {
                            *gv = 0.0;
                        }
                    }
                }
                add_to(adj, x, gx)?;
            }
            Op::Add => {
                add_to(adj, node.parents[0], g.clone())?;
                add_to(adj, node.parents[1], g.clone())?;
            }
            Op::Scale(c) => {
                add_to(adj, node.parents[0], g.scale(*c))?;
            }
            Op::Sum => {
                let x = node.parents[0];
                let shape = self.node(x).value.shape();
                add_to(adj, x, Matrix::filled(shape.0, shape.1, g.get(0, 0)))?;
            }
            Op::MeanSquaredError => {
                let (pred, target) = (node.parents[0], node.parents[1]);
                let diff = self.node(pred).value.sub(&self.node(target).value)?;
                let n = diff.data().len() as f64;
                let gp = diff.scale(2.0 / n * g.get(0, 0));
                let gt = gp.scale(-1.0);
                add_to(adj, pred, gp)?;
                add_to(adj, target, gt)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn clip_piecewise_definition() {
        let m = Matrix::from_rows(&[vec![-2.0, 0.5, 3.0]]).unwrap();
        let out = clip(&m, -1.0, 1.0).unwrap();
        assert_eq!(out, Matrix::from_rows(&[vec![-1.0, 0.5, 1.0]]).unwrap());
    }

    #[test]
    fn clip_interior_and_idempotent() {
        let m = Matrix::from_rows(&[vec![-0.9, 0.0, 0.99]]).unwrap();
        assert_eq!(clip(&m, -1.0, 1.0).unwrap(), m);
        let mut rng = RngStream::new(4);
        let big = Matrix::gaussian(5, 5, 3.0, &mut rng).unwrap();
        let once = clip(&big, -1.0, 1.0).unwrap();
        assert_eq!(clip(&once, -1.0, 1.0).unwrap(), once);
    }

    #[test]
    fn clip_rejects_bad_bounds() {
        let m = Matrix::zeros(1, 1);
        assert!(clip(&m, 1.0, 1.0).is_err());
        assert!(clip(&m, 2.0, -2.0).is_err());
    }

    #[test]
    fn relu_backward_masks() {
        let up = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let input = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        assert_eq!(
            relu_backward(&up, &input).unwrap(),
            Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap()
        );
        let pos = Matrix::from_rows(&[vec![0.5, 2.0]]).unwrap();
        assert_eq!(relu_backward(&up, &pos).unwrap(), up);
        let zero_in = Matrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        assert_eq!(relu_backward(&up, &zero_in).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn sign_backward_ste_clips_upstream() {
        let up = Matrix::from_rows(&[vec![0.3, -5.0]]).unwrap();
        let saved = Matrix::zeros(1, 2);
        assert_eq!(
            sign_backward_ste(&up, &saved).unwrap(),
            Matrix::from_rows(&[vec![0.3, -1.0]]).unwrap()
        );
        let zeros = Matrix::zeros(1, 2);
        assert_eq!(sign_backward_ste(&zeros, &saved).unwrap(), zeros);
        let interior = Matrix::from_rows(&[vec![0.99, -0.2]]).unwrap();
        assert_eq!(sign_backward_ste(&interior, &saved).unwrap(), interior);
    }

    #[test]
    fn linear_loss_gradient_has_outer_product_structure() {
        // loss = sum(W x): dL/dW = ones * x^T.
        let mut tape = Tape::new();
        let w_val = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let x_val = Matrix::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        let w = tape.leaf(w_val, true);
        let x = tape.constant(x_val.clone());
        let h = tape.matmul(w, x).unwrap();
        let loss = tape.sum(h);
        tape.backward(loss).unwrap();
        let expected = Matrix::ones(2, 1).matmul(&x_val.transpose()).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &expected);
    }

    #[test]
    fn dead_relu_kills_both_factors() {
        // loss = sum(relu(B A)) with BA all-negative: gA = gB = 0 exactly.
        let mut tape = Tape::new();
        let b = tape.leaf(Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(), true);
        let a = tape.leaf(Matrix::from_rows(&[vec![-3.0, -1.0]]).unwrap(), true);
        let ba = tape.matmul(b, a).unwrap();
        assert!(tape.value(ba).data().iter().all(|&x| x < 0.0));
        let r = tape.relu(ba);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &Matrix::zeros(1, 2));
        assert_eq!(tape.grad(b).unwrap(), &Matrix::zeros(2, 1));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::ones(2, 2), true);
        let err = tape.backward(a).unwrap_err().to_string();
        assert!(err.contains("1x1"), "{err}");
    }

    #[test]
    fn backward_twice_doubles_gradients() {
        let mut tape = Tape::new();
        let mut rng = RngStream::new(8);
        let a = tape.leaf(Matrix::gaussian(3, 3, 1.0, &mut rng).unwrap(), true);
        let b = tape.leaf(Matrix::gaussian(3, 3, 1.0, &mut rng).unwrap(), true);
        let prod = tape.matmul(a, b).unwrap();
        let r = tape.relu(prod);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        let g1 = tape.grad(a).unwrap().clone();
        tape.backward(loss).unwrap();
        let g2 = tape.grad(a).unwrap().clone();
        for (x, y) in g1.data().iter().zip(g2.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn mse_gradient_matches_closed_form() {
        let mut tape = Tape::new();
        let pred_val = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let target_val = Matrix::from_rows(&[vec![0.0, 2.0], vec![5.0, 4.0]]).unwrap();
        let pred = tape.leaf(pred_val.clone(), true);
        let target = tape.constant(target_val.clone());
        let loss = tape.mse(pred, target).unwrap();
        // mean((1,0,-2,0)²) = (1+4)/4
        assert_eq!(tape.value(loss).get(0, 0), 1.25);
        tape.backward(loss).unwrap();
        let expected = pred_val.sub(&target_val).unwrap().scale(2.0 / 4.0);
        assert_eq!(tape.grad(pred).unwrap(), &expected);
    }

    #[test]
    fn mse_zero_when_equal() {
        let mut tape = Tape::new();
        let m = Matrix::ones(2, 3);
        let pred = tape.leaf(m.clone(), true);
        let target = tape.constant(m);
        let loss = tape.mse(pred, target).unwrap();
        assert_eq!(tape.value(loss).get(0, 0), 0.0);
        let off = tape.constant(Matrix::zeros(2, 3));
        let loss_ones = tape.mse(pred, off).unwrap();
        assert_eq!(tape.value(loss_ones).get(0, 0), 1.0);
    }
}
