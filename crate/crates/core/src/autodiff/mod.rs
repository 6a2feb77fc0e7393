//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every node holds a `rows × cols` buffer. Values are computed eagerly when a
//! node is recorded, so the tape doubles as the forward trace. [`Tape::backward`]
//! walks the nodes in reverse and returns a [`Gradients`] map.
//!
//! ```
//! use survmtl::autodiff::Tape;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(vec![0.0], 1, 1);
//! let y = tape.sigmoid(x);
//! assert_eq!(tape.value(y), &[0.5]);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x), &[0.25]);
//! ```

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_shaped};
pub use ops::Op;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: mask has zero total weight")]
    EmptyMask { op: &'static str },
    #[error("buffer of length {len} does not match shape {rows}x{cols}")]
    BufferLength { len: usize, rows: usize, cols: usize },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: [usize; 2] },
    #[error("non-finite value {value} at coordinate {coordinate}")]
    NonFinite { coordinate: usize, value: f64 },
    #[error("finite-difference step must be positive")]
    BadStep,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<usize>,
    rows: usize,
    cols: usize,
    requires_grad: bool,
}

/// A recorded computation. Nodes are appended in topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<usize>, rows: usize, cols: usize, value: Vec<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs,
            rows,
            cols,
            requires_grad,
        });
        self.values.push(value);
        Var { id, rows, cols }
    }

    /// A differentiable input (parameter or point of evaluation).
    pub fn leaf(&mut self, values: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(values.len(), rows * cols, "leaf buffer does not match its shape");
        self.push(Op::Leaf, Vec::new(), rows, cols, values)
    }

    /// A non-differentiable input: data, targets, masks, frozen outputs.
    pub fn constant(&mut self, values: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(values.len(), rows * cols, "constant buffer does not match its shape");
        self.push(Op::Constant, Vec::new(), rows, cols, values)
    }

    pub fn try_leaf(&mut self, values: Vec<T>, rows: usize, cols: usize) -> Result<Var, TapeError> {
        if values.len() != rows * cols {
            return Err(TapeError::BufferLength {
                len: values.len(),
                rows,
                cols,
            });
        }
        Ok(self.leaf(values, rows, cols))
    }

    pub fn scalar_constant(&mut self, value: T) -> Var {
        self.constant(vec![value], 1, 1)
    }

    /// Copies the value of `v` into a fresh constant; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.values[v.id].clone();
        self.constant(value, v.rows, v.cols)
    }

    /// Appends a primitive applied to `inputs` and evaluates it eagerly.
    pub fn record(&mut self, op: Op<T>, inputs: &[Var]) -> Result<Var, TapeError> {
        let shapes: Vec<[usize; 2]> = inputs.iter().map(Var::shape).collect();
        let [rows, cols] = op.output_shape(&shapes)?;
        let value = {
            let bufs: Vec<&[T]> = inputs.iter().map(|v| self.values[v.id].as_slice()).collect();
            op.eval(&bufs, &shapes)
        };
        Ok(self.push(op, inputs.iter().map(|v| v.id).collect(), rows, cols, value))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.values[v.id]
    }

    pub fn scalar(&self, v: Var) -> T {
        self.values[v.id][0]
    }

    /// Overwrites a leaf or constant buffer. Downstream nodes are not refreshed;
    /// use [`Tape::replay`] to recompute them.
    pub fn set_input(&mut self, v: Var, values: Vec<T>) {
        assert!(matches!(self.nodes[v.id].op, Op::Leaf | Op::Constant));
        assert_eq!(values.len(), v.len());
        self.values[v.id] = values;
    }

    /// Re-evaluates every node from the stored leaf and constant buffers.
    pub fn replay(&self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let value = match node.op {
                Op::Leaf | Op::Constant => self.values[i].clone(),
                _ => {
                    let shapes: Vec<[usize; 2]> = node
                        .inputs
                        .iter()
                        .map(|&j| [self.nodes[j].rows, self.nodes[j].cols])
                        .collect();
                    let bufs: Vec<&[T]> = node.inputs.iter().map(|&j| out[j].as_slice()).collect();
                    node.op.eval(&bufs, &shapes)
                }
            };
            out.push(value);
        }
        out
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, TapeError> {
        if !root.is_scalar() {
            return Err(TapeError::NonScalarRoot { shape: root.shape() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.id] = Some(vec![T::one()]);
        for i in (0..=root.id).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let wants: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let shapes: Vec<[usize; 2]> = node
                .inputs
                .iter()
                .map(|&j| [self.nodes[j].rows, self.nodes[j].cols])
                .collect();
            let bufs: Vec<&[T]> = node.inputs.iter().map(|&j| self.values[j].as_slice()).collect();
            let contributions = node.op.vjp(&bufs, &shapes, &self.values[i], &upstream, &wants);
            for (slot, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                match &mut grads[*slot] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib) {
                            *a += c;
                        }
                    }
                    empty @ None => *empty = Some(contrib),
                }
            }
            grads[i] = Some(upstream);
        }
        let shapes = self.nodes.iter().map(|n| [n.rows, n.cols]).collect();
        Ok(Gradients { grads, shapes })
    }

    // Convenience wrappers over `record`.

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::Affine { bias: true }, &[x, w, b])
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, TapeError> {
        self.record(Op::Affine { bias: false }, &[x, w])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.record(Op::ConcatCols, &[a, b])
    }

    pub fn masked_mean(&mut self, x: Var, mask: Vec<T>) -> Result<Var, TapeError> {
        self.record(Op::MaskedMean(mask), &[x])
    }

    pub fn masked_row_mean(&mut self, x: Var, mask: Vec<T>) -> Result<Var, TapeError> {
        self.record(Op::MaskedRowMean(mask), &[x])
    }

    fn unary(&mut self, op: Op<T>, x: Var) -> Var {
        self.record(op, &[x]).expect("unary primitives accept any shape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Op::Tanh, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Op::Softplus, x)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(Op::Ln, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Op::Sqrt, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Op::Abs, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Op::Exp, x)
    }

    pub fn huber(&mut self, x: Var, delta: T) -> Var {
        self.unary(Op::Huber(delta), x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same shape")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.unary(Op::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.unary(Op::Mean, x)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(Op::Scale(c), x)
    }

    pub fn offset(&mut self, x: Var, c: T) -> Var {
        self.unary(Op::Offset(c), x)
    }

    /// Identity forward, `-alpha` times the upstream gradient backward.
    pub fn grad_reverse(&mut self, x: Var, alpha: T) -> Var {
        self.unary(Op::GradReverse(alpha), x)
    }
}

/// Result of [`Tape::backward`]: one gradient buffer per node reached.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<[usize; 2]>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` is not reachable from the root.
    pub fn wrt(&self, v: Var) -> Vec<T> {
        match self.grads.get(v.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes.get(v.id).copied().unwrap_or([v.rows, v.cols]);
                vec![T::zero(); r * c]
            }
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        matches!(self.grads.get(v.id), Some(Some(_)))
    }

    /// Borrowing variant of [`Gradients::wrt`]; `None` when unreachable.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }
}
