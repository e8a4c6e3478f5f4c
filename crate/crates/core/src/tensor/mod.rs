//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) to a node holding its values, an
//! optional gradient buffer and, for derived tensors, the operation record
//! that produced it. Operations only record themselves when at least one
//! input requires a gradient, so constant data (labels, masks, images) never
//! grows the graph.
//!
//! ```
//! use affect_core::tensor::Tensor;
//!
//! let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
//! let loss = x.mul(&x).unwrap().sum();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
//! ```
//!
//! Gradients accumulate across repeated `backward` calls; callers reset
//! them with [`Tensor::zero_grad`] between optimizer steps.

mod io;
mod kernels;
mod ops;

pub use io::{read_blob, write_blob};
pub use kernels::{matmul_into, matmul_nt, matmul_tn};
pub use ops::sigmoid_value as sigmoid;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("index {index} out of range for extent {extent}")]
    Index { index: usize, extent: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("malformed tensor blob: {0}")]
    Blob(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Backward closure: receives the output gradient and the output values,
/// returns one optional gradient contribution per input.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct OpRecord {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Option<OpRecord>,
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(TensorError::ZeroExtent(shape.to_vec()));
    }
    if numel_of(shape) != len {
        return Err(TensorError::DataLength {
            len,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    fn from_parts(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Option<OpRecord>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_parts(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that collects gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_parts(data, shape.to_vec(), true, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![value], Vec::new(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![0.0; numel_of(shape)], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(vec![value; numel_of(shape)], shape)
    }

    /// Output of an operation. Records `backward` only when some input
    /// tracks gradients.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(|| OpRecord {
            name,
            inputs,
            backward,
        });
        Self::from_parts(data, shape, requires_grad, op)
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|op| op.name)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrite the values in place. Used by optimizers and checkpoint
    /// loading; the shape is fixed.
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: self.shape().to_vec(),
            });
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// Copy of the values without graph history.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.to_vec(), self.shape().to_vec(), false, None)
    }

    /// Reverse-mode sweep from this scalar. Every reachable tensor that
    /// requires gradients receives (accumulates) its gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        Graph::build(self).backward_from(self);
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

/// Topologically ordered operation records reachable from a root.
pub struct Graph {
    nodes: Vec<Tensor>,
}

impl Graph {
    /// Post-order DFS over gradient-tracking inputs; each node's inputs
    /// precede it.
    pub fn build(root: &Tensor) -> Self {
        let mut nodes = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                nodes.push(t);
                continue;
            }
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for input in op.inputs.iter().rev() {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        Graph { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }

    fn backward_from(&self, root: &Tensor) {
        use std::collections::HashMap;
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::with_capacity(self.nodes.len());
        pending.insert(root.id(), vec![1.0]);
        for node in self.nodes.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(op) = &node.0.op {
                let out = node.data();
                let contributions = (op.backward)(&g, &out);
                debug_assert_eq!(contributions.len(), op.inputs.len());
                for (input, contrib) in op.inputs.iter().zip(contributions) {
                    let Some(contrib) = contrib else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(contrib.len(), input.numel(), "grad size for {}", op.name);
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                        None => {
                            pending.insert(input.id(), contrib);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, c)| *a += c),
                None => *slot = Some(g),
            }
        }
    }
}
