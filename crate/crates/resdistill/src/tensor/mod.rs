//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine is a classic tape: every operation appends a node holding its
//! parent ids and a backward closure. [`Graph::backward`] walks the tape in
//! reverse append order and deposits gradients into the grad buffers of
//! `requires_grad` leaves. [`Graph::grad_query`] runs the same traversal into
//! scratch storage, so gradients of an intermediate node can be read out
//! mid-forward without touching any parameter buffer.
//!
//! Tensors are cheap to clone (the payload sits behind an `Rc`) and carry an
//! optional handle into the tape that produced them. A fresh graph is created
//! per forward pass; graphs are single-threaded.

mod io;
mod ops;

pub use io::{read_tensor, write_tensor};
pub use ops::bilinear_kernel;

use std::cell::RefCell;
use std::fmt::Debug;
use std::iter::Sum;
use std::rc::{Rc, Weak};

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element type the engine is generic over. Training runs in `f32`;
/// gradient-check tests instantiate everything in `f64` for tight tolerances.
pub trait Elem: Float + Sum + Debug + Default + 'static {
    /// Dtype code used in the binary tensor layout.
    const DTYPE: u8;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Elem for f32 {
    const DTYPE: u8 = 0;
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Elem for f64 {
    const DTYPE: u8 = 1;
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Cast an `f64` constant into the element type.
pub(crate) fn e<E: Elem>(x: f64) -> E {
    E::from(x).expect("constant representable in element type")
}

#[derive(Clone)]
struct NodeRef<E: Elem> {
    tape: Weak<RefCell<Tape<E>>>,
    id: usize,
}

/// Dense N-dimensional array in row-major layout.
///
/// The node handle sits in a `RefCell` so that consuming a leaf through a
/// shared reference can pin it to the active tape; `grad_query` against that
/// leaf then resolves to the same node.
#[derive(Clone)]
pub struct Tensor<E: Elem> {
    shape: Vec<usize>,
    data: Rc<Vec<E>>,
    grad: Option<Rc<RefCell<Vec<E>>>>,
    node: RefCell<Option<NodeRef<E>>>,
}

impl<E: Elem> Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<E: Elem> Tensor<E> {
    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "zero-extent dimension in shape {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Rc::new(data),
            grad: None,
            node: RefCell::new(None),
        })
    }

    /// Trainable leaf: owns a zero-initialized gradient buffer.
    pub fn param(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let mut t = Self::from_vec(shape, data)?;
        t.grad = Some(Rc::new(RefCell::new(vec![E::zero(); t.numel()])));
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![E::zero(); n]).expect("positive extents")
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![value; n]).expect("positive extents")
    }

    pub fn scalar(value: E) -> Self {
        Self::from_vec(&[1], vec![value]).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Scalar value; panics if the tensor is not a single element.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Current accumulated gradient of a leaf, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.grad.as_ref().map(|g| g.borrow().clone())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = &self.grad {
            g.borrow_mut().iter_mut().for_each(|v| *v = E::zero());
        }
    }

    /// Same values, no graph handle, no gradient buffer.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            grad: None,
            node: RefCell::new(None),
        }
    }

    /// Turn a constant into a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        if self.grad.is_none() {
            self.grad = Some(Rc::new(RefCell::new(vec![E::zero(); self.numel()])));
        }
        self.node = RefCell::new(None);
        self
    }

    /// Drop gradient tracking entirely (frozen parameters).
    pub fn frozen(mut self) -> Self {
        self.grad = None;
        self.node = RefCell::new(None);
        self
    }

    /// Mutable access to the payload. Invalidates any graph handle, since the
    /// recorded activations would no longer describe this tensor.
    pub fn data_mut(&mut self) -> &mut Vec<E> {
        *self.node.borrow_mut() = None;
        Rc::make_mut(&mut self.data)
    }

    pub fn is_attached(&self) -> bool {
        self.node
            .borrow()
            .as_ref()
            .map(|n| n.tape.strong_count() > 0)
            .unwrap_or(false)
    }
}

type BackFn<E> = Box<dyn Fn(&[E]) -> Vec<Vec<E>>>;

struct Node<E: Elem> {
    parents: Vec<usize>,
    len: usize,
    backward: Option<BackFn<E>>,
    leaf_grad: Option<Rc<RefCell<Vec<E>>>>,
}

struct Tape<E: Elem> {
    nodes: Vec<Node<E>>,
}

/// Handle to a gradient tape. One graph per forward pass.
#[derive(Clone)]
pub struct Graph<E: Elem> {
    tape: Rc<RefCell<Tape<E>>>,
}

impl<E: Elem> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Graph<E> {
    pub fn new() -> Self {
        Self {
            tape: Rc::new(RefCell::new(Tape { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, node: &NodeRef<E>) -> bool {
        node.tape.ptr_eq(&Rc::downgrade(&self.tape))
    }

    /// Node id of `t` on this tape, registering a leaf if it has none.
    pub(crate) fn register(&self, t: &Tensor<E>) -> usize {
        let mut handle = t.node.borrow_mut();
        let live_elsewhere = match handle.as_ref() {
            Some(node) if self.same_tape(node) => return node.id,
            Some(node) => node.tape.strong_count() > 0,
            None => false,
        };
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            parents: Vec::new(),
            len: t.numel(),
            backward: None,
            leaf_grad: t.grad.clone(),
        });
        // A tensor still attached to another live graph keeps its original
        // handle; here it only acts as a constant. Grad-less leaves are
        // constants too and never acquire a handle, so they read as detached.
        if !live_elsewhere && t.grad.is_some() {
            *handle = Some(NodeRef {
                tape: Rc::downgrade(&self.tape),
                id,
            });
        }
        id
    }

    pub(crate) fn record(
        &self,
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<usize>,
        backward: BackFn<E>,
    ) -> Tensor<E> {
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            parents,
            len: data.len(),
            backward: Some(backward),
            leaf_grad: None,
        });
        Tensor {
            shape,
            data: Rc::new(data),
            grad: None,
            node: RefCell::new(Some(NodeRef {
                tape: Rc::downgrade(&self.tape),
                id,
            })),
        }
    }

    fn node_id_of(&self, t: &Tensor<E>) -> Result<usize> {
        match t.node.borrow().as_ref() {
            Some(node) if self.same_tape(node) => Ok(node.id),
            Some(_) => Err(Error::GraphMismatch),
            None => Err(Error::Detached),
        }
    }

    /// Reverse traversal from `root`, returning per-node gradient slots.
    /// A `None` slot means the node is unreachable from the root.
    /// `floor` bounds the sweep: because the tape is append-only, every edge
    /// points from a lower id (parent) to a higher id (child), so no node with
    /// an id below `floor` can lie on a path into the node at `floor`.
    /// Closures below the floor are therefore skipped without changing the
    /// gradient accumulated at or above it.
    fn run_reverse(&self, root: usize, floor: usize) -> Vec<Option<Vec<E>>> {
        let tape = self.tape.borrow();
        let mut grads: Vec<Option<Vec<E>>> = vec![None; tape.nodes.len()];
        grads[root] = Some(vec![E::one(); tape.nodes[root].len]);
        for id in (floor..=root).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &tape.nodes[id];
            if let Some(back) = &node.backward {
                let gout = grads[id].as_ref().unwrap().clone();
                let parent_grads = back(&gout);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (pid, pg) in node.parents.iter().zip(parent_grads) {
                    let slot = grads[*pid]
                        .get_or_insert_with(|| vec![E::zero(); tape.nodes[*pid].len]);
                    for (a, b) in slot.iter_mut().zip(&pg) {
                        *a = *a + *b;
                    }
                }
            }
        }
        grads
    }

    /// Accumulate `d loss / d leaf` into every `requires_grad` leaf reachable
    /// from `loss`. Repeated calls add up.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<()> {
        let root = self.node_id_of(loss)?;
        if loss.numel() != 1 {
            return Err(Error::NotScalar(loss.numel()));
        }
        let grads = self.run_reverse(root, 0);
        let tape = self.tape.borrow();
        for (id, slot) in grads.into_iter().enumerate() {
            if let (Some(g), Some(buf)) = (slot, &tape.nodes[id].leaf_grad) {
                let mut buf = buf.borrow_mut();
                for (a, b) in buf.iter_mut().zip(&g) {
                    *a = *a + *b;
                }
            }
        }
        Ok(())
    }

    /// Gradient of a scalar `target` with respect to any node on the tape,
    /// returned as a detached tensor. Leaf gradient buffers are not touched.
    pub fn grad_query(&self, target: &Tensor<E>, wrt: &Tensor<E>) -> Result<Tensor<E>> {
        let root = self.node_id_of(target)?;
        if target.numel() != 1 {
            return Err(Error::NotScalar(target.numel()));
        }
        let wrt_id = self.node_id_of(wrt)?;
        if wrt_id > root {
            return Err(Error::NotAncestor);
        }
        let grads = self.run_reverse(root, wrt_id);
        match &grads[wrt_id] {
            Some(g) => Tensor::from_vec(wrt.shape(), g.clone()),
            None => Err(Error::NotAncestor),
        }
    }
}
