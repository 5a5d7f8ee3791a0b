//! Reverse-mode automatic differentiation over 4-axis tensors.
//!
//! The surface is deliberately small: exactly the operators the U-Net and
//! its losses need, recorded on a dynamically built tape. A tape and the
//! tensors hanging off it are confined to one thread; distinct graphs can
//! run in parallel.

mod adam;
mod ops;

pub use adam::AdamState;
pub(crate) use ops::sigmoid;
pub use ops::{
    bce_with_logits_loss, concat_channels, conv2d, l1_loss, leaky_relu, standardize,
    upsample2x_nearest,
};

use crate::{PxfrError, Result};
use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

/// Axis sizes of a 4-axis tensor: (batch, channels, height, width).
/// Convolution kernels reuse the same layout as (out, in, kh, kw).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of (n, c, y, x) in row-major order.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

struct TensorInner {
    shape: Shape,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: Cell<bool>,
}

/// Dense 4-axis f32 tensor with an optional gradient buffer.
///
/// Cheap to clone (shared storage). Interior mutability is used by the
/// tape during backward passes and by the optimizer during updates.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Tensor> {
        if data.len() != shape.len() {
            return Err(PxfrError::ShapeMismatch(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(TensorInner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
            }),
        })
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; shape.len()]).expect("zeros: consistent by construction")
    }

    pub fn full(shape: Shape, value: f32) -> Tensor {
        Tensor::from_vec(shape, vec![value; shape.len()]).expect("full: consistent by construction")
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![value]).expect("scalar")
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.inner.data.borrow_mut()
    }

    pub fn grad(&self) -> Ref<'_, Option<Vec<f32>>> {
        self.inner.grad.borrow()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Marks this tensor as a differentiation target and returns it.
    pub fn with_grad(self) -> Tensor {
        self.inner.requires_grad.set(true);
        self
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.shape().len());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Value of a 1x1x1x1 tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.shape().len(), 1);
        self.data()[0]
    }

    /// Deep copy with fresh storage and no gradient.
    pub fn detached(&self) -> Tensor {
        Tensor::from_vec(self.shape(), self.data().clone()).expect("detached: same shape")
    }

    /// Two tensors are the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.data().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PxfrError::NonFinite(context.to_string()))
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor({}, requires_grad={})",
            self.shape(),
            self.requires_grad()
        )
    }
}

type BackwardFn = Box<dyn Fn()>;

/// Dynamically recorded backward tape.
///
/// Ops push a closure when any input requires a gradient; `backward` runs
/// the closures in reverse recording order, which is a valid topological
/// order because the graph is built sequentially.
#[derive(Default)]
pub struct Tape {
    records: RefCell<Vec<BackwardFn>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub(crate) fn record(&self, f: BackwardFn) {
        self.records.borrow_mut().push(f);
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Seeds `loss` with gradient 1 and propagates through the tape.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.shape().len() != 1 {
            return Err(PxfrError::InvalidInput(format!(
                "backward expects a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        loss.accumulate_grad(&[1.0]);
        for record in self.records.borrow().iter().rev() {
            record();
        }
        Ok(())
    }

    /// Seeds `output` with an arbitrary cotangent and propagates. Useful
    /// for vector-Jacobian products against non-scalar outputs.
    pub fn backward_seeded(&self, output: &Tensor, cotangent: &[f32]) -> Result<()> {
        if cotangent.len() != output.shape().len() {
            return Err(PxfrError::ShapeMismatch(format!(
                "backward_seeded: cotangent length {} vs output shape {}",
                cotangent.len(),
                output.shape()
            )));
        }
        output.accumulate_grad(cotangent);
        for record in self.records.borrow().iter().rev() {
            record();
        }
        Ok(())
    }

    /// Drops all recorded closures, releasing intermediate tensors.
    pub fn clear(&self) {
        self.records.borrow_mut().clear();
    }
}
