//! Dense f64 tensors with eager reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations on
//! tensors that require gradients record their inputs, so calling
//! [`Tensor::backward`] on a scalar result walks the graph once in reverse
//! topological order. The graph lives exactly as long as the tensors that
//! reference it.

mod backward;
mod gradcheck;
pub mod io;
pub(crate) mod kernels;
mod ops;

use std::fmt;
use std::rc::Rc;

pub use backward::Gradients;
pub use gradcheck::grad_check;
pub use ops::{conv_output_dim, Conv2dParams};

use crate::error::{Error, Result};

/// Function pointer pair used by [`Tensor::map_with_grad`].
pub type ElementFn = fn(f64) -> f64;

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

pub(crate) struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Option<Op>,
}

/// The recorded operation that produced a non-leaf tensor.
pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRowBias(Tensor, Tensor),
    AddChannelBias(Tensor, Tensor),
    ScaleChannels(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Relu(Tensor),
    Tanh(Tensor),
    Sigmoid(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Clamp(Tensor, f64, f64),
    Map(Tensor, ElementFn),
    Sum(Tensor),
    Mean(Tensor),
    SumAxis(Tensor, usize),
    MaxAxis(Tensor, usize, Vec<usize>),
    MatMul(Tensor, Tensor),
    Softmax(Tensor, usize),
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        cols: Vec<f64>,
        geom: kernels::ConvGeom,
    },
    Concat(Vec<Tensor>, usize),
    Narrow(Tensor, usize, usize),
    Gather(Tensor, Vec<usize>),
    Reshape(Tensor),
    Bilinear {
        fmap: Tensor,
        coords: Tensor,
        scale: f64,
    },
    Upsample(Tensor, usize),
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        use Op::*;
        match self {
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddRowBias(a, b)
            | AddChannelBias(a, b)
            | ScaleChannels(a, b)
            | MatMul(a, b) => vec![a, b],
            Scale(a, _)
            | AddScalar(a)
            | Relu(a)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a)
            | Clamp(a, _, _)
            | Map(a, _)
            | Sum(a)
            | Mean(a)
            | SumAxis(a, _)
            | MaxAxis(a, _, _)
            | Softmax(a, _)
            | Narrow(a, _, _)
            | Gather(a, _)
            | Reshape(a)
            | Upsample(a, _) => vec![a],
            Conv2d { input, kernel, .. } => vec![input, kernel],
            Concat(parts, _) => parts.iter().collect(),
            Bilinear { fmap, coords, .. } => vec![fmap, coords],
        }
    }
}

impl Tensor {
    /// Builds a constant tensor. Fails if `data.len()` does not match `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self::raw(shape.to_vec(), data, false, None))
    }

    /// Builds a leaf tensor tracked for gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::raw(t.0.shape.clone(), t.0.data.clone(), true, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(vec![], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![v; n], false, None)
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            op,
        }))
    }

    /// Result of an operation; the op is kept only if some input needs gradients.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Self {
        let track = op.parents().iter().any(|p| p.requires_grad());
        if track {
            Self::raw(shape, data, true, Some(op))
        } else {
            Self::raw(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("tensor has shape {:?}", self.shape())));
        }
        Ok(self.0.data[0])
    }

    /// Copy of the values without graph history.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.0.op.as_ref()
    }

    pub(crate) fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape() {
            [a, b, c] => Ok((*a, *b, *c)),
            s => Err(Error::shape(op, format!("expected rank 3, got shape {s:?}"))),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("leaf", &self.is_leaf())
            .finish()
    }
}
