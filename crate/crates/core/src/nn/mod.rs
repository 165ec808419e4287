//! Layers with hand-written forward and backward passes.
//!
//! Every layer works on `[batch, ...]` tensors. Convolutional tensors are
//! `[batch, channels, height, width]`; dense tensors are `[batch, features]`.
//! `backward` must follow the `forward` whose cache it consumes, and adds its
//! parameter gradients into [`Param::grad`].

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod optim;
pub mod pool;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use activation::{relu, relu_backward, Flatten, Relu};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm, BatchNormCache, BatchNormState};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvGrads};
pub use dense::{dense_backward, dense_forward, Dense, DenseGrads};
pub use dropout::{dropout_apply, Dropout, DropoutState};
pub use gradcheck::{gradient_check, GradReport};
pub use init::{glorot_uniform, he_init, KernelShape};
pub use loss::{one_hot, softmax, softmax_crossentropy};
pub use optim::{sgd_step, OptimizerConfig};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, MaxPool2x2, PoolMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A trainable tensor with its gradient and momentum buffer.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
    /// Whether L2 weight decay applies (dense-layer weights only).
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>, decay: bool) -> Self {
        let zeros = Tensor::from_parts(value.shape().to_vec(), vec![T::zero(); value.len()]);
        Param {
            grad: zeros.clone(),
            velocity: zeros,
            value,
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Adds `g` into the gradient; shapes must agree.
    pub(crate) fn accumulate(&mut self, g: &Tensor<T>) {
        debug_assert_eq!(g.shape(), self.grad.shape());
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
}

pub trait Layer<T: Scalar> {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-trainable state that is still part of the model (running statistics).
    fn buffers(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}

/// One node of a layer stack. A closed enum keeps models `Clone` and makes
/// checkpoint traversal order explicit.
#[derive(Clone, Debug)]
pub enum LayerNode<T> {
    Conv(Conv2d<T>),
    Relu(Relu<T>),
    Pool(MaxPool2x2),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout<T>),
    Dense(Dense<T>),
    Flatten(Flatten),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            LayerNode::Conv($l) => $body,
            LayerNode::Relu($l) => $body,
            LayerNode::Pool($l) => $body,
            LayerNode::BatchNorm($l) => $body,
            LayerNode::Dropout($l) => $body,
            LayerNode::Dense($l) => $body,
            LayerNode::Flatten($l) => $body,
        }
    };
}

impl<T: Scalar> Layer<T> for LayerNode<T> {
    fn kind(&self) -> &'static str {
        dispatch!(self, l => Layer::<T>::kind(l))
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        dispatch!(self, l => l.forward(input, mode))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        dispatch!(self, l => l.backward(grad_out))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        dispatch!(self, l => Layer::<T>::output_shape(l, input))
    }

    fn params(&self) -> Vec<&Param<T>> {
        dispatch!(self, l => l.params())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        dispatch!(self, l => l.params_mut())
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        dispatch!(self, l => l.buffers())
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        dispatch!(self, l => l.buffers_mut())
    }
}

/// Runs `layers` in order.
pub fn forward_stack<T: Scalar>(layers: &mut [LayerNode<T>], input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    let mut x = input.clone();
    for layer in layers.iter_mut() {
        x = layer.forward(&x, mode)?;
    }
    Ok(x)
}

pub fn backward_stack<T: Scalar>(layers: &mut [LayerNode<T>], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = grad_out.clone();
    for layer in layers.iter_mut().rev() {
        g = layer.backward(&g)?;
    }
    Ok(g)
}

pub fn stack_output_shape<T: Scalar>(layers: &[LayerNode<T>], input: &[usize]) -> Result<Vec<usize>> {
    layers
        .iter()
        .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
}
