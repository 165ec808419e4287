use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelShape {
    /// `[c_out, c_in, kernel, kernel]`
    Conv { c_out: usize, c_in: usize, kernel: usize },
    /// `[f_in, f_out]`
    Dense { f_in: usize, f_out: usize },
}

impl KernelShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            KernelShape::Conv { c_out, c_in, kernel } => vec![c_out, c_in, kernel, kernel],
            KernelShape::Dense { f_in, f_out } => vec![f_in, f_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            KernelShape::Conv { c_in, kernel, .. } => c_in * kernel * kernel,
            KernelShape::Dense { f_in, .. } => f_in,
        }
    }
}

/// Gaussian with mean 0 and standard deviation `sqrt(2 / fan_in)`.
pub fn he_init<T: Scalar>(rng: &mut SeededRng, shape: KernelShape) -> Result<Tensor<T>> {
    let fan_in = shape.fan_in();
    if fan_in == 0 {
        return Err(Error::InvalidShape(shape.dims()));
    }
    rng.normal(&shape.dims(), 0.0, (2.0 / fan_in as f64).sqrt())
}

/// Uniform on `±sqrt(6 / (f_in + f_out))`, used for the softmax output layer.
pub fn glorot_uniform<T: Scalar>(rng: &mut SeededRng, f_in: usize, f_out: usize) -> Result<Tensor<T>> {
    let limit = (6.0 / (f_in + f_out) as f64).sqrt();
    rng.uniform(&[f_in, f_out], -limit, limit)
}
