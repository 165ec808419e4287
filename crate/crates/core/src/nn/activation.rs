use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let out = input.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_parts(input.shape().to_vec(), out)
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu_backward",
            left: grad_out.shape().to_vec(),
            right: input.shape().to_vec(),
        });
    }
    let g = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_parts(input.shape().to_vec(), g))
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { cache: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.cache = Some(input.clone());
        Ok(relu(input))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("relu backward called before forward"))?;
        relu_backward(grad_out, &input)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }
}

/// `[n, ...] -> [n, prod(...)]`.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let shape = Layer::<T>::output_shape(self, input.shape())?;
        self.input_shape = Some(input.shape().to_vec());
        input.clone().reshape(&shape)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::invalid("flatten backward called before forward"))?;
        grad_out.clone().reshape(&shape)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input.split_first() {
            Some((&n, rest)) => Ok(vec![n, rest.iter().product()]),
            None => Err(Error::invalid("flatten needs a batch axis")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_signs() {
        let neg = Tensor::<f32>::from_vec(&[3], vec![-1.0, -0.5, -3.0]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::<f32>::from_vec(&[3], vec![1.0, 0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::full(&[3], 1.0).unwrap();
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }
}
