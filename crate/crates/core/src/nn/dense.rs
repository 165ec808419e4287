//! Fully connected layer, `y = x W + b` with `W` stored `[f_in, f_out]`.

use super::init::{glorot_uniform, he_init, KernelShape};
use super::{Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::{Scalar, Trans};
use crate::tensor::Tensor;

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims<T: Scalar>(input: &[usize], weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ws = weight.shape();
    if ws.len() != 2 || input.len() != 2 || input[1] != ws[0] {
        return Err(Error::ShapeMismatch {
            op: "dense features",
            left: input.to_vec(),
            right: ws.to_vec(),
        });
    }
    Ok((input[0], ws[0], ws[1]))
}

pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f_in, f_out) = dims(input.shape(), weight)?;
    if bias.shape() != [f_out] {
        return Err(Error::ShapeMismatch {
            op: "dense bias",
            left: bias.shape().to_vec(),
            right: vec![f_out],
        });
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    T::gemm(n, f_in, f_out, input.data(), Trans::No, weight.data(), Trans::No, &mut out, true);
    Tensor::from_parts(vec![n, f_out], out).ensure_finite("dense_forward")
}

pub fn dense_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>, weight: &Tensor<T>) -> Result<DenseGrads<T>> {
    let (n, f_in, f_out) = dims(input.shape(), weight)?;
    if grad_out.shape() != [n, f_out] {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: grad_out.shape().to_vec(),
            right: vec![n, f_out],
        });
    }
    let go = grad_out.data();
    let mut gw = vec![T::zero(); f_in * f_out];
    T::gemm(f_in, n, f_out, input.data(), Trans::Yes, go, Trans::No, &mut gw, false);
    let mut gi = vec![T::zero(); n * f_in];
    T::gemm(n, f_out, f_in, go, Trans::No, weight.data(), Trans::Yes, &mut gi, false);
    let mut gb = vec![T::zero(); f_out];
    for row in go.chunks_exact(f_out) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_parts(vec![n, f_in], gi).ensure_finite("dense_backward")?,
        weight: Tensor::from_parts(vec![f_in, f_out], gw).ensure_finite("dense_backward")?,
        bias: Tensor::from_parts(vec![f_out], gb).ensure_finite("dense_backward")?,
    })
}

#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    /// He-initialised hidden layer; its weights carry L2 decay.
    pub fn new(f_in: usize, f_out: usize, rng: &mut SeededRng) -> Result<Self> {
        let w = he_init(rng, KernelShape::Dense { f_in, f_out })?;
        Self::from_tensors(w, Tensor::zeros(&[f_out])?)
    }

    /// Output layer: Glorot-uniform weights, no decay.
    pub fn output(f_in: usize, f_out: usize, rng: &mut SeededRng) -> Result<Self> {
        let w = glorot_uniform(rng, f_in, f_out)?;
        let mut layer = Self::from_tensors(w, Tensor::zeros(&[f_out])?)?;
        layer.weight.decay = false;
        Ok(layer)
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "dense parameters",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Dense {
            weight: Param::new(weight, true),
            bias: Param::new(bias, false),
            cache: None,
        })
    }

    pub fn f_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn f_out(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = dense_forward(input, &self.weight.value, &self.bias.value)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("dense backward called before forward"))?;
        let g = dense_backward(grad_out, &input, &self.weight.value)?;
        self.weight.accumulate(&g.weight);
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, _, f_out) = dims(input, &self.weight.value)?;
        Ok(vec![n, f_out])
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input() {
        let mut rng = SeededRng::new(1);
        let x: Tensor<f32> = rng.normal(&[3, 4], 0.0, 1.0).unwrap();
        let mut eye = Tensor::zeros(&[4, 4]).unwrap();
        for i in 0..4 {
            eye.set(&[i, i], 1.0);
        }
        let y = dense_forward(&x, &eye, &Tensor::zeros(&[4]).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let mut rng = SeededRng::new(2);
        let x: Tensor<f32> = rng.normal(&[3, 4], 0.0, 1.0).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -2.0]).unwrap();
        let y = dense_forward(&x, &Tensor::zeros(&[4, 2]).unwrap(), &b).unwrap();
        for r in 0..3 {
            assert_eq!(&y.data()[r * 2..r * 2 + 2], b.data());
        }
    }

    #[test]
    fn feature_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let w = Tensor::zeros(&[4, 2]).unwrap();
        assert!(matches!(
            dense_forward(&x, &w, &Tensor::zeros(&[2]).unwrap()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
