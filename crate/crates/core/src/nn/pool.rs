//! 2x2 non-overlapping max pooling with floor semantics.

use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Winner positions of a pooling pass, as flat input offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolMask {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolMask {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

fn pooled_shape(shape: &[usize]) -> Result<Vec<usize>> {
    if shape.len() != 4 {
        return Err(Error::invalid(format!("maxpool expects [n, c, h, w], got {shape:?}")));
    }
    if shape[2] < 2 || shape[3] < 2 {
        return Err(Error::invalid(format!("maxpool needs h, w >= 2, got {shape:?}")));
    }
    Ok(vec![shape[0], shape[1], shape[2] / 2, shape[3] / 2])
}

/// Odd trailing rows/columns are discarded. Ties go to the first position in
/// row-major scan order.
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolMask)> {
    let out_shape = pooled_shape(input.shape())?;
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let planes = out_shape[0] * out_shape[1];
    let x = input.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let mask = PoolMask {
        input_shape: input.shape().to_vec(),
        output_shape: out_shape.clone(),
        argmax,
    };
    Ok((Tensor::from_parts(out_shape, out), mask))
}

pub fn maxpool2x2_backward<T: Scalar>(grad_out: &Tensor<T>, mask: &PoolMask) -> Result<Tensor<T>> {
    if grad_out.shape() != mask.output_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "maxpool2x2_backward",
            left: grad_out.shape().to_vec(),
            right: mask.output_shape.clone(),
        });
    }
    let mut gi = vec![T::zero(); mask.input_shape.iter().product()];
    for (&pos, &g) in mask.argmax.iter().zip(grad_out.data()) {
        gi[pos] += g;
    }
    Ok(Tensor::from_parts(mask.input_shape.clone(), gi))
}

#[derive(Clone, Debug, Default)]
pub struct MaxPool2x2 {
    mask: Option<PoolMask>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2x2 {
    fn kind(&self) -> &'static str {
        "maxpool2x2"
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (out, mask) = maxpool2x2_forward(input)?;
        self.mask = Some(mask);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::invalid("maxpool backward called before forward"))?;
        maxpool2x2_backward(grad_out, &mask)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        pooled_shape(input)
    }
}
