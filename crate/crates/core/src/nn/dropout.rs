//! Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time,
//! so inference is the identity.

use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DropoutState {
    pub rate: f64,
    pub mode: Mode,
    pub rng: SeededRng,
}

impl DropoutState {
    pub fn new(rate: f64, rng: SeededRng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutState {
            rate,
            mode: Mode::Train,
            rng,
        })
    }
}

/// Returns the output and, in train mode with a nonzero rate, the per-element
/// multiplier that was applied.
pub fn dropout_apply<T: Scalar>(input: &Tensor<T>, state: &mut DropoutState) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&state.rate) {
        return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", state.rate)));
    }
    if state.mode == Mode::Infer || state.rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - state.rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if state.rng.unit() < state.rate { T::zero() } else { keep })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::from_parts(input.shape().to_vec(), out), Some(mask)))
}

#[derive(Clone, Debug)]
pub struct Dropout<T> {
    pub state: DropoutState,
    mask: Option<Vec<T>>,
    /// Reuse the last mask instead of drawing a new one (gradient checking).
    pub freeze_mask: bool,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, rng: SeededRng) -> Result<Self> {
        Ok(Dropout {
            state: DropoutState::new(rate, rng)?,
            mask: None,
            freeze_mask: false,
        })
    }

    pub fn rate(&self) -> f64 {
        self.state.rate
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if self.freeze_mask && mode == Mode::Train {
            if let Some(mask) = self.mask.as_ref().filter(|m| m.len() == input.len()) {
                let out = input.data().iter().zip(mask).map(|(&x, &m)| x * m).collect();
                return Ok(Tensor::from_parts(input.shape().to_vec(), out));
            }
        }
        self.state.mode = mode;
        let (out, mask) = dropout_apply(input, &mut self.state)?;
        self.mask = mask;
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(mask) = &self.mask else {
            return Ok(grad_out.clone());
        };
        if mask.len() != grad_out.len() {
            return Err(Error::invalid("dropout backward: gradient does not match cached mask"));
        }
        let g = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
        Ok(Tensor::from_parts(grad_out.shape().to_vec(), g))
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }
}
