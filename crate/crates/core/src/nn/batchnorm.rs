//! Batch normalisation over the channel axis (axis 1).
//!
//! For `[n, c, h, w]` inputs statistics are taken per channel over batch and
//! spatial positions; for `[n, f]` inputs per feature over the batch.
//! Statistics accumulate in `f64`.

use super::{Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct BatchNormState<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    /// Weight kept by the running statistics at each update.
    pub momentum: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNormState {
            gamma: Param::new(Tensor::full(&[channels], T::one())?, false),
            beta: Param::new(Tensor::zeros(&[channels])?, false),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

/// Values saved by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    shape: Vec<usize>,
    x_hat: Vec<T>,
    inv_std: Vec<f64>,
}

struct Layout {
    batch: usize,
    channels: usize,
    inner: usize,
}

impl Layout {
    fn of(shape: &[usize], channels: usize) -> Result<Self> {
        if shape.len() < 2 || shape[1] != channels {
            return Err(Error::ShapeMismatch {
                op: "batchnorm channels",
                left: shape.to_vec(),
                right: vec![channels],
            });
        }
        Ok(Layout {
            batch: shape[0],
            channels,
            inner: shape[2..].iter().product(),
        })
    }

    fn count(&self) -> usize {
        self.batch * self.inner
    }

    /// Visits the flat offsets of channel `c`.
    fn for_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for n in 0..self.batch {
            let start = (n * self.channels + c) * self.inner;
            (start..start + self.inner).for_each(&mut f);
        }
    }
}

pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let lay = Layout::of(input.shape(), state.channels())?;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    match mode {
        Mode::Infer => {
            for c in 0..lay.channels {
                let mean = state.running_mean.data()[c].as_f64();
                let inv = 1.0 / (state.running_var.data()[c].as_f64() + state.epsilon).sqrt();
                let g = state.gamma.value.data()[c].as_f64();
                let b = state.beta.value.data()[c].as_f64();
                lay.for_channel(c, |i| out[i] = T::lit((x[i].as_f64() - mean) * inv * g + b));
            }
            let out = Tensor::from_parts(input.shape().to_vec(), out).ensure_finite("batchnorm_forward")?;
            Ok((out, None))
        }
        Mode::Train => {
            if lay.batch < 2 {
                return Err(Error::invalid("batchnorm train mode needs a batch of at least 2"));
            }
            let m = lay.count() as f64;
            let mut x_hat = vec![T::zero(); x.len()];
            let mut inv_std = Vec::with_capacity(lay.channels);
            for c in 0..lay.channels {
                let mut sum = 0.0;
                lay.for_channel(c, |i| sum += x[i].as_f64());
                let mean = sum / m;
                let mut sq = 0.0;
                lay.for_channel(c, |i| sq += (x[i].as_f64() - mean).powi(2));
                let var = sq / m;
                let inv = 1.0 / (var + state.epsilon).sqrt();
                let g = state.gamma.value.data()[c].as_f64();
                let b = state.beta.value.data()[c].as_f64();
                lay.for_channel(c, |i| {
                    let xh = (x[i].as_f64() - mean) * inv;
                    x_hat[i] = T::lit(xh);
                    out[i] = T::lit(xh * g + b);
                });
                inv_std.push(inv);

                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                let mo = state.momentum;
                let rm = &mut state.running_mean.data_mut()[c];
                *rm = T::lit(mo * rm.as_f64() + (1.0 - mo) * mean);
                let rv = &mut state.running_var.data_mut()[c];
                *rv = T::lit(mo * rv.as_f64() + (1.0 - mo) * unbiased);
            }
            let out = Tensor::from_parts(input.shape().to_vec(), out).ensure_finite("batchnorm_forward")?;
            let cache = BatchNormCache {
                shape: input.shape().to_vec(),
                x_hat,
                inv_std,
            };
            Ok((out, Some(cache)))
        }
    }
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for a train-mode forward.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: Option<&BatchNormCache<T>>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let cache = cache.ok_or_else(|| Error::invalid("batchnorm backward without a train-mode cache"))?;
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_backward",
            left: grad_out.shape().to_vec(),
            right: cache.shape.clone(),
        });
    }
    let lay = Layout::of(&cache.shape, gamma.len())?;
    let m = lay.count() as f64;
    let dy = grad_out.data();
    let mut gx = vec![T::zero(); dy.len()];
    let mut g_gamma = Vec::with_capacity(lay.channels);
    let mut g_beta = Vec::with_capacity(lay.channels);
    for c in 0..lay.channels {
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        lay.for_channel(c, |i| {
            let d = dy[i].as_f64();
            sum_dy += d;
            sum_dy_xh += d * cache.x_hat[i].as_f64();
        });
        g_gamma.push(T::lit(sum_dy_xh));
        g_beta.push(T::lit(sum_dy));
        let scale = gamma.data()[c].as_f64() * cache.inv_std[c] / m;
        lay.for_channel(c, |i| {
            let xh = cache.x_hat[i].as_f64();
            gx[i] = T::lit(scale * (m * dy[i].as_f64() - sum_dy - xh * sum_dy_xh));
        });
    }
    let c = lay.channels;
    Ok((
        Tensor::from_parts(cache.shape.clone(), gx).ensure_finite("batchnorm_backward")?,
        Tensor::from_parts(vec![c], g_gamma).ensure_finite("batchnorm_backward")?,
        Tensor::from_parts(vec![c], g_beta).ensure_finite("batchnorm_backward")?,
    ))
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub state: BatchNormState<T>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            state: BatchNormState::new(channels)?,
            cache: None,
        })
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, cache) = batchnorm_forward(input, &mut self.state, mode)?;
        self.cache = cache;
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take();
        let (gi, gg, gb) = batchnorm_backward(grad_out, cache.as_ref(), &self.state.gamma.value)?;
        self.state.gamma.accumulate(&gg);
        self.state.beta.accumulate(&gb);
        Ok(gi)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Layout::of(input, self.state.channels())?;
        Ok(input.to_vec())
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.state.gamma, &self.state.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.state.gamma, &mut self.state.beta]
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        vec![&self.state.running_mean, &self.state.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.state.running_mean, &mut self.state.running_var]
    }
}
