//! Stride-1 "same" convolution with 1x1 or 3x3 kernels, via im2col + GEMM.

use super::init::{he_init, KernelShape};
use super::{Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::{Scalar, Trans};
use crate::tensor::Tensor;

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Geometry {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

fn geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Geometry> {
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] || !(ws[2] == 1 || ws[2] == 3) {
        return Err(Error::invalid(format!(
            "conv kernel must be [out, in, k, k] with k in {{1, 3}}, got {ws:?}"
        )));
    }
    if let Some(bias) = bias.filter(|b| b.shape() != [ws[0]]) {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: bias.shape().to_vec(),
            right: vec![ws[0]],
        });
    }
    let is = input.shape();
    if is.len() != 4 || is[1] != ws[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d input channels",
            left: is.to_vec(),
            right: ws.to_vec(),
        });
    }
    Ok(Geometry {
        batch: is[0],
        c_in: is[1],
        c_out: ws[0],
        h: is[2],
        w: is[3],
        k: ws[2],
    })
}

/// Copies one zero-padded shifted row; `shift` is the source column offset.
fn shifted_row<T: Scalar>(dst: &mut [T], src: &[T], shift: isize) {
    let w = dst.len();
    let d = shift.unsigned_abs().min(w);
    if shift >= 0 {
        dst[..w - d].copy_from_slice(&src[d..]);
        dst[w - d..].fill(T::zero());
    } else {
        dst[..d].fill(T::zero());
        dst[d..].copy_from_slice(&src[..w - d]);
    }
}

/// `cols[(c*k + ky)*k + kx, y*w + x] = x[c, y + ky - pad, x + kx - pad]`, zero outside.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let (h, w, k, hw) = (g.h, g.w, g.k, g.hw());
    let pad = (k / 2) as isize;
    for c in 0..g.c_in {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.fill(T::zero());
                    } else {
                        let sy = sy as usize;
                        shifted_row(drow, &plane[sy * w..(sy + 1) * w], kx as isize - pad);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let (h, w, k, hw) = (g.h, g.w, g.k, g.hw());
    let pad = (k / 2) as isize;
    for c in 0..g.c_in {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let shift = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let srow = &src[y * w..(y + 1) * w];
                    let drow = &mut plane[sy * w..(sy + 1) * w];
                    for (xo, &v) in srow.iter().enumerate() {
                        let sx = xo as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input, weight, Some(bias))?;
    let (hw, patch) = (g.hw(), g.patch());
    let mut out = vec![T::zero(); g.batch * g.c_out * hw];
    let mut cols = if g.k == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
    for n in 0..g.batch {
        let x = &input.data()[n * g.c_in * hw..(n + 1) * g.c_in * hw];
        let o = &mut out[n * g.c_out * hw..(n + 1) * g.c_out * hw];
        for (c, plane) in o.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias.data()[c]);
        }
        let src: &[T] = if g.k == 1 {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        T::gemm(g.c_out, patch, hw, weight.data(), Trans::No, src, Trans::No, o, true);
    }
    Tensor::from_parts(vec![g.batch, g.c_out, g.h, g.w], out).ensure_finite("conv2d_forward")
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, None)?;
    if grad_out.shape() != [g.batch, g.c_out, g.h, g.w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: grad_out.shape().to_vec(),
            right: vec![g.batch, g.c_out, g.h, g.w],
        });
    }
    let (hw, patch) = (g.hw(), g.patch());
    let mut gw = vec![T::zero(); g.c_out * patch];
    let mut gb = vec![T::zero(); g.c_out];
    let mut gi = vec![T::zero(); input.len()];
    let mut cols = vec![T::zero(); patch * hw];
    let mut gcols = vec![T::zero(); patch * hw];
    for n in 0..g.batch {
        let x = &input.data()[n * g.c_in * hw..(n + 1) * g.c_in * hw];
        let go = &grad_out.data()[n * g.c_out * hw..(n + 1) * g.c_out * hw];
        for (c, plane) in go.chunks_exact(hw).enumerate() {
            gb[c] += plane.iter().copied().sum();
        }
        let gx = &mut gi[n * g.c_in * hw..(n + 1) * g.c_in * hw];
        if g.k == 1 {
            T::gemm(g.c_out, hw, patch, go, Trans::No, x, Trans::Yes, &mut gw, true);
            T::gemm(patch, g.c_out, hw, weight.data(), Trans::Yes, go, Trans::No, gx, false);
        } else {
            im2col(x, &g, &mut cols);
            T::gemm(g.c_out, hw, patch, go, Trans::No, &cols, Trans::Yes, &mut gw, true);
            T::gemm(patch, g.c_out, hw, weight.data(), Trans::Yes, go, Trans::No, &mut gcols, false);
            col2im(&gcols, &g, gx);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(input.shape().to_vec(), gi).ensure_finite("conv2d_backward")?,
        weight: Tensor::from_parts(weight.shape().to_vec(), gw).ensure_finite("conv2d_backward")?,
        bias: Tensor::from_parts(vec![g.c_out], gb).ensure_finite("conv2d_backward")?,
    })
}

/// Convolution layer: He-initialised kernels, zero biases.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut SeededRng) -> Result<Self> {
        let shape = KernelShape::Conv {
            c_out,
            c_in,
            kernel,
        };
        let weight = he_init(rng, shape)?;
        Self::from_tensors(weight, Tensor::zeros(&[c_out])?)
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let c_in = weight.shape().get(1).copied().unwrap_or(1);
        geometry(&Tensor::zeros(&[1, c_in, 1, 1])?, &weight, Some(&bias))?;
        Ok(Conv2d {
            weight: Param::new(weight, false),
            bias: Param::new(bias, false),
            cache: None,
        })
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> &'static str {
        if self.kernel() == 1 {
            "conv1x1"
        } else {
            "conv3x3"
        }
    }

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = conv2d_forward(input, &self.weight.value, &self.bias.value)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("conv2d backward called before forward"))?;
        let grads = conv2d_backward(grad_out, &input, &self.weight.value)?;
        self.weight.accumulate(&grads.weight);
        self.bias.accumulate(&grads.bias);
        Ok(grads.input)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1] != self.c_in() {
            return Err(Error::ShapeMismatch {
                op: "conv2d input channels",
                left: input.to_vec(),
                right: self.weight.value.shape().to_vec(),
            });
        }
        Ok(vec![input[0], self.c_out(), input[2], input[3]])
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

    /// Six nested loops, no im2col; the independent reference.
    fn conv_oracle(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, k) = (wt.shape()[0], wt.shape()[2]);
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(&[n, co, h, w]).unwrap();
        for b_ in 0..n {
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - pad;
                                    let sx = xx as isize + kx as isize - pad;
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                        acc += wt.at(&[o, c, ky, kx]) * x.at(&[b_, c, sy as usize, sx as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[b_, o, y, xx], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut rng = SeededRng::new(1);
        let x: Tensor<f32> = rng.normal(&[2, 1, 4, 5], 0.0, 1.0).unwrap();
        let w = Tensor::full(&[1, 1, 1, 1], 1.0).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert_eq!(conv2d_forward(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn ones_3x3_center_is_nine() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
    }

    #[test]
    fn random_conv_matches_nested_loops() {
        let mut rng = SeededRng::new(11);
        for k in [1, 3] {
            let x: Tensor<f64> = rng.normal(&[1, 2, 5, 5], 0.0, 1.0).unwrap();
            let w: Tensor<f64> = rng.normal(&[4, 2, k, k], 0.0, 1.0).unwrap();
            let b: Tensor<f64> = rng.normal(&[4], 0.0, 1.0).unwrap();
            let got = conv2d_forward(&x, &w, &b).unwrap();
            let want = conv_oracle(&x, &w, &b);
            for (g, e) in got.data().iter().zip(want.data()) {
                assert!((g - e).abs() <= 1e-6 * e.abs().max(1.0), "{g} vs {e}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::zeros(&[2, 2, 3, 3]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(conv2d_forward(&x, &w, &b), Err(Error::ShapeMismatch { .. })));
        let w5 = Tensor::zeros(&[2, 3, 5, 5]).unwrap();
        assert!(conv2d_forward(&x, &w5, &b).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = SeededRng::new(2);
        let x: Tensor<f32> = rng.normal(&[2, 3, 4, 4], 0.0, 1.0).unwrap();
        let w: Tensor<f32> = rng.normal(&[5, 3, 3, 3], 0.0, 1.0).unwrap();
        let go = Tensor::zeros(&[2, 5, 4, 4]).unwrap();
        let g = conv2d_backward(&go, &x, &w).unwrap();
        assert!(g.input.data().iter().chain(g.weight.data()).chain(g.bias.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_of_sum_is_area() {
        let mut rng = SeededRng::new(3);
        let (h, w) = (6, 7);
        let x: Tensor<f64> = rng.normal(&[1, 2, h, w], 0.0, 1.0).unwrap();
        let wt: Tensor<f64> = rng.normal(&[3, 2, 3, 3], 0.0, 1.0).unwrap();
        let go = Tensor::full(&[1, 3, h, w], 1.0).unwrap();
        let g = conv2d_backward(&go, &x, &wt).unwrap();
        assert!(g.bias.data().iter().all(|&v| v == (h * w) as f64));
    }

    #[test]
    fn same_padding_keeps_spatial_dims() {
        let mut rng = SeededRng::new(4);
        for k in [1, 3] {
            let mut conv = Conv2d::<f32>::new(2, 3, k, &mut rng).unwrap();
            let x = Tensor::zeros(&[1, 2, 7, 9]).unwrap();
            assert_eq!(conv.forward(&x, Mode::Infer).unwrap().shape(), &[1, 3, 7, 9]);
        }
    }

    #[test]
    fn narrow_images_are_handled() {
        // width 1 appears after four poolings of a 16-pixel side
        let mut rng = SeededRng::new(5);
        let x: Tensor<f64> = rng.normal(&[2, 2, 1, 1], 0.0, 1.0).unwrap();
        let w: Tensor<f64> = rng.normal(&[3, 2, 3, 3], 0.0, 1.0).unwrap();
        let b: Tensor<f64> = rng.normal(&[3], 0.0, 1.0).unwrap();
        let got = conv2d_forward(&x, &w, &b).unwrap();
        let want = conv_oracle(&x, &w, &b);
        for (g, e) in got.data().iter().zip(want.data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}
