//! Central finite-difference gradient checking in `f64`.
//!
//! A layer is reduced to the scalar `L = sum(forward(x) * R)` for a fixed
//! random projection `R`, whose analytic gradient is `backward(R)`. Errors are
//! reported per tensor as `|a - n| / (|a| + |n|)` over the checked
//! coordinates, Euclidean norms throughout.

use super::{one_hot, softmax_crossentropy, BatchNorm, Conv2d, Dense, Dropout, Layer, MaxPool2x2, Mode, Relu};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
/// Coordinates checked per tensor; larger tensors are sampled.
pub const MAX_COORDS: usize = 64;

#[derive(Clone, Debug)]
pub struct GradEntry {
    pub tensor: String,
    pub relative_error: f64,
    pub coords: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().map(|e| e.relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error() < tolerance
    }
}

/// Gradient norms below this are treated as zero: the error is then measured
/// against the floor, so two vanishing gradients do not compare as noise.
pub const NORM_FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a| + |n|, NORM_FLOOR)` over the sampled coordinates.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    relative_error_floored(analytic, numeric, NORM_FLOOR)
}

/// [`relative_error`] with a caller-chosen floor on the scale.
pub fn relative_error_floored(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(floor)
}

pub(crate) fn sample_coords(len: usize, max: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > max {
        rng.shuffle(&mut idx);
        idx.truncate(max);
        idx.sort_unstable();
    }
    idx
}

/// Central difference of `f` at each coordinate of `x`, restoring `x` afterwards.
pub fn numeric_gradient(
    x: &mut [f64],
    coords: &[usize],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(x)?;
            x[i] = orig - FD_STEP;
            let down = f(x)?;
            x[i] = orig;
            Ok((up - down) / (2.0 * FD_STEP))
        })
        .collect()
}

fn projected<L: Layer<f64> + ?Sized>(layer: &mut L, x: &Tensor<f64>, proj: &Tensor<f64>, mode: Mode) -> Result<f64> {
    let out = layer.forward(x, mode)?;
    Ok(out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
}

/// Compares the analytic input and parameter gradients of `layer` against
/// central differences.
pub fn gradient_check<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    input: &Tensor<f64>,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<GradReport> {
    let out = layer.forward(input, mode)?;
    let proj: Tensor<f64> = rng.normal(out.shape(), 0.0, 1.0)?;
    layer.forward(input, mode)?;
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let grad_in = layer.backward(&proj)?;
    let analytic_params: Vec<Tensor<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradReport::default();
    let coords = sample_coords(input.len(), MAX_COORDS, rng);
    let mut x = input.clone();
    let shape = x.shape().to_vec();
    let numeric = numeric_gradient(x.data_mut(), &coords, |d| {
        let t = Tensor::from_vec(&shape, d.to_vec())?;
        projected(layer, &t, &proj, mode)
    })?;
    let analytic: Vec<f64> = coords.iter().map(|&i| grad_in.data()[i]).collect();
    report.entries.push(GradEntry {
        tensor: "input".into(),
        relative_error: relative_error(&analytic, &numeric),
        coords: coords.len(),
    });

    for (pi, analytic_p) in analytic_params.iter().enumerate() {
        let coords = sample_coords(analytic_p.len(), MAX_COORDS, rng);
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = layer.params()[pi].value.data()[c];
            let mut eval = |v: f64| -> Result<f64> {
                layer.params_mut()[pi].value.data_mut()[c] = v;
                projected(layer, input, &proj, mode)
            };
            let up = eval(orig + FD_STEP)?;
            let down = eval(orig - FD_STEP)?;
            layer.params_mut()[pi].value.data_mut()[c] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let analytic: Vec<f64> = coords.iter().map(|&c| analytic_p.data()[c]).collect();
        report.entries.push(GradEntry {
            tensor: format!("param{pi}"),
            relative_error: relative_error(&analytic, &numeric),
            coords: coords.len(),
        });
    }
    Ok(report)
}

/// Checks `softmax_crossentropy`'s logit gradient against central differences.
pub fn check_softmax_crossentropy(logits: &Tensor<f64>, labels: &Tensor<f64>) -> Result<GradReport> {
    let (_, grad) = softmax_crossentropy(logits, labels)?;
    let coords: Vec<usize> = (0..logits.len()).collect();
    let mut x = logits.clone();
    let shape = x.shape().to_vec();
    let numeric = numeric_gradient(x.data_mut(), &coords, |d| {
        softmax_crossentropy(&Tensor::from_vec(&shape, d.to_vec())?, labels).map(|(l, _)| l)
    })?;
    Ok(GradReport {
        entries: vec![GradEntry {
            tensor: "logits".into(),
            relative_error: relative_error(grad.data(), &numeric),
            coords: coords.len(),
        }],
    })
}

/// Result of checking one layer kind over several random instances.
#[derive(Clone, Debug)]
pub struct BatteryCase {
    pub name: &'static str,
    pub errors: Vec<f64>,
    pub tolerance: f64,
}

impl BatteryCase {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.errors.is_empty() && self.max_error() < self.tolerance
    }
}

/// Values spaced at least `gap` apart in random order, so pooling has no
/// near-ties within a finite-difference step.
fn spaced(shape: &[usize], gap: f64, rng: &mut SeededRng) -> Result<Tensor<f64>> {
    let len: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..len).map(|i| (i as f64 - len as f64 / 2.0) * gap).collect();
    rng.shuffle(&mut v);
    Tensor::from_vec(shape, v)
}

/// Normal draws pushed at least `margin` away from zero (ReLU kink).
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut SeededRng) -> Result<Tensor<f64>> {
    let t: Tensor<f64> = rng.normal(shape, 0.0, 1.0)?;
    t.map(|v| v.signum() * (v.abs() + margin))
}

/// Runs every layer kind through `instances` random gradient checks.
pub fn layer_battery(seed: u64, instances: usize) -> Result<Vec<BatteryCase>> {
    let root = SeededRng::new(seed);
    let mut cases = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut SeededRng) -> Result<f64>| -> Result<()> {
        let mut errors = Vec::with_capacity(instances);
        for i in 0..instances {
            let mut rng = root.fork(cases.len() as u64 * 1000 + i as u64);
            errors.push(f(&mut rng)?);
        }
        cases.push(BatteryCase {
            name,
            errors,
            tolerance: LAYER_TOLERANCE,
        });
        Ok(())
    };

    run("conv3x3", &mut |rng| {
        let mut layer = Conv2d::<f64>::new(2, 3, 3, rng)?;
        layer.bias.value = rng.normal(&[3], 0.0, 0.5)?;
        let x = rng.normal(&[2, 2, 5, 6], 0.0, 1.0)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("conv1x1", &mut |rng| {
        let mut layer = Conv2d::<f64>::new(3, 2, 1, rng)?;
        layer.bias.value = rng.normal(&[2], 0.0, 0.5)?;
        let x = rng.normal(&[2, 3, 4, 5], 0.0, 1.0)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("maxpool2x2", &mut |rng| {
        let mut layer = MaxPool2x2::new();
        let x = spaced(&[2, 2, 5, 7], 0.01, rng)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("batchnorm", &mut |rng| {
        let mut layer = BatchNorm::<f64>::new(3)?;
        layer.state.gamma.value = rng.uniform(&[3], 0.5, 1.5)?;
        layer.state.beta.value = rng.normal(&[3], 0.0, 0.5)?;
        let x = rng.normal(&[4, 3, 3, 3], 1.0, 2.0)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("batchnorm_dense", &mut |rng| {
        let mut layer = BatchNorm::<f64>::new(5)?;
        layer.state.gamma.value = rng.uniform(&[5], 0.5, 1.5)?;
        let x = rng.normal(&[6, 5], 0.0, 1.0)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("dense", &mut |rng| {
        let mut layer = Dense::<f64>::new(6, 3, rng)?;
        layer.bias.value = rng.normal(&[3], 0.0, 0.5)?;
        let x = rng.normal(&[4, 6], 0.0, 1.0)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("relu", &mut |rng| {
        let mut layer = Relu::<f64>::new();
        let x = away_from_zero(&[3, 2, 4, 4], 0.05, rng)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("dropout", &mut |rng| {
        let mut layer = Dropout::<f64>::new(0.5, rng.fork(7))?;
        layer.freeze_mask = true;
        let x = rng.normal(&[4, 10], 0.0, 1.0)?;
        Ok(gradient_check(&mut layer, &x, Mode::Train, rng)?.max_relative_error())
    })?;
    run("softmax_crossentropy", &mut |rng| {
        let logits = rng.normal(&[4, 3], 0.0, 2.0)?;
        let labels: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
        let y = one_hot(&labels, 3)?;
        Ok(check_softmax_crossentropy(&logits, &y)?.max_relative_error())
    })?;
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    #[test]
    fn affine_layer_is_exact() {
        let mut rng = SeededRng::new(1);
        let mut layer = Dense::<f64>::new(5, 4, &mut rng).unwrap();
        let x = rng.normal(&[3, 5], 0.0, 1.0).unwrap();
        let report = gradient_check(&mut layer, &x, Mode::Train, &mut rng).unwrap();
        assert!(report.max_relative_error() < 1e-8, "{report:?}");
    }

    #[test]
    fn every_layer_kind_passes() {
        for case in layer_battery(2024, 5).unwrap() {
            assert_eq!(case.errors.len(), 5);
            assert!(case.passed(), "{} max error {}", case.name, case.max_error());
        }
    }

    /// Dense layer whose backward pass is deliberately off by 5%.
    struct Corrupted(Dense<f64>);

    impl Layer<f64> for Corrupted {
        fn kind(&self) -> &'static str {
            "corrupted"
        }
        fn forward(&mut self, input: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
            self.0.forward(input, mode)
        }
        fn backward(&mut self, grad_out: &Tensor<f64>) -> Result<Tensor<f64>> {
            self.0.backward(grad_out)?.map(|v| v * 1.05)
        }
        fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
            self.0.output_shape(input)
        }
        fn params(&self) -> Vec<&Param<f64>> {
            self.0.params()
        }
        fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
            self.0.params_mut()
        }
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut rng = SeededRng::new(3);
        let mut layer = Corrupted(Dense::new(4, 3, &mut rng).unwrap());
        let x = rng.normal(&[2, 4], 0.0, 1.0).unwrap();
        let report = gradient_check(&mut layer, &x, Mode::Train, &mut rng).unwrap();
        assert!(!report.passed(LAYER_TOLERANCE));
        assert!(report.max_relative_error() > 1e-2);
    }
}
