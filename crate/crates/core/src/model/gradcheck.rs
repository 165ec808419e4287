//! Finite-difference check of a whole model.

use super::network::{Batch, Model};
use super::spec::{ModelKind, ModelSpec};
use crate::error::Result;
use crate::nn::gradcheck::{relative_error_floored, sample_coords, GradEntry, GradReport, MAX_COORDS};
use crate::rng::SeededRng;

pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Decreasing central-difference steps. A whole model has enough ReLU and
/// max-pool units that a step often crosses a kink; an estimate is kept once
/// it agrees with the one at the next smaller step.
const END_TO_END_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];
const STEP_AGREEMENT: f64 = 1e-4;
/// Central differences of an O(1) loss carry up to about 1e-8 of rounding
/// noise at the smallest step; gradients whose norm is below the floor count
/// as zero.
const END_TO_END_FLOOR: f64 = 1e-4;
/// Spread of the random biases set before checking. With zero biases a unit
/// whose receptive field is all zeros sits exactly on a ReLU kink.
const BIAS_JITTER: f64 = 0.05;

/// Random 16x16 batch of `n` samples for a miniature `kind`.
pub fn miniature_batch(kind: ModelKind, n: usize, rng: &mut SeededRng) -> Result<Batch<f64>> {
    let image = rng.uniform(&[n, 1, 16, 16], 0.0, 1.0)?;
    let difference = match kind.is_cross() {
        true => Some(rng.normal(&[n, 1, 16, 16], 0.0, 0.3)?),
        false => None,
    };
    let timestamp = match kind.uses_timestamp() {
        true => {
            let weeks = (0..n).map(|_| rng.int_inclusive(0, 8) as f64).collect();
            Some(crate::tensor::Tensor::from_vec(&[n, 1], weeks)?)
        }
        false => None,
    };
    Ok(Batch {
        image,
        difference,
        timestamp,
    })
}

/// Compares every parameter gradient of a miniature `kind` model on a
/// 4-sample batch against central differences of the training loss.
pub fn end_to_end_check(kind: ModelKind, seed: u64) -> Result<GradReport> {
    let mut rng = SeededRng::new(seed);
    let spec = ModelSpec::miniature(kind, 3);
    let mut model: Model<f64> = Model::build(&spec, &mut rng)?;
    let names = param_names(&model);
    for (p, name) in model.params_mut().into_iter().zip(&names) {
        if name.ends_with("bias") {
            p.value = rng.normal(p.value.shape(), 0.0, BIAS_JITTER)?;
        }
    }
    let batch = miniature_batch(kind, 4, &mut rng)?;
    let labels = [0, 1, 2, 1];
    model.loss_and_gradients(&batch, &labels)?;
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradReport::default();
    for (pi, grad) in analytic.iter().enumerate() {
        let coords = sample_coords(grad.len(), MAX_COORDS, &mut rng);
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = model.params()[pi].value.data()[c];
            let mut estimates = Vec::with_capacity(END_TO_END_STEPS.len());
            for h in END_TO_END_STEPS {
                let mut loss_at = |v: f64| -> Result<f64> {
                    model.params_mut()[pi].value.data_mut()[c] = v;
                    model.loss_and_gradients(&batch, &labels)
                };
                let up = loss_at(orig + h)?;
                let down = loss_at(orig - h)?;
                estimates.push((up - down) / (2.0 * h));
            }
            model.params_mut()[pi].value.data_mut()[c] = orig;
            let settled = estimates
                .windows(2)
                .find(|w| (w[0] - w[1]).abs() <= STEP_AGREEMENT * (1e-2 + w[1].abs()))
                .map(|w| w[0]);
            numeric.push(settled.unwrap_or(estimates[estimates.len() - 1]));
        }
        let picked: Vec<f64> = coords.iter().map(|&c| grad[c]).collect();
        report.entries.push(GradEntry {
            tensor: names[pi].clone(),
            relative_error: relative_error_floored(&picked, &numeric, END_TO_END_FLOOR),
            coords: coords.len(),
        });
    }
    Ok(report)
}

fn param_names(model: &Model<f64>) -> Vec<String> {
    let mut names = Vec::new();
    for (name, layer) in model.named_layers() {
        for (i, _) in layer.params().iter().enumerate() {
            names.push(format!("{name}.{}", if i == 0 { "weight" } else { "bias" }));
        }
    }
    names
}
