use std::fmt::{self, Write as _};
use std::time::Instant;

use super::batch::{assemble_batch, make_batches};
use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, ModelSpec};
use crate::nn::Mode;
use crate::prep::{DatasetSplit, PrepSummary, PreparedSplit, Sample};
use crate::rng::{derive_seed, SeededRng};

/// Samples per inference batch.
pub const EVAL_BATCH_SIZE: usize = 64;

const STREAM_INIT: u64 = 0x11;
const STREAM_SHUFFLE: u64 = 0x22;
pub(crate) const STREAM_PARTITION: u64 = 0x33;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: Option<f64>,
    /// Wall-clock time of the training pass.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub mouse_id: String,
    pub week: u32,
    pub slice_index: u32,
    pub label: usize,
    pub predicted: usize,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

/// Fraction of correct predictions.
pub fn recount_accuracy(predictions: &[Prediction]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of zero predictions"));
    }
    Ok(predictions.iter().filter(|p| p.correct()).count() as f64 / predictions.len() as f64)
}

pub fn predictions_csv(predictions: &[Prediction]) -> String {
    let mut out = String::from("mouse_id,week,slice_index,label,predicted\n");
    for p in predictions {
        let _ = writeln!(out, "{},{},{},{},{}", p.mouse_id, p.week, p.slice_index, p.label, p.predicted);
    }
    out
}

pub fn parse_predictions_csv(text: &str) -> Result<Vec<Prediction>> {
    let mut lines = text.lines();
    if lines.next() != Some("mouse_id,week,slice_index,label,predicted") {
        return Err(Error::invalid("predictions: missing header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("predictions line {}: {line:?}", i + 2));
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 5 {
                return Err(bad());
            }
            Ok(Prediction {
                mouse_id: c[0].to_string(),
                week: c[1].parse().map_err(|_| bad())?,
                slice_index: c[2].parse().map_err(|_| bad())?,
                label: c[3].parse().map_err(|_| bad())?,
                predicted: c[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode predictions and accuracy over `samples`.
pub fn evaluate(model: &mut Model<f32>, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty sample set"));
    }
    let kind = model.spec().kind;
    let classes = model.n_classes();
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH_SIZE) {
        let chunk: Vec<&Sample> = chunk.iter().collect();
        let (batch, labels) = assemble_batch::<f32>(&chunk, kind)?;
        let probs = model.forward(&batch, Mode::Infer)?;
        for ((s, row), label) in chunk.iter().zip(probs.data().chunks_exact(classes)).zip(labels) {
            predictions.push(Prediction {
                mouse_id: s.mouse_id.clone(),
                week: s.week,
                slice_index: s.slice_index,
                label,
                predicted: argmax(row),
            });
        }
    }
    Ok(Evaluation {
        accuracy: recount_accuracy(&predictions)?,
        predictions,
    })
}

/// Per-run results.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub model: ModelKind,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Test accuracy of the model after `epoch`, for each requested snapshot
    /// and the final epoch, ascending.
    pub test_accuracy: Vec<(usize, f64)>,
    pub test_predictions: Vec<Prediction>,
    pub trainable_params: usize,
    pub non_trainable_params: usize,
}

impl MetricsRecord {
    pub fn final_test_accuracy(&self) -> f64 {
        self.test_accuracy.last().map_or(f64::NAN, |&(_, a)| a)
    }

    pub fn test_accuracy_at(&self, epoch: usize) -> Option<f64> {
        self.test_accuracy.iter().find(|&&(e, _)| e == epoch).map(|&(_, a)| a)
    }

    /// Mean training-pass seconds over the first `epochs` epochs.
    pub fn mean_epoch_seconds(&self, epochs: usize) -> f64 {
        let n = epochs.min(self.epochs.len());
        if n == 0 {
            return f64::NAN;
        }
        self.epochs[..n].iter().map(|e| e.seconds).sum::<f64>() / n as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_accuracy,seconds,test_accuracy\n");
        for e in &self.epochs {
            let val = e.validation_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default();
            let test = self.test_accuracy_at(e.epoch).map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.6},{val},{:.4},{test}", e.epoch, e.train_loss, e.seconds);
        }
        out
    }
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "model {}  seed {}  params {} trainable / {} non-trainable",
            self.model, self.seed, self.trainable_params, self.non_trainable_params
        )?;
        writeln!(f, "{:>5}  {:>10}  {:>8}  {:>8}", "epoch", "loss", "val acc", "seconds")?;
        for e in &self.epochs {
            let val = e.validation_accuracy.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
            writeln!(f, "{:>5}  {:>10.4}  {val:>8}  {:>8.2}", e.epoch, e.train_loss, e.seconds)?;
        }
        for (e, a) in &self.test_accuracy {
            writeln!(f, "test accuracy after {e} epochs: {:.2}%", 100.0 * a)?;
        }
        Ok(())
    }
}

/// Architecture for `config.model` at `dims` with the config's overrides.
pub fn model_spec(config: &ExperimentConfig, dims: (usize, usize)) -> Result<ModelSpec> {
    let mut spec = ModelSpec::new(config.model, 2, dims)?;
    if let Some(l2) = config.l2 {
        spec.l2 = l2;
    }
    if let Some(d) = config.dropout {
        spec = spec.with_dropout(d);
    }
    spec.validate()?;
    Ok(spec)
}

/// Freshly initialized model; the initial weights depend on the seed and kind.
pub fn build_for(config: &ExperimentConfig, dims: (usize, usize)) -> Result<Model<f32>> {
    let spec = model_spec(config, dims)?;
    let mut rng = SeededRng::new(derive_seed(config.seed, &[STREAM_INIT, config.model.code() as u64]));
    Model::build(&spec, &mut rng)
}

/// Errors if the prepared data lacks a channel the model needs.
pub fn check_channels(kind: ModelKind, summary: &PrepSummary) -> Result<()> {
    if let Some(mode) = kind.diff_mode() {
        if summary.mode != Some(mode) {
            let have = summary.mode.map_or("no".to_string(), |m| m.to_string());
            return Err(Error::invalid(format!(
                "{kind} needs {mode} difference images; the data was prepared with {have} differences"
            )));
        }
    }
    if kind.uses_timestamp() && !summary.timestamps {
        return Err(Error::invalid(format!("{kind} needs timestamps; the data was prepared without them")));
    }
    Ok(())
}

/// Trains for `config.epochs`, recording loss, validation accuracy and time
/// per epoch. Test data is read once, after the last epoch: the final model
/// and copies kept after each epoch in `snapshots` are evaluated then.
pub fn train(
    model: &mut Model<f32>,
    split: &DatasetSplit,
    config: &ExperimentConfig,
    snapshots: &[usize],
) -> Result<MetricsRecord> {
    config.validate()?;
    if model.spec().kind != config.model {
        return Err(Error::invalid(format!("model is {} but config asks for {}", model.spec().kind, config.model)));
    }
    if split.train.len() < 2 {
        return Err(Error::invalid("training split needs at least 2 samples"));
    }
    let opt = config.optimizer();
    let mut shuffle = SeededRng::new(derive_seed(config.seed, &[STREAM_SHUFFLE]));
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut kept = Vec::new();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for item in make_batches(&split.train, config.model, config.batch_size, &mut shuffle)? {
            let (batch, labels) = item?;
            let n = labels.len();
            loss_sum += model.backward_and_step(&batch, &labels, &opt)? * n as f64;
            seen += n;
        }
        let seconds = start.elapsed().as_secs_f64();
        let validation_accuracy = if split.validation.is_empty() {
            None
        } else {
            Some(evaluate(model, &split.validation)?.accuracy)
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            validation_accuracy,
            seconds,
        });
        if epoch < config.epochs && snapshots.contains(&epoch) {
            kept.push((epoch, model.clone()));
        }
    }

    let test = split.test.access();
    let mut test_accuracy = Vec::new();
    for (epoch, mut snap) in kept {
        test_accuracy.push((epoch, evaluate(&mut snap, test)?.accuracy));
    }
    let last = evaluate(model, test)?;
    test_accuracy.push((config.epochs, last.accuracy));
    let counts = model.count_params();
    Ok(MetricsRecord {
        model: config.model,
        seed: config.seed,
        epochs,
        test_accuracy,
        test_predictions: last.predictions,
        trainable_params: counts.trainable,
        non_trainable_params: counts.non_trainable,
    })
}

/// A trained model with its metrics.
pub struct TrainedRun {
    pub model: Model<f32>,
    pub metrics: MetricsRecord,
}

/// Builds a model for `data` and trains it.
pub fn run_experiment(data: &PreparedSplit, config: &ExperimentConfig, snapshots: &[usize]) -> Result<TrainedRun> {
    check_channels(config.model, &data.summary)?;
    let mut model = build_for(config, data.summary.dims)?;
    let metrics = train(&mut model, &data.split, config, snapshots)?;
    Ok(TrainedRun { model, metrics })
}

/// Deterministic partition stream for `seed`.
pub fn partition_rng(seed: u64) -> SeededRng {
    SeededRng::new(derive_seed(seed, &[STREAM_PARTITION]))
}
