use std::fmt::{self, Write as _};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::trainer::{partition_rng, run_experiment, MetricsRecord};
use crate::error::{Error, Result};
use crate::model::{DiffMode, ModelKind};
use crate::prep::{partition, prepare, ImageSlice, PrepOptions, PreparedSplit, DEFAULT_MAX_SHIFT};

/// Both difference modes of one dataset, partitioned with the same seed.
/// Image-only kinds train on the absolute variant and ignore its extra channels.
#[derive(Clone, Debug)]
pub struct CompareData {
    pub absolute: PreparedSplit,
    pub relative: PreparedSplit,
}

impl CompareData {
    pub fn for_kind(&self, kind: ModelKind) -> &PreparedSplit {
        match kind.diff_mode() {
            Some(DiffMode::Relative) => &self.relative,
            _ => &self.absolute,
        }
    }
}

/// Prepares `slices` in both difference modes with timestamps and
/// partitions each with `seed`.
pub fn prepare_comparison(slices: &[ImageSlice], seed: u64, max_shift: Option<usize>) -> Result<CompareData> {
    let split = |mode| -> Result<PreparedSplit> {
        let opts = PrepOptions {
            mode: Some(mode),
            timestamps: true,
            max_shift: max_shift.unwrap_or(DEFAULT_MAX_SHIFT),
            target_dims: None,
        };
        let prepared = prepare(slices, &opts)?;
        Ok(PreparedSplit {
            summary: prepared.summary,
            seed,
            split: partition(prepared.samples, &mut partition_rng(seed))?,
        })
    };
    Ok(CompareData {
        absolute: split(DiffMode::Absolute)?,
        relative: split(DiffMode::Relative)?,
    })
}

/// Re-partitions already prepared data with another seed.
pub fn repartition(data: &CompareData, seed: u64) -> Result<CompareData> {
    let redo = |p: &PreparedSplit| -> Result<PreparedSplit> {
        let mut samples = p.split.train.clone();
        samples.extend(p.split.validation.iter().cloned());
        samples.extend(p.split.test.peek().iter().cloned());
        samples.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(PreparedSplit {
            summary: p.summary.clone(),
            seed,
            split: partition(samples, &mut partition_rng(seed))?,
        })
    };
    Ok(CompareData {
        absolute: redo(&data.absolute)?,
        relative: redo(&data.relative)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareConfig {
    pub kinds: Vec<ModelKind>,
    /// Epochs at which test accuracy and mean epoch time are reported; the
    /// longest sets the run length.
    pub report_epochs: Vec<usize>,
    /// Shared by every run; `model` and `epochs` are set per run.
    pub base: ExperimentConfig,
    pub parallel: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            kinds: ModelKind::ALL.to_vec(),
            report_epochs: vec![5, 10],
            base: ExperimentConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub kind: ModelKind,
    /// `(epoch, test accuracy, mean seconds per epoch up to it)`
    pub at: Vec<(usize, f64, f64)>,
    pub trainable_params: usize,
    pub non_trainable_params: usize,
    pub metrics: MetricsRecord,
}

impl ComparisonRow {
    fn from_metrics(metrics: MetricsRecord, report_epochs: &[usize]) -> Self {
        let at = report_epochs
            .iter()
            .filter_map(|&e| metrics.test_accuracy_at(e).map(|a| (e, a, metrics.mean_epoch_seconds(e))))
            .collect();
        ComparisonRow {
            kind: metrics.model,
            at,
            trainable_params: metrics.trainable_params,
            non_trainable_params: metrics.non_trainable_params,
            metrics,
        }
    }

    pub fn accuracy_at(&self, epoch: usize) -> Option<f64> {
        self.at.iter().find(|r| r.0 == epoch).map(|r| r.1)
    }

    pub fn seconds_at(&self, epoch: usize) -> Option<f64> {
        self.at.iter().find(|r| r.0 == epoch).map(|r| r.2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub seed: u64,
    pub report_epochs: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, kind: ModelKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn accuracy(&self, kind: ModelKind, epoch: usize) -> Option<f64> {
        self.row(kind)?.accuracy_at(epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,model");
        for e in &self.report_epochs {
            let _ = write!(out, ",acc_{e},seconds_{e}");
        }
        out.push_str(",trainable_params,non_trainable_params\n");
        for r in &self.rows {
            let _ = write!(out, "{},{}", self.seed, r.kind);
            for &e in &self.report_epochs {
                let acc = r.accuracy_at(e).map(|a| format!("{a:.6}")).unwrap_or_default();
                let sec = r.seconds_at(e).map(|s| format!("{s:.3}")).unwrap_or_default();
                let _ = write!(out, ",{acc},{sec}");
            }
            let _ = writeln!(out, ",{},{}", r.trainable_params, r.non_trainable_params);
        }
        out
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<16}", "model")?;
        for e in &self.report_epochs {
            write!(f, "  {:>8}  {:>8}", format!("acc@{e}"), format!("s/ep@{e}"))?;
        }
        writeln!(f, "  {:>10}", "params")?;
        for r in &self.rows {
            write!(f, "{:<16}", r.kind.to_string())?;
            for &e in &self.report_epochs {
                let acc = r.accuracy_at(e).map_or("-".to_string(), |a| format!("{:.2}", 100.0 * a));
                let sec = r.seconds_at(e).map_or("-".to_string(), |s| format!("{s:.2}"));
                write!(f, "  {acc:>8}  {sec:>8}")?;
            }
            writeln!(f, "  {:>10}", r.trainable_params)?;
        }
        Ok(())
    }
}

/// A comparison that stopped because some runs failed.
#[derive(Debug)]
pub struct CompareFailure {
    /// Rows of the runs that finished.
    pub partial: ComparisonReport,
    pub failures: Vec<(ModelKind, Error)>,
}

impl fmt::Display for CompareFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in &self.failures {
            writeln!(f, "{k} failed: {e}")?;
        }
        write!(f, "completed runs:\n{}", self.partial)
    }
}

impl std::error::Error for CompareFailure {}

/// Trains every kind in `config.kinds` on the same split and seed.
pub fn compare_models(data: &CompareData, config: &CompareConfig) -> std::result::Result<ComparisonReport, CompareFailure> {
    let fail = |e: Error| CompareFailure {
        partial: ComparisonReport {
            seed: config.base.seed,
            report_epochs: config.report_epochs.clone(),
            rows: Vec::new(),
        },
        failures: vec![(config.kinds.first().copied().unwrap_or(ModelKind::Cnn), e)],
    };
    let epochs = *config
        .report_epochs
        .iter()
        .max()
        .ok_or_else(|| fail(Error::invalid("no report epochs")))?;
    let run = |&kind: &ModelKind| {
        let cfg = ExperimentConfig {
            model: kind,
            epochs,
            ..config.base.clone()
        };
        (kind, run_experiment(data.for_kind(kind), &cfg, &config.report_epochs).map(|r| r.metrics))
    };
    let results: Vec<(ModelKind, Result<MetricsRecord>)> = if config.parallel {
        config.kinds.par_iter().map(run).collect()
    } else {
        config.kinds.iter().map(run).collect()
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (kind, r) in results {
        match r {
            Ok(m) => rows.push(ComparisonRow::from_metrics(m, &config.report_epochs)),
            Err(e) => failures.push((kind, e)),
        }
    }
    let report = ComparisonReport {
        seed: config.base.seed,
        report_epochs: config.report_epochs.clone(),
        rows,
    };
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CompareFailure {
            partial: report,
            failures,
        })
    }
}
