use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::ModelKind;
use crate::nn::OptimizerConfig;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_EPOCHS: usize = 5;

/// One training run. `l2` and `dropout` override the architecture defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: Option<f64>,
    pub dropout: Option<f64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        ExperimentConfig {
            model: ModelKind::Cnn,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            learning_rate: opt.learning_rate,
            momentum: opt.momentum,
            l2: None,
            dropout: None,
            data: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(model: ModelKind, epochs: usize, seed: u64) -> Self {
        ExperimentConfig {
            model,
            epochs,
            seed,
            ..ExperimentConfig::default()
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            l2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch_size {} too small: batch norm needs at least 2 samples",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if let Some(d) = self.dropout {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::invalid(format!("dropout {d} outside [0, 1)")));
            }
        }
        if let Some(l2) = self.l2 {
            if !(l2 >= 0.0) {
                return Err(Error::invalid(format!("l2 {l2} must be >= 0")));
            }
        }
        self.optimizer().validate()
    }

    /// Overrides the fields named in `kv`; unknown keys are an error.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in kv.iter() {
            let bad = || Error::invalid(format!("{k}: bad value {v:?}"));
            match k {
                "model" => self.model = v.parse()?,
                "epochs" => self.epochs = v.parse().map_err(|_| bad())?,
                "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
                "seed" => self.seed = v.parse().map_err(|_| bad())?,
                "learning_rate" | "lr" => self.learning_rate = v.parse().map_err(|_| bad())?,
                "momentum" => self.momentum = v.parse().map_err(|_| bad())?,
                "l2" => self.l2 = Some(v.parse().map_err(|_| bad())?),
                "dropout" => self.dropout = Some(v.parse().map_err(|_| bad())?),
                "data" => self.data = Some(PathBuf::from(v)),
                "out" => self.out = Some(PathBuf::from(v)),
                _ => return Err(Error::invalid(format!("unknown experiment setting {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("model", self.model.cli_name());
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("seed", self.seed);
        kv.set("learning_rate", self.learning_rate);
        kv.set("momentum", self.momentum);
        if let Some(l2) = self.l2 {
            kv.set("l2", l2);
        }
        if let Some(d) = self.dropout {
            kv.set("dropout", d);
        }
        if let Some(p) = &self.data {
            kv.set("data", p.display());
        }
        if let Some(p) = &self.out {
            kv.set("out", p.display());
        }
        kv
    }
}
