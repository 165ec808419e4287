use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The six architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cnn,
    CnnTs,
    XcnnAbsdiff,
    XcnnReldiff,
    XcnnTsAbsdiff,
    XcnnTsReldiff,
}

/// Which reference week a difference image is taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiffMode {
    /// Earliest recorded week of the subject.
    Absolute,
    /// Most recent earlier week.
    Relative,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Cnn,
        ModelKind::CnnTs,
        ModelKind::XcnnAbsdiff,
        ModelKind::XcnnReldiff,
        ModelKind::XcnnTsAbsdiff,
        ModelKind::XcnnTsReldiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::CnnTs => "cnn_ts",
            ModelKind::XcnnAbsdiff => "xcnn_absdiff",
            ModelKind::XcnnReldiff => "xcnn_reldiff",
            ModelKind::XcnnTsAbsdiff => "xcnn_ts_absdiff",
            ModelKind::XcnnTsReldiff => "xcnn_ts_reldiff",
        }
    }

    /// Hyphenated spelling used on the command line.
    pub fn cli_name(self) -> String {
        self.name().replace('_', "-")
    }

    pub fn code(self) -> u8 {
        ModelKind::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        ModelKind::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown model kind code {code}")))
    }

    pub fn is_cross(self) -> bool {
        self.diff_mode().is_some()
    }

    pub fn uses_timestamp(self) -> bool {
        matches!(self, ModelKind::CnnTs | ModelKind::XcnnTsAbsdiff | ModelKind::XcnnTsReldiff)
    }

    pub fn diff_mode(self) -> Option<DiffMode> {
        match self {
            ModelKind::XcnnAbsdiff | ModelKind::XcnnTsAbsdiff => Some(DiffMode::Absolute),
            ModelKind::XcnnReldiff | ModelKind::XcnnTsReldiff => Some(DiffMode::Relative),
            _ => None,
        }
    }

    /// The same architecture without the timestamp input.
    pub fn without_timestamp(self) -> Self {
        match self {
            ModelKind::CnnTs => ModelKind::Cnn,
            ModelKind::XcnnTsAbsdiff => ModelKind::XcnnAbsdiff,
            ModelKind::XcnnTsReldiff => ModelKind::XcnnReldiff,
            k => k,
        }
    }

    pub fn with_timestamp(self) -> Self {
        match self {
            ModelKind::Cnn => ModelKind::CnnTs,
            ModelKind::XcnnAbsdiff => ModelKind::XcnnTsAbsdiff,
            ModelKind::XcnnReldiff => ModelKind::XcnnTsReldiff,
            k => k,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown model kind {s:?}")))
    }
}

impl fmt::Display for DiffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffMode::Absolute => "abs",
            DiffMode::Relative => "rel",
        })
    }
}

impl FromStr for DiffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "abs" | "absolute" => Ok(DiffMode::Absolute),
            "rel" | "relative" => Ok(DiffMode::Relative),
            _ => Err(Error::invalid(format!("unknown difference mode {s:?}"))),
        }
    }
}

/// Where batch norm sits in an X-chain relative to the cross-connections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BnPosition {
    #[default]
    BeforeCross,
    AfterCross,
}

impl FromStr for BnPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "before_cross" | "before" => Ok(BnPosition::BeforeCross),
            "after_cross" | "after" => Ok(BnPosition::AfterCross),
            _ => Err(Error::invalid(format!("unknown batch-norm position {s:?}"))),
        }
    }
}

impl fmt::Display for BnPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BnPosition::BeforeCross => "before_cross",
            BnPosition::AfterCross => "after_cross",
        })
    }
}

/// Two 3x3 convolutions with ReLU, 2x2 max-pool, batch norm, optional dropout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainSpec {
    pub kernels: usize,
    /// Zero disables the dropout layer.
    pub dropout: f64,
}

impl ChainSpec {
    pub const CONV_COUNT: usize = 2;

    pub fn uses_dropout(&self) -> bool {
        self.dropout > 0.0
    }
}

/// A chain applied per stream plus 1x1 cross-connections between streams.
/// Ignored cross fields for single-stream models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XChainSpec {
    pub chain: ChainSpec,
    /// Filters per cross-connection; zero means no cross-connection.
    pub cross_kernels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_classes: usize,
    /// `(height, width)` of every input image.
    pub input_dims: (usize, usize),
    pub chains: Vec<XChainSpec>,
    /// Hidden dense widths; the output layer adds `n_classes`.
    pub dense: [usize; 2],
    /// L2 coefficient on hidden dense weights.
    pub l2: f64,
    pub bn_position: BnPosition,
}

pub const CNN_KERNELS: [usize; 5] = [16, 32, 32, 32, 32];
pub const XCNN_KERNELS: [usize; 5] = [8, 8, 16, 16, 32];
pub const XCNN_CROSS_KERNELS: [usize; 5] = [4, 4, 8, 8, 16];
pub const CNN_DROPOUT: f64 = 0.5;
pub const XCNN_DROPOUT: f64 = 0.25;
pub const CNN_L2: f64 = 0.003;
pub const XCNN_L2: f64 = 0.0003;
pub const DENSE_WIDTHS: [usize; 2] = [64, 32];

impl ModelSpec {
    /// Published configuration of `kind` at the given input size.
    pub fn new(kind: ModelKind, n_classes: usize, input_dims: (usize, usize)) -> Result<Self> {
        let chains = if kind.is_cross() {
            XCNN_KERNELS
                .iter()
                .zip(XCNN_CROSS_KERNELS)
                .map(|(&kernels, cross)| XChainSpec {
                    chain: ChainSpec { kernels, dropout: XCNN_DROPOUT },
                    cross_kernels: cross,
                })
                .collect()
        } else {
            CNN_KERNELS
                .iter()
                .enumerate()
                .map(|(i, &kernels)| XChainSpec {
                    chain: ChainSpec {
                        kernels,
                        dropout: if i + 1 < CNN_KERNELS.len() { CNN_DROPOUT } else { 0.0 },
                    },
                    cross_kernels: 0,
                })
                .collect()
        };
        let spec = ModelSpec {
            kind,
            n_classes,
            input_dims,
            chains,
            dense: DENSE_WIDTHS,
            l2: if kind.is_cross() { XCNN_L2 } else { CNN_L2 },
            bn_position: BnPosition::BeforeCross,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A small three-chain variant of `kind` for 16x16 inputs, without dropout.
    pub fn miniature(kind: ModelKind, n_classes: usize) -> Self {
        let kernels = [3, 4, 5];
        let chains = kernels
            .iter()
            .map(|&k| XChainSpec {
                chain: ChainSpec { kernels: k, dropout: 0.0 },
                cross_kernels: if kind.is_cross() { 2 } else { 0 },
            })
            .collect();
        ModelSpec {
            kind,
            n_classes,
            input_dims: (16, 16),
            chains,
            dense: [6, 5],
            l2: 0.0,
            bn_position: BnPosition::BeforeCross,
        }
    }

    pub fn streams(&self) -> usize {
        if self.kind.is_cross() {
            2
        } else {
            1
        }
    }

    /// Sets every chain's dropout rate, keeping disabled chains disabled.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        for c in &mut self.chains {
            if c.chain.uses_dropout() {
                c.chain.dropout = rate;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.chains.is_empty() {
            return Err(Error::invalid("a model needs at least one chain"));
        }
        let min = 1usize << self.chains.len();
        let (h, w) = self.input_dims;
        if h < min || w < min {
            return Err(Error::invalid(format!(
                "input {h}x{w} too small for {} pooling stages (need at least {min}x{min})",
                self.chains.len()
            )));
        }
        for (i, c) in self.chains.iter().enumerate() {
            if c.chain.kernels == 0 {
                return Err(Error::invalid(format!("chain {i} has no kernels")));
            }
            if !(0.0..1.0).contains(&c.chain.dropout) {
                return Err(Error::invalid(format!("chain {i} dropout {} outside [0, 1)", c.chain.dropout)));
            }
        }
        if self.dense.contains(&0) {
            return Err(Error::invalid("dense widths must be positive"));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::invalid(format!("l2 coefficient {} must be >= 0", self.l2)));
        }
        Ok(())
    }

    /// Spatial dims after all pooling stages.
    pub fn final_dims(&self) -> (usize, usize) {
        let (mut h, mut w) = self.input_dims;
        for _ in &self.chains {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }

    /// Channels per stream after chain `i`, including concatenated cross features.
    pub fn chain_out_channels(&self, i: usize) -> usize {
        let c = &self.chains[i];
        if self.streams() == 2 {
            c.chain.kernels + c.cross_kernels
        } else {
            c.chain.kernels
        }
    }

    /// Width of the flattened convolutional features, excluding the timestamp.
    pub fn flat_features(&self) -> usize {
        let (h, w) = self.final_dims();
        self.streams() * h * w * self.chain_out_channels(self.chains.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(k.cli_name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(ModelKind::from_code(k.code()).unwrap(), k);
        }
        assert!("resnet".parse::<ModelKind>().is_err());
    }

    #[test]
    fn published_schedules() {
        let cnn = ModelSpec::new(ModelKind::Cnn, 2, (64, 96)).unwrap();
        let k: Vec<usize> = cnn.chains.iter().map(|c| c.chain.kernels).collect();
        assert_eq!(k, CNN_KERNELS);
        let drop: Vec<f64> = cnn.chains.iter().map(|c| c.chain.dropout).collect();
        assert_eq!(drop, [0.5, 0.5, 0.5, 0.5, 0.0]);
        assert_eq!(cnn.l2, 0.003);
        let x = ModelSpec::new(ModelKind::XcnnTsReldiff, 2, (64, 96)).unwrap();
        let k: Vec<usize> = x.chains.iter().map(|c| c.chain.kernels).collect();
        assert_eq!(k, XCNN_KERNELS);
        assert!(x.chains.iter().all(|c| c.chain.dropout == 0.25));
        assert_eq!(x.l2, 0.0003);
        assert_eq!(x.final_dims(), (2, 3));
    }

    #[test]
    fn rejects_small_inputs() {
        assert!(ModelSpec::new(ModelKind::Cnn, 2, (31, 64)).is_err());
        assert!(ModelSpec::new(ModelKind::Cnn, 2, (32, 32)).is_ok());
        assert!(ModelSpec::new(ModelKind::Cnn, 1, (32, 32)).is_err());
    }
}
