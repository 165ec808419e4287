//! The six architectures built from chains and X-chains.
//!
//! A chain is two 3x3 convolutions with ReLU, a 2x2 max-pool, batch norm and
//! optional dropout. Cross-modal models run one chain per input stream (image
//! and difference image) and after every chain exchange features through
//! 1x1 cross-connections. Flattened features, plus the raw week number for
//! timestamped kinds, feed a 64-32-n dense head with softmax output.

mod checkpoint;
pub mod gradcheck;
mod network;
mod spec;

pub use checkpoint::{MAGIC, VERSION};
pub use gradcheck::{end_to_end_check, miniature_batch, END_TO_END_TOLERANCE};
pub use network::{
    build_model, concat_channels, cross_connect, split_channels, Batch, CrossConnection, LayerCount, Model,
    ParamReport, Stage,
};
pub use spec::{
    BnPosition, ChainSpec, DiffMode, ModelKind, ModelSpec, XChainSpec, CNN_DROPOUT, CNN_KERNELS, CNN_L2,
    DENSE_WIDTHS, XCNN_CROSS_KERNELS, XCNN_DROPOUT, XCNN_KERNELS, XCNN_L2,
};
