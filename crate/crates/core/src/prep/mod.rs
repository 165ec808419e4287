//! Temporal preprocessing: dimension standardization, registration,
//! difference images, slice pairing, timestamps and dataset partitioning.
//!
//! [`prepare`] runs the per-slice stages; [`partition`] splits the result by
//! mouse; [`store`] persists a split so training never redoes the work.

mod difference;
mod partition;
mod pipeline;
mod register;
mod slice;
pub mod store;

pub use difference::{difference_image, first_week_difference, pair_slices, select_reference, DifferenceImage, Reference};
pub use partition::{
    class_balance_report, class_counts, partition, train_count, BalanceRow, ClassBalance, DatasetSplit, Sample, TestSet,
    TRAIN_FRACTION,
};
pub use pipeline::{prepare, PrepOptions, PrepSummary, Prepared};
pub use register::{apply_translation, register_translation, translate_min_fill, Shift, DEFAULT_MAX_SHIFT};
pub use slice::{crop_center, expand_image, expand_pixels, max_dims, Group, ImageSlice};
pub use store::{load_prepared, save_prepared, PreparedSplit};
