//! Synthetic bone-like slice series and the on-disk dataset format.
//!
//! Each mouse is a cohort member with fixed anatomy: an elliptical cortical
//! ring whose radii vary along the slice index. PTH mice thicken and
//! brighten linearly after the onset week; wild mice stay put. Every scan
//! is translated and cropped a little differently.

mod config;
mod dataset;
mod render;

pub use config::{Intensities, MouseId, PhantomConfig, RingGeometry};
pub use dataset::{
    generate_dataset, load_dataset, read_manifest_config, read_slice, slice_path, write_slice, DatasetManifest,
    SliceRecord, CHECKSUM_FILE, FORMAT_VERSION, MANIFEST_FILE,
};
pub use render::{
    check_geometry, expected_max_dims, mouse_profile, pth_growth, render_slice, scan_params, MouseProfile, ScanParams,
};
