//! On-disk formats: array files, dataset directories and checkpoints.

pub mod array;
pub mod checkpoint;
pub mod dataset;

pub use dataset::{directory_digest, read_dataset, write_dataset, Manifest};
