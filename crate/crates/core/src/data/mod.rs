//! Frame ingestion, preprocessing and split planning.

pub mod dataset;
pub mod image;
pub mod netpbm;
pub mod split;

pub use dataset::{load_directory_dataset, DatasetIndex, FrameSample};
pub use image::{preprocess, resize_bilinear, PreprocessMode};
pub use netpbm::{parse_pgm, parse_ppm, write_ppm};
pub use split::{make_splits, SplitKind, SplitMode, SplitPlan, Splits};
