//! Webcam gaze-direction classification.
//!
//! The pipeline runs a cascade face detector over a grayscale frame, looks
//! for both eyes inside the upper part of the face, stacks the two eye crops
//! into one 72×72 binary image and classifies it with a small LeNet-style
//! network into `right`, `left` or `vague`.
//!
//! Everything needed to build and evaluate that pipeline lives here: raster
//! primitives, Haar/LBP cascades and a boosting stage trainer, a CNN with its
//! own training loop, dataset manifests with augmentation and subject-grouped
//! folds, a seeded synthetic scene generator and a latency benchmark.

pub mod bench;
pub mod cascade;
pub mod cnn;
pub mod dataset;
pub mod imaging;
pub mod par;
pub mod preprocess;
pub mod seed;
pub mod synth;
pub mod train;

pub use cascade::{CascadeModel, Detection, ScanParams};
pub use cnn::{ArchConfig, Network};
pub use dataset::{Label, Manifest, Sample};
pub use imaging::{BinaryImage, GrayImage, IntegralImage, Rect};
pub use par::Exec;
