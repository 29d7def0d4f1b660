//! Texture representation toolkit.
//!
//! The crate covers the whole path from pixels to evaluated predictions:
//!
//! * [`corpus`]: grayscale images, scale pyramids and dataset manifests;
//! * [`filterbank`]: LM and MR filter banks, dense responses, MR8 collapse;
//! * [`descriptors`]: patches, LBP, dense SIFT and ingested descriptor fields;
//! * [`vocab`]: PCA whitening, k-means codebooks and diagonal GMMs;
//! * [`encoders`]: BoVW, kernel codebook, LLC, VLAD, Fisher vectors, spatial
//!   pyramids, region pooling and post-processing;
//! * [`learn`]: kernels, one-vs-all SVMs, score recalibration, Platt scaling;
//! * [`metrics`]: accuracy, average precision, pixel accuracies, mutual information;
//! * [`segment`]: proposal scoring and greedy pasting;
//! * [`annosim`]: co-occurrence driven annotation budgeting.
//!
//! Binary file formats live in [`io`].

pub mod annosim;
pub mod corpus;
pub mod descriptors;
pub mod encoders;
mod error;
pub mod filterbank;
pub mod io;
pub mod learn;
pub mod linalg;
pub mod metrics;
pub mod segment;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};

pub use corpus::{DatasetManifest, GrayImage, ScalePyramid};
pub use descriptors::{DescriptorField, DescriptorSample, Position};
pub use encoders::{EncodedVector, EncoderKind, PostProcessSpec};
pub use learn::{CalibrationParams, KernelKind, KernelModel, KernelSpec, LinearClassifier};
pub use linalg::Matrix;
pub use vocab::{Codebook, GmmModel, PcaWhitener};
