//! Pose-aware facial expression recognition from cropped face images and
//! 68-point landmarks.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`shape`]: landmark shapes, Procrustes alignment, GPA and mirror flips.
//! * [`posecluster`]: PCA over normalized landmarks and head-pose classes.
//! * [`features`]: landmark-anchored SIFT, LBP/TPLBP histograms, geometric
//!   vectors, normalization and PCA reduction.
//! * [`classify`]: linear max-margin and random-forest classifiers, class
//!   balancing, hard-example mining and confusion matrices.
//! * [`fusionnet`]: a two-branch convolutional network with hand-crafted
//!   feature fusion, trained from scratch.
//! * [`harness`]: dataset ingestion, grouped splits, synthetic data, the
//!   end-to-end pipeline and reports.

pub mod classify;
pub mod features;
pub mod fusionnet;
pub mod harness;
pub mod linalg;
pub mod posecluster;
pub mod shape;
pub mod textfmt;
