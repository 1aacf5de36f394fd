//! Hand-crafted face features.
//!
//! Landmark-anchored upright SIFT, LBP and three-patch LBP histograms,
//! geometric coordinate vectors, normalization and PCA reduction.

pub mod image;
pub mod lbp;
pub mod matrix_io;
pub mod reduce;
pub mod sift;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::shape::{Shape, LANDMARK_COUNT};
use crate::textfmt::TextFormatError;

pub use self::image::{image_gradients, GradientField, GrayImage};
pub use lbp::{
    face_regions, lbp_code, tplbp_code, tplbp_grid_feature, tplbp_region_feature, HistogramBins,
    Rect, TplbpParams,
};
pub use matrix_io::FeatureMatrix;
pub use reduce::{pca_reduce_apply, pca_reduce_fit, PcaReducer};
pub use sift::{sift_descriptor_at, sift_face_feature, SiftParams, DESCRIPTOR_LEN};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image is {width}x{height}, needs at least {min_width}x{min_height}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("point ({x}, {y}) lies outside the image")]
    PointOutOfImage { x: f64, y: f64 },
    #[error("LBP ring around ({x}, {y}) leaves the image")]
    RingOutOfImage { x: usize, y: usize },
    #[error("TPLBP patches around ({x}, {y}) leave the image")]
    PatchOutOfImage { x: usize, y: usize },
    #[error("region {index} lies outside the image")]
    RegionOutOfImage { index: usize },
    #[error("region {index} contains no pixel where a code is defined")]
    EmptyRegion { index: usize },
    #[error("expected {expected} landmarks, found {found}")]
    WrongPointCount { expected: usize, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least 2 samples, found {0}")]
    InsufficientSamples(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature value")]
    NonFinite,
    #[error("malformed feature matrix: {0}")]
    Malformed(String),
    #[error(transparent)]
    Format(#[from] TextFormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<LinalgError> for FeatureError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::InsufficientSamples(n) => FeatureError::InsufficientSamples(n),
            LinalgError::DimensionMismatch { expected, found } => {
                FeatureError::DimensionMismatch { expected, found }
            }
            LinalgError::NonFinite => FeatureError::NonFinite,
            LinalgError::Empty => FeatureError::DimensionMismatch {
                expected: 1,
                found: 0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    Sift,
    TplbpGrid,
    TplbpRegion,
    Geom,
    Combined,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 5] = [
        FeatureFamily::Sift,
        FeatureFamily::TplbpGrid,
        FeatureFamily::TplbpRegion,
        FeatureFamily::Geom,
        FeatureFamily::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureFamily::Sift => "sift",
            FeatureFamily::TplbpGrid => "tplbp_grid",
            FeatureFamily::TplbpRegion => "tplbp_region",
            FeatureFamily::Geom => "geom",
            FeatureFamily::Combined => "combined",
        }
    }

    /// Tag byte used in binary feature matrices.
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureFamily {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| FeatureError::InvalidParams(format!("unknown feature family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub family: FeatureFamily,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(family: FeatureFamily, values: Vec<f64>) -> Self {
        Self { family, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Same family, values passed through [`normalize_feature`].
    pub fn normalized(&self) -> FeatureVector {
        FeatureVector::new(self.family, normalize_feature(&self.values))
    }
}

/// Subtracts the mean and divides by the norm of the result. A vector with
/// zero norm after centering comes back as zeros.
pub fn normalize_feature(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        centered.into_iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Concatenation in the given order.
pub fn combine_features(parts: &[FeatureVector]) -> FeatureVector {
    if let [single] = parts {
        return single.clone();
    }
    let mut values = Vec::with_capacity(parts.iter().map(FeatureVector::dim).sum());
    for p in parts {
        values.extend_from_slice(&p.values);
    }
    FeatureVector::new(FeatureFamily::Combined, values)
}

/// `(x1..x68, y1..y68)` of the (normalized) landmarks.
pub fn geometric_feature(landmarks: &Shape) -> Result<FeatureVector, FeatureError> {
    if landmarks.len() != LANDMARK_COUNT {
        return Err(FeatureError::WrongPointCount {
            expected: LANDMARK_COUNT,
            found: landmarks.len(),
        });
    }
    Ok(FeatureVector::new(
        FeatureFamily::Geom,
        landmarks.to_vector(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let n = normalize_feature(&[1.0, -1.0]);
        assert!((n[0] - h).abs() < 1e-15 && (n[1] + h).abs() < 1e-15);
        assert_eq!(normalize_feature(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
        assert!(normalize_feature(&[]).is_empty());
    }

    #[test]
    fn combine_concatenates() {
        let a = FeatureVector::new(FeatureFamily::Sift, vec![1.0, 2.0]);
        let b = FeatureVector::new(FeatureFamily::Geom, vec![3.0]);
        let c = combine_features(&[a.clone(), b.clone()]);
        assert_eq!(c.family, FeatureFamily::Combined);
        assert_eq!(c.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(combine_features(std::slice::from_ref(&a)), a);
        assert_eq!(combine_features(&[b, a]).values, vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn family_names_and_tags_round_trip() {
        for f in FeatureFamily::ALL {
            assert_eq!(f.name().parse::<FeatureFamily>().unwrap(), f);
            assert_eq!(FeatureFamily::from_tag(f.tag()), Some(f));
        }
        assert!(FeatureFamily::from_tag(9).is_none());
        assert!("lbp".parse::<FeatureFamily>().is_err());
    }

    #[test]
    fn geometric_requires_68_points() {
        let s = Shape::from_xy(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!(matches!(
            geometric_feature(&s),
            Err(FeatureError::WrongPointCount {
                expected: 68,
                found: 2
            })
        ));
    }
}
