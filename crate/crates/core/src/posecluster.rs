//! Head-pose classes from normalized landmarks.
//!
//! Normalized shapes are vectorized as `(x1..xN, y1..yN)`, projected on their
//! first principal axis, and split into `k` equal-frequency bins. The mean
//! shape of each bin becomes that class's central landmark, and new shapes
//! are assigned to the nearest central landmark.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::shape::{procrustes_align, Point, Shape, ShapeError, LANDMARK_COUNT};
use crate::textfmt::{KvDocument, TextFormatError};

/// Nose-tip index in the 68-point convention; fixes which end of the first
/// axis is "turned left".
pub const NOSE_TIP: usize = 30;

pub const DEFAULT_POSE_CLASSES: usize = 5;

const POSE_MODEL_MAGIC: &str = "posefer-pose-model";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("need at least {needed} samples, got {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("vector length {found} does not match basis dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} distinct projection values, found {found}")]
    NotEnoughDistinctValues { needed: usize, found: usize },
    #[error("pose group {0} is empty")]
    EmptyGroup(usize),
    #[error("pose class count must be at least 1")]
    InvalidClassCount,
    #[error("fixed thresholds must be {expected} strictly increasing finite values")]
    InvalidThresholds { expected: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Format(#[from] TextFormatError),
    #[error("invalid pose model: {0}")]
    InvalidModel(String),
}

/// 1-based pose class. Class 1 is the extreme right turn, class `k` the
/// extreme left turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct PoseClassId(u16);

impl TryFrom<u16> for PoseClassId {
    type Error = String;

    fn try_from(v: u16) -> Result<Self, Self::Error> {
        if v == 0 {
            Err("pose classes are numbered from 1".into())
        } else {
            Ok(Self(v))
        }
    }
}

impl From<PoseClassId> for u16 {
    fn from(p: PoseClassId) -> u16 {
        p.0
    }
}

impl PoseClassId {
    pub fn new(id: usize, k: usize) -> Option<Self> {
        (1..=k).contains(&id).then_some(Self(id as u16))
    }

    pub fn from_index(index: usize) -> Self {
        Self(index as u16 + 1)
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Zero-based position.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for PoseClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Vectorized normalized shapes, one sample per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix {
    samples: Vec<Vec<f64>>,
    n_points: usize,
}

impl ShapeMatrix {
    pub fn from_shapes(shapes: &[Shape]) -> Result<Self, PoseError> {
        if shapes.len() < 2 {
            return Err(PoseError::InsufficientSamples {
                needed: 2,
                found: shapes.len(),
            });
        }
        let n_points = shapes[0].len();
        if let Some(s) = shapes.iter().find(|s| s.len() != n_points) {
            return Err(ShapeError::ShapeSizeMismatch {
                left: n_points,
                right: s.len(),
            }
            .into());
        }
        Ok(Self {
            samples: shapes.iter().map(Shape::to_vector).collect(),
            n_points,
        })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn pca_fit(matrix: &ShapeMatrix) -> Result<PcaBasis, PoseError> {
    let p = linalg::pca(matrix.samples())?;
    Ok(PcaBasis {
        mean: p.mean,
        axes: p.axes,
        variances: p.variances,
    })
}

/// `dot(shape_vec - mean, first_axis)`.
pub fn project_first(basis: &PcaBasis, shape_vec: &[f64]) -> Result<f64, PoseError> {
    if shape_vec.len() != basis.dim() {
        return Err(PoseError::DimensionMismatch {
            expected: basis.dim(),
            found: shape_vec.len(),
        });
    }
    let axis = basis
        .axes
        .first()
        .ok_or_else(|| PoseError::InvalidModel("basis has no axes".into()))?;
    Ok(shape_vec
        .iter()
        .zip(&basis.mean)
        .zip(axis)
        .map(|((v, m), a)| (v - m) * a)
        .sum())
}

/// Equal-frequency thresholds splitting `projections` into `k` classes.
///
/// Boundary `i` sits between sorted positions `floor(i*M/k) - 1` and
/// `floor(i*M/k)`, at the midpoint of the two values. When that pair is tied
/// the boundary moves to the nearest position where the sorted values differ.
pub fn split_poses(projections: &[f64], k: usize) -> Result<Vec<f64>, PoseError> {
    if k == 0 {
        return Err(PoseError::InvalidClassCount);
    }
    let mut sorted: Vec<f64> = projections.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] < w[1]).count();
    let distinct = if sorted.is_empty() { 0 } else { distinct };
    if distinct < k {
        return Err(PoseError::NotEnoughDistinctValues {
            needed: k,
            found: distinct,
        });
    }
    let m = sorted.len();
    // positions b where sorted[b-1] < sorted[b]
    let cuts: Vec<usize> = (1..m).filter(|&b| sorted[b - 1] < sorted[b]).collect();
    let mut thresholds = Vec::with_capacity(k - 1);
    let mut last_cut = 0;
    for i in 1..k {
        let target = i * m / k;
        // nearest usable cut strictly after the previous one, leaving room for
        // the remaining boundaries
        let remaining = k - 1 - i;
        let candidates = cuts
            .iter()
            .copied()
            .filter(|&b| b > last_cut)
            .collect::<Vec<_>>();
        let usable = &candidates[..candidates.len() - remaining];
        let b = *usable
            .iter()
            .min_by_key(|&&b| (b.abs_diff(target), b))
            .expect("enough distinct values were checked above");
        thresholds.push(0.5 * (sorted[b - 1] + sorted[b]));
        last_cut = b;
    }
    Ok(thresholds)
}

/// Class of a projection value given sorted thresholds.
pub fn class_for_projection(thresholds: &[f64], value: f64) -> PoseClassId {
    PoseClassId::from_index(thresholds.iter().filter(|&&t| value > t).count())
}

/// Pointwise mean of each group, re-centered and rescaled to unit scale.
pub fn compute_centroids(groups: &[Vec<Shape>]) -> Result<Vec<Shape>, PoseError> {
    groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let first = members.first().ok_or(PoseError::EmptyGroup(g))?;
            let n = first.len();
            let mut acc = vec![Point::default(); n];
            for s in members {
                if s.len() != n {
                    return Err(ShapeError::ShapeSizeMismatch {
                        left: n,
                        right: s.len(),
                    }
                    .into());
                }
                for (a, p) in acc.iter_mut().zip(s.points()) {
                    a.x += p.x;
                    a.y += p.y;
                }
            }
            let count = members.len() as f64;
            let mean = Shape::new(
                acc.into_iter()
                    .map(|p| Point::new(p.x / count, p.y / count))
                    .collect(),
            )?;
            Ok(mean.normalized()?)
        })
        .collect()
}

/// How projection thresholds are chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdStrategy {
    #[default]
    Quantile,
    /// User-supplied thresholds on the oriented first-axis projection.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseModel {
    /// Reference shape new landmarks are aligned to before assignment.
    pub mean_shape: Shape,
    pub basis: PcaBasis,
    pub k: usize,
    /// +1 or -1, multiplies first-axis projections so that larger values mean
    /// turning further left.
    pub orientation: f64,
    pub thresholds: Vec<f64>,
    pub centroids: Vec<Shape>,
}

/// Outcome of nearest-centroid assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseAssignment {
    pub class: PoseClassId,
    /// Summed squared distance to each centroid, by class index.
    pub distances: Vec<f64>,
}

impl PoseModel {
    /// Oriented first-axis projection of a normalized shape.
    pub fn projection(&self, normalized: &Shape) -> Result<f64, PoseError> {
        Ok(self.orientation * project_first(&self.basis, &normalized.to_vector())?)
    }

    /// Aligns raw landmarks onto the model's mean shape.
    pub fn normalize(&self, landmarks: &Shape) -> Result<Shape, PoseError> {
        Ok(procrustes_align(landmarks, &self.mean_shape)?.0)
    }

    pub fn to_text(&self) -> String {
        let mut d = KvDocument::new(POSE_MODEL_MAGIC, 1);
        d.push("k", self.k);
        d.push("n_points", self.mean_shape.len());
        d.push_floats("orientation", &[self.orientation]);
        d.push_floats("thresholds", &self.thresholds);
        d.push_floats("mean_shape", &self.mean_shape.to_vector());
        d.push_floats("basis_mean", &self.basis.mean);
        d.push_floats("basis_variances", &self.basis.variances);
        d.push("basis_axes", self.basis.axes.len());
        for (i, axis) in self.basis.axes.iter().enumerate() {
            d.push_floats(&format!("axis_{i}"), axis);
        }
        for (i, c) in self.centroids.iter().enumerate() {
            d.push_floats(&format!("centroid_{}", i + 1), &c.to_vector());
        }
        d.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self, PoseError> {
        let d = KvDocument::parse(text)?;
        d.expect(POSE_MODEL_MAGIC, 1)?;
        let k: usize = d.value("k")?;
        let n_points: usize = d.value("n_points")?;
        if k == 0 || k > 1000 {
            return Err(PoseError::InvalidModel(format!(
                "unsupported class count {k}"
            )));
        }
        if !(2..=100_000).contains(&n_points) {
            return Err(PoseError::InvalidModel(format!(
                "unsupported point count {n_points}"
            )));
        }
        let dim = 2 * n_points;
        let orientation = d.floats("orientation", Some(1))?[0];
        if orientation != 1.0 && orientation != -1.0 {
            return Err(PoseError::InvalidModel(
                "orientation must be 1 or -1".into(),
            ));
        }
        let thresholds = d.floats("thresholds", Some(k - 1))?;
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PoseError::InvalidThresholds { expected: k - 1 });
        }
        let mean_shape = Shape::from_vector(&d.floats("mean_shape", Some(dim))?)?;
        let mean = d.floats("basis_mean", Some(dim))?;
        let n_axes: usize = d.value("basis_axes")?;
        if n_axes == 0 || n_axes > dim {
            return Err(PoseError::InvalidModel(format!("bad axis count {n_axes}")));
        }
        let variances = d.floats("basis_variances", Some(n_axes))?;
        let axes = (0..n_axes)
            .map(|i| d.floats(&format!("axis_{i}"), Some(dim)))
            .collect::<Result<Vec<_>, _>>()?;
        let centroids = (1..=k)
            .map(|i| {
                let v = d.floats(&format!("centroid_{i}"), Some(dim))?;
                Ok(Shape::from_vector(&v)?)
            })
            .collect::<Result<Vec<_>, PoseError>>()?;
        Ok(Self {
            mean_shape,
            basis: PcaBasis {
                mean,
                axes,
                variances,
            },
            k,
            orientation,
            thresholds,
            centroids,
        })
    }
}

/// Nearest central landmark; ties go to the lowest class id.
pub fn assign_pose(model: &PoseModel, normalized_shape: &Shape) -> PoseClassId {
    pose_distances(model, normalized_shape)
        .map(|a| a.class)
        .unwrap_or(PoseClassId(1))
}

/// Distances to every centroid plus the winning class.
pub fn pose_distances(
    model: &PoseModel,
    normalized_shape: &Shape,
) -> Result<PoseAssignment, PoseError> {
    let distances = model
        .centroids
        .iter()
        .map(|c| normalized_shape.sq_distance(c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    for (i, d) in distances.iter().enumerate() {
        if *d < distances[best] {
            best = i;
        }
    }
    Ok(PoseAssignment {
        class: PoseClassId::from_index(best),
        distances,
    })
}

/// Fits a pose model on GPA-normalized shapes with quantile thresholds.
pub fn fit_pose_model(shapes: &[Shape], k: usize) -> Result<PoseModel, PoseError> {
    fit_pose_model_with(shapes, k, &ThresholdStrategy::Quantile)
}

/// PCA, first-axis projection, threshold split, grouping and one round of
/// centroid computation. No k-means refinement follows.
pub fn fit_pose_model_with(
    shapes: &[Shape],
    k: usize,
    strategy: &ThresholdStrategy,
) -> Result<PoseModel, PoseError> {
    if k == 0 {
        return Err(PoseError::InvalidClassCount);
    }
    if shapes.len() < k.max(2) {
        return Err(PoseError::InsufficientSamples {
            needed: k.max(2),
            found: shapes.len(),
        });
    }
    let matrix = ShapeMatrix::from_shapes(shapes)?;
    let basis = pca_fit(&matrix)?;
    let raw: Vec<f64> = matrix
        .samples()
        .iter()
        .map(|v| project_first(&basis, v))
        .collect::<Result<_, _>>()?;

    let orientation = if matrix.n_points() == LANDMARK_COUNT {
        let score: f64 = shapes
            .iter()
            .zip(&raw)
            .map(|(s, p)| p * (s.points()[NOSE_TIP].x - s.centroid().x))
            .sum();
        if score < 0.0 {
            -1.0
        } else {
            1.0
        }
    } else {
        1.0
    };
    let projections: Vec<f64> = raw.iter().map(|p| orientation * p).collect();

    let thresholds = match strategy {
        ThresholdStrategy::Quantile => split_poses(&projections, k)?,
        ThresholdStrategy::Fixed(t) => {
            if t.len() != k - 1
                || t.iter().any(|v| !v.is_finite())
                || t.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(PoseError::InvalidThresholds { expected: k - 1 });
            }
            t.clone()
        }
    };

    let mut groups: Vec<Vec<Shape>> = vec![Vec::new(); k];
    for (s, p) in shapes.iter().zip(&projections) {
        groups[class_for_projection(&thresholds, *p).index()].push(s.clone());
    }
    let centroids = compute_centroids(&groups)?;
    let mean_shape = compute_centroids(&[shapes.to_vec()])?.remove(0);

    Ok(PoseModel {
        mean_shape,
        basis,
        k,
        orientation,
        thresholds,
        centroids,
    })
}

/// Training-set agreement between the threshold groups and nearest-centroid
/// assignment.
pub fn group_agreement(model: &PoseModel, normalized: &[Shape]) -> Result<f64, PoseError> {
    if normalized.is_empty() {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for s in normalized {
        let by_threshold = class_for_projection(&model.thresholds, model.projection(s)?);
        if assign_pose(model, s) == by_threshold {
            agree += 1;
        }
    }
    Ok(agree as f64 / normalized.len() as f64)
}
