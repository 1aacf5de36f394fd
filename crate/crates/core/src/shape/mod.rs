//! Landmark shapes and Procrustes superimposition.
//!
//! A [`Shape`] is an ordered list of 2D points. The functions here remove
//! translation, scale and in-plane rotation between shapes
//! ([`procrustes_align`]), iterate that against an evolving mean ([`gpa`]),
//! and mirror a shape while restoring the landmark order ([`flip_reorder`]).

mod flip;
mod gpa;
mod procrustes;

pub use flip::{flip_reorder, FlipPermutation, Mirror};
pub use gpa::{gpa, GpaResult, DEFAULT_GPA_ITERATIONS, GPA_TOLERANCE};
pub use procrustes::{center, optimal_rotation, procrustes_align, scale_of, SimilarityTransform};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of landmarks in the pipeline's point convention.
pub const LANDMARK_COUNT: usize = 68;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("a shape needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("shape has zero scale (all points coincide)")]
    DegenerateShape,
    #[error("shape sizes differ: {left} vs {right} points")]
    ShapeSizeMismatch { left: usize, right: usize },
    #[error("invalid flip permutation: {0}")]
    InvalidPermutation(String),
    #[error("flip table line {line}: {message}")]
    TableParse { line: usize, message: String },
    #[error("need at least 2 shapes, got {0}")]
    TooFewShapes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Ordered 2D landmark points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Shape {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Shape {
    type Error = ShapeError;

    fn try_from(points: Vec<Point>) -> Result<Self, Self::Error> {
        Shape::new(points)
    }
}

impl From<Shape> for Vec<Point> {
    fn from(shape: Shape) -> Self {
        shape.points
    }
}

impl Shape {
    pub fn new(points: Vec<Point>) -> Result<Self, ShapeError> {
        if points.len() < 2 {
            return Err(ShapeError::TooFewPoints(points.len()));
        }
        if let Some(index) = points
            .iter()
            .position(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(ShapeError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self, ShapeError> {
        Self::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    /// Rebuilds a shape from the `(x1..xN, y1..yN)` layout of [`Shape::to_vector`].
    pub fn from_vector(values: &[f64]) -> Result<Self, ShapeError> {
        let n = values.len() / 2;
        if !values.len().is_multiple_of(2) {
            return Err(ShapeError::TooFewPoints(n));
        }
        Self::new(
            (0..n)
                .map(|i| Point::new(values[i], values[n + i]))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinates as `(x1..xN, y1..yN)`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.len());
        out.extend(self.points.iter().map(|p| p.x));
        out.extend(self.points.iter().map(|p| p.y));
        out
    }

    pub fn centroid(&self) -> Point {
        let n = self.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }

    /// Applies `f` to every point. The caller keeps coordinates finite.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Shape {
        Shape {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Shape {
        self.map_points(|p| Point::new(p.x + dx, p.y + dy))
    }

    pub fn scaled(&self, k: f64) -> Shape {
        self.map_points(|p| Point::new(p.x * k, p.y * k))
    }

    /// Counter-clockwise rotation about the origin (x right, y up convention).
    pub fn rotated(&self, theta: f64) -> Shape {
        let (s, c) = theta.sin_cos();
        self.map_points(|p| Point::new(c * p.x - s * p.y, s * p.x + c * p.y))
    }

    /// Summed squared point-to-point distance.
    pub fn sq_distance(&self, other: &Shape) -> Result<f64, ShapeError> {
        check_same_len(self, other)?;
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
            .sum())
    }

    /// Root-mean-square point displacement between two shapes.
    pub fn rms_distance(&self, other: &Shape) -> Result<f64, ShapeError> {
        Ok((self.sq_distance(other)? / self.len() as f64).sqrt())
    }

    /// Largest per-coordinate absolute difference.
    pub fn max_abs_diff(&self, other: &Shape) -> Result<f64, ShapeError> {
        check_same_len(self, other)?;
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()))
            .fold(0.0, f64::max))
    }

    /// Translates to a zero centroid and rescales to unit [`scale_of`].
    pub fn normalized(&self) -> Result<Shape, ShapeError> {
        let (centered, _) = center(self);
        let s = scale_of(&centered);
        if s == 0.0 {
            return Err(ShapeError::DegenerateShape);
        }
        Ok(centered.scaled(1.0 / s))
    }
}

pub(crate) fn check_same_len(a: &Shape, b: &Shape) -> Result<(), ShapeError> {
    if a.len() != b.len() {
        return Err(ShapeError::ShapeSizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_and_non_finite_shapes() {
        assert_eq!(
            Shape::from_xy(&[(1.0, 2.0)]),
            Err(ShapeError::TooFewPoints(1))
        );
        assert_eq!(
            Shape::from_xy(&[(0.0, 0.0), (f64::NAN, 1.0)]),
            Err(ShapeError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn vector_round_trip() {
        let s = Shape::from_xy(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)]).unwrap();
        let v = s.to_vector();
        assert_eq!(v, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        assert_eq!(Shape::from_vector(&v).unwrap(), s);
    }

    #[test]
    fn size_mismatch_is_reported() {
        let a = Shape::from_xy(&[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        let b = Shape::from_xy(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]).unwrap();
        assert_eq!(
            a.sq_distance(&b),
            Err(ShapeError::ShapeSizeMismatch { left: 2, right: 3 })
        );
    }
}
