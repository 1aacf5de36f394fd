use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{check_same_len, Point, Shape, ShapeError};

/// Translation, scale ratio and rotation taking a shape onto a reference.
///
/// Applying the transform maps a point `p` to `R(theta) * ((p - t) / s_ratio)`,
/// where `t = (tx, ty)` is the source centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub tx: f64,
    pub ty: f64,
    pub s_ratio: f64,
    pub theta: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        tx: 0.0,
        ty: 0.0,
        s_ratio: 1.0,
        theta: 0.0,
    };

    pub fn apply_point(&self, p: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        let x = (p.x - self.tx) / self.s_ratio;
        let y = (p.y - self.ty) / self.s_ratio;
        Point::new(c * x - s * y, s * x + c * y)
    }

    pub fn apply(&self, shape: &Shape) -> Shape {
        shape.map_points(|p| self.apply_point(p))
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

/// Subtracts the centroid, returning the centered shape and the centroid.
pub fn center(shape: &Shape) -> (Shape, Point) {
    let c = shape.centroid();
    (shape.translated(-c.x, -c.y), c)
}

/// RMS distance of the points from their centroid.
pub fn scale_of(shape: &Shape) -> f64 {
    let c = shape.centroid();
    let sum: f64 = shape
        .points()
        .iter()
        .map(|p| (p.x - c.x).powi(2) + (p.y - c.y).powi(2))
        .sum();
    (sum / shape.len() as f64).sqrt()
}

/// Rotation angle that best maps `shape` onto `reference` in the least-squares
/// sense. Both shapes are expected to be centered.
///
/// The summed squared distance after rotating by `theta` is
/// `const - 2 (A cos(theta) + B sin(theta))` with
/// `A = sum(x*xc + y*yc)` and `B = sum(x*yc - y*xc)`, so the minimizer is
/// `atan2(B, A)`.
pub fn optimal_rotation(shape: &Shape, reference: &Shape) -> Result<f64, ShapeError> {
    check_same_len(shape, reference)?;
    if scale_of(shape) == 0.0 || scale_of(reference) == 0.0 {
        return Err(ShapeError::DegenerateShape);
    }
    let (mut a, mut b) = (0.0, 0.0);
    for (p, q) in shape.points().iter().zip(reference.points()) {
        a += p.x * q.x + p.y * q.y;
        b += p.x * q.y - p.y * q.x;
    }
    Ok(wrap_angle(b.atan2(a)))
}

/// Superimposes `shape` onto `reference`: centers it, rescales it to the
/// reference's scale and rotates it by the optimal angle.
///
/// The result is centered at the origin; callers compare against centered
/// references (GPA means always are).
pub fn procrustes_align(
    shape: &Shape,
    reference: &Shape,
) -> Result<(Shape, SimilarityTransform), ShapeError> {
    check_same_len(shape, reference)?;
    let (ref_centered, _) = center(reference);
    let s_ref = scale_of(&ref_centered);
    let (centered, c) = center(shape);
    let s_shape = scale_of(&centered);
    if s_ref == 0.0 || s_shape == 0.0 {
        return Err(ShapeError::DegenerateShape);
    }
    let s_ratio = s_shape / s_ref;
    let rescaled = centered.scaled(1.0 / s_ratio);
    let theta = optimal_rotation(&rescaled, &ref_centered)?;
    let transform = SimilarityTransform {
        tx: c.x,
        ty: c.y,
        s_ratio,
        theta,
    };
    Ok((rescaled.rotated(theta), transform))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Shape {
        Shape::from_xy(&[(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]).unwrap()
    }

    #[test]
    fn centering_examples() {
        let (c, centroid) = center(&square());
        assert_eq!(c, square());
        assert_eq!(centroid, Point::new(0.0, 0.0));

        let s = Shape::from_xy(&[(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]).unwrap();
        let (c, centroid) = center(&s);
        assert_eq!(c, square());
        assert_eq!(centroid, Point::new(1.0, 1.0));
        assert_eq!(center(&c).0, c);
    }

    #[test]
    fn scale_examples() {
        assert!((scale_of(&square()) - 2f64.sqrt()).abs() < 1e-15);
        let flat = Shape::from_xy(&[(3.0, 4.0), (3.0, 4.0), (3.0, 4.0)]).unwrap();
        assert_eq!(scale_of(&flat), 0.0);
        let k = 3.7;
        assert!((scale_of(&square().scaled(k)) - k * scale_of(&square())).abs() < 1e-12);
    }

    #[test]
    fn identity_rotation_and_alignment() {
        assert_eq!(optimal_rotation(&square(), &square()).unwrap(), 0.0);
        let (aligned, t) = procrustes_align(&square(), &square()).unwrap();
        assert!(aligned.max_abs_diff(&square()).unwrap() < 1e-12);
        assert!((t.s_ratio - 1.0).abs() < 1e-12);
        assert!(t.theta.abs() < 1e-12);
        assert_eq!((t.tx, t.ty), (0.0, 0.0));
    }

    #[test]
    fn transform_reproduces_aligned_shape() {
        let s = Shape::from_xy(&[(3.0, 1.0), (5.0, 2.0), (4.0, 6.0), (2.5, 3.0)]).unwrap();
        let (aligned, t) = procrustes_align(&s, &square()).unwrap();
        assert!(t.apply(&s).max_abs_diff(&aligned).unwrap() < 1e-12);
        assert!(t.s_ratio > 0.0);
        assert!((-PI..PI).contains(&t.theta));
    }

    #[test]
    fn degenerate_inputs_error() {
        let flat = Shape::from_xy(&[(1.0, 1.0); 4]).unwrap();
        assert_eq!(
            optimal_rotation(&flat, &square()),
            Err(ShapeError::DegenerateShape)
        );
        assert_eq!(
            procrustes_align(&square(), &flat).map(|_| ()),
            Err(ShapeError::DegenerateShape)
        );
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
