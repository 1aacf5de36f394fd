use serde::{Deserialize, Serialize};

use super::{check_same_len, procrustes_align, scale_of, Point, Shape, ShapeError};

/// Iteration cap used when callers have no better value.
pub const DEFAULT_GPA_ITERATIONS: usize = 100;

/// RMS mean displacement below which the iteration stops early.
pub const GPA_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpaResult {
    /// Centered, unit-scale consensus shape.
    pub mean_shape: Shape,
    /// Inputs aligned to `mean_shape`, in input order.
    pub aligned_shapes: Vec<Shape>,
    pub iterations_run: usize,
    /// RMS displacement of the mean during the last iteration.
    pub final_mean_delta: f64,
    /// Mean displacement recorded at every iteration.
    pub mean_deltas: Vec<f64>,
}

fn pointwise_mean(shapes: &[Shape]) -> Shape {
    let n = shapes[0].len();
    let m = shapes.len() as f64;
    let mut acc = vec![Point::default(); n];
    // fixed summation order keeps the mean independent of any parallelism
    for s in shapes {
        for (a, p) in acc.iter_mut().zip(s.points()) {
            a.x += p.x;
            a.y += p.y;
        }
    }
    for a in &mut acc {
        a.x /= m;
        a.y /= m;
    }
    Shape::new(acc).expect("mean of finite shapes is finite")
}

/// Generalized Procrustes analysis.
///
/// Each iteration aligns every shape to the current mean, then replaces the
/// mean with the centered, unit-scale average of the aligned shapes. Stops
/// after `max_iterations` or once the mean moves less than [`GPA_TOLERANCE`].
///
/// The starting mean is the average of the individually normalized inputs, so
/// the result does not depend on input order. If that average collapses (inputs
/// with wildly different orientations) the first normalized input is used.
pub fn gpa(shapes: &[Shape], max_iterations: usize) -> Result<GpaResult, ShapeError> {
    if shapes.len() < 2 {
        return Err(ShapeError::TooFewShapes(shapes.len()));
    }
    for s in &shapes[1..] {
        check_same_len(&shapes[0], s)?;
    }
    let normalized = shapes
        .iter()
        .map(Shape::normalized)
        .collect::<Result<Vec<_>, _>>()?;

    let start = pointwise_mean(&normalized);
    let mut mean = if scale_of(&start) > 1e-6 {
        start.normalized()?
    } else {
        normalized[0].clone()
    };

    let mut deltas = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let aligned = normalized
            .iter()
            .map(|s| procrustes_align(s, &mean).map(|(a, _)| a))
            .collect::<Result<Vec<_>, _>>()?;
        let next = pointwise_mean(&aligned).normalized()?;
        let delta = next.rms_distance(&mean)?;
        mean = next;
        deltas.push(delta);
        if delta < GPA_TOLERANCE {
            break;
        }
    }

    let aligned_shapes = shapes
        .iter()
        .map(|s| procrustes_align(s, &mean).map(|(a, _)| a))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GpaResult {
        mean_shape: mean,
        aligned_shapes,
        iterations_run: deltas.len(),
        final_mean_delta: *deltas.last().unwrap_or(&0.0),
        mean_deltas: deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::center;

    fn base() -> Shape {
        Shape::from_xy(&[(0.0, 0.0), (2.0, 0.1), (2.5, 1.5), (1.0, 2.2), (-0.4, 1.1)]).unwrap()
    }

    #[test]
    fn copies_collapse_onto_mean() {
        let shapes: Vec<Shape> = (0..6)
            .map(|i| {
                let k = i as f64;
                base()
                    .rotated(0.3 * k - 0.7)
                    .scaled(1.0 + 0.4 * k)
                    .translated(5.0 * k, -2.0 * k)
            })
            .collect();
        let r = gpa(&shapes, DEFAULT_GPA_ITERATIONS).unwrap();
        for a in &r.aligned_shapes {
            assert!(a.max_abs_diff(&r.mean_shape).unwrap() < 1e-8);
        }
        let (_, c) = center(&r.mean_shape);
        assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9);
        assert!((scale_of(&r.mean_shape) - 1.0).abs() < 1e-9);
        assert!(r.final_mean_delta < GPA_TOLERANCE);
    }

    #[test]
    fn errors() {
        assert_eq!(gpa(&[base()], 10), Err(ShapeError::TooFewShapes(1)));
        let flat = Shape::from_xy(&[(1.0, 1.0); 5]).unwrap();
        assert_eq!(gpa(&[base(), flat], 10), Err(ShapeError::DegenerateShape));
        let short = Shape::from_xy(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!(matches!(
            gpa(&[base(), short], 10),
            Err(ShapeError::ShapeSizeMismatch { .. })
        ));
    }

    #[test]
    fn respects_iteration_cap() {
        let shapes = vec![base(), base().rotated(0.5), base().translated(1.0, 0.0)];
        let r = gpa(&shapes, 1).unwrap();
        assert_eq!(r.iterations_run, 1);
    }
}
