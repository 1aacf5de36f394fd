//! Upright SIFT descriptors computed at given keypoints.
//!
//! No scale-space search and no dominant-orientation assignment: the caller
//! supplies the keypoints (face landmarks) and the support radius.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::image::{image_gradients, GradientField, GrayImage};
use super::{FeatureError, FeatureFamily, FeatureVector};
use crate::shape::{Point, Shape, LANDMARK_COUNT};

pub const SPATIAL_BINS: usize = 4;
pub const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = SPATIAL_BINS * SPATIAL_BINS * ORIENTATION_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftParams {
    /// Half-width of the square descriptor support, in pixels.
    pub patch_radius: f64,
    pub clip_threshold: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            patch_radius: 8.0,
            clip_threshold: 0.2,
        }
    }
}

impl SiftParams {
    /// Support radius tied to the face scale: 2.5 times the mean
    /// nearest-neighbour landmark spacing, clamped to `[6, 24]` pixels.
    pub fn for_landmarks(landmarks: &Shape) -> Self {
        let pts = landmarks.points();
        let mut total = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let nearest = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p.x - q.x).hypot(p.y - q.y))
                .fold(f64::INFINITY, f64::min);
            total += nearest;
        }
        let spacing = total / pts.len() as f64;
        Self {
            patch_radius: (2.5 * spacing).clamp(6.0, 24.0),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), FeatureError> {
        if !(self.patch_radius.is_finite() && self.patch_radius > 0.0) {
            return Err(FeatureError::InvalidParams(
                "patch_radius must be positive".into(),
            ));
        }
        if !(self.clip_threshold.is_finite() && self.clip_threshold > 0.0) {
            return Err(FeatureError::InvalidParams(
                "clip_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Unit-normalizes, clips every entry at `clip`, and renormalizes. A zero
/// vector stays zero.
fn postprocess(hist: &mut [f64], clip: f64) {
    let normalize = |h: &mut [f64]| {
        let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            h.iter_mut().for_each(|v| *v /= n);
        }
    };
    normalize(hist);
    hist.iter_mut().for_each(|v| *v = v.min(clip));
    normalize(hist);
}

pub(crate) fn descriptor_from_gradients(
    grad: &GradientField,
    point: Point,
    params: &SiftParams,
) -> Vec<f64> {
    let radius = params.patch_radius;
    let bin_width = 2.0 * radius / SPATIAL_BINS as f64;
    // Gaussian window with sigma equal to half the descriptor width
    let inv_two_sigma2 = 1.0 / (2.0 * radius * radius);
    let mut hist = vec![0.0; DESCRIPTOR_LEN];

    let x_lo = (point.x - radius).ceil().max(0.0) as usize;
    let y_lo = (point.y - radius).ceil().max(0.0) as usize;
    let x_hi = (point.x + radius).floor().min((grad.width - 1) as f64);
    let y_hi = (point.y + radius).floor().min((grad.height - 1) as f64);
    if x_hi < 0.0 || y_hi < 0.0 {
        return hist;
    }
    let (x_hi, y_hi) = (x_hi as usize, y_hi as usize);

    for py in y_lo..=y_hi {
        let dy = py as f64 - point.y;
        let ry = (dy + radius) / bin_width - 0.5;
        for px in x_lo..=x_hi {
            let dx = px as f64 - point.x;
            let (mag, theta) = grad.at(px, py);
            if mag == 0.0 {
                continue;
            }
            let rx = (dx + radius) / bin_width - 0.5;
            let ro = theta * ORIENTATION_BINS as f64 / (2.0 * PI);
            let weight = mag * (-(dx * dx + dy * dy) * inv_two_sigma2).exp();

            let (x0, y0, o0) = (rx.floor(), ry.floor(), ro.floor());
            let (fx, fy, fo) = (rx - x0, ry - y0, ro - o0);
            for (iy, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
                if !(0.0..SPATIAL_BINS as f64).contains(&iy) || wy == 0.0 {
                    continue;
                }
                for (ix, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
                    if !(0.0..SPATIAL_BINS as f64).contains(&ix) || wx == 0.0 {
                        continue;
                    }
                    let cell = (iy as usize * SPATIAL_BINS + ix as usize) * ORIENTATION_BINS;
                    for (io, wo) in [(o0, 1.0 - fo), (o0 + 1.0, fo)] {
                        if wo == 0.0 {
                            continue;
                        }
                        let o = (io as i64).rem_euclid(ORIENTATION_BINS as i64) as usize;
                        hist[cell + o] += weight * wy * wx * wo;
                    }
                }
            }
        }
    }
    postprocess(&mut hist, params.clip_threshold);
    hist
}

/// 128-entry descriptor at `point`. Patch pixels outside the image contribute
/// nothing.
pub fn sift_descriptor_at(
    image: &GrayImage,
    point: Point,
    params: &SiftParams,
) -> Result<Vec<f64>, FeatureError> {
    params.validate()?;
    if !image.contains(point.x, point.y) {
        return Err(FeatureError::PointOutOfImage {
            x: point.x,
            y: point.y,
        });
    }
    let grad = image_gradients(image)?;
    Ok(descriptor_from_gradients(&grad, point, params))
}

/// Descriptors at all 68 landmarks, concatenated in landmark order.
pub fn sift_face_feature(
    image: &GrayImage,
    landmarks: &Shape,
    params: &SiftParams,
) -> Result<FeatureVector, FeatureError> {
    params.validate()?;
    if landmarks.len() != LANDMARK_COUNT {
        return Err(FeatureError::WrongPointCount {
            expected: LANDMARK_COUNT,
            found: landmarks.len(),
        });
    }
    if let Some(p) = landmarks
        .points()
        .iter()
        .find(|p| !image.contains(p.x, p.y))
    {
        return Err(FeatureError::PointOutOfImage { x: p.x, y: p.y });
    }
    let grad = image_gradients(image)?;
    let mut values = Vec::with_capacity(DESCRIPTOR_LEN * landmarks.len());
    for p in landmarks.points() {
        values.extend(descriptor_from_gradients(&grad, *p, params));
    }
    Ok(FeatureVector::new(FeatureFamily::Sift, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_zero_descriptor() {
        let img = GrayImage::constant(32, 32, 0.4);
        let d = sift_descriptor_at(&img, Point::new(16.0, 16.0), &SiftParams::default()).unwrap();
        assert_eq!(d.len(), DESCRIPTOR_LEN);
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn descriptor_is_unit_length_and_clipped() {
        let img = GrayImage::from_fn(40, 40, |x, y| {
            0.5 + 0.4 * ((x as f64 * 0.3).sin() * (y as f64 * 0.2).cos())
        });
        let params = SiftParams::default();
        let d = sift_descriptor_at(&img, Point::new(20.5, 19.25), &params).unwrap();
        let n: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_points_outside() {
        let img = GrayImage::constant(10, 10, 0.0);
        assert!(matches!(
            sift_descriptor_at(&img, Point::new(10.5, 2.0), &SiftParams::default()),
            Err(FeatureError::PointOutOfImage { .. })
        ));
    }

    #[test]
    fn radius_follows_landmark_spacing() {
        let tight = Shape::from_xy(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert_eq!(SiftParams::for_landmarks(&tight).patch_radius, 6.0);
        let wide = Shape::from_xy(&[(0.0, 0.0), (100.0, 0.0)]).unwrap();
        assert_eq!(SiftParams::for_landmarks(&wide).patch_radius, 24.0);
        let mid = Shape::from_xy(&[(0.0, 0.0), (4.0, 0.0)]).unwrap();
        assert_eq!(SiftParams::for_landmarks(&mid).patch_radius, 10.0);
    }
}
