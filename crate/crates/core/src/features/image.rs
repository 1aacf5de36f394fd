use std::f64::consts::PI;
use std::path::Path;

use super::FeatureError;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

/// Coordinates within this distance of an integer are treated as integers
/// when sampling, so axis-aligned ring samples read exact pixels.
const SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, FeatureError> {
        if width == 0 || height == 0 {
            return Err(FeatureError::InvalidImage("zero-sized image".into()));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(FeatureError::InvalidImage(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width.saturating_mul(height),
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FeatureError::InvalidImage(
                "intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from `f(x, y)`, clamping values into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                pixels.push(if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                });
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn get_checked(&self, x: usize, y: usize) -> Option<f64> {
        (x < self.width && y < self.height).then(|| self.get(x, y))
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.pixels[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x, y) = (snap(x), snap(y));
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear sample at a sub-pixel position, `None` outside the image.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (x, y) = (snap(x), snap(y));
        if !self.contains(x, y) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(if fy == 0.0 {
            top
        } else {
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Mirror image about the vertical axis.
    pub fn flipped_horizontal(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    /// Bilinear resampling to a new size (pixel centers aligned at corners).
    pub fn resized(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = if width > 1 {
            (self.width - 1) as f64 / (width - 1) as f64
        } else {
            0.0
        };
        let sy = if height > 1 {
            (self.height - 1) as f64 / (height - 1) as f64
        } else {
            0.0
        };
        GrayImage::from_fn(width, height, |x, y| {
            self.sample(x as f64 * sx, y as f64 * sy).unwrap_or(0.0)
        })
    }

    pub fn from_luma8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, FeatureError> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn to_luma8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    /// Loads any format the `image` crate decodes (PNG, PGM, ...) as 8-bit gray.
    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let img = image::open(path)
            .map_err(|e| FeatureError::InvalidImage(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Self::from_luma8(w as usize, h as usize, img.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), FeatureError> {
        image::save_buffer(
            path,
            &self.to_luma8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| FeatureError::InvalidImage(format!("{}: {e}", path.display())))
    }
}

/// Per-pixel gradient magnitude and orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    /// Radians in `[0, 2*pi)`, measured from +x towards +y (image rows).
    pub orientation: Vec<f64>,
}

impl GradientField {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.magnitude[i], self.orientation[i])
    }
}

/// Central differences inside the image, one-sided differences on the border.
pub fn image_gradients(image: &GrayImage) -> Result<GradientField, FeatureError> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(FeatureError::ImageTooSmall {
            width: w,
            height: h,
            min_width: 3,
            min_height: 3,
        });
    }
    let diff = |lo: f64, hi: f64, central: bool| if central { 0.5 * (hi - lo) } else { hi - lo };
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = match x {
                0 => diff(image.get(0, y), image.get(1, y), false),
                _ if x == w - 1 => diff(image.get(x - 1, y), image.get(x, y), false),
                _ => diff(image.get(x - 1, y), image.get(x + 1, y), true),
            };
            let gy = match y {
                0 => diff(image.get(x, 0), image.get(x, 1), false),
                _ if y == h - 1 => diff(image.get(x, y - 1), image.get(x, y), false),
                _ => diff(image.get(x, y - 1), image.get(x, y + 1), true),
            };
            magnitude.push(gx.hypot(gy));
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            if theta >= 2.0 * PI {
                theta = 0.0;
            }
            orientation.push(theta);
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        magnitude,
        orientation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn bilinear_sampling() {
        let img = GrayImage::new(2, 2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(img.sample(0.0, 0.0), Some(0.0));
        assert_eq!(img.sample(0.5, 0.0), Some(0.5));
        assert_eq!(img.sample(1.0, 1.0), Some(0.5));
        assert_eq!(img.sample(1.0 + 1e-12, 0.0), Some(1.0));
        assert_eq!(img.sample(1.01, 0.0), None);
        assert_eq!(img.sample(-0.5, 0.0), None);
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let g = image_gradients(&GrayImage::constant(5, 4, 0.3)).unwrap();
        assert!(g.magnitude.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn ramp_points_along_x() {
        let w = 10;
        let img = GrayImage::from_fn(w, 6, |x, _| x as f64 / w as f64);
        let g = image_gradients(&img).unwrap();
        for y in 1..5 {
            for x in 1..w - 1 {
                let (m, o) = g.at(x, y);
                assert!((m - 0.1).abs() < 1e-12);
                assert!(o.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_small_errors() {
        assert!(matches!(
            image_gradients(&GrayImage::constant(2, 5, 0.0)),
            Err(FeatureError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn flip_and_resize() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + 3 * y) as f64 / 5.0);
        let f = img.flipped_horizontal();
        assert_eq!(f.get(0, 0), img.get(2, 0));
        assert_eq!(f.flipped_horizontal(), img);
        let r = img.resized(5, 3);
        assert_eq!((r.width(), r.height()), (5, 3));
        assert_eq!(r.get(4, 2), img.get(2, 1));
    }
}
