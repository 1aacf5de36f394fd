//! Basic local binary patterns and three-patch LBP histograms.
//!
//! Ring samples are taken at angles `2*pi*i/8` starting east and moving
//! counter-clockwise as seen on screen (so sample 2 is straight up, towards
//! smaller row indices). Bit `i` of a code corresponds to sample `i`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::{FeatureError, FeatureFamily, FeatureVector};
use crate::shape::Shape;

/// Number of ring samples / patches; codes are 8-bit.
pub const RING_SAMPLES: usize = 8;
pub const FULL_BINS: usize = 256;
pub const UNIFORM_BINS: usize = 59;

fn ring_offset(i: usize, radius: f64) -> (f64, f64) {
    let angle = 2.0 * PI * i as f64 / RING_SAMPLES as f64;
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    (snap(radius * angle.cos()), snap(-radius * angle.sin()))
}

/// Basic LBP code at `(x, y)`: bit `i` is set when ring sample `i` is
/// strictly brighter than the center.
pub fn lbp_code(image: &GrayImage, x: usize, y: usize, radius: f64) -> Result<u8, FeatureError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(FeatureError::InvalidParams(
            "radius must be positive".into(),
        ));
    }
    let center = image
        .get_checked(x, y)
        .ok_or(FeatureError::RingOutOfImage { x, y })?;
    let mut code = 0u8;
    for i in 0..RING_SAMPLES {
        let (dx, dy) = ring_offset(i, radius);
        let v = image
            .sample(x as f64 + dx, y as f64 + dy)
            .ok_or(FeatureError::RingOutOfImage { x, y })?;
        if v > center {
            code |= 1 << i;
        }
    }
    Ok(code)
}

/// Histogram binning of 8-bit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramBins {
    /// One bin per code value.
    #[default]
    Full,
    /// The 58 circular codes with at most two bit transitions get one bin
    /// each; every other code shares the last bin.
    Uniform,
}

impl HistogramBins {
    pub fn len(self) -> usize {
        match self {
            HistogramBins::Full => FULL_BINS,
            HistogramBins::Uniform => UNIFORM_BINS,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }

    fn table(self) -> [u8; 256] {
        let mut t = [0u8; 256];
        match self {
            HistogramBins::Full => {
                for (i, v) in t.iter_mut().enumerate() {
                    *v = i as u8;
                }
            }
            HistogramBins::Uniform => {
                let mut next = 0u8;
                for (code, v) in t.iter_mut().enumerate() {
                    let c = code as u8;
                    if (c ^ c.rotate_right(1)).count_ones() <= 2 {
                        *v = next;
                        next += 1;
                    } else {
                        *v = (UNIFORM_BINS - 1) as u8;
                    }
                }
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TplbpParams {
    /// Distance from the center pixel to each ring patch center.
    pub ring_radius: f64,
    /// Side of the square patches, odd.
    pub patch_size: usize,
    /// Ring patch `i` is compared against ring patch `(i + alpha) mod 8`.
    pub alpha: usize,
    /// Comparison slack on the patch-distance difference.
    pub tau: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub bins: HistogramBins,
}

impl Default for TplbpParams {
    fn default() -> Self {
        Self {
            ring_radius: 2.0,
            patch_size: 3,
            alpha: 2,
            tau: 0.01,
            grid_rows: 4,
            grid_cols: 4,
            bins: HistogramBins::Full,
        }
    }
}

impl TplbpParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidParams(m.to_string()));
        if !(self.ring_radius.is_finite() && self.ring_radius > 0.0) {
            return bad("ring_radius must be positive");
        }
        if self.patch_size.is_multiple_of(2) {
            return bad("patch_size must be odd");
        }
        if self.alpha == 0 || self.alpha >= RING_SAMPLES {
            return bad("alpha must lie in 1..8");
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad("tau must be non-negative");
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid must have at least one cell");
        }
        if self.ring_radius + self.patch_size as f64 > 1e4 {
            return bad("ring_radius and patch_size are unreasonably large");
        }
        Ok(())
    }

    /// Pixels on each side where ring patches would leave the image.
    pub fn margin(&self) -> usize {
        (self.ring_radius + (self.patch_size / 2) as f64 - 1e-9).ceil() as usize
    }

    /// Minimum image side per grid cell: `2r + w`.
    fn cell_extent(&self) -> usize {
        (2.0 * self.ring_radius + self.patch_size as f64).ceil() as usize
    }

    pub fn grid_dim(&self) -> usize {
        self.grid_rows * self.grid_cols * self.bins.len()
    }
}

fn patch_distance(image: &GrayImage, cx: f64, cy: f64, dx: f64, dy: f64, half: i64) -> Option<f64> {
    let mut d = 0.0;
    for v in -half..=half {
        for u in -half..=half {
            let (qx, qy) = (cx + u as f64, cy + v as f64);
            let a = image.sample(qx + dx, qy + dy)?;
            let b = image.sample(qx, qy)?;
            d += (a - b) * (a - b);
        }
    }
    Some(d)
}

/// Three-patch LBP code: bit `i` is set when
/// `D(P_i, P_c) - D(P_{i+alpha}, P_c) >= tau`, with `D` the summed squared
/// difference between `w x w` patches.
pub fn tplbp_code(
    image: &GrayImage,
    x: usize,
    y: usize,
    params: &TplbpParams,
) -> Result<u8, FeatureError> {
    params.validate()?;
    tplbp_code_unchecked(image, x, y, params).ok_or(FeatureError::PatchOutOfImage { x, y })
}

fn tplbp_code_unchecked(image: &GrayImage, x: usize, y: usize, params: &TplbpParams) -> Option<u8> {
    let half = (params.patch_size / 2) as i64;
    let (cx, cy) = (x as f64, y as f64);
    let mut dist = [0.0; RING_SAMPLES];
    for (i, d) in dist.iter_mut().enumerate() {
        let (dx, dy) = ring_offset(i, params.ring_radius);
        *d = patch_distance(image, cx, cy, dx, dy, half)?;
    }
    let mut code = 0u8;
    for i in 0..RING_SAMPLES {
        if dist[i] - dist[(i + params.alpha) % RING_SAMPLES] >= params.tau {
            code |= 1 << i;
        }
    }
    Some(code)
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }
}

/// Region of pixels whose TPLBP support lies inside the image.
fn valid_area(image: &GrayImage, params: &TplbpParams) -> Option<Rect> {
    let m = params.margin();
    let (w, h) = (image.width(), image.height());
    (w > 2 * m && h > 2 * m).then(|| Rect::new(m, m, w - m, h - m))
}

/// Codes for every pixel of `area`, which must lie inside the valid area.
/// Same arithmetic as [`tplbp_code`], but each ring offset's squared
/// difference map is computed once and shared by overlapping patches.
fn code_map(image: &GrayImage, area: Rect, params: &TplbpParams) -> Vec<u8> {
    let half = params.patch_size / 2;
    let (aw, ah) = (area.x1 - area.x0, area.y1 - area.y0);
    // difference maps cover the area grown by `half` on every side
    let (ox, oy) = (area.x0 - half, area.y0 - half);
    let (mw, mh) = (aw + 2 * half, ah + 2 * half);
    let mut dist = vec![[0.0; RING_SAMPLES]; aw * ah];
    let mut diff = vec![0.0; mw * mh];
    for i in 0..RING_SAMPLES {
        let (dx, dy) = ring_offset(i, params.ring_radius);
        for my in 0..mh {
            for mx in 0..mw {
                let (qx, qy) = ((ox + mx) as f64, (oy + my) as f64);
                let a = image.sample(qx + dx, qy + dy).unwrap_or(0.0);
                let b = image.get(ox + mx, oy + my);
                diff[my * mw + mx] = (a - b) * (a - b);
            }
        }
        for y in 0..ah {
            for x in 0..aw {
                let mut d = 0.0;
                for v in 0..params.patch_size {
                    let row = &diff[(y + v) * mw + x..(y + v) * mw + x + params.patch_size];
                    for e in row {
                        d += e;
                    }
                }
                dist[y * aw + x][i] = d;
            }
        }
    }
    dist.iter()
        .map(|d| {
            let mut code = 0u8;
            for i in 0..RING_SAMPLES {
                if d[i] - d[(i + params.alpha) % RING_SAMPLES] >= params.tau {
                    code |= 1 << i;
                }
            }
            code
        })
        .collect()
}

/// Per-cell TPLBP histograms over a `grid_rows x grid_cols` partition of the
/// pixels where a code is defined, concatenated row-major.
pub fn tplbp_grid_feature(
    image: &GrayImage,
    params: &TplbpParams,
) -> Result<FeatureVector, FeatureError> {
    params.validate()?;
    let min_w = params.grid_cols * params.cell_extent();
    let min_h = params.grid_rows * params.cell_extent();
    let area = valid_area(image, params)
        .filter(|a| {
            image.width() >= min_w
                && image.height() >= min_h
                && a.x1 - a.x0 >= params.grid_cols
                && a.y1 - a.y0 >= params.grid_rows
        })
        .ok_or(FeatureError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            min_width: min_w,
            min_height: min_h,
        })?;
    let (vw, vh) = (area.x1 - area.x0, area.y1 - area.y0);
    let codes = code_map(image, area, params);
    let table = params.bins.table();
    let nb = params.bins.len();
    let mut values = vec![0.0; params.grid_dim()];
    for row in 0..vh {
        let cell_r = row * params.grid_rows / vh;
        for col in 0..vw {
            let cell_c = col * params.grid_cols / vw;
            let cell = cell_r * params.grid_cols + cell_c;
            values[cell * nb + table[codes[row * vw + col] as usize] as usize] += 1.0;
        }
    }
    Ok(FeatureVector::new(FeatureFamily::TplbpGrid, values))
}

/// One TPLBP histogram per region (over its pixels where a code is
/// defined), concatenated in region order.
pub fn tplbp_region_feature(
    image: &GrayImage,
    regions: &[Rect],
    params: &TplbpParams,
) -> Result<FeatureVector, FeatureError> {
    params.validate()?;
    let table = params.bins.table();
    let nb = params.bins.len();
    let valid = valid_area(image, params);
    let mut values = vec![0.0; regions.len() * nb];
    for (r, region) in regions.iter().enumerate() {
        if region.x0 >= region.x1
            || region.y0 >= region.y1
            || region.x1 > image.width()
            || region.y1 > image.height()
        {
            return Err(FeatureError::RegionOutOfImage { index: r });
        }
        let clipped = valid.and_then(|v| {
            let c = Rect::new(
                region.x0.max(v.x0),
                region.y0.max(v.y0),
                region.x1.min(v.x1),
                region.y1.min(v.y1),
            );
            (c.x0 < c.x1 && c.y0 < c.y1).then_some(c)
        });
        let area = clipped.ok_or(FeatureError::EmptyRegion { index: r })?;
        for code in code_map(image, area, params) {
            values[r * nb + table[code as usize] as usize] += 1.0;
        }
    }
    Ok(FeatureVector::new(FeatureFamily::TplbpRegion, values))
}

/// Landmark index groups used for region histograms: both brows, both eyes,
/// nose, mouth.
pub const FACE_REGION_GROUPS: [(usize, usize); 6] =
    [(17, 22), (22, 27), (36, 42), (42, 48), (27, 36), (48, 68)];

/// Bounding boxes of the landmark groups in [`FACE_REGION_GROUPS`], padded by
/// 20% of their size on every side and clipped to the image.
pub fn face_regions(
    landmarks: &Shape,
    width: usize,
    height: usize,
) -> Result<Vec<Rect>, FeatureError> {
    if landmarks.len() != crate::shape::LANDMARK_COUNT {
        return Err(FeatureError::WrongPointCount {
            expected: crate::shape::LANDMARK_COUNT,
            found: landmarks.len(),
        });
    }
    let pts = landmarks.points();
    Ok(FACE_REGION_GROUPS
        .iter()
        .map(|&(a, b)| {
            let group = &pts[a..b];
            let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
            let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in group {
                x0 = x0.min(p.x);
                y0 = y0.min(p.y);
                x1 = x1.max(p.x);
                y1 = y1.max(p.y);
            }
            let (px, py) = (0.2 * (x1 - x0), 0.2 * (y1 - y0));
            let clamp_lo =
                |v: f64, max: usize| (v.floor().max(0.0) as usize).min(max.saturating_sub(1));
            let clamp_hi = |v: f64, max: usize| (v.ceil().max(0.0) as usize + 1).min(max);
            let rx0 = clamp_lo(x0 - px, width);
            let ry0 = clamp_lo(y0 - py, height);
            Rect::new(
                rx0,
                ry0,
                clamp_hi(x1 + px, width).max(rx0 + 1),
                clamp_hi(y1 + py, height).max(ry0 + 1),
            )
        })
        .collect())
}
