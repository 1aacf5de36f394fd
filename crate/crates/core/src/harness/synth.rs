//! Synthetic faces with known yaw and expression.
//!
//! A symmetric 3D 68-point template (x right, y down, z toward the camera,
//! unit roughly half a face width) is scaled per identity, displaced by an
//! expression template, rotated about the vertical axis by the yaw angle and
//! projected orthographically. Positive yaw moves the nose toward +x. The
//! renderer draws a face ellipse and dark strokes along brows, eyes, nose
//! and lips.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::data::{format_manifest, format_pts, DatasetManifest, ManifestEntry};
use super::{HarnessError, Sample};
use crate::classify::ExpressionLabel;
use crate::features::GrayImage;
use crate::shape::{FlipPermutation, Point, Shape, LANDMARK_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Inclusive yaw range in degrees, sampled uniformly.
    pub yaw_range: (f64, f64),
    /// Relative label frequencies in `ExpressionLabel` order.
    pub label_weights: [f64; 7],
    pub image_size: usize,
    /// Landmark jitter standard deviation in pixels.
    pub noise_sigma: f64,
    /// Additive pixel noise standard deviation (intensities in `[0, 1]`).
    pub image_noise: f64,
    /// Expression intensity range.
    pub intensity: (f64, f64),
    /// Relative spread of the per-identity proportions.
    pub identity_variation: f64,
    /// Consecutive samples sharing identity, label and intensity (but not
    /// yaw) form one group.
    pub samples_per_group: usize,
    /// How the expression displacement changes when `|yaw|` exceeds
    /// `confound_yaw` (and stays within `confound_yaw_max`, if set).
    pub confound: Confound,
    pub confound_yaw: f64,
    pub confound_yaw_max: Option<f64>,
    /// Pose class count the dataset is meant for; only used for validation.
    pub k_poses: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            yaw_range: (-60.0, 60.0),
            label_weights: [0.45, 0.40, 0.03, 0.03, 0.03, 0.03, 0.03],
            image_size: 64,
            noise_sigma: 0.3,
            image_noise: 0.02,
            intensity: (0.7, 1.0),
            identity_variation: 0.05,
            samples_per_group: 1,
            confound: Confound::None,
            confound_yaw: 30.0,
            confound_yaw_max: None,
            k_poses: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.k_poses == 0 || self.n_samples < self.k_poses * ExpressionLabel::COUNT {
            return bad("n_samples must be at least 7 * k_poses");
        }
        let (lo, hi) = self.yaw_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= -89.0 && hi <= 89.0) {
            return bad("yaw_range must be an ordered pair within [-89, 89]");
        }
        if self
            .label_weights
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
            || self.label_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("label_weights must be non-negative with a positive sum");
        }
        if self.image_size < 32 {
            return bad("image_size must be at least 32");
        }
        for v in [self.noise_sigma, self.image_noise, self.identity_variation] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("noise levels must be finite and non-negative");
            }
        }
        if self.identity_variation > 0.2 {
            return bad("identity_variation must not exceed 0.2");
        }
        let (a, b) = self.intensity;
        if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b && b <= 1.5) {
            return bad("intensity must be an ordered pair within [0, 1.5]");
        }
        if self.samples_per_group == 0 {
            return bad("samples_per_group must be positive");
        }
        if !(self.confound_yaw.is_finite() && self.confound_yaw >= 0.0) {
            return bad("confound_yaw must be non-negative");
        }
        if let Some(max) = self.confound_yaw_max {
            if !(max.is_finite() && max > self.confound_yaw) {
                return bad("confound_yaw_max must exceed confound_yaw");
            }
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        0.36 * self.image_size as f64
    }

    fn center(&self) -> (f64, f64) {
        let c = (self.image_size as f64 - 1.0) / 2.0;
        (c, c - 0.2 * self.scale())
    }
}

/// Pose-dependent expression rendering, used to build datasets where the
/// appearance-to-label mapping differs between frontal and turned faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confound {
    /// Same displacement at every yaw.
    #[default]
    None,
    /// Displacement negated beyond the cutoff.
    Negate,
    /// Beyond the cutoff a face shows its partner expression's displacement:
    /// Neutral and Happy trade places, as do Sad and Fear, while Angry,
    /// Surprise and Disgust rotate.
    Swap,
}

impl Confound {
    pub fn partner(label: ExpressionLabel) -> ExpressionLabel {
        use ExpressionLabel::*;
        match label {
            Neutral => Happy,
            Happy => Neutral,
            Sad => Fear,
            Fear => Sad,
            Angry => Surprise,
            Surprise => Disgust,
            Disgust => Angry,
        }
    }
}

/// Latent parameters of one synthetic face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub yaw_deg: f64,
    pub label: ExpressionLabel,
    pub intensity: f64,
    /// Width and height scale factors and vertical offsets of the eye and
    /// mouth regions, all symmetric.
    pub identity: [f64; 4],
}

impl SynthParams {
    pub fn neutral(yaw_deg: f64) -> Self {
        Self {
            yaw_deg,
            label: ExpressionLabel::Neutral,
            intensity: 0.0,
            identity: [1.0, 1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub samples: Vec<Sample>,
    pub truth: Vec<SynthParams>,
}

type P3 = [f64; 3];

/// Sets point `j` and its mirror partner.
fn set_sym(pts: &mut [Option<P3>], perm: &FlipPermutation, j: usize, p: P3) {
    pts[j] = Some(p);
    let m = perm.map(j);
    if m != j {
        pts[m] = Some([-p[0], p[1], p[2]]);
    }
}

fn template() -> Vec<P3> {
    let perm = FlipPermutation::default_68();
    let mut pts = vec![None; LANDMARK_COUNT];
    for i in 0..=8 {
        let t = std::f64::consts::PI * i as f64 / 16.0;
        let c = t.cos();
        set_sym(
            &mut pts,
            &perm,
            i,
            [-0.85 * c, 0.05 + 0.85 * t.sin(), -0.6 * c * c],
        );
    }
    for k in 0..5 {
        let f = k as f64 / 4.0;
        let x = -0.7 + 0.55 * f;
        let y = -0.45 - 0.07 * (std::f64::consts::PI * f).sin();
        set_sym(&mut pts, &perm, 17 + k, [x, y, 0.05 + 0.15 * f]);
    }
    for (k, (y, z)) in [(-0.3, 0.2), (-0.17, 0.3), (-0.04, 0.4), (0.09, 0.5)]
        .into_iter()
        .enumerate()
    {
        set_sym(&mut pts, &perm, 27 + k, [0.0, y, z]);
    }
    set_sym(&mut pts, &perm, 31, [-0.16, 0.18, 0.25]);
    set_sym(&mut pts, &perm, 32, [-0.08, 0.21, 0.3]);
    set_sym(&mut pts, &perm, 33, [0.0, 0.22, 0.35]);
    let eye = [
        (36, -0.55, -0.25),
        (37, -0.45, -0.31),
        (38, -0.35, -0.31),
        (39, -0.25, -0.25),
        (40, -0.35, -0.2),
        (41, -0.45, -0.2),
    ];
    for (j, x, y) in eye {
        set_sym(&mut pts, &perm, j, [x, y, 0.1]);
    }
    let mouth = [
        (48, -0.35, 0.5, 0.05),
        (49, -0.22, 0.44, 0.13),
        (50, -0.09, 0.41, 0.18),
        (51, 0.0, 0.43, 0.2),
        (57, 0.0, 0.62, 0.18),
        (58, -0.12, 0.6, 0.15),
        (59, -0.25, 0.56, 0.1),
        (60, -0.28, 0.5, 0.08),
        (61, -0.12, 0.48, 0.15),
        (62, 0.0, 0.48, 0.17),
        (66, 0.0, 0.53, 0.17),
        (67, -0.12, 0.53, 0.15),
    ];
    for (j, x, y, z) in mouth {
        set_sym(&mut pts, &perm, j, [x, y, z]);
    }
    pts.into_iter()
        .map(|p| p.expect("template covers every landmark"))
        .collect()
}

/// Displacements `(landmark, dx, dy)` for the image-left half and midline;
/// the other half is mirrored.
fn expression_half(label: ExpressionLabel) -> &'static [(usize, f64, f64)] {
    use ExpressionLabel::*;
    match label {
        Neutral => &[],
        Happy => &[
            (48, -0.06, -0.1),
            (49, -0.02, -0.04),
            (59, -0.03, -0.03),
            (58, 0.0, 0.02),
            (57, 0.0, 0.03),
            (60, -0.05, -0.08),
            (40, 0.0, -0.03),
            (41, 0.0, -0.03),
            (31, -0.02, -0.02),
        ],
        Sad => &[
            (48, 0.02, 0.08),
            (59, 0.0, 0.04),
            (60, 0.02, 0.06),
            (21, 0.0, -0.08),
            (20, 0.0, -0.04),
            (17, 0.0, 0.04),
            (57, 0.0, -0.02),
            (51, 0.0, 0.02),
        ],
        Fear => &[
            (17, 0.0, -0.07),
            (18, 0.0, -0.07),
            (19, 0.0, -0.07),
            (20, 0.0, -0.07),
            (21, 0.02, -0.09),
            (37, 0.0, -0.04),
            (38, 0.0, -0.04),
            (40, 0.0, 0.02),
            (41, 0.0, 0.02),
            (48, -0.07, 0.02),
            (60, -0.06, 0.0),
            (57, 0.0, 0.04),
            (66, 0.0, 0.05),
        ],
        Angry => &[
            (21, 0.05, 0.07),
            (20, 0.03, 0.06),
            (19, 0.0, 0.04),
            (37, 0.0, 0.03),
            (38, 0.0, 0.03),
            (40, 0.0, -0.02),
            (41, 0.0, -0.02),
            (51, 0.0, 0.03),
            (57, 0.0, -0.03),
            (48, 0.03, 0.0),
        ],
        Surprise => &[
            (17, 0.0, -0.12),
            (18, 0.0, -0.12),
            (19, 0.0, -0.12),
            (20, 0.0, -0.12),
            (21, 0.0, -0.12),
            (37, 0.0, -0.05),
            (38, 0.0, -0.05),
            (40, 0.0, 0.03),
            (41, 0.0, 0.03),
            (5, 0.0, 0.04),
            (6, 0.0, 0.09),
            (7, 0.0, 0.13),
            (8, 0.0, 0.15),
            (57, 0.0, 0.15),
            (58, 0.0, 0.13),
            (59, 0.0, 0.1),
            (66, 0.0, 0.15),
            (67, 0.0, 0.13),
            (48, 0.05, 0.05),
            (60, 0.05, 0.05),
        ],
        Disgust => &[
            (49, 0.0, -0.05),
            (50, 0.0, -0.07),
            (51, 0.0, -0.07),
            (61, 0.0, -0.06),
            (62, 0.0, -0.06),
            (31, 0.0, -0.04),
            (32, 0.0, -0.04),
            (21, 0.03, 0.05),
            (20, 0.0, 0.04),
            (40, 0.0, -0.03),
            (41, 0.0, -0.03),
            (48, 0.02, 0.04),
        ],
    }
}

fn expression_field(label: ExpressionLabel) -> Vec<(f64, f64)> {
    let perm = FlipPermutation::default_68();
    let mut d = vec![(0.0, 0.0); LANDMARK_COUNT];
    for &(j, dx, dy) in expression_half(label) {
        d[j] = (dx, dy);
        let m = perm.map(j);
        if m != j {
            d[m] = (-dx, dy);
        }
    }
    d
}

/// Face-unit 3D landmarks before rotation.
fn face_points(config: &SynthConfig, p: &SynthParams) -> Vec<P3> {
    let yaw = p.yaw_deg.abs();
    let turned = yaw > config.confound_yaw && config.confound_yaw_max.is_none_or(|m| yaw <= m);
    let (sign, shown) = match config.confound {
        Confound::Negate if turned => (-1.0, p.label),
        Confound::Swap if turned => (1.0, Confound::partner(p.label)),
        _ => (1.0, p.label),
    };
    let field = expression_field(shown);
    let [wx, hy, eye_dy, mouth_dy] = p.identity;
    template()
        .into_iter()
        .zip(field)
        .enumerate()
        .map(|(j, (q, (dx, dy)))| {
            let region_dy = match j {
                17..=26 | 36..=47 => eye_dy,
                48..=67 => mouth_dy,
                _ => 0.0,
            };
            let a = sign * p.intensity;
            [q[0] * wx + a * dx, (q[1] + region_dy) * hy + a * dy, q[2]]
        })
        .collect()
}

fn project(config: &SynthConfig, yaw_deg: f64, q: P3) -> Point {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    let (cx, cy) = config.center();
    let k = config.scale();
    Point::new(cx + k * (q[0] * c + q[2] * s), cy + k * q[1])
}

/// Noise-free image-space landmarks of one face.
pub fn synth_landmarks(config: &SynthConfig, params: &SynthParams) -> Shape {
    let pts = face_points(config, params)
        .into_iter()
        .map(|q| project(config, params.yaw_deg, q))
        .collect();
    Shape::new(pts).expect("template landmarks are finite and distinct")
}

const STROKES: [(&[usize], bool, f64); 9] = [
    (&[17, 18, 19, 20, 21], false, 1.6),
    (&[22, 23, 24, 25, 26], false, 1.6),
    (&[27, 28, 29, 30], false, 1.0),
    (&[31, 32, 33, 34, 35], false, 1.0),
    (&[36, 37, 38, 39, 40, 41], true, 1.2),
    (&[42, 43, 44, 45, 46, 47], true, 1.2),
    (&[48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59], true, 1.4),
    (&[60, 61, 62, 63, 64, 65, 66, 67], true, 1.0),
    (
        &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16],
        false,
        1.0,
    ),
];

const BACKGROUND: f64 = 0.15;
const SKIN: f64 = 0.7;
const INK: f64 = 0.1;

fn draw_segment(img: &mut GrayImage, a: Point, b: Point, width: f64) {
    let r = width / 2.0 + 1.0;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = (a.x.min(b.x) - r).floor().max(0.0) as usize;
    let y0 = (a.y.min(b.y) - r).floor().max(0.0) as usize;
    let x1 = (a.x.max(b.x) + r).ceil().min(w - 1.0).max(0.0) as usize;
    let y1 = (a.y.max(b.y) + r).ceil().min(h - 1.0).max(0.0) as usize;
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - a.x, y as f64 - a.y);
            let t = if len2 > 0.0 {
                ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = ((px - t * dx).powi(2) + (py - t * dy).powi(2)).sqrt();
            let cover = (width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let v = img.get(x, y);
                img.set(x, y, v.min(v * (1.0 - cover) + INK * cover));
            }
        }
    }
}

fn render(
    config: &SynthConfig,
    params: &SynthParams,
    landmarks: &Shape,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let n = config.image_size;
    let k = config.scale();
    let c = project(config, params.yaw_deg, [0.0, 0.15, -0.35]);
    let (rx, ry) = (0.95 * k * params.identity[0], 1.1 * k * params.identity[1]);
    let mut img = GrayImage::from_fn(n, n, |x, y| {
        let (u, v) = ((x as f64 - c.x) / rx, (y as f64 - c.y) / ry);
        let e = (u * u + v * v).sqrt();
        let cover = ((1.0 - e) * rx.min(ry) + 0.5).clamp(0.0, 1.0);
        BACKGROUND + (SKIN - BACKGROUND) * cover
    });
    let pts = landmarks.points();
    for (idx, closed, width) in STROKES {
        for pair in idx.windows(2) {
            draw_segment(&mut img, pts[pair[0]], pts[pair[1]], width);
        }
        if closed {
            draw_segment(&mut img, pts[idx[idx.len() - 1]], pts[idx[0]], width);
        }
    }
    if config.image_noise > 0.0 {
        let normal = Normal::new(0.0, config.image_noise).expect("finite sigma");
        for y in 0..n {
            for x in 0..n {
                let v = img.get(x, y) + normal.sample(rng);
                img.set(x, y, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Draws one sample's latent parameters, landmarks and image. All randomness
/// comes from `rng` in a fixed order.
fn draw(config: &SynthConfig, params: SynthParams, rng: &mut ChaCha8Rng) -> (Shape, GrayImage) {
    let mut landmarks = synth_landmarks(config, &params);
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma).expect("finite sigma");
        let jittered: Vec<Point> = landmarks
            .points()
            .iter()
            .map(|p| Point::new(p.x + normal.sample(rng), p.y + normal.sample(rng)))
            .collect();
        landmarks = Shape::new(jittered).expect("finite jitter");
    }
    let image = render(config, &params, &landmarks, rng);
    (landmarks, image)
}

/// Generates `n_samples` labeled faces and their latent parameters.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthDataset, HarnessError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let labels = WeightedIndex::new(config.label_weights)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let (ylo, yhi) = config.yaw_range;
    let (ilo, ihi) = config.intensity;
    let v = config.identity_variation;
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut truth = Vec::with_capacity(config.n_samples);
    let mut current: Option<SynthParams> = None;
    for i in 0..config.n_samples {
        if i % config.samples_per_group == 0 {
            let label = ExpressionLabel::ALL[labels.sample(&mut rng)];
            // drawn for Neutral too: a swapped Neutral face shows Happy
            let intensity = rng.random_range(ilo..=ihi);
            let mut identity = [1.0, 1.0, 0.0, 0.0];
            if v > 0.0 {
                identity[0] += rng.random_range(-v..=v);
                identity[1] += rng.random_range(-v..=v);
                identity[2] = rng.random_range(-v..=v) * 0.4;
                identity[3] = rng.random_range(-v..=v) * 0.4;
            }
            current = Some(SynthParams {
                yaw_deg: 0.0,
                label,
                intensity,
                identity,
            });
        }
        let mut params = current.expect("set at group start");
        params.yaw_deg = rng.random_range(ylo..=yhi);
        let (landmarks, image) = draw(config, params, &mut rng);
        samples.push(Sample {
            image,
            landmarks,
            label: Some(params.label),
            group: format!("s{:05}", i / config.samples_per_group),
        });
        truth.push(params);
    }
    Ok(SynthDataset { samples, truth })
}

/// Writes PNG images, `.pts` files, `manifest.csv` and `truth.csv` (yaw and
/// label per sample) into `dir`.
pub fn write_synth(dataset: &SynthDataset, dir: &Path) -> Result<DatasetManifest, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut manifest = DatasetManifest::default();
    let mut truth = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Encode(e.to_string());
    truth
        .write_record(["image", "yaw_deg", "label", "intensity"])
        .map_err(csv_err)?;
    for (i, (s, t)) in dataset.samples.iter().zip(&dataset.truth).enumerate() {
        let image = dir.join(format!("face_{i:05}.png"));
        let pts = dir.join(format!("face_{i:05}.pts"));
        s.image.save_png(&image)?;
        std::fs::write(&pts, format_pts(&s.landmarks)).map_err(|e| HarnessError::io(&pts, e))?;
        truth
            .write_record([
                format!("face_{i:05}.png"),
                format!("{:?}", t.yaw_deg),
                t.label.name().to_string(),
                format!("{:?}", t.intensity),
            ])
            .map_err(csv_err)?;
        manifest.entries.push(ManifestEntry {
            image,
            pts,
            label: s.label,
            group: s.group.clone(),
            flip_of: None,
        });
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, format_manifest(&manifest, dir)?)
        .map_err(|e| HarnessError::io(&path, e))?;
    let path = dir.join("truth.csv");
    let bytes = truth
        .into_inner()
        .map_err(|e| HarnessError::Encode(e.to_string()))?;
    std::fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
    Ok(manifest)
}
