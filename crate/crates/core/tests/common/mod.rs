//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use posefer::classify::ExpressionLabel;
use posefer::features::GrayImage;
use posefer::fusionnet::{
    backward, forward, joint_loss, ForwardTrace, FusionParams, LossWeights, NetSpec,
};
use posefer::posecluster::PoseClassId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(spec: &NetSpec, rng: &mut ChaCha8Rng) -> GrayImage {
    let pixels = (0..spec.input_w * spec.input_h)
        .map(|_| rng.random::<f64>())
        .collect();
    GrayImage::new(spec.input_w, spec.input_h, pixels).unwrap()
}

/// ReLU on/off states and max-pool winners of one forward pass. Finite
/// differences are only trusted when this does not change across the probe.
fn kink_pattern(t: &ForwardTrace) -> (Vec<bool>, Vec<usize>) {
    let mut on: Vec<bool> = Vec::new();
    let mut args = t.pool2_1_arg.clone();
    for x in [&t.conv1, &t.conv2_1] {
        on.extend(x.data.iter().map(|v| *v > 0.0));
    }
    if let Some(e) = &t.expr {
        for x in [&e.conv2_2, &e.conv3, &e.conv4, &e.conv5] {
            on.extend(x.data.iter().map(|v| *v > 0.0));
        }
        on.extend(e.hidden.iter().map(|v| *v > 0.0));
        args.extend(&e.pool5_arg);
    }
    (on, args)
}

pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes that had to shrink the step to stay off a ReLU/max kink.
    pub shrunk: usize,
}

fn loss_and_pattern(
    params: &FusionParams,
    spec: &NetSpec,
    img: &GrayImage,
    hc: &[f64],
    pose: PoseClassId,
    expr: ExpressionLabel,
    w: &LossWeights,
) -> (f64, (Vec<bool>, Vec<usize>)) {
    let out = forward(params, spec, img, hc).unwrap();
    let l = joint_loss(&out.pose_logits, &out.expr_logits, pose, expr, w).unwrap();
    (l, kink_pattern(&out.trace))
}

/// Largest relative error between analytic gradients and central
/// differences, over every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
#[allow(clippy::too_many_arguments)]
pub fn fd_check(
    params: &FusionParams,
    spec: &NetSpec,
    img: &GrayImage,
    hc: &[f64],
    pose: PoseClassId,
    expr: ExpressionLabel,
    w: &LossWeights,
    eps: f64,
    only_layer: Option<usize>,
) -> FdReport {
    let out = forward(params, spec, img, hc).unwrap();
    let base_pattern = kink_pattern(&out.trace);
    let grads = backward(params, spec, &out.trace, pose, expr, w).unwrap();
    let mut p = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        shrunk: 0,
    };
    for li in 0..p.layers.len() {
        if only_layer.is_some_and(|o| o != li) {
            continue;
        }
        let nw = p.layers[li].weight.data.len();
        let nb = p.layers[li].bias.len();
        for j in 0..nw + nb {
            let analytic = if j < nw {
                grads.layers[li].weight.data[j]
            } else {
                grads.layers[li].bias[j - nw]
            };
            let mut h = eps;
            let numeric = loop {
                let set = |p: &mut FusionParams, v: f64| {
                    if j < nw {
                        p.layers[li].weight.data[j] = v;
                    } else {
                        p.layers[li].bias[j - nw] = v;
                    }
                };
                let orig = if j < nw {
                    params.layers[li].weight.data[j]
                } else {
                    params.layers[li].bias[j - nw]
                };
                set(&mut p, orig + h);
                let (lp, pp) = loss_and_pattern(&p, spec, img, hc, pose, expr, w);
                set(&mut p, orig - h);
                let (lm, pm) = loss_and_pattern(&p, spec, img, hc, pose, expr, w);
                set(&mut p, orig);
                let n = (lp - lm) / (2.0 * h);
                if (pp == base_pattern && pm == base_pattern) || h < 1e-9 {
                    break n;
                }
                report.shrunk += 1;
                h /= 100.0;
            };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    report
}

/// Random 68-point cloud with coordinates in `[-1, 1]`.
pub fn random_shape(rng: &mut ChaCha8Rng) -> posefer::shape::Shape {
    let pts: Vec<(f64, f64)> = (0..68)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    posefer::shape::Shape::from_xy(&pts).unwrap()
}

/// Summed squared distance after rotating `shape` by `theta`.
pub fn rotated_distance(
    shape: &posefer::shape::Shape,
    reference: &posefer::shape::Shape,
    theta: f64,
) -> f64 {
    let (s, c) = theta.sin_cos();
    shape
        .points()
        .iter()
        .zip(reference.points())
        .map(|(p, q)| {
            let x = c * p.x - s * p.y;
            let y = s * p.x + c * p.y;
            (x - q.x).powi(2) + (y - q.y).powi(2)
        })
        .sum()
}

/// Brute-force minimizer of [`rotated_distance`]: a `steps`-point grid over
/// `[-pi, pi)` followed by golden-section refinement around the best cell.
pub fn grid_search_rotation(
    shape: &posefer::shape::Shape,
    reference: &posefer::shape::Shape,
    steps: usize,
) -> f64 {
    use std::f64::consts::PI;
    let h = 2.0 * PI / steps as f64;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..steps {
        let t = -PI + i as f64 * h;
        let d = rotated_distance(shape, reference, t);
        if d < best.0 {
            best = (d, t);
        }
    }
    let (mut a, mut b) = (best.1 - h, best.1 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if rotated_distance(shape, reference, c) < rotated_distance(shape, reference, d) {
            b = d;
        } else {
            a = c;
        }
        if b - a < 1e-13 {
            break;
        }
    }
    (a + b) / 2.0
}

/// Smallest absolute difference between two angles.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    use std::f64::consts::PI;
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Reference seven-class confusion matrix (rows true Neutral..Disgust,
/// columns predicted). Diagonal 5202, total 6730.
pub const REFERENCE_CONFUSION: [[u64; 7]; 7] = [
    [2397, 261, 10, 17, 19, 26, 6],
    [476, 2681, 7, 2, 11, 9, 1],
    [101, 13, 5, 5, 1, 14, 0],
    [94, 18, 1, 25, 1, 2, 0],
    [135, 18, 0, 0, 24, 2, 0],
    [82, 14, 2, 0, 2, 61, 1],
    [126, 32, 6, 1, 4, 8, 9],
];
