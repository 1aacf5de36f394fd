mod common;

use common::{fd_check, random_image, rng};
use posefer::classify::ExpressionLabel;
use posefer::fusionnet::{
    backward, forward, train_step, FusionExample, FusionParams, LossWeights, NetSpec, LAYER_NAMES,
};
use posefer::posecluster::PoseClassId;
use rand::Rng;

fn handcrafted(n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in [1u64, 2, 3] {
        let spec = NetSpec::toy(5, 4);
        let params = FusionParams::init(&spec, seed).unwrap();
        let mut r = rng(100 + seed);
        let img = random_image(&spec, &mut r);
        let hc = handcrafted(4, &mut r);
        let report = fd_check(
            &params,
            &spec,
            &img,
            &hc,
            PoseClassId::from_index(2),
            ExpressionLabel::Fear,
            &LossWeights::default(),
            1e-5,
            None,
        );
        assert_eq!(report.checked, params.param_count());
        assert!(
            report.max_rel_error < 1e-4,
            "seed {seed}: max relative error {}",
            report.max_rel_error
        );
    }
}

#[test]
fn without_pose_loss_the_pose_head_gets_nothing() {
    let spec = NetSpec::toy(3, 2);
    let params = FusionParams::init(&spec, 7).unwrap();
    let mut r = rng(7);
    let img = random_image(&spec, &mut r);
    let hc = handcrafted(2, &mut r);
    let w = LossWeights {
        lambda_pose: 0.0,
        lambda_expr: 1.0,
    };
    let out = forward(&params, &spec, &img, &hc).unwrap();
    let g = backward(
        &params,
        &spec,
        &out.trace,
        PoseClassId::from_index(0),
        ExpressionLabel::Happy,
        &w,
    )
    .unwrap();
    let head = LAYER_NAMES.iter().position(|n| *n == "pose_head").unwrap();
    assert!(g.layers[head]
        .weight
        .data
        .iter()
        .chain(&g.layers[head].bias)
        .all(|v| *v == 0.0));
    // conv2_1 still learns, through the concatenation into the expression path
    let c21 = LAYER_NAMES.iter().position(|n| *n == "conv2_1").unwrap();
    let report = fd_check(
        &params,
        &spec,
        &img,
        &hc,
        PoseClassId::from_index(0),
        ExpressionLabel::Happy,
        &w,
        1e-5,
        Some(c21),
    );
    assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
}

#[test]
fn saturated_heads_have_vanishing_gradients() {
    let spec = NetSpec::toy(4, 3);
    let mut params = FusionParams::init(&spec, 11).unwrap();
    let head = LAYER_NAMES.iter().position(|n| *n == "pose_head").unwrap();
    let expr = LAYER_NAMES.iter().position(|n| *n == "expr_head").unwrap();
    params.layers[head].bias[1] = 1e3;
    params.layers[expr].bias[ExpressionLabel::Angry.index()] = 1e3;
    let mut r = rng(11);
    let img = random_image(&spec, &mut r);
    let out = forward(&params, &spec, &img, &handcrafted(3, &mut r)).unwrap();
    let g = backward(
        &params,
        &spec,
        &out.trace,
        PoseClassId::from_index(1),
        ExpressionLabel::Angry,
        &LossWeights::default(),
    )
    .unwrap();
    let norm: f64 = g
        .layers
        .iter()
        .flat_map(|l| l.weight.data.iter().chain(&l.bias))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    assert!(norm < 1e-6, "{norm}");
}

fn toy_batch(spec: &NetSpec, n: usize, seed: u64) -> Vec<FusionExample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| FusionExample {
            image: random_image(spec, &mut r),
            handcrafted: handcrafted(spec.handcrafted_dim, &mut r),
            pose: PoseClassId::from_index(i % spec.pose_classes),
            expr: ExpressionLabel::ALL[i % 7],
        })
        .collect()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let spec = NetSpec::toy(3, 2);
    let mut p = FusionParams::init(&spec, 5).unwrap();
    let before = p.clone();
    train_step(
        &mut p,
        &spec,
        &toy_batch(&spec, 4, 5),
        &LossWeights::default(),
        0.0,
    )
    .unwrap();
    assert_eq!(p, before);
}

#[test]
fn small_batch_is_memorized() {
    let mut spec = NetSpec::toy(3, 2);
    spec.conv5.out = 16;
    spec.fc6 = 32;
    let batch = toy_batch(&spec, 8, 21);
    let mut p = FusionParams::init(&spec, 21).unwrap();
    let mut loss = f64::INFINITY;
    for _ in 0..200 {
        loss = train_step(&mut p, &spec, &batch, &LossWeights::default(), 0.5).unwrap();
    }
    let (final_loss, _) =
        posefer::fusionnet::batch_gradient(&p, &spec, &batch, &LossWeights::default()).unwrap();
    assert!(
        final_loss < 0.05,
        "loss after 200 steps: {final_loss} (last step {loss})"
    );
}

#[test]
fn small_steps_rarely_increase_the_loss() {
    let spec = NetSpec::toy(3, 2);
    let batch = toy_batch(&spec, 8, 4);
    let mut p = FusionParams::init(&spec, 4).unwrap();
    let losses: Vec<f64> = (0..60)
        .map(|_| train_step(&mut p, &spec, &batch, &LossWeights::default(), 1e-3).unwrap())
        .collect();
    let ok = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(ok as f64 >= 0.95 * (losses.len() - 1) as f64);
}

#[test]
fn training_is_bitwise_reproducible() {
    let spec = NetSpec::toy(3, 2);
    let batch = toy_batch(&spec, 6, 8);
    let run = || {
        let mut p = FusionParams::init(&spec, 8).unwrap();
        for _ in 0..5 {
            train_step(&mut p, &spec, &batch, &LossWeights::default(), 0.1).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}
