//! Two-branch convolutional network with hand-crafted feature fusion.
//!
//! `conv1` is shared. The pose branch runs `conv2_1 -> pool2_1 -> pose head`;
//! the expression branch runs `conv2_2`, stacks it with `pool2_1` on the
//! channel axis and continues through `conv3..conv5`, `pool5`, concatenation
//! with a precomputed hand-crafted vector, `fc6` and the expression head.
//! ReLU follows every convolution and `fc6`; the heads are linear.
//!
//! Everything runs in `f64` on the CPU with plain SGD, so gradients can be
//! checked against finite differences.

mod ops;
mod spec;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::container::{DecodeError, ModelKind, Reader, Writer};
use crate::classify::{argmax_label, ExpressionLabel};
use crate::features::GrayImage;
use crate::posecluster::{PoseAssignment, PoseClassId};
use crate::textfmt::TextFormatError;

pub use ops::Tensor;
pub use spec::{ConvSpec, LayerShapes, NetSpec, PoolSpec};

/// Parameterized layers in storage order.
pub const LAYER_NAMES: [&str; 9] = [
    "conv1",
    "conv2_1",
    "conv2_2",
    "conv3",
    "conv4",
    "conv5",
    "pose_head",
    "fc6",
    "expr_head",
];
const CONV1: usize = 0;
const CONV2_1: usize = 1;
const CONV2_2: usize = 2;
const CONV3: usize = 3;
const CONV4: usize = 4;
const CONV5: usize = 5;
const POSE_HEAD: usize = 6;
const FC6: usize = 7;
const EXPR_HEAD: usize = 8;

/// CNN pose wins a disagreement with the landmark pose at this confidence.
pub const CNN_POSE_CONFIDENCE: f64 = 0.6;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch at {layer}: {message}")]
    ShapeMismatch { layer: String, message: String },
    #[error("label out of range: {0}")]
    LabelOutOfRange(String),
    #[error("trace does not match the network: {0}")]
    TraceMismatch(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("non-finite loss or parameter")]
    NonFinite,
    #[error(transparent)]
    Format(#[from] TextFormatError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl NetError {
    pub(crate) fn shape(layer: &str, message: &str) -> Self {
        NetError::ShapeMismatch {
            layer: layer.to_string(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_pose: f64,
    pub lambda_expr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pose: 1.0,
            lambda_expr: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), NetError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_pose) || !ok(self.lambda_expr) {
            return Err(NetError::Config("loss weights must be non-negative".into()));
        }
        if self.lambda_pose == 0.0 && self.lambda_expr == 0.0 {
            return Err(NetError::Config("loss weights cannot both be zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayer {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// One weight tensor and bias per entry of [`LAYER_NAMES`]. Gradients use the
/// same type.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub layers: Vec<ParamLayer>,
}

impl FusionParams {
    pub fn zeros(spec: &NetSpec) -> Result<Self, NetError> {
        Ok(Self {
            layers: spec
                .param_shapes()?
                .into_iter()
                .map(|(w, b)| ParamLayer {
                    weight: Tensor::zeros(&w),
                    bias: vec![0.0; b],
                })
                .collect(),
        })
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self, NetError> {
        let mut p = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut p.layers {
            let s = &layer.weight.shape;
            let (fan_in, fan_out) = if s.len() == 4 {
                (s[1] * s[2] * s[3], s[0] * s[2] * s[3])
            } else {
                (s[1], s[0])
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            layer
                .weight
                .data
                .iter_mut()
                .for_each(|w| *w = dist.sample(&mut rng));
        }
        Ok(p)
    }

    pub fn check(&self, spec: &NetSpec) -> Result<(), NetError> {
        let shapes = spec.param_shapes()?;
        if self.layers.len() != shapes.len() {
            return Err(NetError::shape("params", "wrong number of layers"));
        }
        for ((layer, (w, b)), name) in self.layers.iter().zip(&shapes).zip(LAYER_NAMES) {
            if &layer.weight.shape != w
                || layer.weight.data.len() != w.iter().product::<usize>()
                || layer.bias.len() != *b
            {
                return Err(NetError::shape(name, "parameter shape differs from spec"));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &FusionParams, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data.iter_mut().zip(&b.weight.data) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.data.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn encode(&self, spec: &NetSpec) -> Vec<u8> {
        let mut w = Writer::new(ModelKind::Fusion);
        w.bytes(spec.to_text().as_bytes());
        w.u64(self.layers.len() as u64);
        for l in &self.layers {
            w.f64s(&l.weight.data);
            w.f64s(&l.bias);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<(NetSpec, FusionParams), NetError> {
        let mut r = Reader::open_kind(bytes, ModelKind::Fusion)?;
        let text = std::str::from_utf8(r.bytes()?)
            .map_err(|_| DecodeError::Invalid("spec is not UTF-8".into()))?;
        let spec = NetSpec::from_text(text)?;
        let shapes = spec.param_shapes()?;
        let n = r.u64()?;
        if n != shapes.len() as u64 {
            return Err(DecodeError::Invalid("wrong number of layers".into()).into());
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (wshape, blen) in shapes {
            let w = r.f64s()?;
            let b = r.f64s()?;
            if w.len() != wshape.iter().product::<usize>() || b.len() != blen {
                return Err(
                    DecodeError::Invalid("parameter count differs from spec".into()).into(),
                );
            }
            layers.push(ParamLayer {
                weight: Tensor::from_vec(&wshape, w),
                bias: b,
            });
        }
        r.finish()?;
        Ok((spec, FusionParams { layers }))
    }
}

/// Cached activations of one forward pass. Convolution outputs are stored
/// after ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub conv1: Tensor,
    pub conv2_1: Tensor,
    pub pool2_1: Tensor,
    pub pool2_1_arg: Vec<usize>,
    pub pose_logits: Vec<f64>,
    /// Absent when only the pose branch was evaluated.
    pub expr: Option<ExprTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprTrace {
    pub conv2_2: Tensor,
    pub concat: Tensor,
    pub conv3: Tensor,
    pub conv4: Tensor,
    pub conv5: Tensor,
    pub pool5: Tensor,
    pub pool5_arg: Vec<usize>,
    /// Flattened `pool5` followed by the hand-crafted vector.
    pub fused: Vec<f64>,
    /// `fc6` output after ReLU.
    pub hidden: Vec<f64>,
    pub expr_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub pose_logits: Vec<f64>,
    pub expr_logits: Vec<f64>,
    pub trace: ForwardTrace,
}

fn input_tensor(spec: &NetSpec, image: &GrayImage) -> Result<Tensor, NetError> {
    if image.height() != spec.input_h || image.width() != spec.input_w {
        return Err(NetError::shape(
            "input",
            &format!(
                "image is {}x{}, network expects {}x{}",
                image.width(),
                image.height(),
                spec.input_w,
                spec.input_h
            ),
        ));
    }
    Ok(Tensor::from_vec(
        &[1, spec.input_h, spec.input_w],
        image.pixels().iter().map(|v| v - 0.5).collect(),
    ))
}

fn conv_relu(
    input: &Tensor,
    layer: &ParamLayer,
    c: &ConvSpec,
    shape: (usize, usize, usize),
) -> Tensor {
    let mut t = ops::conv_forward(input, &layer.weight.data, &layer.bias, c, shape.1, shape.2);
    ops::relu_inplace(&mut t.data);
    t
}

fn pose_trace(
    params: &FusionParams,
    spec: &NetSpec,
    s: &LayerShapes,
    input: Tensor,
) -> ForwardTrace {
    let l = &params.layers;
    let conv1 = conv_relu(&input, &l[CONV1], &spec.conv1, s.conv1);
    let conv2_1 = conv_relu(&conv1, &l[CONV2_1], &spec.conv2_1, s.conv2_1);
    let (pool2_1, pool2_1_arg) =
        ops::maxpool_forward(&conv2_1, &spec.pool2_1, s.pool2_1.1, s.pool2_1.2);
    let pose_logits = ops::fc_forward(&pool2_1.data, &l[POSE_HEAD].weight.data, &l[POSE_HEAD].bias);
    ForwardTrace {
        input,
        conv1,
        conv2_1,
        pool2_1,
        pool2_1_arg,
        pose_logits,
        expr: None,
    }
}

fn expr_trace(
    params: &FusionParams,
    spec: &NetSpec,
    s: &LayerShapes,
    t: &ForwardTrace,
    handcrafted: &[f64],
) -> ExprTrace {
    let l = &params.layers;
    let conv2_2 = conv_relu(&t.conv1, &l[CONV2_2], &spec.conv2_2, s.conv2_2);
    let mut concat = t.pool2_1.data.clone();
    concat.extend_from_slice(&conv2_2.data);
    let concat = Tensor::from_vec(&[s.concat.0, s.concat.1, s.concat.2], concat);
    let conv3 = conv_relu(&concat, &l[CONV3], &spec.conv3, s.conv3);
    let conv4 = conv_relu(&conv3, &l[CONV4], &spec.conv4, s.conv4);
    let conv5 = conv_relu(&conv4, &l[CONV5], &spec.conv5, s.conv5);
    let (pool5, pool5_arg) = ops::maxpool_forward(&conv5, &spec.pool5, s.pool5.1, s.pool5.2);
    let mut fused = pool5.data.clone();
    fused.extend_from_slice(handcrafted);
    let mut hidden = ops::fc_forward(&fused, &l[FC6].weight.data, &l[FC6].bias);
    ops::relu_inplace(&mut hidden);
    let expr_logits = ops::fc_forward(&hidden, &l[EXPR_HEAD].weight.data, &l[EXPR_HEAD].bias);
    ExprTrace {
        conv2_2,
        concat,
        conv3,
        conv4,
        conv5,
        pool5,
        pool5_arg,
        fused,
        hidden,
        expr_logits,
    }
}

fn check_inputs(
    params: &FusionParams,
    spec: &NetSpec,
    handcrafted: &[f64],
) -> Result<LayerShapes, NetError> {
    let s = spec.shapes()?;
    params.check(spec)?;
    if handcrafted.len() != spec.handcrafted_dim {
        return Err(NetError::shape(
            "handcrafted",
            &format!(
                "expected {} values, found {}",
                spec.handcrafted_dim,
                handcrafted.len()
            ),
        ));
    }
    Ok(s)
}

/// Full forward pass through both branches.
pub fn forward(
    params: &FusionParams,
    spec: &NetSpec,
    image: &GrayImage,
    handcrafted: &[f64],
) -> Result<ForwardOutput, NetError> {
    let s = check_inputs(params, spec, handcrafted)?;
    let input = input_tensor(spec, image)?;
    let mut trace = pose_trace(params, spec, &s, input);
    let e = expr_trace(params, spec, &s, &trace, handcrafted);
    let expr_logits = e.expr_logits.clone();
    trace.expr = Some(e);
    Ok(ForwardOutput {
        pose_logits: trace.pose_logits.clone(),
        expr_logits,
        trace,
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn check_labels(pose_logits: &[f64], pose: PoseClassId) -> Result<(), NetError> {
    if pose.index() >= pose_logits.len() {
        return Err(NetError::LabelOutOfRange(format!(
            "pose class {pose} with {} pose outputs",
            pose_logits.len()
        )));
    }
    Ok(())
}

/// `lambda_pose * CE(pose) + lambda_expr * CE(expression)`. A head whose
/// weight is zero is not evaluated.
pub fn joint_loss(
    pose_logits: &[f64],
    expr_logits: &[f64],
    pose: PoseClassId,
    expr: ExpressionLabel,
    weights: &LossWeights,
) -> Result<f64, NetError> {
    check_labels(pose_logits, pose)?;
    let mut loss = 0.0;
    if weights.lambda_pose != 0.0 {
        loss += weights.lambda_pose * cross_entropy(pose_logits, pose.index());
    }
    if weights.lambda_expr != 0.0 {
        if expr_logits.len() != ExpressionLabel::COUNT {
            return Err(NetError::LabelOutOfRange(
                "expression head needs 7 logits".into(),
            ));
        }
        loss += weights.lambda_expr * cross_entropy(expr_logits, expr.index());
    }
    Ok(loss)
}

fn softmax_grad(logits: &[f64], label: usize, lambda: f64) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g.iter_mut().for_each(|v| *v *= lambda);
    g
}

fn check_trace(t: &ForwardTrace, s: &LayerShapes, spec: &NetSpec) -> Result<(), NetError> {
    let dims = |x: &Tensor| x.chw();
    let mut ok = t.input.shape == [1, spec.input_h, spec.input_w]
        && dims(&t.conv1) == s.conv1
        && dims(&t.conv2_1) == s.conv2_1
        && dims(&t.pool2_1) == s.pool2_1
        && t.pool2_1_arg.len() == t.pool2_1.len()
        && t.pose_logits.len() == spec.pose_classes;
    if let Some(e) = &t.expr {
        ok &= dims(&e.conv2_2) == s.conv2_2
            && dims(&e.concat) == s.concat
            && dims(&e.conv3) == s.conv3
            && dims(&e.conv4) == s.conv4
            && dims(&e.conv5) == s.conv5
            && dims(&e.pool5) == s.pool5
            && e.pool5_arg.len() == e.pool5.len()
            && e.fused.len() == s.fused
            && e.hidden.len() == spec.fc6
            && e.expr_logits.len() == ExpressionLabel::COUNT;
    }
    if ok {
        Ok(())
    } else {
        Err(NetError::TraceMismatch(
            "activation sizes differ from the spec".into(),
        ))
    }
}

/// Gradients of [`joint_loss`] with respect to every parameter. The
/// hand-crafted input receives no gradient.
pub fn backward(
    params: &FusionParams,
    spec: &NetSpec,
    trace: &ForwardTrace,
    pose: PoseClassId,
    expr: ExpressionLabel,
    weights: &LossWeights,
) -> Result<FusionParams, NetError> {
    let s = spec.shapes()?;
    params.check(spec)?;
    check_trace(trace, &s, spec)?;
    check_labels(&trace.pose_logits, pose)?;
    let l = &params.layers;
    let mut g = FusionParams::zeros(spec)?;

    let pool_len = trace.pool2_1.len();
    let mut d_pool = vec![0.0; pool_len];
    let mut d_conv1 = Tensor::zeros(&trace.conv1.shape);

    if weights.lambda_expr != 0.0 {
        let e = trace.expr.as_ref().ok_or_else(|| {
            NetError::TraceMismatch("expression branch missing from trace".into())
        })?;
        let d_logits = softmax_grad(&e.expr_logits, expr.index(), weights.lambda_expr);
        let [.., gh, gx] = &mut g.layers[..] else {
            unreachable!()
        };
        let mut d_hidden = ops::fc_backward(
            &e.hidden,
            &l[EXPR_HEAD].weight.data,
            &d_logits,
            &mut gx.weight.data,
            &mut gx.bias,
            spec.fc6,
        );
        ops::relu_backward(&e.hidden, &mut d_hidden);
        let d_flat = ops::fc_backward(
            &e.fused,
            &l[FC6].weight.data,
            &d_hidden,
            &mut gh.weight.data,
            &mut gh.bias,
            e.pool5.len(),
        );
        let mut d = ops::maxpool_backward(&e.conv5.shape, &e.pool5_arg, &d_flat);
        for (idx, input, out, c) in [
            (CONV5, &e.conv4, &e.conv5, &spec.conv5),
            (CONV4, &e.conv3, &e.conv4, &spec.conv4),
            (CONV3, &e.concat, &e.conv3, &spec.conv3),
        ] {
            ops::relu_backward(&out.data, &mut d.data);
            let gl = &mut g.layers[idx];
            d = ops::conv_backward(
                input,
                &l[idx].weight.data,
                c,
                &d,
                &mut gl.weight.data,
                &mut gl.bias,
                true,
            )
            .expect("input gradient requested");
        }
        let (d_pool_part, d_c22) = d.data.split_at(pool_len);
        d_pool.copy_from_slice(d_pool_part);
        let mut d_c22 = Tensor::from_vec(&e.conv2_2.shape, d_c22.to_vec());
        ops::relu_backward(&e.conv2_2.data, &mut d_c22.data);
        let gl = &mut g.layers[CONV2_2];
        let d1 = ops::conv_backward(
            &trace.conv1,
            &l[CONV2_2].weight.data,
            &spec.conv2_2,
            &d_c22,
            &mut gl.weight.data,
            &mut gl.bias,
            true,
        )
        .expect("input gradient requested");
        d_conv1.data.copy_from_slice(&d1.data);
    }

    if weights.lambda_pose != 0.0 {
        let d_logits = softmax_grad(&trace.pose_logits, pose.index(), weights.lambda_pose);
        let gl = &mut g.layers[POSE_HEAD];
        let d = ops::fc_backward(
            &trace.pool2_1.data,
            &l[POSE_HEAD].weight.data,
            &d_logits,
            &mut gl.weight.data,
            &mut gl.bias,
            pool_len,
        );
        for (a, b) in d_pool.iter_mut().zip(d) {
            *a += b;
        }
    }

    let mut d_c21 = ops::maxpool_backward(&trace.conv2_1.shape, &trace.pool2_1_arg, &d_pool);
    ops::relu_backward(&trace.conv2_1.data, &mut d_c21.data);
    let gl = &mut g.layers[CONV2_1];
    let d1 = ops::conv_backward(
        &trace.conv1,
        &l[CONV2_1].weight.data,
        &spec.conv2_1,
        &d_c21,
        &mut gl.weight.data,
        &mut gl.bias,
        true,
    )
    .expect("input gradient requested");
    for (a, b) in d_conv1.data.iter_mut().zip(&d1.data) {
        *a += b;
    }
    ops::relu_backward(&trace.conv1.data, &mut d_conv1.data);
    let gl = &mut g.layers[CONV1];
    ops::conv_backward(
        &trace.input,
        &l[CONV1].weight.data,
        &spec.conv1,
        &d_conv1,
        &mut gl.weight.data,
        &mut gl.bias,
        false,
    );
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionExample {
    pub image: GrayImage,
    pub handcrafted: Vec<f64>,
    pub pose: PoseClassId,
    pub expr: ExpressionLabel,
}

/// Forward pass, evaluating the expression branch only when it carries
/// loss weight.
fn forward_for_loss(
    params: &FusionParams,
    spec: &NetSpec,
    s: &LayerShapes,
    ex: &FusionExample,
    weights: &LossWeights,
) -> Result<ForwardTrace, NetError> {
    if ex.handcrafted.len() != spec.handcrafted_dim {
        return Err(NetError::shape(
            "handcrafted",
            "dimension differs from spec",
        ));
    }
    let mut t = pose_trace(params, spec, s, input_tensor(spec, &ex.image)?);
    if weights.lambda_expr != 0.0 {
        t.expr = Some(expr_trace(params, spec, s, &t, &ex.handcrafted));
    }
    Ok(t)
}

/// Mean joint loss and mean gradient over `batch`, summed in batch order.
pub fn batch_gradient(
    params: &FusionParams,
    spec: &NetSpec,
    batch: &[FusionExample],
    weights: &LossWeights,
) -> Result<(f64, FusionParams), NetError> {
    if batch.is_empty() {
        return Err(NetError::Config("empty batch".into()));
    }
    weights.validate()?;
    let s = spec.shapes()?;
    params.check(spec)?;
    let mut total = FusionParams::zeros(spec)?;
    let mut loss = 0.0;
    for ex in batch {
        let t = forward_for_loss(params, spec, &s, ex, weights)?;
        let expr_logits = t.expr.as_ref().map_or(&[][..], |e| &e.expr_logits[..]);
        loss += joint_loss(&t.pose_logits, expr_logits, ex.pose, ex.expr, weights)?;
        let g = backward(params, spec, &t, ex.pose, ex.expr, weights)?;
        total.add_scaled(&g, 1.0);
    }
    let n = batch.len() as f64;
    for l in &mut total.layers {
        l.weight.data.iter_mut().for_each(|v| *v /= n);
        l.bias.iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, total))
}

/// One plain SGD step on the mean batch gradient. Returns the mean loss
/// before the update.
pub fn train_step(
    params: &mut FusionParams,
    spec: &NetSpec,
    batch: &[FusionExample],
    weights: &LossWeights,
    learning_rate: f64,
) -> Result<f64, NetError> {
    let (loss, g) = batch_gradient(params, spec, batch, weights)?;
    if !loss.is_finite() {
        return Err(NetError::NonFinite);
    }
    params.add_scaled(&g, -learning_rate);
    if !params.is_finite() {
        return Err(NetError::NonFinite);
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionTrainConfig {
    pub seed: u64,
    /// Pose-only epochs (`lambda_expr = 0`) before joint training.
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by this after every epoch.
    pub lr_decay: f64,
    pub weights: LossWeights,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            phase1_epochs: 2,
            phase2_epochs: 8,
            batch_size: 16,
            learning_rate: 0.05,
            lr_decay: 0.9,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionTraining {
    pub params: FusionParams,
    /// Mean training loss per epoch, phase 1 first.
    pub epoch_losses: Vec<f64>,
}

/// Two-phase training: the pose branch alone, then both heads jointly.
/// Phase 1 is skipped when `lambda_pose` is zero.
pub fn train_fusion(
    spec: &NetSpec,
    examples: &[FusionExample],
    config: &FusionTrainConfig,
) -> Result<FusionTraining, NetError> {
    config.weights.validate()?;
    if examples.is_empty() || config.batch_size == 0 {
        return Err(NetError::Config(
            "need examples and a positive batch size".into(),
        ));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(NetError::Config("learning_rate must be positive".into()));
    }
    let mut params = FusionParams::init(spec, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut lr = config.learning_rate;
    let mut epoch_losses = Vec::new();
    let phase1 = LossWeights {
        lambda_pose: config.weights.lambda_pose,
        lambda_expr: 0.0,
    };
    let phases = [
        (
            phase1,
            if config.weights.lambda_pose > 0.0 {
                config.phase1_epochs
            } else {
                0
            },
        ),
        (config.weights, config.phase2_epochs),
    ];
    let mut batch = Vec::with_capacity(config.batch_size);
    for (weights, epochs) in phases {
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for chunk in order.chunks(config.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| examples[i].clone()));
                sum += train_step(&mut params, spec, &batch, &weights, lr)? * chunk.len() as f64;
            }
            epoch_losses.push(sum / examples.len() as f64);
            lr *= config.lr_decay;
        }
    }
    Ok(FusionTraining {
        params,
        epoch_losses,
    })
}

/// Pose-class probabilities from `conv1` and the pose branch only.
pub fn pose_probabilities(
    params: &FusionParams,
    spec: &NetSpec,
    image: &GrayImage,
) -> Result<Vec<f64>, NetError> {
    let s = spec.shapes()?;
    params.check(spec)?;
    let t = pose_trace(params, spec, &s, input_tensor(spec, image)?);
    Ok(softmax(&t.pose_logits))
}

/// Most probable pose class (lowest class on ties).
pub fn predict_pose_cnn(
    params: &FusionParams,
    spec: &NetSpec,
    image: &GrayImage,
) -> Result<PoseClassId, NetError> {
    let p = pose_probabilities(params, spec, image)?;
    Ok(PoseClassId::from_index(argmax(&p)))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Expression label and class probabilities from a full forward pass.
pub fn predict_expression(
    params: &FusionParams,
    spec: &NetSpec,
    image: &GrayImage,
    handcrafted: &[f64],
) -> Result<(ExpressionLabel, [f64; 7]), NetError> {
    let out = forward(params, spec, image, handcrafted)?;
    let p = softmax(&out.expr_logits);
    let mut probs = [0.0; 7];
    probs.copy_from_slice(&p);
    Ok((argmax_label(&probs), probs))
}

/// Agreeing estimates win outright; on disagreement the CNN class is kept
/// when its probability reaches [`CNN_POSE_CONFIDENCE`], otherwise the
/// landmark class.
pub fn fuse_pose_estimates(
    cnn_pose: PoseClassId,
    cnn_probabilities: &[f64],
    landmark: &PoseAssignment,
) -> PoseClassId {
    if cnn_pose == landmark.class {
        return cnn_pose;
    }
    let confidence = cnn_probabilities
        .get(cnn_pose.index())
        .copied()
        .unwrap_or(0.0);
    if confidence >= CNN_POSE_CONFIDENCE {
        cnn_pose
    } else {
        landmark.class
    }
}
