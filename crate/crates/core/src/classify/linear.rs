//! One-vs-rest linear classifier with hinge loss and L2 regularization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::container::{DecodeError, ModelKind, Reader, Writer};
use super::{check_training_set, ClassifyError, LabeledSample, TrainConfig};
use crate::linalg::dot;

const C: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `7 x dim`, row-major, one row per label.
    pub weights: Vec<f64>,
    pub bias: [f64; 7],
    pub config: TrainConfig,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len() / C
    }

    pub fn row(&self, class: usize) -> &[f64] {
        let d = self.dim();
        &self.weights[class * d..(class + 1) * d]
    }

    pub fn scores(&self, x: &[f64]) -> Result<[f64; 7], ClassifyError> {
        if x.len() != self.dim() {
            return Err(ClassifyError::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut s = [0.0; 7];
        for (c, v) in s.iter_mut().enumerate() {
            *v = dot(self.row(c), x) + self.bias[c];
        }
        Ok(s)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(ModelKind::Linear);
        w.u64(self.dim() as u64);
        w.f64s(&self.weights);
        for b in self.bias {
            w.f64(b);
        }
        w.bytes(serde_json::to_string(&self.config).unwrap().as_bytes());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::open_kind(bytes, ModelKind::Linear)?;
        let dim = r.u64()?;
        let weights = r.f64s()?;
        if dim == 0 || (weights.len() as u64) != dim.saturating_mul(C as u64) {
            return Err(DecodeError::Invalid(
                "weight count does not match 7 x dim".into(),
            ));
        }
        let mut bias = [0.0; 7];
        for b in &mut bias {
            *b = r.f64()?;
        }
        let config: TrainConfig = serde_json::from_slice(r.bytes()?)
            .map_err(|e| DecodeError::Invalid(format!("config: {e}")))?;
        r.finish()?;
        Ok(Self {
            weights,
            bias,
            config,
        })
    }
}

/// Per-sample loss weights scaled so they average to 1 over the training set.
pub(super) fn sample_weights(samples: &[LabeledSample], config: &TrainConfig) -> Vec<f64> {
    match &config.class_weights {
        None => vec![1.0; samples.len()],
        Some(cw) => {
            let raw: Vec<f64> = samples.iter().map(|s| cw[s.label.index()]).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            if mean > 0.0 {
                raw.into_iter().map(|w| w / mean).collect()
            } else {
                vec![1.0; samples.len()]
            }
        }
    }
}

/// Mean over samples of the summed one-vs-rest hinge losses, plus
/// `lambda * ||W||^2`.
pub fn linear_objective(model: &LinearModel, samples: &[LabeledSample], lambda: f64) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let scores = model
            .scores(&s.feature.values)
            .expect("sample dimension matches model");
        for (c, v) in scores.iter().enumerate() {
            let y = if s.label.index() == c { 1.0 } else { -1.0 };
            total += (1.0 - y * v).max(0.0);
        }
    }
    total / samples.len().max(1) as f64 + lambda * dot(&model.weights, &model.weights)
}

/// Stochastic subgradient descent, one pass over a seeded shuffle per epoch,
/// step size `learning_rate / (1 + epoch)`. The bias is not regularized.
pub fn train_linear(
    samples: &[LabeledSample],
    config: &TrainConfig,
) -> Result<LinearModel, ClassifyError> {
    config.validate()?;
    let d = check_training_set(samples)?;
    let weights_per_sample = sample_weights(samples, config);
    let mut w = vec![0.0; C * d];
    let mut bias = [0.0; 7];
    // Each row is stored as `scale[c] * w_row`, so the shrink from the L2
    // term costs O(1) instead of O(d).
    let mut scale = [1.0; C];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        let eta = config.learning_rate / (1.0 + epoch as f64);
        let shrink = 1.0 - 2.0 * eta * config.l2_lambda;
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &samples[i].feature.values;
            let sw = weights_per_sample[i];
            if sw == 0.0 {
                continue;
            }
            let label = samples[i].label.index();
            for c in 0..C {
                let row = &mut w[c * d..(c + 1) * d];
                let y = if c == label { 1.0 } else { -1.0 };
                let margin = y * (scale[c] * dot(row, x) + bias[c]);
                if shrink > 0.0 {
                    scale[c] *= shrink;
                } else {
                    scale[c] = 1.0;
                    row.iter_mut().for_each(|v| *v = 0.0);
                }
                if scale[c] < 1e-9 {
                    row.iter_mut().for_each(|v| *v *= scale[c]);
                    scale[c] = 1.0;
                }
                if margin < 1.0 {
                    let step = eta * sw * y / scale[c];
                    for (r, xv) in row.iter_mut().zip(x) {
                        *r += step * xv;
                    }
                    bias[c] += eta * sw * y;
                }
            }
        }
    }
    for c in 0..C {
        w[c * d..(c + 1) * d]
            .iter_mut()
            .for_each(|v| *v *= scale[c]);
    }
    if w.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(ClassifyError::InvalidConfig(
            "training diverged to non-finite weights".into(),
        ));
    }
    Ok(LinearModel {
        weights: w,
        bias,
        config: config.clone(),
    })
}
