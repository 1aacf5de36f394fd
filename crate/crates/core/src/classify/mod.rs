//! Expression classifiers on hand-crafted features.
//!
//! A one-vs-rest linear max-margin model trained by stochastic subgradient
//! descent and a CART random forest, plus class balancing, hard-example
//! mining and confusion matrices.

pub mod container;
mod forest;
mod linear;

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::posecluster::PoseClassId;

pub use container::{peek_kind, DecodeError, ModelKind};
pub use forest::{train_forest, ForestConfig, ForestModel, Node, Tree};
pub use linear::{linear_objective, train_linear, LinearModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("training data contains fewer than two classes")]
    SingleClassData,
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("no samples to balance")]
    EmptyClass,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExpressionLabel {
    Neutral,
    Happy,
    Sad,
    Fear,
    Angry,
    Surprise,
    Disgust,
}

impl ExpressionLabel {
    pub const COUNT: usize = 7;
    pub const ALL: [ExpressionLabel; 7] = [
        ExpressionLabel::Neutral,
        ExpressionLabel::Happy,
        ExpressionLabel::Sad,
        ExpressionLabel::Fear,
        ExpressionLabel::Angry,
        ExpressionLabel::Surprise,
        ExpressionLabel::Disgust,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ExpressionLabel::Neutral => "Neutral",
            ExpressionLabel::Happy => "Happy",
            ExpressionLabel::Sad => "Sad",
            ExpressionLabel::Fear => "Fear",
            ExpressionLabel::Angry => "Angry",
            ExpressionLabel::Surprise => "Surprise",
            ExpressionLabel::Disgust => "Disgust",
        }
    }
}

impl fmt::Display for ExpressionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown expression label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for ExpressionLabel {
    type Err = UnknownLabel;

    /// Case-insensitive match on the label name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Index of the largest score; ties go to the lowest label.
pub fn argmax_label(scores: &[f64; 7]) -> ExpressionLabel {
    let mut best = 0;
    for i in 1..ExpressionLabel::COUNT {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    ExpressionLabel::ALL[best]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub feature: FeatureVector,
    pub label: ExpressionLabel,
    pub pose: PoseClassId,
    /// Identifier of the photo the sample was derived from.
    pub group_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balancing {
    None,
    Undersample,
    Oversample,
    #[default]
    ClassWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    pub balancing: Balancing,
    /// Samples whose top-two score margin falls below this are retrained on.
    pub hard_mining_band: f64,
    /// Extra training rounds on mined hard examples.
    pub hard_mining_rounds: usize,
    /// Per-class loss weights, set by [`balance`] with
    /// [`Balancing::ClassWeights`].
    pub class_weights: Option<[f64; 7]>,
    pub forest: ForestConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.1,
            l2_lambda: 1e-4,
            seed: 0,
            balancing: Balancing::default(),
            hard_mining_band: 0.0,
            hard_mining_rounds: 0,
            class_weights: None,
            forest: ForestConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        let bad = |m: &str| Err(ClassifyError::InvalidConfig(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be non-negative");
        }
        if !(self.hard_mining_band.is_finite() && self.hard_mining_band >= 0.0) {
            return bad("hard_mining_band must be non-negative");
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("class weights must be finite and non-negative");
            }
        }
        self.forest.validate()
    }
}

/// Training-set checks shared by both learners; returns the feature dim.
fn check_training_set(samples: &[LabeledSample]) -> Result<usize, ClassifyError> {
    let first = samples.first().ok_or(ClassifyError::SingleClassData)?;
    let dim = first.feature.dim();
    for s in samples {
        if s.feature.dim() != dim {
            return Err(ClassifyError::DimMismatch {
                expected: dim,
                found: s.feature.dim(),
            });
        }
    }
    if samples.iter().all(|s| s.label == first.label) {
        return Err(ClassifyError::SingleClassData);
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Linear(LinearModel),
    Forest(ForestModel),
}

impl Classifier {
    pub fn dim(&self) -> usize {
        match self {
            Classifier::Linear(m) => m.dim(),
            Classifier::Forest(m) => m.dim,
        }
    }

    pub fn scores(&self, feature: &[f64]) -> Result<[f64; 7], ClassifyError> {
        match self {
            Classifier::Linear(m) => m.scores(feature),
            Classifier::Forest(m) => m.scores(feature),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Classifier::Linear(m) => m.encode(),
            Classifier::Forest(m) => m.encode(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ClassifyError> {
        match peek_kind(bytes)? {
            ModelKind::Linear => Ok(Classifier::Linear(LinearModel::decode(bytes)?)),
            ModelKind::Forest => Ok(Classifier::Forest(ForestModel::decode(bytes)?)),
            found => Err(DecodeError::WrongKind {
                expected: ModelKind::Linear,
                found,
            }
            .into()),
        }
    }
}

/// Label with the highest score and all seven scores.
pub fn predict(
    model: &Classifier,
    feature: &[f64],
) -> Result<(ExpressionLabel, [f64; 7]), ClassifyError> {
    let s = model.scores(feature)?;
    Ok((argmax_label(&s), s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    pub samples: Vec<LabeledSample>,
    /// `majority_count / class_count` per present class, 0 for absent ones.
    /// Only set for [`Balancing::ClassWeights`].
    pub class_weights: Option<[f64; 7]>,
}

fn class_counts(samples: &[LabeledSample]) -> [usize; 7] {
    let mut c = [0; 7];
    for s in samples {
        c[s.label.index()] += 1;
    }
    c
}

/// Equalizes class frequencies among the classes present in `samples`.
///
/// Output keeps the classes in label order, each class's samples in their
/// input order (undersampling) or input order followed by random repeats
/// (oversampling).
pub fn balance(
    samples: &[LabeledSample],
    strategy: Balancing,
    seed: u64,
) -> Result<Balanced, ClassifyError> {
    if samples.is_empty() {
        return Err(ClassifyError::EmptyClass);
    }
    let counts = class_counts(samples);
    let present: Vec<usize> = (0..7).filter(|&c| counts[c] > 0).collect();
    let min = present.iter().map(|&c| counts[c]).min().unwrap_or(0);
    let max = present.iter().map(|&c| counts[c]).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = |c: usize| -> Vec<&LabeledSample> {
        samples.iter().filter(|s| s.label.index() == c).collect()
    };
    match strategy {
        Balancing::None => Ok(Balanced {
            samples: samples.to_vec(),
            class_weights: None,
        }),
        Balancing::ClassWeights => {
            let mut w = [0.0; 7];
            for &c in &present {
                w[c] = max as f64 / counts[c] as f64;
            }
            Ok(Balanced {
                samples: samples.to_vec(),
                class_weights: Some(w),
            })
        }
        Balancing::Undersample => {
            let mut out = Vec::with_capacity(min * present.len());
            for &c in &present {
                let members = by_class(c);
                let mut idx: Vec<usize> = (0..members.len()).collect();
                idx.shuffle(&mut rng);
                idx.truncate(min);
                idx.sort_unstable();
                out.extend(idx.into_iter().map(|i| members[i].clone()));
            }
            Ok(Balanced {
                samples: out,
                class_weights: None,
            })
        }
        Balancing::Oversample => {
            let mut out = Vec::with_capacity(max * present.len());
            for &c in &present {
                let members = by_class(c);
                out.extend(members.iter().map(|s| (*s).clone()));
                for _ in members.len()..max {
                    out.push((*members.choose(&mut rng).unwrap()).clone());
                }
            }
            Ok(Balanced {
                samples: out,
                class_weights: None,
            })
        }
    }
}

/// Gap between the best and second-best score.
pub fn top_two_margin(scores: &[f64; 7]) -> f64 {
    let mut s = *scores;
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] - s[1]
}

/// Samples the model gets wrong or separates by less than `band`, in input
/// order. Samples with a mismatched dimension count as misclassified.
pub fn mine_hard_examples(
    model: &Classifier,
    samples: &[LabeledSample],
    band: f64,
) -> Vec<LabeledSample> {
    samples
        .iter()
        .filter(|s| match predict(model, &s.feature.values) {
            Ok((label, scores)) => label != s.label || top_two_margin(&scores) < band,
            Err(_) => true,
        })
        .cloned()
        .collect()
}

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 7]; 7],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; 7]; 7]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, truth: ExpressionLabel, predicted: ExpressionLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..7).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: ExpressionLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    /// Recall of each true class, `None` for classes with no samples.
    pub fn per_class_recall(&self) -> [Option<f64>; 7] {
        let mut r = [None; 7];
        for l in ExpressionLabel::ALL {
            let t = self.row_total(l);
            if t > 0 {
                r[l.index()] = Some(self.counts[l.index()][l.index()] as f64 / t as f64);
            }
        }
        r
    }
}

/// Trace over total.
pub fn confusion_accuracy(matrix: &ConfusionMatrix) -> Result<f64, ClassifyError> {
    match matrix.total() {
        0 => Err(ClassifyError::EmptyMatrix),
        t => Ok(matrix.trace() as f64 / t as f64),
    }
}

/// Confusion matrix of the model's predictions. Samples whose dimension does
/// not match the model are counted as predicted Neutral.
pub fn evaluate(model: &Classifier, samples: &[LabeledSample]) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::new();
    for s in samples {
        let pred = predict(model, &s.feature.values)
            .map(|(l, _)| l)
            .unwrap_or(ExpressionLabel::Neutral);
        m.add(s.label, pred);
    }
    m
}

/// Trains the configured learner, optionally followed by rounds of retraining
/// on the mined hard examples appended to the training set.
pub fn train_with_mining(
    samples: &[LabeledSample],
    config: &TrainConfig,
    forest: bool,
) -> Result<Classifier, ClassifyError> {
    let fit = |data: &[LabeledSample]| -> Result<Classifier, ClassifyError> {
        Ok(if forest {
            Classifier::Forest(train_forest(data, config)?)
        } else {
            Classifier::Linear(train_linear(data, config)?)
        })
    };
    let mut model = fit(samples)?;
    for _ in 0..config.hard_mining_rounds {
        let hard = mine_hard_examples(&model, samples, config.hard_mining_band);
        if hard.is_empty() {
            break;
        }
        let mut data = samples.to_vec();
        data.extend(hard);
        model = fit(&data)?;
    }
    Ok(model)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::FeatureFamily;

    pub(crate) fn sample(values: Vec<f64>, label: ExpressionLabel) -> LabeledSample {
        LabeledSample {
            feature: FeatureVector::new(FeatureFamily::Combined, values),
            label,
            pose: PoseClassId::from_index(0),
            group_id: String::new(),
        }
    }

    #[test]
    fn labels_parse_case_insensitively() {
        assert_eq!(
            "happy".parse::<ExpressionLabel>().unwrap(),
            ExpressionLabel::Happy
        );
        assert_eq!(
            " Disgust ".parse::<ExpressionLabel>().unwrap(),
            ExpressionLabel::Disgust
        );
        assert!("Happpy".parse::<ExpressionLabel>().is_err());
        for (i, l) in ExpressionLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_label(&[0.0; 7]), ExpressionLabel::Neutral);
        assert_eq!(
            argmax_label(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            ExpressionLabel::Happy
        );
    }

    #[test]
    fn balance_counts() {
        let mut data = Vec::new();
        for i in 0..100 {
            data.push(sample(vec![i as f64], ExpressionLabel::Neutral));
        }
        for i in 0..10 {
            data.push(sample(vec![i as f64], ExpressionLabel::Sad));
        }
        let u = balance(&data, Balancing::Undersample, 3).unwrap().samples;
        assert_eq!(class_counts(&u), [10, 0, 10, 0, 0, 0, 0]);
        let o = balance(&data, Balancing::Oversample, 3).unwrap().samples;
        assert_eq!(class_counts(&o), [100, 0, 100, 0, 0, 0, 0]);
        let w = balance(&data, Balancing::ClassWeights, 3).unwrap();
        assert_eq!(w.samples, data);
        assert_eq!(
            w.class_weights.unwrap(),
            [1.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            balance(&[], Balancing::Undersample, 0),
            Err(ClassifyError::EmptyClass)
        );
    }

    #[test]
    fn confusion_basics() {
        let mut m = ConfusionMatrix::new();
        assert_eq!(confusion_accuracy(&m), Err(ClassifyError::EmptyMatrix));
        m.add(ExpressionLabel::Happy, ExpressionLabel::Happy);
        m.add(ExpressionLabel::Sad, ExpressionLabel::Happy);
        assert_eq!(m.total(), 2);
        assert_eq!(confusion_accuracy(&m).unwrap(), 0.5);
        assert_eq!(m.per_class_recall()[2], Some(0.0));
        assert_eq!(m.per_class_recall()[0], None);
    }
}
