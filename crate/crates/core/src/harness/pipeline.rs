//! End-to-end run: split, landmark normalization, pose clustering, feature
//! extraction, per-pose and pose-agnostic training, evaluation.

use std::fmt;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::split_grouped;
use super::report::{Evaluation, PoseAgreement, PoseEvaluation, Report, StageTiming};
use super::{flip_augment, HarnessError, Sample};
use crate::classify::{
    balance, evaluate, train_with_mining, Classifier, ClassifyError, ConfusionMatrix,
    ExpressionLabel, LabeledSample, TrainConfig,
};
use crate::features::{
    combine_features, face_regions, geometric_feature, normalize_feature, pca_reduce_apply,
    pca_reduce_fit, sift_face_feature, tplbp_grid_feature, tplbp_region_feature, FeatureError,
    FeatureFamily, FeatureVector, PcaReducer, SiftParams, TplbpParams,
};
use crate::fusionnet::{
    fuse_pose_estimates, pose_probabilities, predict_expression, train_fusion, FusionExample,
    FusionParams, FusionTrainConfig, NetSpec,
};
use crate::posecluster::{
    fit_pose_model_with, group_agreement, pose_distances, PoseAssignment, PoseClassId, PoseModel,
    ThresholdStrategy, DEFAULT_POSE_CLASSES,
};
use crate::shape::{gpa, FlipPermutation, Shape, DEFAULT_GPA_ITERATIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Split,
    Gpa,
    PoseModel,
    Features,
    Training,
    Evaluation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Split => "split",
            Stage::Gpa => "gpa",
            Stage::PoseModel => "pose-model",
            Stage::Features => "features",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Linear,
    Forest,
    Fusion,
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "forest" => Ok(Self::Forest),
            "fusion" => Ok(Self::Fusion),
            other => Err(format!("unknown classifier `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureToggles {
    pub sift: bool,
    pub tplbp_grid: bool,
    pub tplbp_region: bool,
    pub geom: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        Self {
            sift: true,
            tplbp_grid: true,
            tplbp_region: true,
            geom: true,
        }
    }
}

impl FeatureToggles {
    pub const NONE: FeatureToggles = FeatureToggles {
        sift: false,
        tplbp_grid: false,
        tplbp_region: false,
        geom: false,
    };

    pub fn any(&self) -> bool {
        self.sift || self.tplbp_grid || self.tplbp_region || self.geom
    }

    /// Parses a comma list such as `sift,tplbp,geom`; `tplbp` turns on both
    /// TPLBP families.
    pub fn parse_list(s: &str) -> Result<Self, String> {
        let mut t = Self::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "sift" => t.sift = true,
                "tplbp" => {
                    t.tplbp_grid = true;
                    t.tplbp_region = true;
                }
                "tplbp_grid" | "tplbp-grid" => t.tplbp_grid = true,
                "tplbp_region" | "tplbp-region" => t.tplbp_region = true,
                "geom" => t.geom = true,
                "all" => t = Self::default(),
                other => return Err(format!("unknown feature family `{other}`")),
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k_poses: usize,
    pub pose_thresholds: ThresholdStrategy,
    pub features: FeatureToggles,
    pub pca_fraction: f64,
    /// SIFT reducer is fitted on at most this many evenly spaced training
    /// rows.
    pub pca_max_fit_samples: usize,
    /// Normalize SIFT vectors again after PCA reduction.
    pub renormalize_after_pca: bool,
    /// Center the non-SIFT families on their training mean (then normalize
    /// again) before combining.
    pub center_features: bool,
    pub classifier: ClassifierKind,
    /// Drives the split and every model seed. The `seed` fields inside
    /// `train` and `fusion` are overwritten.
    pub seed: u64,
    pub train_ratio: f64,
    /// Add a mirrored copy of every sample (same group) before splitting.
    pub flip_augment: bool,
    pub tplbp: TplbpParams,
    pub train: TrainConfig,
    pub fusion: FusionTrainConfig,
    /// Record wall-clock stage timings in the report. Off by default so
    /// reports are reproducible byte for byte.
    pub timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_poses: DEFAULT_POSE_CLASSES,
            pose_thresholds: ThresholdStrategy::Quantile,
            features: FeatureToggles::default(),
            pca_fraction: 0.95,
            pca_max_fit_samples: 800,
            renormalize_after_pca: true,
            center_features: true,
            classifier: ClassifierKind::Linear,
            seed: 0,
            train_ratio: 0.7,
            flip_augment: false,
            tplbp: TplbpParams::default(),
            train: TrainConfig::default(),
            fusion: FusionTrainConfig::default(),
            timing: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.k_poses == 0 || self.k_poses > u16::MAX as usize {
            return bad("k_poses must be positive");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must lie in (0, 1)");
        }
        if !self.features.any() && self.classifier != ClassifierKind::Fusion {
            return bad("enable at least one feature family or the fusion classifier");
        }
        if !(self.pca_fraction > 0.0 && self.pca_fraction <= 1.0) {
            return bad("pca_fraction must lie in (0, 1]");
        }
        if self.pca_max_fit_samples < 2 {
            return bad("pca_max_fit_samples must be at least 2");
        }
        self.tplbp.validate()?;
        self.train.validate()?;
        self.fusion.weights.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let c: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Per-family hand-crafted features of one sample, each normalized, before
/// any PCA reduction. `normalized` are the landmarks aligned to the pose
/// model's mean shape.
pub fn extract_raw_features(
    sample: &Sample,
    normalized: &Shape,
    toggles: &FeatureToggles,
    tplbp: &TplbpParams,
) -> Result<Vec<FeatureVector>, HarnessError> {
    let mut parts = Vec::new();
    if toggles.sift {
        let params = SiftParams::for_landmarks(&sample.landmarks);
        parts.push(sift_face_feature(&sample.image, &sample.landmarks, &params)?.normalized());
    }
    if toggles.tplbp_grid {
        parts.push(tplbp_grid_feature(&sample.image, tplbp)?.normalized());
    }
    if toggles.tplbp_region {
        let regions = face_regions(
            &sample.landmarks,
            sample.image.width(),
            sample.image.height(),
        )?;
        parts.push(tplbp_region_feature(&sample.image, &regions, tplbp)?.normalized());
    }
    if toggles.geom {
        parts.push(geometric_feature(normalized)?.normalized());
    }
    Ok(parts)
}

/// Fitted post-processing from raw family vectors to the combined vector.
/// SIFT vectors are PCA-reduced; the other families are centered on their
/// training mean. Either way the result is normalized again, so every family
/// enters the combination with unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCombiner {
    pub sift_reducer: Option<PcaReducer>,
    /// Training means of the non-SIFT families.
    pub means: Vec<(FeatureFamily, Vec<f64>)>,
    pub renormalize: bool,
}

impl FeatureCombiner {
    /// Fits on `train_raw`; the SIFT reducer sees at most
    /// `pca_max_fit_samples` evenly spaced rows.
    pub fn fit(
        train_raw: &[Vec<FeatureVector>],
        config: &PipelineConfig,
    ) -> Result<Self, HarnessError> {
        let n = train_raw.len();
        let families: Vec<FeatureFamily> = train_raw
            .first()
            .map_or(Vec::new(), |r| r.iter().map(|p| p.family).collect());
        let mut sift_reducer = None;
        let mut means = Vec::new();
        for (j, family) in families.iter().enumerate() {
            let column = |i: usize| -> Result<&FeatureVector, HarnessError> {
                train_raw[i]
                    .get(j)
                    .filter(|p| p.family == *family && p.dim() == train_raw[0][j].dim())
                    .ok_or_else(|| HarnessError::Config("feature rows differ in layout".into()))
            };
            if *family == FeatureFamily::Sift {
                if n >= 2 {
                    let m = n.min(config.pca_max_fit_samples);
                    let fit = (0..m)
                        .map(|i| column(i * n / m).map(|p| p.values.clone()))
                        .collect::<Result<Vec<_>, _>>()?;
                    sift_reducer = Some(pca_reduce_fit(&fit, config.pca_fraction)?);
                }
            } else if config.center_features {
                let mut mean = vec![0.0; train_raw[0][j].dim()];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(&column(i)?.values) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                means.push((*family, mean));
            }
        }
        Ok(Self {
            sift_reducer,
            means,
            renormalize: config.renormalize_after_pca,
        })
    }

    pub fn apply(&self, raw: &[FeatureVector]) -> Result<FeatureVector, HarnessError> {
        let mut parts = Vec::with_capacity(raw.len());
        for p in raw {
            let mean = self
                .means
                .iter()
                .find(|(f, _)| *f == p.family)
                .map(|(_, m)| m);
            let values = match (&self.sift_reducer, p.family, mean) {
                (Some(r), FeatureFamily::Sift, _) => {
                    let v = pca_reduce_apply(r, &p.values)?;
                    if self.renormalize {
                        normalize_feature(&v)
                    } else {
                        v
                    }
                }
                (_, _, Some(m)) => {
                    if m.len() != p.dim() {
                        return Err(FeatureError::DimensionMismatch {
                            expected: m.len(),
                            found: p.dim(),
                        }
                        .into());
                    }
                    let centered: Vec<f64> = p.values.iter().zip(m).map(|(v, m)| v - m).collect();
                    normalize_feature(&centered)
                }
                _ => p.values.clone(),
            };
            parts.push(FeatureVector::new(p.family, values));
        }
        Ok(combine_features(&parts))
    }
}

/// Seeds handed out in a fixed order from the run seed.
struct Seeds(ChaCha8Rng);

impl Seeds {
    fn next(&mut self) -> u64 {
        self.0.next_u64()
    }
}

fn stage<T>(s: Stage, r: Result<T, impl Into<HarnessError>>) -> Result<T, HarnessError> {
    r.map_err(|e| e.into().at(s))
}

struct Timer {
    enabled: bool,
    start: Instant,
    stages: Vec<StageTiming>,
}

impl Timer {
    fn lap(&mut self, s: Stage) {
        if self.enabled {
            let now = Instant::now();
            self.stages.push(StageTiming {
                stage: s,
                seconds: (now - self.start).as_secs_f64(),
            });
            self.start = now;
        }
    }
}

fn labeled(s: &Sample) -> Result<ExpressionLabel, HarnessError> {
    s.label
        .ok_or_else(|| HarnessError::Config(format!("sample in group `{}` is unlabeled", s.group)))
}

fn evaluation(m: ConfusionMatrix) -> Evaluation {
    Evaluation {
        accuracy: crate::classify::confusion_accuracy(&m).ok(),
        confusion: m,
    }
}

/// Runs every stage on `samples`. Flip augmentation, when configured, uses
/// `flip` (the 68-point table by default).
pub fn run_pipeline(
    config: &PipelineConfig,
    samples: &[Sample],
    flip: Option<&FlipPermutation>,
) -> Result<Report, HarnessError> {
    run_pipeline_with_warnings(config, samples, flip, Vec::new())
}

/// [`run_pipeline`] carrying ingestion warnings (e.g. from the manifest)
/// into the report.
pub fn run_pipeline_with_warnings(
    config: &PipelineConfig,
    samples: &[Sample],
    flip: Option<&FlipPermutation>,
    mut warnings: Vec<String>,
) -> Result<Report, HarnessError> {
    stage(Stage::Config, config.validate())?;
    let mut timer = Timer {
        enabled: config.timing,
        start: Instant::now(),
        stages: Vec::new(),
    };
    let mut seeds = Seeds(ChaCha8Rng::seed_from_u64(config.seed));

    let samples: Vec<Sample> = if config.flip_augment {
        let default = FlipPermutation::default_68();
        stage(
            Stage::Config,
            flip_augment(samples, flip.unwrap_or(&default)),
        )?
    } else {
        samples.to_vec()
    };
    let labels: Vec<ExpressionLabel> = stage(
        Stage::Config,
        samples.iter().map(labeled).collect::<Result<_, _>>(),
    )?;

    let groups: Vec<String> = samples.iter().map(|s| s.group.clone()).collect();
    let split = stage(
        Stage::Split,
        split_grouped(&groups, config.train_ratio, seeds.next()),
    )?;
    timer.lap(Stage::Split);

    let train_shapes: Vec<Shape> = split
        .train
        .iter()
        .map(|&i| samples[i].landmarks.clone())
        .collect();
    let g = stage(Stage::Gpa, gpa(&train_shapes, DEFAULT_GPA_ITERATIONS))?;
    timer.lap(Stage::Gpa);

    let model = stage(
        Stage::PoseModel,
        fit_pose_model_with(&g.aligned_shapes, config.k_poses, &config.pose_thresholds),
    )?;
    let training_agreement = stage(Stage::PoseModel, group_agreement(&model, &g.aligned_shapes))?;
    let normalized: Vec<Shape> = stage(
        Stage::PoseModel,
        samples
            .iter()
            .map(|s| model.normalize(&s.landmarks))
            .collect::<Result<Vec<_>, _>>(),
    )?;
    let assignments: Vec<PoseAssignment> = stage(
        Stage::PoseModel,
        normalized
            .iter()
            .map(|n| pose_distances(&model, n))
            .collect::<Result<Vec<_>, _>>(),
    )?;
    timer.lap(Stage::PoseModel);

    let features: Vec<FeatureVector> = if config.features.any() {
        let raw: Vec<Vec<FeatureVector>> = stage(
            Stage::Features,
            samples
                .iter()
                .zip(&normalized)
                .map(|(s, n)| extract_raw_features(s, n, &config.features, &config.tplbp))
                .collect::<Result<Vec<_>, _>>(),
        )?;
        let train_raw: Vec<Vec<FeatureVector>> =
            split.train.iter().map(|&i| raw[i].clone()).collect();
        let combiner = stage(Stage::Features, FeatureCombiner::fit(&train_raw, config))?;
        drop(train_raw);
        stage(
            Stage::Features,
            raw.iter()
                .map(|r| combiner.apply(r))
                .collect::<Result<Vec<_>, _>>(),
        )?
    } else {
        vec![FeatureVector::new(FeatureFamily::Combined, Vec::new()); samples.len()]
    };
    timer.lap(Stage::Features);

    let make = |i: usize| LabeledSample {
        feature: features[i].clone(),
        label: labels[i],
        pose: assignments[i].class,
        group_id: samples[i].group.clone(),
    };
    let train: Vec<LabeledSample> = split.train.iter().map(|&i| make(i)).collect();
    let test: Vec<LabeledSample> = split.test.iter().map(|&i| make(i)).collect();

    let outcome = match config.classifier {
        ClassifierKind::Linear | ClassifierKind::Forest => {
            hand_crafted_models(config, &train, &test, &mut seeds, &mut warnings, &mut timer)?
        }
        ClassifierKind::Fusion => {
            let imgs = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
            let train_assign: Vec<&PoseAssignment> =
                split.train.iter().map(|&i| &assignments[i]).collect();
            let test_assign: Vec<&PoseAssignment> =
                split.test.iter().map(|&i| &assignments[i]).collect();
            fusion_models(
                config,
                &model,
                (&imgs(&split.train), &train, &train_assign),
                (&imgs(&split.test), &test, &test_assign),
                &mut seeds,
                &mut timer,
            )?
        }
    };

    let k = config.k_poses;
    let mut train_counts = vec![0u64; k];
    let mut landmark_test_counts = vec![0u64; k];
    for s in &train {
        train_counts[s.pose.index()] += 1;
    }
    for s in &test {
        landmark_test_counts[s.pose.index()] += 1;
    }
    let per_pose: Vec<PoseEvaluation> = (0..k)
        .map(|p| {
            let m = outcome.per_pose[p];
            PoseEvaluation {
                pose: (p + 1) as u16,
                train_count: train_counts[p],
                test_count: m.total(),
                accuracy: crate::classify::confusion_accuracy(&m).ok(),
                confusion: m,
            }
        })
        .collect();
    let mut pooled = ConfusionMatrix::new();
    for p in &per_pose {
        pooled.merge(&p.confusion);
    }
    let accs: Vec<f64> = per_pose.iter().filter_map(|p| p.accuracy).collect();
    let mean_accuracy = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);

    Ok(Report {
        config: config.clone(),
        warnings,
        n_train: train.len() as u64,
        n_test: test.len() as u64,
        achieved_train_ratio: split.achieved_ratio,
        pose_agreement: PoseAgreement {
            training_group_agreement: training_agreement,
            thresholds: model.thresholds.clone(),
            landmark_test_counts,
            cnn_landmark_agreement: outcome.cnn_agreement,
        },
        per_pose,
        pose_aware: evaluation(pooled),
        pose_aware_mean_accuracy: mean_accuracy,
        pose_agnostic: evaluation(outcome.agnostic),
        timing: config.timing.then_some(timer.stages),
    })
}

struct Outcome {
    /// Test samples routed to each pose class, by class index.
    per_pose: Vec<ConfusionMatrix>,
    agnostic: ConfusionMatrix,
    cnn_agreement: Option<f64>,
}

fn fit_classifier(
    config: &PipelineConfig,
    samples: &[LabeledSample],
    seed: u64,
) -> Result<Classifier, ClassifyError> {
    let balanced = balance(samples, config.train.balancing, seed)?;
    let mut tc = config.train.clone();
    tc.seed = seed;
    tc.class_weights = balanced.class_weights.or(tc.class_weights);
    train_with_mining(
        &balanced.samples,
        &tc,
        config.classifier == ClassifierKind::Forest,
    )
}

fn hand_crafted_models(
    config: &PipelineConfig,
    train: &[LabeledSample],
    test: &[LabeledSample],
    seeds: &mut Seeds,
    warnings: &mut Vec<String>,
    timer: &mut Timer,
) -> Result<Outcome, HarnessError> {
    let k = config.k_poses;
    let agnostic_seed = seeds.next();
    let agnostic = stage(
        Stage::Training,
        fit_classifier(config, train, agnostic_seed),
    )?;
    let mut per_pose_models = Vec::with_capacity(k);
    for p in 0..k {
        let seed = seeds.next();
        let subset: Vec<LabeledSample> = train
            .iter()
            .filter(|s| s.pose.index() == p)
            .cloned()
            .collect();
        match fit_classifier(config, &subset, seed) {
            Ok(m) => per_pose_models.push(Some(m)),
            Err(ClassifyError::SingleClassData | ClassifyError::EmptyClass) => {
                warnings.push(format!(
                    "pose {}: {} training samples with fewer than two labels; using the pose-agnostic model",
                    p + 1,
                    subset.len()
                ));
                per_pose_models.push(None);
            }
            Err(e) => return Err(HarnessError::from(e).at(Stage::Training)),
        }
    }
    timer.lap(Stage::Training);

    let mut per_pose = vec![ConfusionMatrix::new(); k];
    for (p, m) in per_pose_models.iter().enumerate() {
        let subset: Vec<LabeledSample> = test
            .iter()
            .filter(|s| s.pose.index() == p)
            .cloned()
            .collect();
        per_pose[p] = evaluate(m.as_ref().unwrap_or(&agnostic), &subset);
    }
    let agnostic = evaluate(&agnostic, test);
    timer.lap(Stage::Evaluation);
    Ok(Outcome {
        per_pose,
        agnostic,
        cnn_agreement: None,
    })
}

type Side<'a> = (
    &'a [&'a Sample],
    &'a [LabeledSample],
    &'a [&'a PoseAssignment],
);

/// One joint network trained with pose supervision (pose-aware: test samples
/// are grouped by the fused CNN/landmark pose) and one trained without it
/// (`lambda_pose = 0`, pose-agnostic).
fn fusion_models(
    config: &PipelineConfig,
    model: &PoseModel,
    (train_img, train, _): Side<'_>,
    (test_img, test, test_assign): Side<'_>,
    seeds: &mut Seeds,
    timer: &mut Timer,
) -> Result<Outcome, HarnessError> {
    let k = model.k;
    let first = train_img
        .first()
        .ok_or_else(|| HarnessError::Config("empty training set".into()).at(Stage::Training))?;
    let (w, h) = (first.image.width(), first.image.height());
    let hd = train.first().map_or(0, |s| s.feature.dim());
    let mut spec = NetSpec::default().with_input(h, w, hd);
    spec.pose_classes = k;
    stage(Stage::Training, spec.shapes())?;
    let examples =
        |imgs: &[&Sample], data: &[LabeledSample]| -> Result<Vec<FusionExample>, HarnessError> {
            imgs.iter()
                .zip(data)
                .map(|(s, d)| {
                    if s.image.width() != w || s.image.height() != h {
                        return Err(HarnessError::Config(
                            "fusion needs equally sized images".into(),
                        ));
                    }
                    Ok(FusionExample {
                        image: s.image.clone(),
                        handcrafted: d.feature.values.clone(),
                        pose: d.pose,
                        expr: d.label,
                    })
                })
                .collect()
        };
    let train_ex = stage(Stage::Training, examples(train_img, train))?;
    let mut aware_cfg = config.fusion.clone();
    aware_cfg.seed = seeds.next();
    let aware = stage(Stage::Training, train_fusion(&spec, &train_ex, &aware_cfg))?;
    let mut agnostic_cfg = config.fusion.clone();
    agnostic_cfg.seed = seeds.next();
    agnostic_cfg.weights.lambda_pose = 0.0;
    if agnostic_cfg.weights.lambda_expr == 0.0 {
        agnostic_cfg.weights.lambda_expr = 1.0;
    }
    let agnostic = stage(
        Stage::Training,
        train_fusion(&spec, &train_ex, &agnostic_cfg),
    )?;
    timer.lap(Stage::Training);

    let predict = |params: &FusionParams, s: &Sample, d: &LabeledSample| {
        predict_expression(params, &spec, &s.image, &d.feature.values).map(|(l, _)| l)
    };
    let mut per_pose = vec![ConfusionMatrix::new(); k];
    let mut agnostic_m = ConfusionMatrix::new();
    let mut agree = 0usize;
    for ((s, d), a) in test_img.iter().zip(test).zip(test_assign) {
        let probs = stage(
            Stage::Evaluation,
            pose_probabilities(&aware.params, &spec, &s.image),
        )?;
        let cnn = PoseClassId::from_index(argmax(&probs));
        if cnn == a.class {
            agree += 1;
        }
        let pose = fuse_pose_estimates(cnn, &probs, a);
        per_pose[pose.index()].add(
            d.label,
            stage(Stage::Evaluation, predict(&aware.params, s, d))?,
        );
        agnostic_m.add(
            d.label,
            stage(Stage::Evaluation, predict(&agnostic.params, s, d))?,
        );
    }
    timer.lap(Stage::Evaluation);
    Ok(Outcome {
        per_pose,
        agnostic: agnostic_m,
        cnn_agreement: (!test.is_empty()).then(|| agree as f64 / test.len() as f64),
    })
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
