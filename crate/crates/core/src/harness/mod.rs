//! Dataset ingestion, grouped splits, synthetic data, the end-to-end
//! pipeline and reports.

pub mod data;
pub mod pipeline;
pub mod report;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classify::{ClassifyError, ExpressionLabel};
use crate::features::{FeatureError, GrayImage};
use crate::fusionnet::NetError;
use crate::posecluster::PoseError;
use crate::shape::{flip_reorder, FlipPermutation, Mirror, Shape, ShapeError};

pub use data::{
    format_manifest, format_pts, load_manifest, load_pts, parse_manifest, parse_pts, split_grouped,
    DatasetManifest, GroupedSplit, ManifestEntry,
};
pub use pipeline::{
    extract_raw_features, run_pipeline, run_pipeline_with_warnings, ClassifierKind,
    FeatureCombiner, FeatureToggles, PipelineConfig, Stage,
};
pub use report::{
    emit_report, format_report, parse_report_json, render_confusion, PoseEvaluation, Report,
    ReportFormat,
};
pub use synth::{
    synth_generate, synth_landmarks, write_synth, Confound, SynthConfig, SynthDataset, SynthParams,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("expected {expected} points, found {found}")]
    PointCountMismatch { expected: usize, found: usize },
    #[error("line {line}: unknown expression label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("need at least 2 groups to split, found {0}")]
    TooFewGroups(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("report encoding failed: {0}")]
    Encode(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn in_file(self, path: &Path) -> Self {
        Self::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        Self::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Numeric failures (degenerate shapes, non-finite values, rank loss)
    /// as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        match self {
            Self::InFile { source, .. } | Self::Stage { source, .. } => source.is_numeric(),
            Self::Shape(ShapeError::DegenerateShape)
            | Self::Shape(ShapeError::NonFinite { .. }) => true,
            Self::Pose(e) => matches!(
                e,
                PoseError::Shape(ShapeError::DegenerateShape) | PoseError::Linalg(_)
            ),
            Self::Feature(e) => matches!(e, FeatureError::NonFinite),
            Self::Net(e) => matches!(e, NetError::NonFinite),
            _ => false,
        }
    }
}

/// One labeled face ready for the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub landmarks: Shape,
    pub label: Option<ExpressionLabel>,
    pub group: String,
}

/// Loads every manifest entry's image and landmarks.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>, HarnessError> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = GrayImage::load(&e.image)
                .map_err(|err| HarnessError::from(err).in_file(&e.image))?;
            Ok(Sample {
                image,
                landmarks: load_pts(&e.pts)?,
                label: e.label,
                group: e.group.clone(),
            })
        })
        .collect()
}

/// Mirror image of a sample: the picture is flipped left to right and the
/// landmarks are mirrored and re-indexed so each keeps its anatomical role.
pub fn flip_sample(sample: &Sample, perm: &FlipPermutation) -> Result<Sample, HarnessError> {
    let w = sample.image.width() as f64;
    Ok(Sample {
        image: sample.image.flipped_horizontal(),
        landmarks: flip_reorder(&sample.landmarks, perm, Mirror::Width(w - 1.0))?,
        label: sample.label,
        group: sample.group.clone(),
    })
}

/// Appends the mirror of every sample, in input order, after the originals.
pub fn flip_augment(
    samples: &[Sample],
    perm: &FlipPermutation,
) -> Result<Vec<Sample>, HarnessError> {
    let mut out = samples.to_vec();
    for s in samples {
        out.push(flip_sample(s, perm)?);
    }
    Ok(out)
}
