//! Run reports and their text, CSV and JSON renderings.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pipeline::{PipelineConfig, Stage};
use super::HarnessError;
use crate::classify::{ConfusionMatrix, ExpressionLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    /// `None` when there were no test samples.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEvaluation {
    /// 1-based pose class.
    pub pose: u16,
    pub train_count: u64,
    pub test_count: u64,
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseAgreement {
    /// Fraction of training shapes whose nearest centroid matches their
    /// threshold group.
    pub training_group_agreement: f64,
    pub thresholds: Vec<f64>,
    /// Test samples per landmark pose class.
    pub landmark_test_counts: Vec<u64>,
    /// Fraction of test samples where the CNN pose matches the landmark
    /// pose (fusion runs only).
    pub cnn_landmark_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: PipelineConfig,
    pub warnings: Vec<String>,
    pub n_train: u64,
    pub n_test: u64,
    pub achieved_train_ratio: f64,
    pub pose_agreement: PoseAgreement,
    /// Test samples routed by pose, evaluated by that pose's model.
    pub per_pose: Vec<PoseEvaluation>,
    /// All per-pose matrices summed.
    pub pose_aware: Evaluation,
    /// Unweighted mean of the per-pose accuracies.
    pub pose_aware_mean_accuracy: Option<f64>,
    pub pose_agnostic: Evaluation,
    pub timing: Option<Vec<StageTiming>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// 7x7 grid with label headers, row totals and column totals.
pub fn render_confusion(m: &ConfusionMatrix) -> String {
    let width = m.total().to_string().len().max(8) + 1;
    let mut s = format!("{:<10}", "true\\pred");
    for l in ExpressionLabel::ALL {
        let _ = write!(s, "{:>width$}", l.name());
    }
    let _ = writeln!(s, "{:>width$}", "total");
    for t in ExpressionLabel::ALL {
        let _ = write!(s, "{:<10}", t.name());
        for c in &m.counts[t.index()] {
            let _ = write!(s, "{c:>width$}");
        }
        let _ = writeln!(s, "{:>width$}", m.row_total(t));
    }
    let _ = write!(s, "{:<10}", "total");
    for p in 0..7 {
        let col: u64 = (0..7).map(|t| m.counts[t][p]).sum();
        let _ = write!(s, "{col:>width$}");
    }
    let _ = writeln!(s, "{:>width$}", m.total());
    s
}

fn pct(a: Option<f64>) -> String {
    a.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "train {} / test {} samples (train fraction {:.3}), {} pose classes, {:?} classifier",
        r.n_train, r.n_test, r.achieved_train_ratio, r.config.k_poses, r.config.classifier
    );
    let _ = writeln!(
        s,
        "pose-aware accuracy:        {}",
        pct(r.pose_aware.accuracy)
    );
    let _ = writeln!(
        s,
        "pose-aware mean per pose:   {}",
        pct(r.pose_aware_mean_accuracy)
    );
    let _ = writeln!(
        s,
        "pose-agnostic accuracy:     {}",
        pct(r.pose_agnostic.accuracy)
    );
    let _ = writeln!(
        s,
        "pose grouping agreement (training): {:.4}",
        r.pose_agreement.training_group_agreement
    );
    if let Some(a) = r.pose_agreement.cnn_landmark_agreement {
        let _ = writeln!(s, "CNN / landmark pose agreement (test): {a:.4}");
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(
        s,
        "\n{:<6}{:>8}{:>8}{:>10}",
        "pose", "train", "test", "accuracy"
    );
    for p in &r.per_pose {
        let _ = writeln!(
            s,
            "{:<6}{:>8}{:>8}{:>10}",
            p.pose,
            p.train_count,
            p.test_count,
            pct(p.accuracy)
        );
    }
    for p in &r.per_pose {
        let _ = writeln!(s, "\npose {}", p.pose);
        s.push_str(&render_confusion(&p.confusion));
    }
    s.push_str("\npose-aware (all poses)\n");
    s.push_str(&render_confusion(&r.pose_aware.confusion));
    s.push_str("\npose-agnostic\n");
    s.push_str(&render_confusion(&r.pose_agnostic.confusion));
    if let Some(t) = &r.timing {
        s.push_str("\ntiming\n");
        for st in t {
            let _ = writeln!(s, "{:<12}{:>10.3}s", st.stage.to_string(), st.seconds);
        }
    }
    s
}

/// Which matrix a CSV row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvSection {
    Pose,
    PoseAware,
    PoseAgnostic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub section: CsvSection,
    /// 1-based pose class for `pose` rows, 0 otherwise.
    pub pose: u16,
    #[serde(rename = "true")]
    pub truth: ExpressionLabel,
    pub pred: ExpressionLabel,
    pub count: u64,
}

/// One row per matrix cell, zero cells included.
pub fn confusion_rows(r: &Report) -> Vec<ConfusionRow> {
    let mut rows = Vec::new();
    let mut push = |section, pose, m: &ConfusionMatrix| {
        for t in ExpressionLabel::ALL {
            for p in ExpressionLabel::ALL {
                rows.push(ConfusionRow {
                    section,
                    pose,
                    truth: t,
                    pred: p,
                    count: m.counts[t.index()][p.index()],
                });
            }
        }
    };
    for p in &r.per_pose {
        push(CsvSection::Pose, p.pose, &p.confusion);
    }
    push(CsvSection::PoseAware, 0, &r.pose_aware.confusion);
    push(CsvSection::PoseAgnostic, 0, &r.pose_agnostic.confusion);
    rows
}

pub fn parse_confusion_csv(text: &str) -> Result<Vec<ConfusionRow>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| HarnessError::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Rebuilds `(per-pose, pose-aware, pose-agnostic)` matrices from CSV rows.
pub fn matrices_from_rows(
    rows: &[ConfusionRow],
) -> (
    Vec<(u16, ConfusionMatrix)>,
    ConfusionMatrix,
    ConfusionMatrix,
) {
    let mut per_pose: Vec<(u16, ConfusionMatrix)> = Vec::new();
    let mut aware = ConfusionMatrix::new();
    let mut agnostic = ConfusionMatrix::new();
    for r in rows {
        let m = match r.section {
            CsvSection::PoseAware => &mut aware,
            CsvSection::PoseAgnostic => &mut agnostic,
            CsvSection::Pose => {
                let i = match per_pose.iter().position(|(p, _)| *p == r.pose) {
                    Some(i) => i,
                    None => {
                        per_pose.push((r.pose, ConfusionMatrix::new()));
                        per_pose.len() - 1
                    }
                };
                &mut per_pose[i].1
            }
        };
        m.counts[r.truth.index()][r.pred.index()] += r.count;
    }
    (per_pose, aware, agnostic)
}

pub fn format_report(r: &Report, format: ReportFormat) -> Result<String, HarnessError> {
    match format {
        ReportFormat::Text => Ok(render_text(r)),
        ReportFormat::Json => {
            let mut s =
                serde_json::to_string_pretty(r).map_err(|e| HarnessError::Encode(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in confusion_rows(r) {
                w.serialize(row)
                    .map_err(|e| HarnessError::Encode(e.to_string()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| HarnessError::Encode(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
    }
}

pub fn parse_report_json(text: &str) -> Result<Report, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes the rendering to `path`, or to standard output when `path` is
/// `None`.
pub fn emit_report(
    r: &Report,
    format: ReportFormat,
    path: Option<&Path>,
) -> Result<(), HarnessError> {
    let text = format_report(r, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| HarnessError::io(Path::new("<stdout>"), e))
        }
    }
}
