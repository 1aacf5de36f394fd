//! `posefer`: synthetic data, pose models, features, classifiers and
//! end-to-end evaluation from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posefer::classify::{
    balance, evaluate, train_with_mining, Classifier, ConfusionMatrix, ExpressionLabel,
    LabeledSample,
};
use posefer::features::{FeatureFamily, FeatureMatrix, FeatureVector};
use posefer::harness::report::{format_report, Evaluation};
use posefer::harness::{
    extract_raw_features, load_manifest, load_samples, render_confusion,
    run_pipeline_with_warnings, synth_generate, write_synth, ClassifierKind, Confound,
    FeatureCombiner, FeatureToggles, HarnessError, PipelineConfig, ReportFormat, Sample,
    SynthConfig,
};
use posefer::posecluster::{assign_pose, fit_pose_model_with, PoseClassId, PoseModel};
use posefer::shape::{gpa, Shape, DEFAULT_GPA_ITERATIONS};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "posefer",
    version,
    about = "Pose-aware facial expression recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with pipeline settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of pose classes.
    #[arg(long)]
    poses: Option<usize>,
    /// Comma list of feature families: sift, tplbp, tplbp_grid, tplbp_region, geom.
    #[arg(long)]
    features: Option<String>,
    /// linear, forest or fusion.
    #[arg(long)]
    classifier: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (images, .pts files, manifest.csv, truth.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        /// none, negate or swap.
        #[arg(long)]
        confound: Option<String>,
    },
    /// Fit a pose model on every sample in a manifest.
    FitPose {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Output pose model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract combined features for a manifest under a fitted pose model.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pose_model: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Output feature matrix; sample metadata goes to `<out>.meta.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on an extracted feature matrix.
    Train {
        #[arg(long)]
        features_file: PathBuf,
        /// Train only on rows assigned to this pose class.
        #[arg(long)]
        pose: Option<usize>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained classifier on a feature matrix.
    Evaluate {
        #[arg(long)]
        features_file: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pose: Option<usize>,
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and emit a report.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Directory for `report.<format>`; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: String,
        /// Include stage timings (makes reports differ between runs).
        #[arg(long)]
        timing: bool,
    },
}

enum Failure {
    Usage(String),
    Run(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => Failure::Usage(m),
            e => Failure::Run(e),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pipeline_config(c: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io(p, e))?;
            PipelineConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.poses {
        cfg.k_poses = k;
    }
    if let Some(f) = &c.features {
        cfg.features = FeatureToggles::parse_list(f).map_err(usage)?;
    }
    if let Some(k) = &c.classifier {
        cfg.classifier = k.parse::<ClassifierKind>().map_err(usage)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn format_arg(s: &str) -> Result<ReportFormat, Failure> {
    s.parse().map_err(usage)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(manifest: &Path) -> Result<(Vec<Sample>, Vec<String>), Failure> {
    let m = load_manifest(manifest)?;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    Ok((load_samples(&m)?, m.warnings))
}

fn fit_pose(samples: &[Sample], cfg: &PipelineConfig) -> Result<PoseModel, Failure> {
    let shapes: Vec<Shape> = samples.iter().map(|s| s.landmarks.clone()).collect();
    let g = gpa(&shapes, DEFAULT_GPA_ITERATIONS).map_err(HarnessError::from)?;
    Ok(
        fit_pose_model_with(&g.aligned_shapes, cfg.k_poses, &cfg.pose_thresholds)
            .map_err(HarnessError::from)?,
    )
}

/// Per-row metadata written next to a feature matrix.
#[derive(Debug, Serialize, Deserialize)]
struct MetaRow {
    label: String,
    group: String,
    pose: usize,
}

fn meta_path(features: &Path) -> PathBuf {
    let mut s = features.as_os_str().to_owned();
    s.push(".meta.csv");
    PathBuf::from(s)
}

fn read_features(path: &Path) -> Result<Vec<LabeledSample>, Failure> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let m = FeatureMatrix::decode(&bytes)
        .map_err(|e| Failure::Run(HarnessError::from(e).in_file(path)))?;
    let meta = meta_path(path);
    let mut rdr = csv::Reader::from_path(&meta).map_err(|e| {
        Failure::Run(HarnessError::Parse {
            line: 0,
            message: format!("{}: {e}", meta.display()),
        })
    })?;
    let rows: Vec<MetaRow> = rdr.deserialize().collect::<Result<_, _>>().map_err(|e| {
        Failure::Run(HarnessError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: format!("{}: {e}", meta.display()),
        })
    })?;
    if rows.len() != m.rows {
        return Err(Failure::Run(HarnessError::Parse {
            line: 0,
            message: format!(
                "{} rows of metadata for {} feature rows",
                rows.len(),
                m.rows
            ),
        }));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let label = r.label.parse::<ExpressionLabel>().map_err(|_| {
                Failure::Run(HarnessError::UnknownLabel {
                    line: i + 2,
                    label: r.label.clone(),
                })
            })?;
            Ok(LabeledSample {
                feature: FeatureVector::new(m.family, m.row(i).to_vec()),
                label,
                pose: PoseClassId::from_index(r.pose.saturating_sub(1)),
                group_id: r.group,
            })
        })
        .collect()
}

fn by_pose(samples: Vec<LabeledSample>, pose: Option<usize>) -> Vec<LabeledSample> {
    match pose {
        Some(p) => samples.into_iter().filter(|s| s.pose.get() == p).collect(),
        None => samples,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth {
            out,
            config,
            seed,
            samples,
            confound,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| io(p, e))?;
                    toml::from_str::<SynthConfig>(&text)
                        .map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = samples {
                cfg.n_samples = n;
            }
            if let Some(c) = confound {
                cfg.confound = match c.as_str() {
                    "none" => Confound::None,
                    "negate" => Confound::Negate,
                    "swap" => Confound::Swap,
                    other => return Err(usage(format!("unknown confound `{other}`"))),
                };
            }
            let data = synth_generate(&cfg)?;
            let m = write_synth(&data, &out)?;
            eprintln!("wrote {} samples to {}", m.entries.len(), out.display());
        }
        Command::FitPose {
            manifest,
            common,
            out,
        } => {
            let cfg = pipeline_config(&common)?;
            let (samples, _) = load(&manifest)?;
            let model = fit_pose(&samples, &cfg)?;
            fs::write(&out, model.to_text()).map_err(|e| io(&out, e))?;
        }
        Command::Extract {
            manifest,
            pose_model,
            common,
            out,
        } => {
            let cfg = pipeline_config(&common)?;
            if !cfg.features.any() {
                return Err(usage("extract needs at least one feature family"));
            }
            let text = fs::read_to_string(&pose_model).map_err(|e| io(&pose_model, e))?;
            let model = PoseModel::from_text(&text).map_err(HarnessError::from)?;
            let (samples, _) = load(&manifest)?;
            let mut raw = Vec::with_capacity(samples.len());
            let mut meta =
                csv::Writer::from_path(meta_path(&out)).map_err(|e| usage(e.to_string()))?;
            for s in &samples {
                let label = s.label.ok_or_else(|| {
                    Failure::Run(HarnessError::Config(format!(
                        "unlabeled sample in group `{}`",
                        s.group
                    )))
                })?;
                let n = model.normalize(&s.landmarks).map_err(HarnessError::from)?;
                raw.push(extract_raw_features(s, &n, &cfg.features, &cfg.tplbp)?);
                meta.serialize(MetaRow {
                    label: label.name().to_string(),
                    group: s.group.clone(),
                    pose: assign_pose(&model, &n).get(),
                })
                .map_err(|e| usage(e.to_string()))?;
            }
            meta.flush().map_err(|e| io(&out, e))?;
            let combiner = FeatureCombiner::fit(&raw, &cfg)?;
            let rows: Vec<Vec<f64>> = raw
                .iter()
                .map(|r| combiner.apply(r).map(|v| v.values))
                .collect::<Result<_, _>>()?;
            let family = raw
                .first()
                .and_then(|r| (r.len() == 1).then(|| r[0].family))
                .unwrap_or(FeatureFamily::Combined);
            let m = FeatureMatrix::from_rows(family, &rows).map_err(HarnessError::from)?;
            fs::write(&out, m.encode()).map_err(|e| io(&out, e))?;
        }
        Command::Train {
            features_file,
            pose,
            common,
            out,
        } => {
            let cfg = pipeline_config(&common)?;
            if cfg.classifier == ClassifierKind::Fusion {
                return Err(usage(
                    "train handles linear and forest classifiers; use `pipeline` for fusion",
                ));
            }
            let samples = by_pose(read_features(&features_file)?, pose);
            let balanced =
                balance(&samples, cfg.train.balancing, cfg.seed).map_err(HarnessError::from)?;
            let mut tc = cfg.train.clone();
            tc.seed = cfg.seed;
            tc.class_weights = balanced.class_weights.or(tc.class_weights);
            let model = train_with_mining(
                &balanced.samples,
                &tc,
                cfg.classifier == ClassifierKind::Forest,
            )
            .map_err(HarnessError::from)?;
            fs::write(&out, model.encode()).map_err(|e| io(&out, e))?;
        }
        Command::Evaluate {
            features_file,
            model,
            pose,
            format,
            out,
        } => {
            let fmt = format_arg(&format)?;
            let bytes = fs::read(&model).map_err(|e| io(&model, e))?;
            let classifier = Classifier::decode(&bytes).map_err(HarnessError::from)?;
            let samples = by_pose(read_features(&features_file)?, pose);
            let m = evaluate(&classifier, &samples);
            write_out(out.as_deref(), &render_evaluation(&m, fmt))?;
        }
        Command::Pipeline {
            manifest,
            common,
            out,
            format,
            timing,
        } => {
            let fmt = format_arg(&format)?;
            let mut cfg = pipeline_config(&common)?;
            cfg.timing |= timing;
            let (samples, warnings) = load(&manifest)?;
            let report = run_pipeline_with_warnings(&cfg, &samples, None, warnings)?;
            let text = format_report(&report, fmt)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
                    let ext = match fmt {
                        ReportFormat::Text => "txt",
                        ReportFormat::Csv => "csv",
                        ReportFormat::Json => "json",
                    };
                    write_out(Some(&dir.join(format!("report.{ext}"))), &text)?;
                }
                None => write_out(None, &text)?,
            }
        }
    }
    Ok(())
}

fn render_evaluation(m: &ConfusionMatrix, fmt: ReportFormat) -> String {
    let e = Evaluation {
        confusion: *m,
        accuracy: posefer::classify::confusion_accuracy(m).ok(),
    };
    match fmt {
        ReportFormat::Text => {
            let acc = e
                .accuracy
                .map_or("n/a".into(), |a| format!("{:.2}%", 100.0 * a));
            format!("accuracy {acc}\n{}", render_confusion(m))
        }
        ReportFormat::Json => {
            serde_json::to_string_pretty(&e).expect("evaluation serializes") + "\n"
        }
        ReportFormat::Csv => {
            let mut s = String::from("true,pred,count\n");
            for t in ExpressionLabel::ALL {
                for p in ExpressionLabel::ALL {
                    s.push_str(&format!("{t},{p},{}\n", m.counts[t.index()][p.index()]));
                }
            }
            s
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
