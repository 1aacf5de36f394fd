mod common;

use std::collections::HashSet;
use std::path::Path;

use common::REFERENCE_CONFUSION;
use posefer::classify::{ConfusionMatrix, ExpressionLabel};
use posefer::harness::report::{confusion_rows, matrices_from_rows, parse_confusion_csv};
use posefer::harness::{
    flip_augment, format_pts, format_report, load_manifest, load_samples, parse_manifest,
    parse_pts, parse_report_json, render_confusion, run_pipeline, split_grouped, synth_generate,
    synth_landmarks, write_synth, ClassifierKind, Confound, FeatureToggles, HarnessError,
    PipelineConfig, ReportFormat, SynthConfig, SynthParams,
};
use posefer::shape::{flip_reorder, FlipPermutation, Mirror};
use proptest::prelude::*;

#[test]
fn opposite_yaws_are_mirror_images() {
    let cfg = SynthConfig::default();
    let flip = FlipPermutation::default_68();
    for label in ExpressionLabel::ALL {
        for yaw in [60.0, 23.5, 0.0] {
            let params = |y: f64| SynthParams {
                yaw_deg: y,
                label,
                intensity: 0.85,
                identity: [1.03, 0.97, 0.02, -0.015],
            };
            let right = synth_landmarks(&cfg, &params(yaw));
            let left = synth_landmarks(&cfg, &params(-yaw));
            let w = (cfg.image_size - 1) as f64;
            let mirrored = flip_reorder(&right, &flip, Mirror::Width(w)).unwrap();
            let gap = mirrored.max_abs_diff(&left).unwrap();
            assert!(gap < 1e-9, "{label:?} at {yaw}: {gap}");
        }
    }
}

#[test]
fn label_frequencies_follow_the_weights() {
    let cfg = SynthConfig {
        n_samples: 10_000,
        image_size: 32,
        seed: 3,
        ..SynthConfig::default()
    };
    // Only labels are checked here; small images keep it quick.
    let data = synth_generate(&cfg).unwrap();
    let mut counts = [0usize; 7];
    data.truth.iter().for_each(|t| counts[t.label.index()] += 1);
    let total: f64 = cfg.label_weights.iter().sum();
    for (c, w) in counts.iter().zip(cfg.label_weights) {
        let share = *c as f64 / 10_000.0;
        assert!((share - w / total).abs() < 0.01, "{counts:?}");
    }
    let yaw_ok = data
        .truth
        .iter()
        .all(|t| (-60.0..=60.0).contains(&t.yaw_deg));
    assert!(yaw_ok);
}

#[test]
fn same_seed_same_dataset() {
    let cfg = SynthConfig {
        n_samples: 40,
        seed: 8,
        ..SynthConfig::default()
    };
    assert_eq!(
        synth_generate(&cfg).unwrap().samples,
        synth_generate(&cfg).unwrap().samples
    );
    let other = SynthConfig {
        seed: 9,
        ..cfg.clone()
    };
    assert_ne!(
        synth_generate(&cfg).unwrap().truth,
        synth_generate(&other).unwrap().truth
    );
}

#[test]
fn dominant_group_stays_whole() {
    let mut groups: Vec<String> = vec!["big".to_string(); 500];
    groups.extend((0..500).map(|i| format!("g{i}")));
    for seed in 0..10 {
        let s = split_grouped(&groups, 0.7, seed).unwrap();
        let train: HashSet<usize> = s.train.iter().copied().collect();
        let big_in_train = (0..500).filter(|i| train.contains(i)).count();
        assert!(big_in_train == 0 || big_in_train == 500);
        assert_eq!(s.train.len() + s.test.len(), 1000);
        assert!(!s.train.is_empty() && !s.test.is_empty());
        assert!((s.achieved_ratio - s.train.len() as f64 / 1000.0).abs() < 1e-15);
        assert_eq!(big_in_train, 500);
        assert!(
            (s.achieved_ratio - 0.7).abs() < 1e-12,
            "{}",
            s.achieved_ratio
        );
    }
}

#[test]
fn split_rejects_single_group_and_bad_ratio() {
    let one = vec!["a".to_string(); 5];
    assert!(matches!(
        split_grouped(&one, 0.5, 0),
        Err(HarnessError::TooFewGroups(1))
    ));
    let two = vec!["a".to_string(), "b".to_string()];
    assert!(split_grouped(&two, 1.0, 0).is_err());
    assert!(split_grouped(&two, 0.0, 0).is_err());
}

#[test]
fn reference_matrix_renders_with_totals() {
    let m = ConfusionMatrix::from_counts(REFERENCE_CONFUSION);
    let text = render_confusion(&m);
    let lines: Vec<Vec<&str>> = text
        .lines()
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(
        lines[0][1..],
        ["Neutral", "Happy", "Sad", "Fear", "Angry", "Surprise", "Disgust", "total"]
    );
    for (t, row) in REFERENCE_CONFUSION.iter().enumerate() {
        let line = &lines[t + 1];
        assert_eq!(line[0], ExpressionLabel::ALL[t].name());
        let nums: Vec<u64> = line[1..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(nums[..7], row[..]);
        assert_eq!(nums[7], row.iter().sum::<u64>());
    }
    let totals: Vec<u64> = lines[8][1..].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(totals, [3411, 3037, 31, 50, 62, 122, 17, 6730]);
    assert!(text.contains("   2397"));
}

const MANIFEST: &str = "image,pts,label,group,flip_of
a.png,a.pts,Happy,p1,
a_flip.png,a_flip.pts,happy,p1,a.png
b.png,b.pts,,p2,
";

#[test]
fn manifest_parsing() {
    let m = parse_manifest(MANIFEST, Path::new("/data")).unwrap();
    assert_eq!(m.entries.len(), 3);
    assert_eq!(m.entries[0].image, Path::new("/data/a.png"));
    assert_eq!(m.entries[1].label, Some(ExpressionLabel::Happy));
    assert_eq!(m.entries[1].flip_of, Some(0));
    assert_eq!(m.entries[2].label, None);
    assert!(m.warnings.is_empty());

    let bad = MANIFEST.replace("b.pts,,p2", "b.pts,Contempt,p2");
    match parse_manifest(&bad, Path::new(".")) {
        Err(HarnessError::UnknownLabel { line, label }) => {
            assert_eq!(line, 4);
            assert_eq!(label, "Contempt");
        }
        other => panic!("{other:?}"),
    }
    let cross = MANIFEST.replace("a.png\n", "b.png\n");
    assert!(parse_manifest(&cross, Path::new(".")).is_err());
    assert!(parse_manifest("img,pts,label,group\n", Path::new(".")).is_err());
    let dup = format!("{MANIFEST}a.png,a.pts,Sad,p3,\n");
    assert_eq!(
        parse_manifest(&dup, Path::new(".")).unwrap().warnings.len(),
        1
    );
}

#[test]
fn pts_round_trip_and_errors() {
    let shape = synth_landmarks(&SynthConfig::default(), &SynthParams::neutral(17.0));
    let back = parse_pts(&format_pts(&shape)).unwrap();
    assert!(back.max_abs_diff(&shape).unwrap() < 1e-9);
    let text = format_pts(&shape).replacen("n_points: 68", "n_points: 67", 1);
    assert!(parse_pts(&text).is_err());
    assert!(parse_pts("version: 1\n{\n1 2\n}\n").is_err());
}

#[test]
fn synthetic_dataset_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_samples: 40,
        samples_per_group: 2,
        seed: 5,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).unwrap();
    write_synth(&data, dir.path()).unwrap();
    let manifest = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    let loaded = load_samples(&manifest).unwrap();
    assert_eq!(loaded.len(), 40);
    for (a, b) in loaded.iter().zip(&data.samples) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.group, b.group);
        assert!(a.landmarks.max_abs_diff(&b.landmarks).unwrap() < 1e-6);
        let worst = a
            .image
            .pixels()
            .iter()
            .zip(b.image.pixels())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(loaded[0].group, loaded[1].group);
    assert_ne!(loaded[1].group, loaded[2].group);
}

#[test]
fn flip_augmentation_mirrors_images_and_landmarks() {
    let cfg = SynthConfig {
        n_samples: 35,
        seed: 2,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).unwrap();
    let flip = FlipPermutation::default_68();
    let aug = flip_augment(&data.samples, &flip).unwrap();
    assert_eq!(aug.len(), 70);
    for (orig, m) in data.samples.iter().zip(&aug[35..]) {
        assert_eq!(m.image, orig.image.flipped_horizontal());
        assert_eq!(m.label, orig.label);
        assert_eq!(m.group, orig.group);
        let w = (orig.image.width() - 1) as f64;
        let p = m.landmarks.points();
        let q = orig.landmarks.points();
        assert!((p[30].x - (w - q[30].x)).abs() < 1e-12);
        assert!((p[0].x - (w - q[16].x)).abs() < 1e-12 && (p[0].y - q[16].y).abs() < 1e-12);
    }
    assert_eq!(&aug[..35], &data.samples[..]);
}

fn small_run(config: &PipelineConfig) -> posefer::harness::Report {
    let cfg = SynthConfig {
        n_samples: 240,
        confound: Confound::Swap,
        seed: 6,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).unwrap();
    run_pipeline(config, &data.samples, None).unwrap()
}

#[test]
fn pipeline_is_deterministic_and_reports_round_trip() {
    let config = PipelineConfig {
        seed: 3,
        features: FeatureToggles::parse_list("sift,geom").unwrap(),
        ..PipelineConfig::default()
    };
    let a = small_run(&config);
    let b = small_run(&config);
    let ja = format_report(&a, ReportFormat::Json).unwrap();
    assert_eq!(ja, format_report(&b, ReportFormat::Json).unwrap());
    assert_eq!(parse_report_json(&ja).unwrap(), a);

    assert_eq!(a.n_train + a.n_test, 240);
    assert_eq!(a.pose_aware.confusion.total(), a.n_test);
    assert_eq!(a.pose_agnostic.confusion.total(), a.n_test);
    let per_pose: u64 = a.per_pose.iter().map(|p| p.test_count).sum();
    assert_eq!(per_pose, a.n_test);
    let train: u64 = a.per_pose.iter().map(|p| p.train_count).sum();
    assert_eq!(train, a.n_train);

    let csv = format_report(&a, ReportFormat::Csv).unwrap();
    let rows = parse_confusion_csv(&csv).unwrap();
    assert_eq!(rows, confusion_rows(&a));
    let (per_pose_m, aware, agnostic) = matrices_from_rows(&rows);
    assert_eq!(aware, a.pose_aware.confusion);
    assert_eq!(agnostic, a.pose_agnostic.confusion);
    for (pose, m) in &per_pose_m {
        let p = a.per_pose.iter().find(|p| p.pose == *pose).unwrap();
        assert_eq!(*m, p.confusion);
    }
}

#[test]
fn pipeline_with_flip_augmentation_and_forest() {
    let config = PipelineConfig {
        seed: 1,
        flip_augment: true,
        classifier: ClassifierKind::Forest,
        features: FeatureToggles::parse_list("geom").unwrap(),
        ..PipelineConfig::default()
    };
    let r = small_run(&config);
    assert_eq!(r.n_train + r.n_test, 480);
    assert!(r.pose_aware.accuracy.is_some());
}

#[test]
fn config_errors_are_reported_before_work() {
    let bad = PipelineConfig {
        k_poses: 0,
        ..PipelineConfig::default()
    };
    let cfg = SynthConfig {
        n_samples: 35,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).unwrap();
    assert!(run_pipeline(&bad, &data.samples, None).is_err());
    assert!(PipelineConfig::from_toml("k_poses = 3\nbogus = 1\n").is_err());
    let c = PipelineConfig::from_toml("k_poses = 3\ntrain_ratio = 0.6\n").unwrap();
    assert_eq!(c.k_poses, 3);
    assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_keep_groups_whole(
        sizes in prop::collection::vec(1usize..20, 2..40),
        ratio in 0.05..0.95f64,
        seed in 0u64..1000,
    ) {
        let groups: Vec<String> = sizes.iter().enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(format!("g{g}"), n)).collect();
        let s = split_grouped(&groups, ratio, seed).unwrap();
        let train: HashSet<&str> = s.train.iter().map(|&i| groups[i].as_str()).collect();
        let test: HashSet<&str> = s.test.iter().map(|&i| groups[i].as_str()).collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..groups.len()).collect::<Vec<_>>());
        prop_assert!(s.train.windows(2).all(|w| w[0] < w[1]));
        let largest = *sizes.iter().max().unwrap() as f64 / groups.len() as f64;
        prop_assert!((s.achieved_ratio - ratio).abs() <= largest + 1e-12, "{} vs {}", s.achieved_ratio, ratio);
        prop_assert_eq!(split_grouped(&groups, ratio, seed).unwrap(), s);
    }
}
