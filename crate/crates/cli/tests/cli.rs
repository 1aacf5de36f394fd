use std::path::Path;
use std::process::{Command, Output};

fn posefer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posefer"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path, samples: &str) {
    let out = dir.to_str().unwrap();
    let o = posefer(&[
        "synth",
        "--out",
        out,
        "--samples",
        samples,
        "--seed",
        "3",
        "--confound",
        "swap",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_json_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "200");
    let manifest = data.join("manifest.csv");
    let run = |dir: &str| {
        let out = tmp.path().join(dir);
        let o = posefer(&[
            "pipeline",
            "--manifest",
            manifest.to_str().unwrap(),
            "--features",
            "sift,geom",
            "--seed",
            "5",
            "--format",
            "json",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("report.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(
        report["n_train"].as_u64().unwrap() + report["n_test"].as_u64().unwrap(),
        200
    );
}

#[test]
fn staged_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "120");
    let p = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let manifest = data.join("manifest.csv").to_str().unwrap().to_string();
    let steps: [Vec<String>; 4] = [
        vec![
            "fit-pose".into(),
            "--manifest".into(),
            manifest.clone(),
            "--out".into(),
            p("pose.txt"),
        ],
        vec![
            "extract".into(),
            "--manifest".into(),
            manifest,
            "--pose-model".into(),
            p("pose.txt"),
            "--features".into(),
            "geom,tplbp_region".into(),
            "--out".into(),
            p("f.pffm"),
        ],
        vec![
            "train".into(),
            "--features-file".into(),
            p("f.pffm"),
            "--out".into(),
            p("m.bin"),
        ],
        vec![
            "evaluate".into(),
            "--features-file".into(),
            p("f.pffm"),
            "--model".into(),
            p("m.bin"),
            "--format".into(),
            "csv".into(),
            "--out".into(),
            p("eval.csv"),
        ],
    ];
    for args in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = posefer(&args);
        assert_eq!(
            code(&o),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let meta = std::fs::read_to_string(format!("{}.meta.csv", p("f.pffm"))).unwrap();
    assert_eq!(meta.lines().count(), 121);
    assert!(
        std::fs::read_to_string(p("eval.csv"))
            .unwrap()
            .lines()
            .count()
            > 1
    );
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&posefer(&["pipeline"])), 1);
    assert_eq!(code(&posefer(&["frobnicate"])), 1);
    assert_eq!(code(&posefer(&["--help"])), 0);
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "35");
    let manifest = data.join("manifest.csv");
    let m = manifest.to_str().unwrap();
    assert_eq!(
        code(&posefer(&[
            "pipeline",
            "--manifest",
            m,
            "--classifier",
            "svm"
        ])),
        1
    );
    assert_eq!(
        code(&posefer(&[
            "pipeline",
            "--manifest",
            m,
            "--features",
            "color"
        ])),
        1
    );
    assert_eq!(
        code(&posefer(&["pipeline", "--manifest", m, "--format", "xml"])),
        1
    );
    assert_eq!(
        code(&posefer(&["pipeline", "--manifest", m, "--poses", "0"])),
        1
    );
}

#[test]
fn bad_data_exits_2_and_degenerate_shapes_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    assert_eq!(
        code(&posefer(&[
            "pipeline",
            "--manifest",
            missing.to_str().unwrap()
        ])),
        2
    );

    let data = tmp.path().join("data");
    synth(&data, "35");
    let manifest = data.join("manifest.csv");
    let m = manifest.to_str().unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(
        &bad,
        text.replacen(",Neutral,", ",Contempt,", 1)
            .replacen(",Happy,", ",Contempt,", 1),
    )
    .unwrap();
    let o = posefer(&["pipeline", "--manifest", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Contempt"));

    // collapse every landmark file to a single repeated point
    let flat: String = std::iter::once("version: 1\nn_points: 68\n{\n".to_string())
        .chain((0..68).map(|_| "10 10\n".to_string()))
        .chain(std::iter::once("}\n".to_string()))
        .collect();
    for entry in std::fs::read_dir(&data).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "pts") {
            std::fs::write(&path, &flat).unwrap();
        }
    }
    let o = posefer(&["pipeline", "--manifest", m]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
