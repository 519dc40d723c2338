//! End-to-end runs of the `fer` binary on desk-scale data.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fer"))
        .args(args)
        .output()
        .expect("spawn fer")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().unwrap_or(-1);
    assert_eq!(
        got,
        want,
        "exit {got}, wanted {want}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn pixel_row(value: u8) -> String {
    vec![value.to_string(); 48 * 48].join(" ")
}

/// Tiny FER2013-style CSV: three classes across all three usage tags.
fn write_csv(path: &Path) {
    let mut text = String::from("emotion,pixels,Usage\n");
    for (emotion, value) in [(0u8, 20u8), (3, 128), (6, 235)] {
        for i in 0..3u8 {
            text.push_str(&format!(
                "{emotion},{},Training\n",
                pixel_row(value.saturating_add(i * 5))
            ));
        }
        text.push_str(&format!("{emotion},{},PublicTest\n", pixel_row(value)));
        text.push_str(&format!("{emotion},{},PrivateTest\n", pixel_row(value)));
    }
    fs::write(path, text).unwrap();
}

fn write_model_config(path: &Path) {
    fs::write(
        path,
        r#"{
  "backbone_channels": [2],
  "se_reduction": 2,
  "residual_channels": [2],
  "classifier_hidden": [4],
  "seed": 3
}"#,
    )
    .unwrap();
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let csv = root.join("fer.csv");
    write_csv(&csv);
    let model_config = root.join("model.json");
    write_model_config(&model_config);

    // plan: equalize the training split (3 per present class, 0 elsewhere)
    let plan_dir = root.join("plan");
    let out = fer(&[
        "plan",
        "--csv",
        csv.to_str().unwrap(),
        "--scheme",
        "equalize",
        "--dataset",
        "toy",
        "--out-dir",
        plan_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(plan_dir.join("plan.json").is_file());
    assert!(plan_dir.join("manifest.json").is_file());
    assert!(plan_dir.join("run-manifest.json").is_file());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("total prompts: 12"), "{stdout}");

    // generate: stub images for the 4 missing classes
    let gen_dir = root.join("gen");
    let out = fer(&[
        "generate",
        "--manifest",
        plan_dir.join("manifest.json").to_str().unwrap(),
        "--out-dir",
        gen_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(gen_dir.join("generation-report.json").is_file());
    let images = gen_dir.join("images");
    for class in ["Disgust", "Fear", "Sad", "Surprise"] {
        let count = fs::read_dir(images.join(class)).unwrap().count();
        assert_eq!(count, 3, "{class}");
    }

    // rerun generation: idempotent, everything skipped
    let out = fer(&[
        "generate",
        "--manifest",
        plan_dir.join("manifest.json").to_str().unwrap(),
        "--out-dir",
        gen_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(gen_dir.join("generation-report.json")).unwrap())
            .unwrap();
    assert_eq!(report["classes"]["Fear"]["skipped"], 3);
    assert_eq!(report["classes"]["Fear"]["succeeded"], 0);

    // train on real + synthetic, verified against the plan
    let train_dir = root.join("train");
    let out = fer(&[
        "train",
        "--csv",
        csv.to_str().unwrap(),
        "--synth-dir",
        images.to_str().unwrap(),
        "--plan",
        plan_dir.join("plan.json").to_str().unwrap(),
        "--model-config",
        model_config.to_str().unwrap(),
        "--max-epochs",
        "2",
        "--batch-size",
        "8",
        "--learning-rate",
        "0.01",
        "--deterministic",
        "--out-dir",
        train_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(train_dir.join("best.ckpt").is_file());
    assert!(train_dir.join("last.ckpt").is_file());
    assert!(train_dir.join("run-manifest.json").is_file());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(train_dir.join("train-report.json")).unwrap())
            .unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(report["stop_reason"], "max-epochs");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("training on 21 samples (3 validation)"), "{stdout}");

    // evaluate the best checkpoint on the test split
    let eval_dir = root.join("eval");
    let out = fer(&[
        "eval",
        "--checkpoint",
        train_dir.join("best.ckpt").to_str().unwrap(),
        "--model-config",
        model_config.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--augmentation",
        "Aug1",
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(eval_dir.join("report.json").is_file());
    assert!(eval_dir.join("confusion.csv").is_file());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sample_count"], 3);
    assert_eq!(report["augmentation"], "Aug1");

    // comparison mode over the emitted report
    let cmp_dir = root.join("cmp");
    let out = fer(&[
        "eval",
        "--compare",
        eval_dir.join("report.json").to_str().unwrap(),
        "--out-dir",
        cmp_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(cmp_dir.join("comparison.csv").is_file());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Aug1"), "{stdout}");
}

#[test]
fn plan_accepts_raw_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = fer(&[
        "plan",
        "--counts",
        "3995,436,4097,7215,4965,4830,3171",
        "--scheme",
        "fixed:10000",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["classes"][1]["deficit"], 10000 - 436);
    assert_eq!(plan["classes"][3]["deficit"], 10000 - 7215);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = fer(&["plan", "--scheme", "equalize", "--out-dir", dir.path().to_str().unwrap()]);
    assert_code(&out, 1); // neither --counts nor --csv

    let out = fer(&["frobnicate"]);
    assert_code(&out, 1);

    let out = fer(&[
        "plan",
        "--counts",
        "1,2,3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 1);

    let out = fer(&[
        "plan",
        "--counts",
        "1,2,3,4,5,6,7",
        "--scheme",
        "bogus",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_csv = dir.path().join("bad.csv");
    fs::write(&bad_csv, "not,a,header\n").unwrap();
    let out = fer(&[
        "plan",
        "--csv",
        bad_csv.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2);

    let out = fer(&[
        "eval",
        "--checkpoint",
        dir.path().join("missing.ckpt").to_str().unwrap(),
        "--csv",
        bad_csv.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn failing_generator_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fer.csv");
    write_csv(&csv);
    let plan_dir = dir.path().join("plan");
    let out = fer(&[
        "plan",
        "--csv",
        csv.to_str().unwrap(),
        "--out-dir",
        plan_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    // an external command that always fails: every request is recorded, the
    // run completes, and the all-failed case maps to a data error
    let gen_dir = dir.path().join("gen");
    let out = fer(&[
        "generate",
        "--manifest",
        plan_dir.join("manifest.json").to_str().unwrap(),
        "--generator",
        "command:false",
        "--out-dir",
        gen_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(gen_dir.join("generation-report.json")).unwrap())
            .unwrap();
    assert_eq!(report["classes"]["Fear"]["failed"].as_array().unwrap().len(), 3);
}

#[test]
fn gradcheck_subcommand_reports_every_layer() {
    let out = fer(&["gradcheck", "--seeds", "1"]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for layer in [
        "conv2d",
        "batch_norm2d",
        "relu",
        "sigmoid",
        "max_pool2d",
        "global_average_pool",
        "channel_scale",
        "add",
        "linear",
        "softmax_cross_entropy",
        "se_block",
        "residual_block",
        "model_end_to_end",
    ] {
        assert!(stdout.contains(layer), "missing {layer}:\n{stdout}");
    }
    assert!(!stdout.contains("FAIL"), "{stdout}");
}
