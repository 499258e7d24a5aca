//! Integration tests for the `cgmoe-ad` binary: exit codes, provenance
//! records, deterministic replay, and the protocol filters.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cgmoe_ad::synth::SynthSpec;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cgmoe-ad"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_spec_file(dir: &Path, seed: u64) -> PathBuf {
    let mut spec = SynthSpec::desk_default(seed);
    spec.train_normals = 4;
    spec.test_normals = 2;
    spec.test_anomalies_per_defect = 2;
    let path = dir.join("spec.json");
    spec.save(&path).unwrap();
    path
}

/// Tiny-model flags shared by the training-related tests.
const TINY_MODEL: &[&str] = &[
    "--model.encoder.dim",
    "16",
    "--model.encoder.depth",
    "2",
    "--model.encoder.heads",
    "2",
    "--model.encoder.mlp_ratio",
    "2",
    "--model.expert_hidden",
    "24",
    "--model.bottleneck_hidden",
    "24",
    "--model.decoder_heads",
    "2",
];

fn gen_benchmark(dir: &Path, seed: u64) -> PathBuf {
    let spec = small_spec_file(dir, seed);
    let data = dir.join("data");
    let out = run(&[
        "gen-synthetic",
        "--out",
        data.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    data
}

#[test]
fn missing_dataset_root_exits_2_and_names_the_path() {
    let out = run(&[
        "train",
        "--data",
        "/definitely/not/a/dataset",
        "--out",
        "/tmp/cgmoe_unused",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/definitely/not/a/dataset"), "{stderr}");
}

#[test]
fn unknown_flags_and_commands_exit_2() {
    assert_eq!(run(&["stats", "--frobnicate", "1"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn gen_synthetic_then_stats_and_annotation_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_benchmark(dir.path(), 3);

    let stats_out = run(&["stats", "--data", data.to_str().unwrap()]);
    assert!(stats_out.status.success());
    let text = String::from_utf8_lossy(&stats_out.stdout);
    assert!(text.contains("TOTAL"), "{text}");
    assert!(text.contains("categories: 8"), "{text}");

    // generated annotations validate cleanly
    let val = run(&["validate-annotations", "--data", data.to_str().unwrap()]);
    assert!(val.status.success());
    let text = String::from_utf8_lossy(&val.stdout);
    assert!(text.contains("0 errors"), "{text}");

    // grid-location annotation over the same tree is a no-op on validity
    let ann = run(&["annotate-locations", "--data", data.to_str().unwrap()]);
    assert!(ann.status.success());
}

#[test]
fn checkpoints_record_the_expert_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_benchmark(dir.path(), 5);
    for k in ["1", "8"] {
        let out_dir = dir.path().join(format!("run_k{k}"));
        let mut args = vec![
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--iterations",
            "3",
            "--batch-size",
            "2",
            "--experts",
            k,
        ];
        args.extend_from_slice(TINY_MODEL);
        let out = run(&args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let ckpt = out_dir.join("model.ckpt");
        let recorded = cgmoe_ad::checkpoint::recorded_expert_count(&ckpt).unwrap();
        assert_eq!(recorded.to_string(), *k);
        assert!(
            out_dir.join("run_config.json").is_file(),
            "provenance snapshot"
        );
        assert!(out_dir.join("loss_log.ndjson").is_file());
    }
}

#[test]
fn deterministic_training_replays_the_loss_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_benchmark(dir.path(), 7);
    let run_once = |out_dir: &Path| {
        let mut args = vec![
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--iterations",
            "6",
            "--batch-size",
            "2",
            "--seed",
            "99",
            "--deterministic",
            "--train.log_every",
            "1",
        ];
        args.extend_from_slice(TINY_MODEL);
        let out = run(&args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        std::fs::read(out_dir.join("loss_log.ndjson")).unwrap()
    };
    let a = run_once(&dir.path().join("a"));
    let b = run_once(&dir.path().join("b"));
    assert_eq!(a, b, "identical seeds must replay the exact loss log");
}

#[test]
fn eval_applies_domain_filters_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_benchmark(dir.path(), 9);
    let train_dir = dir.path().join("train");
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--iterations",
        "3",
        "--batch-size",
        "2",
    ];
    args.extend_from_slice(TINY_MODEL);
    assert!(run(&args).status.success());

    let eval_dir = dir.path().join("eval");
    let ckpt = train_dir.join("model.ckpt");
    let mut args = vec![
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--eval-domains",
        "Medical",
        "--dump-scores",
    ];
    args.extend_from_slice(TINY_MODEL);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    let cats = report["per_category"].as_array().unwrap();
    assert!(!cats.is_empty());
    for c in cats {
        assert_eq!(c["domain"], "Medical", "only Medical categories evaluated");
    }
    assert!(eval_dir.join("image_scores.csv").is_file());
    assert!(eval_dir.join("run_config.json").is_file());
}

#[test]
fn eval_rejects_mismatched_model_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_benchmark(dir.path(), 11);
    let train_dir = dir.path().join("train");
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
        "--iterations",
        "2",
        "--batch-size",
        "2",
        "--experts",
        "4",
    ];
    args.extend_from_slice(TINY_MODEL);
    assert!(run(&args).status.success());

    // evaluating under a different expert count must fail loudly
    let ckpt = train_dir.join("model.ckpt");
    let eval_dir = dir.path().join("eval");
    let mut args = vec![
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--experts",
        "8",
    ];
    args.extend_from_slice(TINY_MODEL);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("different model configuration"), "{stderr}");
}

#[test]
fn shots_flag_limits_training_images_per_category() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_benchmark(dir.path(), 13);
    let out_dir = dir.path().join("oneshot");
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--iterations",
        "2",
        "--batch-size",
        "2",
        "--shots",
        "1",
    ];
    args.extend_from_slice(TINY_MODEL);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let audit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("batch_audit.json")).unwrap())
            .unwrap();
    // 8 categories, exactly one training image each
    assert_eq!(audit["train_images"], 8);
}

#[test]
fn ablate_emits_a_labeled_comparison_table_with_audit() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_benchmark(dir.path(), 15);
    let out_dir = dir.path().join("ablation");
    let mut args = vec![
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--iterations",
        "2",
        "--batch-size",
        "2",
        "--seed",
        "4",
        "--ablate.experts",
        "[1,2]",
        "--ablate.decoder_routing",
        "true",
    ];
    args.extend_from_slice(TINY_MODEL);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("ablation.json")).unwrap())
            .unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["label"], "Single FFN (baseline)");
    assert_eq!(rows[1]["label"], "cgMoE-2 experts");
    assert_eq!(rows[2]["routing"], "decoder_cls");
    for r in rows {
        assert!(r["i_auroc"].is_number());
        assert!(r["p_auroc"].is_number());
    }
    assert_eq!(table["batch_sequences_identical"], true);
}

#[test]
fn convert_and_split_balance_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    // an MVTec-shaped source: reuse the generated benchmark as input
    let source = gen_benchmark(dir.path(), 17);
    let converted = dir.path().join("converted");
    let out = run(&[
        "convert",
        "--data",
        source.to_str().unwrap(),
        "--out",
        converted.to_str().unwrap(),
        "--source-name",
        "bench",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(converted.join("manifest.json").is_file());
    assert!(converted.join("conversion_summary.json").is_file());

    let out = run(&[
        "split-balance",
        "--data",
        converted.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // the rebalanced tree still scans as a valid dataset
    let manifest = cgmoe_ad::dataset::DatasetManifest::load(&converted).unwrap();
    assert!(manifest.validate().is_empty());
    for cat in &manifest.categories {
        for s in &cat.samples {
            assert!(converted.join(&s.image).is_file(), "{} missing", s.image);
        }
    }
}
