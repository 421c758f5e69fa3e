//! Command-level behavior: sweep fan-out, exit-code classes, artifact
//! determinism, and the documented failure modes.

use std::fs;
use std::path::{Path, PathBuf};

use preflab::commands::{
    cmd_analyze, cmd_oracle, cmd_synth, cmd_train, AnalyzeArgs, OracleArgs, SynthArgs, TrainArgs,
};
use preflab::error::CliError;

fn synth_args(seed: u64, out: PathBuf) -> SynthArgs {
    SynthArgs {
        seed,
        vocab_size: 4,
        max_len: 4,
        eos_id: None,
        n_prompts: 2,
        pairs: 100,
        mode: "sampled".to_string(),
        out,
    }
}

fn train_args(dataset: &Path, outdir: &Path) -> TrainArgs {
    TrainArgs {
        dataset: Some(dataset.to_path_buf()),
        objective: Some("dpo".to_string()),
        beta: Some("0.1,0.02".to_string()),
        reference: Some("self".to_string()),
        output_dir: Some(outdir.to_path_buf()),
        seed: Some(5),
        epochs: Some(2),
        batch_size: Some(16),
        base_lr: Some(0.2),
        init: Some("gaussian".to_string()),
        sigma: Some(0.8),
        ..TrainArgs::default()
    }
}

#[test]
fn synth_writes_the_requested_record_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(3, out.clone())).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    // 1 manifest line + 2 prompts x 100 pairs
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    cmd_synth(&synth_args(9, a.clone())).unwrap();
    cmd_synth(&synth_args(9, b.clone())).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.jsonl");
    cmd_synth(&synth_args(10, c.clone())).unwrap();
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn synth_expected_mode_orders_by_reward() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp.jsonl");
    let mut args = synth_args(4, out.clone());
    args.mode = "expected".to_string();
    cmd_synth(&args).unwrap();
    // label consistency is validated structurally by the loader; spot-check
    // that repeated generation is stable too
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn train_sweep_fans_out_one_directory_per_beta() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(1, data.clone())).unwrap();
    let out = dir.path().join("exp");
    cmd_train(&train_args(&data, &out)).unwrap();
    for beta in ["0.1", "0.02"] {
        let sub = out.join(format!("beta-{beta}"));
        assert!(sub.join("policy.ckpt").is_file());
        assert!(sub.join("train_report.csv").is_file());
        assert!(sub.join("degeneration.csv").is_file());
    }
    assert!(out.join("effective.toml").is_file());
    let a = fs::read(out.join("beta-0.1/train_report.csv")).unwrap();
    let b = fs::read(out.join("beta-0.02/train_report.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn train_accepts_the_conventional_sweep_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(2, data.clone())).unwrap();
    let out = dir.path().join("exp");
    let mut args = train_args(&data, &out);
    args.beta = Some("0.1,0.05,0.02,0.01,0.005".to_string());
    args.epochs = Some(1);
    cmd_train(&args).unwrap();
    for beta in ["0.1", "0.05", "0.02", "0.01", "0.005"] {
        assert!(out.join(format!("beta-{beta}")).is_dir(), "missing beta-{beta}");
    }
}

#[test]
fn posterior_prob_with_a_reference_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(1, data.clone())).unwrap();
    let mut args = train_args(&data, &dir.path().join("exp"));
    args.objective = Some("posterior_prob".to_string());
    args.reference = Some("some.ckpt".to_string());
    let err = cmd_train(&args).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("reference forbidden"), "{err}");
}

#[test]
fn train_is_deterministic_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(6, data.clone())).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    cmd_train(&train_args(&data, &out_a)).unwrap();
    cmd_train(&train_args(&data, &out_b)).unwrap();
    for artifact in
        ["beta-0.1/policy.ckpt", "beta-0.1/train_report.csv", "beta-0.1/degeneration.csv"]
    {
        let a = fs::read(out_a.join(artifact)).unwrap();
        let b = fs::read(out_b.join(artifact)).unwrap();
        assert_eq!(a, b, "artifact {artifact} differs across reruns");
    }
}

fn analyze_args(ckpt: &Path, reference: &Path, data: &Path, outdir: &Path) -> AnalyzeArgs {
    AnalyzeArgs {
        checkpoint: ckpt.to_path_buf(),
        reference: reference.to_path_buf(),
        dataset: data.to_path_buf(),
        which: "all".to_string(),
        output_dir: outdir.to_path_buf(),
        objective: "dpo".to_string(),
        beta: 1.0,
        length_normalized: false,
        bin_width: 0.5,
        top_k: 5,
        min_count: Some(1),
    }
}

#[test]
fn analyze_self_reference_reward_accuracy_is_exactly_half() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(7, data.clone())).unwrap();
    let exp = dir.path().join("exp");
    cmd_train(&train_args(&data, &exp)).unwrap();
    let ckpt = exp.join("beta-0.1/policy.ckpt");

    let out = dir.path().join("an");
    let mut args = analyze_args(&ckpt, &ckpt, &data, &out);
    args.which = "ranking".to_string();
    cmd_analyze(&args).unwrap();
    let text = fs::read_to_string(out.join("ranking.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    let reward_accuracy: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(reward_accuracy, 0.5);
}

#[test]
fn analyze_all_emits_exactly_three_csvs_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(8, data.clone())).unwrap();
    let exp = dir.path().join("exp");
    cmd_train(&train_args(&data, &exp)).unwrap();
    let ckpt = exp.join("beta-0.1/policy.ckpt");
    let reference = exp.join("beta-0.02/policy.ckpt");

    let out = dir.path().join("an");
    cmd_analyze(&analyze_args(&ckpt, &reference, &data, &out)).unwrap();
    let mut files: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, vec!["eos.csv", "ranking.csv", "token_hist.csv"]);

    let before: Vec<Vec<u8>> =
        files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    cmd_analyze(&analyze_args(&ckpt, &reference, &data, &out)).unwrap();
    for (f, earlier) in files.iter().zip(&before) {
        assert_eq!(&fs::read(out.join(f)).unwrap(), earlier, "{f} changed on rerun");
    }
}

#[test]
fn analyze_rejects_vocab_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    cmd_synth(&synth_args(11, data.clone())).unwrap();
    let exp = dir.path().join("exp");
    cmd_train(&train_args(&data, &exp)).unwrap();

    let other_data = dir.path().join("other.jsonl");
    let mut other = synth_args(11, other_data.clone());
    other.vocab_size = 3;
    other.max_len = 3;
    cmd_synth(&other).unwrap();
    let other_exp = dir.path().join("other-exp");
    let mut other_train = train_args(&other_data, &other_exp);
    other_train.beta = Some("0.1".to_string());
    cmd_train(&other_train).unwrap();

    let err = cmd_analyze(&analyze_args(
        &exp.join("beta-0.1/policy.ckpt"),
        &other_exp.join("beta-0.1/policy.ckpt"),
        &data,
        &dir.path().join("an"),
    ))
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn oracle_equivalence_class_passes_at_small_sizes() {
    let dir = tempfile::tempdir().unwrap();
    cmd_oracle(&OracleArgs {
        check: "equivalence-class".to_string(),
        vocab_size: 3,
        max_len: 3,
        seed: 0,
        output_dir: dir.path().to_path_buf(),
        corrupt: None,
    })
    .unwrap();
    let text = fs::read_to_string(dir.path().join("oracle_checks.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "equivalence-class");
    assert_eq!(fields[1], "true");
    let metric: f64 = fields[2].parse().unwrap();
    assert!(metric <= 1e-10, "max TV {metric}");
}

#[test]
fn corrupted_projection_fails_with_the_named_check() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_oracle(&OracleArgs {
        check: "projection".to_string(),
        vocab_size: 3,
        max_len: 3,
        seed: 0,
        output_dir: dir.path().to_path_buf(),
        corrupt: Some("projection".to_string()),
    })
    .unwrap_err();
    assert!(matches!(err, CliError::CheckFailed(_)));
    assert_eq!(err.exit_code(), 1);
    let text = fs::read_to_string(dir.path().join("oracle_checks.csv")).unwrap();
    assert!(text.contains("projection,false"), "{text}");
}

#[test]
fn oracle_rejects_spaces_beyond_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_oracle(&OracleArgs {
        check: "enumeration".to_string(),
        vocab_size: 11,
        max_len: 7,
        seed: 0,
        output_dir: dir.path().to_path_buf(),
        corrupt: None,
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("exceeding cap"), "{err}");
}

#[test]
fn oracle_csv_artifact_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: PathBuf| OracleArgs {
        check: "partition".to_string(),
        vocab_size: 3,
        max_len: 3,
        seed: 4,
        output_dir: out,
        corrupt: None,
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_oracle(&args(a.clone())).unwrap();
    cmd_oracle(&args(b.clone())).unwrap();
    assert_eq!(
        fs::read(a.join("oracle_checks.csv")).unwrap(),
        fs::read(b.join("oracle_checks.csv")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_config_error() {
    let args = TrainArgs {
        objective: Some("dpo".to_string()),
        ..TrainArgs::default()
    };
    let err = cmd_train(&args).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
