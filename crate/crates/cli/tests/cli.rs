//! End-to-end tests of the `kge` binary: workflows, flag handling, and
//! the exit-code contract.

mod common;

use common::*;
use std::fs;

#[test]
fn train_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 20);
    let out = dir.path().join("out");
    let run = run_kge([
        "train",
        "--model",
        "transe",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "3",
        "--hidden-size",
        "8",
        "--batch-size",
        "8",
    ]);
    assert_eq!(exit_code(&run), 0, "stderr: {}", stderr_str(&run));
    for f in [
        "model.bin",
        "loss.csv",
        "metrics.csv",
        "ranks.csv",
        "embedding_2d.csv",
        "embedding_2d.svg",
        "loss.svg",
        "mean_rank.svg",
        "hits.svg",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    // Progress lands on stderr, stdout stays clean.
    assert!(stdout_str(&run).is_empty());
    assert!(stderr_str(&run).contains("epoch 3/3"));
    // The dataset cache was created and is reused on the next run.
    assert!(dir.path().join(".kgcache").exists());
    let run2 = run_kge([
        "eval",
        "--model-file",
        out.join("model.bin").to_str().unwrap(),
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--split",
        "valid",
    ]);
    assert_eq!(exit_code(&run2), 0, "stderr: {}", stderr_str(&run2));
    assert!(stderr_str(&run2).contains("loaded cached dataset"));
}

#[test]
fn mn_alias_matches_model_flag() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 16);
    let out = dir.path().join("out");
    let run = run_kge([
        "train",
        "-mn",
        "distmult",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--hidden-size",
        "4",
    ]);
    assert_eq!(exit_code(&run), 0, "stderr: {}", stderr_str(&run));
    assert!(stderr_str(&run).contains("training distmult"));
}

#[test]
fn unknown_model_exits_1_and_lists_kinds() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 12);
    let run = run_kge([
        "train",
        "-mn",
        "nosuchmodel",
        "--dataset",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&run), 1);
    let err = stderr_str(&run);
    for name in ["transe", "transh", "transr", "transd", "rescal", "distmult", "complex", "kg2e"] {
        assert!(err.contains(name), "missing {name} in {err}");
    }
}

#[test]
fn missing_dataset_exits_1() {
    let run = run_kge(["train", "-mn", "transe", "--dataset", "/nonexistent/path"]);
    assert_eq!(exit_code(&run), 1);
    assert!(stderr_str(&run).contains("hint"));
}

#[test]
fn bad_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 12);
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"learning_rat": 0.1}"#).unwrap();
    let run = run_kge([
        "train",
        "-mn",
        "transe",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&run), 1);
    assert!(stderr_str(&run).contains("learning_rat"));
}

#[test]
fn non_finite_loss_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 12);
    let run = run_kge([
        "train",
        "-mn",
        "distmult",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--epochs",
        "40",
        "--learning-rate",
        "99.0",
        "--loss-kind",
        "softplus",
        "--lambda-reg",
        "0",
        "--hidden-size",
        "8",
    ]);
    assert_eq!(exit_code(&run), 2, "stderr: {}", stderr_str(&run));
    assert!(stderr_str(&run).contains("non-finite loss"));
}

#[test]
fn help_documents_every_flag() {
    let run = run_kge(["--help"]);
    assert_eq!(exit_code(&run), 0);
    let help = stdout_str(&run);
    for sub in ["train", "tune", "eval", "project"] {
        assert!(help.contains(sub), "help missing subcommand {sub}");
    }
    assert!(help.contains("-mn"), "help must document the -mn alias");

    // Round trip: every documented long flag is accepted, and the flag
    // table used here is exactly what each subcommand accepts.
    for (sub, flags) in [
        (
            "train",
            vec![
                "--model", "--dataset", "--config", "--out", "--golden", "--l1-flag",
                "--batch-size", "--epochs", "--hidden-size", "--learning-rate", "--margin",
                "--opt", "--samp", "--loss-kind", "--lambda-reg", "--seed", "--eval-every",
                "--workers", "--queue-capacity", "--neg-reject", "--hits-ks", "--help",
            ],
        ),
        (
            "tune",
            vec![
                "--model", "--dataset", "--config", "--out", "--golden", "--l1-flag",
                "--batch-size", "--epochs", "--hidden-size", "--learning-rate", "--margin",
                "--opt", "--samp", "--loss-kind", "--lambda-reg", "--seed", "--eval-every",
                "--workers", "--queue-capacity", "--neg-reject", "--hits-ks", "--budget",
                "--trials", "--help",
            ],
        ),
        (
            "eval",
            vec![
                "--model-file", "--dataset", "--out", "--split", "--workers", "--hits-ks",
                "--help",
            ],
        ),
        (
            "project",
            vec![
                "--model-file", "--dataset", "--out", "--proj", "--perplexity", "--iters",
                "--max-points", "--seed", "--help",
            ],
        ),
    ] {
        let run = run_kge([sub, "--help"]);
        let help = stdout_str(&run);
        let documented: Vec<&str> = help
            .lines()
            .filter_map(|l| {
                let l = l.trim_start();
                l.starts_with("--")
                    .then(|| l.split_whitespace().next().unwrap().trim_end_matches(','))
                    .or_else(|| {
                        l.starts_with('-').then(|| {
                            l.split_whitespace()
                                .find(|w| w.starts_with("--"))
                                .unwrap_or("")
                        })
                    })
            })
            .filter(|f| !f.is_empty())
            .collect();
        for flag in &flags {
            if *flag == "--help" {
                continue;
            }
            assert!(
                documented.contains(flag),
                "{sub}: flag {flag} not documented in help:\n{help}"
            );
        }
        for doc in &documented {
            assert!(
                flags.contains(doc) || *doc == "--version",
                "{sub}: undocumented-in-test flag {doc} (update the table)"
            );
        }
    }
}

#[test]
fn tune_prints_golden_setting_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 16);
    let out = dir.path().join("out");
    let run = run_kge([
        "tune",
        "-mn",
        "transe",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--budget",
        "3",
        "--epochs",
        "2",
        "--hidden-size",
        "4",
    ]);
    assert_eq!(exit_code(&run), 0, "stderr: {}", stderr_str(&run));
    let stdout = stdout_str(&run);
    assert!(stdout.contains("Found Golden Setting:"), "stdout: {stdout}");
    let dict_line = stdout.lines().last().unwrap();
    for key in [
        "'L1_flag'", "'batch_size'", "'epochs'", "'hidden_size'", "'learning_rate'",
        "'margin'", "'opt'", "'samp'",
    ] {
        assert!(dict_line.contains(key), "missing {key} in {dict_line}");
    }
    // Explicitly set hyperparameters are pinned, not searched.
    assert!(dict_line.contains("'epochs': 2"), "epochs not pinned: {dict_line}");
    assert!(dict_line.contains("'hidden_size': 4"), "hidden_size not pinned: {dict_line}");
    assert!(out.join("trials.jsonl").exists());
    let n_lines = fs::read_to_string(out.join("trials.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(n_lines, 3);

    // Resume: a higher budget only runs the remaining trials.
    let run2 = run_kge([
        "tune",
        "-mn",
        "transe",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--budget",
        "5",
        "--epochs",
        "2",
        "--hidden-size",
        "4",
    ]);
    assert_eq!(exit_code(&run2), 0, "stderr: {}", stderr_str(&run2));
    let n_lines = fs::read_to_string(out.join("trials.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(n_lines, 5);
}

#[test]
fn project_writes_embedding_files() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 18);
    let out = dir.path().join("out");
    let train = run_kge([
        "train",
        "-mn",
        "transh",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--hidden-size",
        "6",
    ]);
    assert_eq!(exit_code(&train), 0, "stderr: {}", stderr_str(&train));

    let proj_out = dir.path().join("proj");
    let run = run_kge([
        "project",
        "--model-file",
        out.join("model.bin").to_str().unwrap(),
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        proj_out.to_str().unwrap(),
        "--proj",
        "tsne",
        "--perplexity",
        "4",
        "--iters",
        "300",
    ]);
    assert_eq!(exit_code(&run), 0, "stderr: {}", stderr_str(&run));
    let csv = fs::read_to_string(proj_out.join("embedding_2d.csv")).unwrap();
    // 18 entities + 2 relations + header.
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.contains("e0,"));
    assert!(csv.lines().any(|l| l.ends_with(",relation")));
    assert!(proj_out.join("embedding_2d.svg").exists());

    // Infeasible perplexity is a user error.
    let bad = run_kge([
        "project",
        "--model-file",
        out.join("model.bin").to_str().unwrap(),
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        proj_out.to_str().unwrap(),
        "--perplexity",
        "1000",
    ]);
    assert_eq!(exit_code(&bad), 1);
}

#[test]
fn golden_flag_applies_preset() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_dataset(dir.path(), 16);
    let out = dir.path().join("out");
    let run = run_kge([
        "train",
        "-mn",
        "transe",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--golden",
    ]);
    assert_eq!(exit_code(&run), 0, "stderr: {}", stderr_str(&run));
    // The transe preset trains for 5 epochs.
    assert!(stderr_str(&run).contains("epoch 5/5"));
}
