use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sag")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(
        &path,
        "# small and quick\nchannels = 4,4\nn_per_class = 6\nlength = 24\nepochs = 3\nseeds = 0..2\n",
    )
    .unwrap();
    path
}

fn csv_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn replay_reports_the_headline_and_exits_zero() {
    let out = sag(&["replay-table"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("headline: 1.000 1.000 0.833 0.792 1.000 0.792"));
}

#[test]
fn replay_at_another_epsilon_differs_but_succeeds() {
    let out = sag(&["replay-table", "--epsilon", "0.5"]);
    assert_eq!(code(&out), 0);
    assert!(!stdout(&out).contains("headline: 1.000 1.000 0.833 0.792 1.000 0.792"));
}

#[test]
fn replay_exit_codes_for_bad_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sag(&["replay-table", "--fixture", dir.path().join("nope.csv").to_str().unwrap()])), 2);

    let shipped = dir.path().join("table.csv");
    fs::write(&shipped, sag_core::evaluation::SCORE_TABLE_CSV).unwrap();
    assert_eq!(code(&sag(&["replay-table", "--fixture", shipped.to_str().unwrap()])), 0);

    let tampered = dir.path().join("tampered.csv");
    fs::write(&tampered, sag_core::evaluation::SCORE_TABLE_CSV.replacen("0.", "0.9", 1)).unwrap();
    assert_eq!(code(&sag(&["replay-table", "--fixture", tampered.to_str().unwrap()])), 5);
}

#[test]
fn gradcheck_passes_and_catches_a_broken_rule() {
    let ok = sag(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout(&ok).contains("max relative error"));

    let broken = sag(&["gradcheck", "--seed", "1", "--sabotage-relu"]);
    assert_eq!(code(&broken), 1);
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = tiny_config(dir.path());
    let out = sag(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--checkpoint"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for seed in 0..2 {
        for regime in ["clean", "shortcut"] {
            let run = out_dir.join(format!("seed_{seed}")).join(regime);
            for file in sag_core::report::RUN_FILES.iter().chain(&["model.ckpt"]) {
                assert!(run.join(file).is_file(), "missing {}", run.join(file).display());
            }
            let svg = fs::read_to_string(run.join("delta.svg")).unwrap();
            assert!(svg.contains("<polyline"));
        }
    }
    for file in ["summary.csv", "metrics.csv", "bench.csv", "manifest.csv"] {
        assert!(out_dir.join(file).is_file(), "missing {file}");
    }
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 2);
    let manifest = fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert!(manifest.lines().any(|l| l.starts_with("seed_1/shortcut/sag_report.csv,")));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = tiny_config(dir.path());
    let out = sag(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--epochs",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("seed_5").is_dir());
    assert!(!out_dir.join("seed_0").exists());
    let record = fs::read_to_string(out_dir.join("seed_5/clean/train_record.csv")).unwrap();
    assert_eq!(record.lines().count(), 2);
}

#[test]
fn repeated_runs_write_identical_csvs_regardless_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out_dir = dir.path().join(name);
        let out = sag(&["run", "--config", cfg.to_str().unwrap(), "--jobs", jobs, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(csv_files(&out_dir));
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn missing_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("Absent");
    let out = sag(&["run", "--data", prefix.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ucr_files_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for i in 0..12 {
        let label = if i % 2 == 0 { 1 } else { 2 };
        let row: Vec<String> = (0..20).map(|t| format!("{:.3}", ((t + i) as f64 * 0.4).sin() + label as f64)).collect();
        body.push_str(&format!("{label}\t{}\n", row.join("\t")));
    }
    fs::write(dir.path().join("Toy_TRAIN.tsv"), &body).unwrap();
    fs::write(dir.path().join("Toy_TEST.tsv"), &body).unwrap();
    let prefix = dir.path().join("Toy");
    let cfg = dir.path().join("toy.cfg");
    fs::write(&cfg, format!("data = {}\nchannels = 4,4\nepochs = 2\n", prefix.display())).unwrap();
    let out_dir = dir.path().join("out");
    let out = sag(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("seed_0/shortcut/sag_report.csv").is_file());
}

#[test]
fn unwritable_output_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = tiny_config(dir.path());
    let out = sag(&["run", "--config", cfg.to_str().unwrap(), "--epochs", "1", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn runaway_learning_rate_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = sag(&["run", "--config", cfg.to_str().unwrap(), "--lr", "1e300", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_bench_prints_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = sag(&["synth-bench", "--config", cfg.to_str().unwrap(), "--epochs", "1", "--seeds", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("seed"));
}

#[test]
fn bad_flag_values_are_rejected() {
    assert_ne!(code(&sag(&["run", "--epsilon", "0", "--epochs", "1"])), 0);
    assert_ne!(code(&sag(&["run", "--delta-variant", "median", "--epochs", "1"])), 0);
}
