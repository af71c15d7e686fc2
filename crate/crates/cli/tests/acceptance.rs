//! End-to-end acceptance checks, run without the libtest harness so the
//! verdicts always print. Exits non-zero if any criterion failed.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sag_core::experiment::{run_seed, BenchSummary, ExperimentConfig};
use sag_core::model::gradcheck_default_model;
use sag_core::sag::sag_of_row;
use sag_core::{point_shortcut_score, DeltaVariant};

struct Verdict {
    id: u8,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn sag_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sag"))
}

fn table_replay() -> Verdict {
    let start = Instant::now();
    let out = sag_bin().args(["replay-table", "--epsilon", "0.15"]).output().unwrap();
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let headline = text.lines().find(|l| l.starts_with("headline:")).unwrap_or("").to_string();
    let exact = headline == "headline: 1.000 1.000 0.833 0.792 1.000 0.792";
    Verdict {
        id: 1,
        title: "score-table metric replay",
        passed: out.status.success() && exact && elapsed < Duration::from_secs(1),
        detail: format!("{headline:?}, exit {:?}, {elapsed:.2?}", out.status.code()),
    }
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5 {
        let report = gradcheck_default_model(seed, None).unwrap();
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 2,
        title: "full-network gradient check",
        passed: worst < 1e-4 && checked > 0 && elapsed < Duration::from_secs(60),
        detail: format!("max relative error {worst:.2e} over {checked} coordinates, 5 seeds, {elapsed:.2?}"),
    }
}

fn random_profile(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = rng.random_range(2..64);
    let mut row: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..100.0)).collect();
    // Sparse and spiky rows as well as dense ones.
    if rng.random_bool(0.3) {
        for v in row.iter_mut() {
            if rng.random_bool(0.7) {
                *v = 0.0;
            }
        }
    }
    let k = rng.random_range(0..m);
    row[k] += 1e-3;
    row
}

fn score_properties() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let profiles = 2000;
    let mut failures = Vec::new();
    for case in 0..profiles {
        let row = random_profile(&mut rng);
        let m = row.len() as f64;
        let s = sag_of_row(&row).unwrap();
        if !(s >= 1.0 / m && s <= 1.0) {
            failures.push(format!("case {case}: {s} outside range"));
        }
        let lambda = 10f64.powf(rng.random_range(-6.0..6.0));
        let scaled: Vec<f64> = row.iter().map(|v| v * lambda).collect();
        if (sag_of_row(&scaled).unwrap() - s).abs() > 1e-12 {
            failures.push(format!("case {case}: scale {lambda} changed the score"));
        }
        let mut shuffled = row.clone();
        shuffled.shuffle(&mut rng);
        if (sag_of_row(&shuffled).unwrap() - s).abs() > 1e-12 {
            failures.push(format!("case {case}: permutation changed the score"));
        }
        let level = rng.random_range(1e-6..1e6);
        if sag_of_row(&vec![level; row.len()]).unwrap() != 1.0 / m {
            failures.push(format!("case {case}: uniform profile is not 1/m"));
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 3,
        title: "score analytic properties",
        passed: failures.is_empty() && elapsed < Duration::from_secs(10),
        detail: format!("{profiles} profiles, {} failures {:?}, {elapsed:.2?}", failures.len(), failures.first()),
    }
}

fn naive_class_means(g: &Array2<f64>, labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let (n, m) = g.dim();
    let mut out = vec![vec![0.0; m]; classes];
    for (c, row) in out.iter_mut().enumerate() {
        let mut count = 0usize;
        for i in 0..n {
            if labels[i] == c {
                count += 1;
            }
        }
        for (t, cell) in row.iter_mut().enumerate() {
            let mut total = 0.0;
            for i in 0..n {
                if labels[i] == c {
                    total += g[[i, t]];
                }
            }
            *cell = (total / count as f64).abs();
        }
    }
    out
}

fn class_mean_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let classes = rng.random_range(2..=3);
        let n = rng.random_range(classes..=16);
        let m = rng.random_range(2..=8);
        let g = Array2::from_shape_fn((n, m), |_| rng.random_range(-5.0..5.0));
        let mut labels: Vec<usize> = (0..n).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
        labels.shuffle(&mut rng);
        let got = point_shortcut_score(&g, &labels, classes, DeltaVariant::AbsOfMean).unwrap();
        let want = naive_class_means(&g, &labels, classes);
        for (c, row) in want.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                worst = worst.max((got.delta()[[c, t]] - v).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 4,
        title: "class-mean gradient oracle",
        passed: worst <= 1e-12 && elapsed < Duration::from_secs(5),
        detail: format!("100 instances, max abs difference {worst:.1e}, {elapsed:.2?}"),
    }
}

fn synthetic_bench() -> [Verdict; 3] {
    let cfg = ExperimentConfig::default();
    let mut results = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..10 {
        let start = Instant::now();
        results.push(run_seed(&cfg, seed).unwrap());
        slowest = slowest.max(start.elapsed());
    }
    let flagged = results
        .iter()
        .filter(|r| r.shortcut.report.is_flagged(cfg.shortcut.target_class))
        .count();
    let bench = BenchSummary::from_results(&results);
    [
        Verdict {
            id: 5,
            title: "end-to-end synthetic detection",
            passed: bench.shortcut_detected_correct >= 8
                && bench.clean_false_positives <= 1
                && slowest < Duration::from_secs(15 * 60),
            detail: format!(
                "correct top class {}/10 (flagged {flagged}/10), clean false positives {}/10, slowest seed {slowest:.1?}",
                bench.shortcut_detected_correct, bench.clean_false_positives
            ),
        },
        Verdict {
            id: 6,
            title: "generalization gap",
            passed: bench.accuracy_drops >= 8 && bench.mean_accuracy_drop_points >= 10.0,
            detail: format!(
                "accuracy dropped in {}/10 seeds, mean drop {:.1} points, test loss higher in {}/10",
                bench.accuracy_drops, bench.mean_accuracy_drop_points, bench.test_loss_increases
            ),
        },
        Verdict {
            id: 7,
            title: "gradient concentration at the injected point",
            passed: bench.peak_at_injection >= 8,
            detail: format!("peak at the injected position in {}/10 seeds", bench.peak_at_injection),
        },
    ]
}

fn csv_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out_dir = dir.path().join(name);
        let status = sag_bin()
            .args(["run", "--synthetic", "--seed", "0", "--out", out_dir.to_str().unwrap()])
            .output()
            .unwrap()
            .status;
        runs.push((status.success(), csv_bytes(&out_dir)));
    }
    let files = runs[0].1.len();
    Verdict {
        id: 8,
        title: "deterministic reruns",
        passed: runs[0].0 && runs[1].0 && files > 0 && runs[0].1 == runs[1].1,
        detail: format!("{files} CSV files compared byte for byte"),
    }
}

fn main() {
    let mut verdicts = vec![table_replay(), gradient_check(), score_properties(), class_mean_oracle()];
    verdicts.extend(synthetic_bench());
    verdicts.push(determinism());

    println!();
    for v in &verdicts {
        let mark = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {} [{mark}] {}: {}", v.id, v.title, v.detail);
    }
    let failed: Vec<u8> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all {} criteria passed", verdicts.len());
}
