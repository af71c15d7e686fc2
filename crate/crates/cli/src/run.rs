//! The paired clean/shortcut harness behind `run` and `synth-bench`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use rayon::prelude::*;
use sag_core::evaluation::{sha256_hex, MetricSummary, Regime};
use sag_core::experiment::{run_regime_on, BenchSummary, ExperimentConfig, ExperimentError, RegimeRun, SeedResult};
use sag_core::report::{manifest_csv, summary_csv, write_regime_outputs};

use crate::Failure;

struct JobOutput {
    seed: u64,
    dataset: String,
    run: RegimeRun,
    written: Vec<(PathBuf, String)>,
}

fn experiment_failure(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Dataset(_) => Failure::load(anyhow!(e)),
        e if e.is_divergence() => Failure::divergence(anyhow!(e)),
        e => Failure::other(anyhow!(e)),
    }
}

fn run_job(
    cfg: &ExperimentConfig,
    seed: u64,
    regime: Regime,
    out: Option<&Path>,
    checkpoint: bool,
) -> Result<JobOutput, Failure> {
    let split = cfg.load_split(seed).map_err(experiment_failure)?;
    let run = run_regime_on(cfg, &split, seed, regime).map_err(experiment_failure)?;
    let dataset = split.train.name().to_string();
    let written = match out {
        Some(dir) => write_regime_outputs(dir, &dataset, seed, &run, checkpoint)
            .map_err(|e| Failure::write(anyhow!(e).context(format!("writing under {}", dir.display()))))?,
        None => Vec::new(),
    };
    Ok(JobOutput {
        seed,
        dataset,
        run,
        written,
    })
}

/// Runs every (seed, regime) job on `jobs` threads. Results come back in
/// job order regardless of scheduling; on failure the error of the first
/// failing job in that order is returned.
pub fn run_paired(
    cfg: &ExperimentConfig,
    jobs: usize,
    out: Option<&Path>,
    checkpoint: bool,
) -> Result<(Vec<SeedResult>, Vec<(PathBuf, String)>), Failure> {
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let keys: Vec<(u64, Regime)> = seeds
        .iter()
        .flat_map(|&s| Regime::ALL.map(|r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::other(anyhow!(e)))?;
    let outputs: Vec<Result<JobOutput, Failure>> = pool.install(|| {
        keys.par_iter()
            .map(|&(seed, regime)| run_job(cfg, seed, regime, out, checkpoint))
            .collect()
    });
    let outputs: Vec<JobOutput> = outputs.into_iter().collect::<Result<_, _>>()?;

    let mut written = Vec::new();
    let mut results = Vec::with_capacity(seeds.len());
    let mut it = outputs.into_iter();
    while let (Some(clean), Some(shortcut)) = (it.next(), it.next()) {
        written.extend(clean.written);
        written.extend(shortcut.written);
        let seed = clean.seed;
        let pair = SeedResult::pair(clean.run, shortcut.run, seed, &clean.dataset)
            .map_err(|e| Failure::other(anyhow!(e)))?;
        results.push(pair);
    }
    Ok((results, written))
}

/// Per-seed detection outcomes folded into the class/dataset metrics.
pub fn metric_summary(results: &[SeedResult]) -> Result<MetricSummary, Failure> {
    let mut regular = Vec::new();
    let mut shortcut = Vec::new();
    for r in results {
        let (a, b) = r.outcomes().map_err(|e| Failure::other(anyhow!(e)))?;
        regular.push(a);
        shortcut.push(b);
    }
    MetricSummary::compute(&regular, &shortcut).map_err(|e| Failure::other(anyhow!(e)))
}

pub fn print_seed_table(results: &[SeedResult]) {
    println!(
        "{:>6} {:<9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>6}",
        "seed", "regime", "train_acc", "test_acc", "sag_c0", "sag_c1", "detected", "class"
    );
    for r in results {
        for regime in Regime::ALL {
            let run = r.run(regime);
            let last = run.record.last();
            let sag = |c: usize| run.report.sag.get(c).map_or(String::new(), |s| format!("{s:.4}"));
            println!(
                "{:>6} {:<9} {:>9.3} {:>9.3} {:>9} {:>9} {:>9} {:>6}",
                r.seed,
                regime.as_str(),
                last.map_or(f64::NAN, |e| e.train_accuracy),
                last.map_or(f64::NAN, |e| e.test_accuracy),
                sag(0),
                sag(1),
                if run.report.detected { "yes" } else { "no" },
                run.report.detected_class.map(|c| c.to_string()).unwrap_or_else(|| "-".into())
            );
        }
    }
}

/// Writes the aggregate CSVs and, last, the manifest indexing every file.
pub fn write_aggregates(
    out: &Path,
    results: &[SeedResult],
    metrics: &MetricSummary,
    bench: &BenchSummary,
    mut written: Vec<(PathBuf, String)>,
) -> Result<(), Failure> {
    let files = [
        ("summary.csv", summary_csv(results)),
        ("metrics.csv", metrics.to_csv()),
        ("bench.csv", bench.to_csv()),
    ];
    let fail = |e: std::io::Error| Failure::write(anyhow!(e).context(format!("writing under {}", out.display())));
    fs::create_dir_all(out).map_err(fail)?;
    for (name, text) in files {
        fs::write(out.join(name), &text).map_err(fail)?;
        written.push((PathBuf::from(name), sha256_hex(text.as_bytes())));
    }
    fs::write(out.join("manifest.csv"), manifest_csv(written)).map_err(fail)
}
