mod run;
mod settings;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use sag_core::autodiff::BackwardFault;
use sag_core::evaluation::{matches_reference_headline, sha256_hex, replay_score_table, SCORE_TABLE_CSV, SCORE_TABLE_SHA256};
use sag_core::experiment::BenchSummary;
use sag_core::model::gradcheck_default_model;
use sag_core::DEFAULT_EPSILON;

use settings::{parse_seed_list, Settings};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Process exit status plus the error that caused it.
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn other(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
    pub fn load(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }
    pub fn divergence(error: anyhow::Error) -> Self {
        Self { code: 3, error }
    }
    pub fn write(error: anyhow::Error) -> Self {
        Self { code: 4, error }
    }
    pub fn checksum(error: anyhow::Error) -> Self {
        Self { code: 5, error }
    }
}

#[derive(Parser)]
#[command(name = "sag", version, about = "Point-shortcut detection for time-series classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train clean and shortcut-injected models per seed, score and report.
    Run(ExperimentArgs),
    /// Recompute the detection metrics from a per-class score table.
    ReplayTable(ReplayArgs),
    /// Finite-difference check of the full network's gradients.
    Gradcheck(GradcheckArgs),
    /// Multi-seed synthetic benchmark of detection, accuracy drop and δ peak.
    SynthBench(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// UCR prefix: reads <PREFIX>_TRAIN.tsv and <PREFIX>_TEST.tsv.
    #[arg(long, value_name = "PREFIX")]
    data: Option<String>,
    /// Use the synthetic sine/bump family (the default source).
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<String>,
    /// Comma list or half-open range, e.g. `0,3,4` or `0..10`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    inject_class: Option<String>,
    #[arg(long)]
    inject_pos: Option<String>,
    #[arg(long)]
    inject_width: Option<String>,
    /// Spike value = training max + k · training std.
    #[arg(long, conflicts_with = "amplitude_abs")]
    amplitude_k: Option<String>,
    /// Fixed spike value.
    #[arg(long)]
    amplitude_abs: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// abs-of-mean or mean-of-abs.
    #[arg(long)]
    delta_variant: Option<String>,
    /// Worker threads for (seed, regime) jobs.
    #[arg(long)]
    jobs: Option<String>,
    /// Also write model.ckpt for every trained model.
    #[arg(long)]
    checkpoint: bool,
}

impl ExperimentArgs {
    fn settings(&self) -> Result<Settings, Failure> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            let text = Settings::read_file(path).map_err(Failure::load)?;
            s.apply_text(&text, &path.display().to_string())
                .map_err(Failure::other)?;
        }
        let flags = [
            ("data", self.data.as_deref()),
            ("synthetic", self.synthetic.then_some("true")),
            ("epsilon", self.epsilon.as_deref()),
            ("seed", self.seed.as_deref()),
            ("seeds", self.seeds.as_deref()),
            ("epochs", self.epochs.as_deref()),
            ("lr", self.lr.as_deref()),
            ("batch", self.batch.as_deref()),
            ("inject_class", self.inject_class.as_deref()),
            ("inject_pos", self.inject_pos.as_deref()),
            ("inject_width", self.inject_width.as_deref()),
            ("amplitude_k", self.amplitude_k.as_deref()),
            ("amplitude_abs", self.amplitude_abs.as_deref()),
            ("out", self.out.as_deref()),
            ("delta_variant", self.delta_variant.as_deref()),
            ("jobs", self.jobs.as_deref()),
            ("checkpoint", self.checkpoint.then_some("true")),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v).map_err(|e| Failure::other(e.context(format!("--{}", key.replace('_', "-")))))?;
            }
        }
        Ok(s)
    }
}

#[derive(Args)]
struct ReplayArgs {
    /// Score table CSV; the shipped table is used when omitted.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0, conflicts_with = "seeds")]
    seed: u64,
    #[arg(long)]
    seeds: Option<String>,
    /// Replace the ReLU backward rule with a pass-through.
    #[arg(long, hide = true)]
    sabotage_relu: bool,
}

fn cmd_run(args: &ExperimentArgs) -> Result<(), Failure> {
    let settings = args.settings()?;
    let cfg = settings.experiment().map_err(Failure::other)?;
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let (results, written) = run::run_paired(&cfg, settings.jobs, Some(&out), settings.checkpoint)?;
    let metrics = run::metric_summary(&results)?;
    let bench = BenchSummary::from_results(&results);
    run::write_aggregates(&out, &results, &metrics, &bench, written)?;
    run::print_seed_table(&results);
    println!();
    println!("{metrics}");
    println!("{bench}");
    println!("outputs: {}", out.display());
    Ok(())
}

fn cmd_synth_bench(args: &ExperimentArgs) -> Result<(), Failure> {
    let mut settings = args.settings()?;
    settings.data = None;
    if !settings.seeds_given {
        settings.experiment.seeds = (0..10).collect();
    }
    let cfg = settings.experiment().map_err(Failure::other)?;
    let out = settings.out.clone();
    let (results, written) = run::run_paired(&cfg, settings.jobs, out.as_deref(), settings.checkpoint)?;
    let metrics = run::metric_summary(&results)?;
    let bench = BenchSummary::from_results(&results);
    if let Some(dir) = &out {
        run::write_aggregates(dir, &results, &metrics, &bench, written)?;
    }
    run::print_seed_table(&results);
    println!();
    println!("{bench}");
    Ok(())
}

fn cmd_replay_table(args: &ReplayArgs) -> Result<(), Failure> {
    let text = match &args.fixture {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::load)?,
        None => SCORE_TABLE_CSV.to_string(),
    };
    let digest = sha256_hex(text.as_bytes());
    if digest != SCORE_TABLE_SHA256 {
        return Err(Failure::checksum(anyhow!(
            "score table checksum mismatch: expected {SCORE_TABLE_SHA256}, got {digest}"
        )));
    }
    let summary = replay_score_table(&text, args.epsilon).map_err(|e| Failure::other(anyhow!(e)))?;
    println!("epsilon = {}", args.epsilon);
    println!("{summary}");
    let headline: Vec<String> = summary.headline().iter().map(|v| format!("{v:.3}")).collect();
    println!("headline: {}", headline.join(" "));
    if args.epsilon == DEFAULT_EPSILON {
        if matches_reference_headline(&summary) {
            println!("matches the reference headline");
        } else {
            return Err(Failure::other(anyhow!("metrics differ from the reference headline")));
        }
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let seeds = match &args.seeds {
        Some(list) => parse_seed_list(list).map_err(Failure::other)?,
        None => vec![args.seed],
    };
    let fault = args.sabotage_relu.then_some(BackwardFault::ReluPassThrough);
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let report = gradcheck_default_model(seed, fault).map_err(|e| Failure::other(anyhow!(e)))?;
        println!(
            "seed {seed}: max relative error {:.3e} ({} coordinates checked, {} excluded at ReLU kinks)",
            report.max_rel_error, report.checked, report.excluded.len()
        );
        worst = worst.max(report.max_rel_error);
    }
    if worst < GRADCHECK_TOLERANCE {
        println!("pass (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(Failure::other(anyhow!(
            "max relative error {worst:.3e} exceeds tolerance {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::ReplayTable(a) => cmd_replay_table(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::SynthBench(a) => cmd_synth_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
