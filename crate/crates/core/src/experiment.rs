//! Paired clean/shortcut experiments: the same data, initialization and
//! training recipe, once on clean training data and once with a point
//! shortcut planted in the training split.

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::{load_ucr_tsv, make_synthetic, z_normalize, DatasetError, DatasetSplit, SyntheticSpec};
use crate::evaluation::{DetectionOutcome, EvalError, Regime};
use crate::injector::{inject, InjectError, InjectionReceipt, ShortcutSpec};
use crate::model::{init_model, train, ModelError, ResidualCNN1D, TrainConfig, TrainRecord, DEFAULT_CHANNELS};
use crate::sag::{score_model, validate_epsilon, ClassGradientProfile, DeltaVariant, SagError, SagReport, DEFAULT_EPSILON};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Inject(#[from] InjectError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sag(#[from] SagError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid experiment config: {0}")]
    Config(String),
}

impl ExperimentError {
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            ExperimentError::Model(ModelError::Divergence { .. })
                | ExperimentError::Sag(SagError::Model(ModelError::Divergence { .. }))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Prefix of a `<prefix>_TRAIN.tsv` / `<prefix>_TEST.tsv` pair.
    Ucr(PathBuf),
    /// Regenerated per seed, with `seed` replaced by the job seed.
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub shortcut: ShortcutSpec,
    /// `seed` is replaced by the job seed.
    pub train: TrainConfig,
    pub channels: Vec<usize>,
    pub epsilon: f64,
    pub delta_variant: DeltaVariant,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SyntheticSpec::default()),
            shortcut: ShortcutSpec::default(),
            train: TrainConfig::default(),
            channels: DEFAULT_CHANNELS.to_vec(),
            epsilon: DEFAULT_EPSILON,
            delta_variant: DeltaVariant::AbsOfMean,
            seeds: vec![0],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        validate_epsilon(self.epsilon)?;
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("at least one seed is required".into()));
        }
        self.train.validate()?;
        if let DataSource::Synthetic(spec) = &self.source {
            spec.validate()?;
        }
        Ok(())
    }

    /// Loads (and z-normalizes) or generates the clean split for one seed.
    pub fn load_split(&self, seed: u64) -> Result<DatasetSplit, ExperimentError> {
        match &self.source {
            DataSource::Ucr(prefix) => {
                let raw = load_ucr_tsv(prefix)?;
                Ok(raw.map_both(z_normalize)?)
            }
            DataSource::Synthetic(spec) => Ok(make_synthetic(&SyntheticSpec {
                seed,
                ..spec.clone()
            })?),
        }
    }
}

/// Injects into the training split only. The test split passes through
/// untouched, which is asserted.
pub fn inject_training_split(
    split: &DatasetSplit,
    spec: &ShortcutSpec,
) -> Result<(DatasetSplit, InjectionReceipt), ExperimentError> {
    let (train, receipt) = inject(&split.train, spec)?;
    let injected = DatasetSplit::new(train, split.test.clone())?;
    assert!(
        injected.test == split.test,
        "test data must never pass through the injector"
    );
    Ok((injected, receipt))
}

#[derive(Debug, Clone)]
pub struct RegimeRun {
    pub regime: Regime,
    pub model: ResidualCNN1D,
    pub record: TrainRecord,
    pub profile: ClassGradientProfile,
    pub report: SagReport,
    pub receipt: Option<InjectionReceipt>,
}

impl RegimeRun {
    pub fn final_test_accuracy(&self) -> f64 {
        self.record.last().map_or(0.0, |e| e.test_accuracy)
    }

    pub fn final_test_loss(&self) -> f64 {
        self.record.last().map_or(f64::NAN, |e| e.test_loss)
    }

    /// Time step with the largest δ for `class` (earliest on ties).
    pub fn peak_time(&self, class: usize) -> usize {
        let row = self.profile.delta().row(class);
        let mut best = 0;
        for (t, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = t;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub dataset: String,
    pub clean: RegimeRun,
    pub shortcut: RegimeRun,
}

impl SeedResult {
    pub fn pair(clean: RegimeRun, shortcut: RegimeRun, seed: u64, dataset: &str) -> Result<Self, ExperimentError> {
        if clean.regime != Regime::Regular || shortcut.regime != Regime::Shortcut {
            return Err(ExperimentError::Config("runs paired in the wrong order".into()));
        }
        Ok(Self {
            seed,
            dataset: dataset.to_string(),
            clean,
            shortcut,
        })
    }

    pub fn run(&self, regime: Regime) -> &RegimeRun {
        match regime {
            Regime::Regular => &self.clean,
            Regime::Shortcut => &self.shortcut,
        }
    }

    pub fn outcomes(&self) -> Result<(DetectionOutcome, DetectionOutcome), EvalError> {
        Ok((
            DetectionOutcome::new(&self.dataset, Regime::Regular, None, self.clean.report.clone())?,
            DetectionOutcome::new(
                &self.dataset,
                Regime::Shortcut,
                Some(self.shortcut.receipt.as_ref().map_or(0, |r| r.spec.target_class)),
                self.shortcut.report.clone(),
            )?,
        ))
    }
}

fn train_and_score(
    cfg: &ExperimentConfig,
    init: &ResidualCNN1D,
    split: &DatasetSplit,
    seed: u64,
    regime: Regime,
    receipt: Option<InjectionReceipt>,
) -> Result<RegimeRun, ExperimentError> {
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, record) = train(init, split, &train_cfg)?;
    // Scores use the training data the model saw, never the test split.
    let (profile, report) = score_model(&model, &split.train, cfg.epsilon, cfg.delta_variant)?;
    Ok(RegimeRun {
        regime,
        model,
        record,
        profile,
        report,
        receipt,
    })
}

/// Trains the clean and shortcut variants for one seed from the same
/// initial weights.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult, ExperimentError> {
    cfg.validate()?;
    let split = cfg.load_split(seed)?;
    run_seed_on(cfg, &split, seed)
}

pub fn run_seed_on(cfg: &ExperimentConfig, split: &DatasetSplit, seed: u64) -> Result<SeedResult, ExperimentError> {
    let clean = run_regime_on(cfg, split, seed, Regime::Regular)?;
    let shortcut = run_regime_on(cfg, split, seed, Regime::Shortcut)?;
    SeedResult::pair(clean, shortcut, seed, split.train.name())
}

/// One (seed, regime) job. Both regimes of a seed start from the same
/// initial weights, so jobs can run independently and be paired afterwards.
pub fn run_regime(cfg: &ExperimentConfig, seed: u64, regime: Regime) -> Result<RegimeRun, ExperimentError> {
    cfg.validate()?;
    let split = cfg.load_split(seed)?;
    run_regime_on(cfg, &split, seed, regime)
}

pub fn run_regime_on(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    seed: u64,
    regime: Regime,
) -> Result<RegimeRun, ExperimentError> {
    let init = init_model(&cfg.channels, split.train.class_count(), seed)?;
    match regime {
        Regime::Regular => train_and_score(cfg, &init, split, seed, regime, None),
        Regime::Shortcut => {
            let (injected, receipt) = inject_training_split(split, &cfg.shortcut)?;
            train_and_score(cfg, &init, &injected, seed, regime, Some(receipt))
        }
    }
}

/// Aggregate statistics over paired runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub runs: usize,
    /// Shortcut-trained models detected with the injected class as the
    /// top-scoring class.
    pub shortcut_detected_correct: usize,
    /// Clean-trained models that were (wrongly) flagged.
    pub clean_false_positives: usize,
    /// Seeds where the shortcut model's final test accuracy is below the
    /// clean model's.
    pub accuracy_drops: usize,
    /// Mean of `clean − shortcut` final test accuracy, in accuracy points.
    pub mean_accuracy_drop_points: f64,
    /// Seeds where the test loss ended higher for the shortcut model.
    pub test_loss_increases: usize,
    /// Seeds where the injected class's δ peaks at the injection position.
    pub peak_at_injection: usize,
}

impl BenchSummary {
    pub fn from_results(results: &[SeedResult]) -> Self {
        let runs = results.len();
        let mut s = Self {
            runs,
            shortcut_detected_correct: 0,
            clean_false_positives: 0,
            accuracy_drops: 0,
            mean_accuracy_drop_points: 0.0,
            test_loss_increases: 0,
            peak_at_injection: 0,
        };
        let mut drop_total = 0.0;
        for r in results {
            let spec = r.shortcut.receipt.as_ref().map(|rc| rc.spec).unwrap_or_default();
            if r.shortcut.report.detected_class == Some(spec.target_class) {
                s.shortcut_detected_correct += 1;
            }
            if r.clean.report.detected {
                s.clean_false_positives += 1;
            }
            let drop = r.clean.final_test_accuracy() - r.shortcut.final_test_accuracy();
            if drop > 0.0 {
                s.accuracy_drops += 1;
            }
            drop_total += 100.0 * drop;
            if r.shortcut.final_test_loss() > r.clean.final_test_loss() {
                s.test_loss_increases += 1;
            }
            let peak = r.shortcut.peak_time(spec.target_class);
            if (spec.position..spec.position + spec.width).contains(&peak) {
                s.peak_at_injection += 1;
            }
        }
        if runs > 0 {
            s.mean_accuracy_drop_points = drop_total / runs as f64;
        }
        s
    }

    pub const CSV_HEADER: &'static str = "runs,shortcut_detected_correct,clean_false_positives,accuracy_drops,mean_accuracy_drop_points,test_loss_increases,peak_at_injection";

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.runs,
            self.shortcut_detected_correct,
            self.clean_false_positives,
            self.accuracy_drops,
            self.mean_accuracy_drop_points,
            self.test_loss_increases,
            self.peak_at_injection
        )
    }
}

impl std::fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.runs.max(1) as f64;
        writeln!(f, "paired runs:                       {}", self.runs)?;
        writeln!(
            f,
            "shortcut detected (correct class): {}/{} ({:.0}%)",
            self.shortcut_detected_correct,
            self.runs,
            100.0 * self.shortcut_detected_correct as f64 / n
        )?;
        writeln!(
            f,
            "clean false positives:             {}/{} ({:.0}%)",
            self.clean_false_positives,
            self.runs,
            100.0 * self.clean_false_positives as f64 / n
        )?;
        writeln!(
            f,
            "test accuracy dropped:             {}/{} (mean {:.1} points)",
            self.accuracy_drops, self.runs, self.mean_accuracy_drop_points
        )?;
        writeln!(f, "test loss increased:               {}/{}", self.test_loss_increases, self.runs)?;
        write!(f, "delta peak at injection point:     {}/{}", self.peak_at_injection, self.runs)
    }
}
