//! Class-level shortcut scores built from aggregated input gradients.
//!
//! For class `c` and time step `t` the point-shortcut score is
//!
//! ```text
//! δ[c][t] = | (1 / n_c) · Σ_{i : y_i = c} G[i][t] |
//! ```
//!
//! i.e. the absolute value of the class-mean input gradient. The SAG score
//! `max_t δ[c][t] / Σ_t δ[c][t]` measures how much of a class's gradient
//! mass sits on a single time step, and a model is flagged when some class
//! scores strictly above the threshold `ε`.

use ndarray::Array2;
use thiserror::Error;

use crate::dataset::LabeledSeriesSet;
use crate::model::{input_gradients, ModelError, ResidualCNN1D};

/// Threshold used throughout the evaluation.
pub const DEFAULT_EPSILON: f64 = 0.15;

#[derive(Debug, Error)]
pub enum SagError {
    #[error("class {class} has no samples, its mean gradient is undefined")]
    EmptyClass { class: usize },
    #[error("non-finite gradient at sample {row}, t = {col}")]
    NonFinite { row: usize, col: usize },
    #[error("class {class} has an all-zero gradient profile; its SAG score is undefined")]
    UndefinedScore { class: usize },
    #[error("no scores to threshold")]
    EmptyScores,
    #[error("epsilon {0} must lie in (0, 1]")]
    Epsilon(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How per-sample gradients are aggregated into `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaVariant {
    /// `|mean_i G[i][t]|`, signs cancel before the absolute value.
    #[default]
    AbsOfMean,
    /// `mean_i |G[i][t]|`, for ablations.
    MeanOfAbs,
}

impl DeltaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DeltaVariant::AbsOfMean => "abs-of-mean",
            DeltaVariant::MeanOfAbs => "mean-of-abs",
        }
    }
}

impl std::str::FromStr for DeltaVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abs-of-mean" => Ok(Self::AbsOfMean),
            "mean-of-abs" => Ok(Self::MeanOfAbs),
            other => Err(format!("unknown delta variant {other:?} (abs-of-mean | mean-of-abs)")),
        }
    }
}

/// The `C × m` matrix of point-shortcut scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGradientProfile {
    delta: Array2<f64>,
    class_counts: Vec<usize>,
}

impl ClassGradientProfile {
    /// Wraps an existing `C × m` score matrix, checking its invariants.
    pub fn from_delta(delta: Array2<f64>, class_counts: Vec<usize>) -> Result<Self, SagError> {
        let (c, m) = delta.dim();
        if c < 2 || m < 2 {
            return Err(SagError::Dimension(format!(
                "profile must be at least 2 × 2, got {c} × {m}"
            )));
        }
        if class_counts.len() != c {
            return Err(SagError::Dimension(format!(
                "{} class counts for {c} classes",
                class_counts.len()
            )));
        }
        if let Some(((row, col), _)) = delta
            .indexed_iter()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(SagError::NonFinite { row, col });
        }
        Ok(Self {
            delta,
            class_counts,
        })
    }

    pub fn delta(&self) -> &Array2<f64> {
        &self.delta
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn classes(&self) -> usize {
        self.delta.nrows()
    }

    pub fn series_len(&self) -> usize {
        self.delta.ncols()
    }

    /// CSV with one row per time step: `t,delta_class0,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in 0..self.classes() {
            out.push_str(&format!(",delta_class{c}"));
        }
        out.push('\n');
        for t in 0..self.series_len() {
            out.push_str(&t.to_string());
            for c in 0..self.classes() {
                out.push_str(&format!(",{}", self.delta[[c, t]]));
            }
            out.push('\n');
        }
        out
    }
}

/// Aggregates an `n × m` input-gradient matrix into per-class scores.
pub fn point_shortcut_score(
    gradients: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    variant: DeltaVariant,
) -> Result<ClassGradientProfile, SagError> {
    let (n, m) = gradients.dim();
    if labels.len() != n {
        return Err(SagError::Dimension(format!("{} labels for {n} gradient rows", labels.len())));
    }
    if classes < 2 {
        return Err(SagError::Dimension(format!("need at least 2 classes, got {classes}")));
    }
    if let Some(((row, col), _)) = gradients.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(SagError::NonFinite { row, col });
    }
    let mut counts = vec![0usize; classes];
    let mut sums = Array2::<f64>::zeros((classes, m));
    for (row, &label) in gradients.rows().into_iter().zip(labels) {
        if label >= classes {
            return Err(SagError::Dimension(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        counts[label] += 1;
        let mut acc = sums.row_mut(label);
        for (a, &g) in acc.iter_mut().zip(row) {
            *a += match variant {
                DeltaVariant::AbsOfMean => g,
                DeltaVariant::MeanOfAbs => g.abs(),
            };
        }
    }
    if let Some(class) = counts.iter().position(|&k| k == 0) {
        return Err(SagError::EmptyClass { class });
    }
    for (mut row, &k) in sums.rows_mut().into_iter().zip(&counts) {
        row.mapv_inplace(|s| (s / k as f64).abs());
    }
    ClassGradientProfile::from_delta(sums, counts)
}

/// SAG score of one nonnegative profile row.
///
/// Computed as `1 / Σ_t (δ_t / max δ)`, which equals `max / sum` but keeps
/// the result inside `[1/m, 1]` exactly: the maximum contributes exactly 1
/// to the sum and every other term lies in `[0, 1]`.
pub fn sag_of_row(row: &[f64]) -> Option<f64> {
    let max = row.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let mass = row.iter().fold(0.0, |acc, &d| acc + d / max);
    Some(1.0 / mass)
}

/// Per-class SAG scores.
pub fn sag(profile: &ClassGradientProfile) -> Result<Vec<f64>, SagError> {
    profile
        .delta
        .rows()
        .into_iter()
        .enumerate()
        .map(|(class, row)| {
            let row = row.to_vec();
            sag_of_row(&row).ok_or(SagError::UndefinedScore { class })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SagReport {
    pub sag: Vec<f64>,
    pub epsilon: f64,
    /// `max_c SAG(c) > ε`.
    pub detected: bool,
    /// Highest-scoring class when detected, lowest index on ties.
    pub detected_class: Option<usize>,
    /// Every class scoring strictly above `ε`, ascending.
    pub flagged_classes: Vec<usize>,
}

impl SagReport {
    pub fn max_score(&self) -> f64 {
        self.sag.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_flagged(&self, class: usize) -> bool {
        self.flagged_classes.contains(&class)
    }
}

/// Accepts `ε ∈ (0, 1]`. `ε = 1` is the "never fires" extreme, since SAG
/// scores never exceed 1.
pub fn validate_epsilon(epsilon: f64) -> Result<(), SagError> {
    if epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(SagError::Epsilon(epsilon))
    }
}

/// Thresholds SAG scores with a strict `> ε`.
pub fn detect(scores: &[f64], epsilon: f64) -> Result<SagReport, SagError> {
    validate_epsilon(epsilon)?;
    if scores.is_empty() {
        return Err(SagError::EmptyScores);
    }
    if let Some(col) = scores.iter().position(|s| !s.is_finite()) {
        return Err(SagError::NonFinite { row: 0, col });
    }
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    let detected = scores[best] > epsilon;
    Ok(SagReport {
        sag: scores.to_vec(),
        epsilon,
        detected,
        detected_class: detected.then_some(best),
        flagged_classes: (0..scores.len()).filter(|&c| scores[c] > epsilon).collect(),
    })
}

/// Input gradients on `train_set` → δ profile → SAG → detection.
pub fn score_model(
    model: &ResidualCNN1D,
    train_set: &LabeledSeriesSet,
    epsilon: f64,
    variant: DeltaVariant,
) -> Result<(ClassGradientProfile, SagReport), SagError> {
    validate_epsilon(epsilon)?;
    let g = input_gradients(model, train_set)?;
    let profile = point_shortcut_score(&g, train_set.labels(), train_set.class_count(), variant)?;
    let scores = sag(&profile)?;
    let report = detect(&scores, epsilon)?;
    Ok((profile, report))
}

pub fn score_pipeline(
    model: &ResidualCNN1D,
    train_set: &LabeledSeriesSet,
    epsilon: f64,
) -> Result<SagReport, SagError> {
    score_model(model, train_set, epsilon, DeltaVariant::AbsOfMean).map(|(_, r)| r)
}
