//! Class- and dataset-level detection accuracy over many scored models.
//!
//! Correctness conventions:
//!
//! * Regular regime: class `c` is correct when `SAG(c) ≤ ε`; a dataset is
//!   correct when nothing was detected.
//! * Shortcut regime: the shortcut class is correct when it scores `> ε`,
//!   every other class when it scores `≤ ε`; a dataset is correct when a
//!   shortcut was detected and the shortcut class is among the classes
//!   reported above `ε`.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sag::{detect, SagError, SagReport};

/// The reference per-class score table, `dataset,reg_c0,reg_c1,sc_c0,sc_c1`.
pub const SCORE_TABLE_CSV: &str = include_str!("../data/reference_scores.csv");

/// SHA-256 of [`SCORE_TABLE_CSV`].
pub const SCORE_TABLE_SHA256: &str = "a126666878b619cbf4051797c38bb76a0529d75c47b316e97039b9512a1681e8";

/// Shortcut class used when injecting into the reference table's datasets.
pub const SCORE_TABLE_SHORTCUT_CLASS: usize = 1;

/// Reference summary of the shipped table at `ε = 0.15`, in
/// [`MetricSummary::headline`] order, to three decimals.
pub const REFERENCE_HEADLINE: [f64; 6] = [1.000, 1.000, 0.833, 0.792, 1.000, 0.792];

/// Whether `summary` reproduces [`REFERENCE_HEADLINE`] at the reference
/// precision.
pub fn matches_reference_headline(summary: &MetricSummary) -> bool {
    let got = summary.headline();
    got.len() == REFERENCE_HEADLINE.len()
        && got
            .iter()
            .zip(REFERENCE_HEADLINE)
            .all(|(g, want)| format!("{g:.3}") == format!("{want:.3}"))
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no outcomes to evaluate")]
    Empty,
    #[error("outcome {index} ({dataset}) belongs to the {found} regime, expected {expected}")]
    MixedRegimes {
        index: usize,
        dataset: String,
        found: Regime,
        expected: Regime,
    },
    #[error("class {class} out of range for outcome {dataset} with {classes} classes")]
    Class {
        class: usize,
        dataset: String,
        classes: usize,
    },
    #[error("{0}")]
    Outcome(String),
    #[error("score table row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error(transparent)]
    Sag(#[from] SagError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Regular,
    Shortcut,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Regular, Regime::Shortcut];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Regular => "regular",
            Regime::Shortcut => "shortcut",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regular" | "clean" => Ok(Regime::Regular),
            "shortcut" => Ok(Regime::Shortcut),
            other => Err(format!("unknown regime {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub dataset_name: String,
    pub regime: Regime,
    pub true_shortcut_class: Option<usize>,
    pub report: SagReport,
}

impl DetectionOutcome {
    pub fn new(
        dataset_name: impl Into<String>,
        regime: Regime,
        true_shortcut_class: Option<usize>,
        report: SagReport,
    ) -> Result<Self, EvalError> {
        let dataset_name = dataset_name.into();
        match (regime, true_shortcut_class) {
            (Regime::Regular, Some(_)) => {
                return Err(EvalError::Outcome(format!(
                    "{dataset_name}: regular outcome cannot carry a shortcut class"
                )))
            }
            (Regime::Shortcut, None) => {
                return Err(EvalError::Outcome(format!(
                    "{dataset_name}: shortcut outcome needs its shortcut class"
                )))
            }
            (Regime::Shortcut, Some(c)) if c >= report.sag.len() => {
                return Err(EvalError::Class {
                    class: c,
                    dataset: dataset_name,
                    classes: report.sag.len(),
                })
            }
            _ => {}
        }
        Ok(Self {
            dataset_name,
            regime,
            true_shortcut_class,
            report,
        })
    }

    pub fn class_correct(&self, class: usize) -> bool {
        let above = self.report.sag[class] > self.report.epsilon;
        match self.true_shortcut_class {
            Some(sc) if sc == class => above,
            _ => !above,
        }
    }

    pub fn dataset_correct(&self) -> bool {
        match self.true_shortcut_class {
            None => !self.report.detected,
            Some(sc) => self.report.detected && self.report.is_flagged(sc),
        }
    }
}

fn check_regime(outcomes: &[DetectionOutcome], regime: Regime) -> Result<(), EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::Empty);
    }
    for (index, o) in outcomes.iter().enumerate() {
        if o.regime != regime {
            return Err(EvalError::MixedRegimes {
                index,
                dataset: o.dataset_name.clone(),
                found: o.regime,
                expected: regime,
            });
        }
    }
    Ok(())
}

fn class_correct_count(outcomes: &[DetectionOutcome], regime: Regime, class: usize) -> Result<usize, EvalError> {
    check_regime(outcomes, regime)?;
    let mut correct = 0;
    for o in outcomes {
        if class >= o.report.sag.len() {
            return Err(EvalError::Class {
                class,
                dataset: o.dataset_name.clone(),
                classes: o.report.sag.len(),
            });
        }
        correct += usize::from(o.class_correct(class));
    }
    Ok(correct)
}

fn dataset_correct_count(outcomes: &[DetectionOutcome], regime: Regime) -> Result<usize, EvalError> {
    check_regime(outcomes, regime)?;
    Ok(outcomes.iter().filter(|o| o.dataset_correct()).count())
}

/// Fraction of datasets on which `class` was judged correctly.
pub fn class_detection_accuracy(
    outcomes: &[DetectionOutcome],
    regime: Regime,
    class: usize,
) -> Result<f64, EvalError> {
    Ok(class_correct_count(outcomes, regime, class)? as f64 / outcomes.len() as f64)
}

/// Fraction of datasets whose shortcut status was judged correctly.
pub fn dataset_detection_accuracy(outcomes: &[DetectionOutcome], regime: Regime) -> Result<f64, EvalError> {
    Ok(dataset_correct_count(outcomes, regime)? as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeMetrics {
    pub regime: Regime,
    pub n_datasets: usize,
    pub class_correct: Vec<usize>,
    pub class_accuracy: Vec<f64>,
    pub dataset_correct: usize,
    pub dataset_accuracy: f64,
}

impl RegimeMetrics {
    pub fn compute(outcomes: &[DetectionOutcome], regime: Regime) -> Result<Self, EvalError> {
        check_regime(outcomes, regime)?;
        let classes = outcomes.iter().map(|o| o.report.sag.len()).min().unwrap_or(0);
        let n = outcomes.len();
        let class_correct = (0..classes)
            .map(|c| class_correct_count(outcomes, regime, c))
            .collect::<Result<Vec<_>, _>>()?;
        let dataset_correct = dataset_correct_count(outcomes, regime)?;
        Ok(Self {
            regime,
            n_datasets: n,
            class_accuracy: class_correct.iter().map(|&k| k as f64 / n as f64).collect(),
            class_correct,
            dataset_correct,
            dataset_accuracy: dataset_correct as f64 / n as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub regular: RegimeMetrics,
    pub shortcut: RegimeMetrics,
}

impl MetricSummary {
    pub fn compute(regular: &[DetectionOutcome], shortcut: &[DetectionOutcome]) -> Result<Self, EvalError> {
        Ok(Self {
            regular: RegimeMetrics::compute(regular, Regime::Regular)?,
            shortcut: RegimeMetrics::compute(shortcut, Regime::Shortcut)?,
        })
    }

    /// Regular class accuracies, shortcut class accuracies, then the two
    /// dataset accuracies.
    pub fn headline(&self) -> Vec<f64> {
        let mut v = self.regular.class_accuracy.clone();
        v.extend(&self.shortcut.class_accuracy);
        v.push(self.regular.dataset_accuracy);
        v.push(self.shortcut.dataset_accuracy);
        v
    }

    pub const CSV_HEADER: &'static str = "regime,metric,class,correct,n_datasets,accuracy";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for m in [&self.regular, &self.shortcut] {
            for (c, (&k, &acc)) in m.class_correct.iter().zip(&m.class_accuracy).enumerate() {
                out.push_str(&format!(
                    "{},class_detection,{c},{k},{},{acc:.3}\n",
                    m.regime, m.n_datasets
                ));
            }
            out.push_str(&format!(
                "{},dataset_detection,,{},{},{:.3}\n",
                m.regime, m.dataset_correct, m.n_datasets, m.dataset_accuracy
            ));
        }
        out
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>10} {:>10}", "", "regular", "shortcut")?;
        let classes = self.regular.class_accuracy.len().max(self.shortcut.class_accuracy.len());
        let cell = |m: &RegimeMetrics, c: usize| {
            m.class_correct
                .get(c)
                .map(|k| format!("{k}/{}", m.n_datasets))
                .unwrap_or_default()
        };
        let acc = |m: &RegimeMetrics, c: usize| {
            m.class_accuracy.get(c).map(|a| format!("{a:.3}")).unwrap_or_default()
        };
        for c in 0..classes {
            writeln!(
                f,
                "{:<28} {:>10} {:>10}",
                format!("correct class {c}"),
                cell(&self.regular, c),
                cell(&self.shortcut, c)
            )?;
        }
        for c in 0..classes {
            writeln!(
                f,
                "{:<28} {:>10} {:>10}",
                format!("class {c} detection accuracy"),
                acc(&self.regular, c),
                acc(&self.shortcut, c)
            )?;
        }
        writeln!(
            f,
            "{:<28} {:>10.3} {:>10.3}",
            "dataset detection accuracy", self.regular.dataset_accuracy, self.shortcut.dataset_accuracy
        )
    }
}

/// One row of the per-class score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub dataset: String,
    pub regular: [f64; 2],
    pub shortcut: [f64; 2],
}

/// Parses `dataset,reg_c0,reg_c1,sc_c0,sc_c1` with a header line. Row
/// numbers in errors are 1-based data rows.
pub fn parse_score_table(text: &str) -> Result<Vec<ScoreRow>, EvalError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(EvalError::Parse {
        row: 0,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["dataset", "reg_c0", "reg_c1", "sc_c0", "sc_c1"] {
        return Err(EvalError::Parse {
            row: 0,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(EvalError::Parse {
                row,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| EvalError::Parse {
                    row,
                    message: format!("invalid score {s:?}"),
                })
        };
        rows.push(ScoreRow {
            dataset: fields[0].to_string(),
            regular: [num(fields[1])?, num(fields[2])?],
            shortcut: [num(fields[3])?, num(fields[4])?],
        });
    }
    if rows.is_empty() {
        return Err(EvalError::Parse {
            row: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Rebuilds outcomes from a score table (shortcut class 1 in the shortcut
/// regime) and computes every summary metric.
pub fn replay_score_table(table_csv: &str, epsilon: f64) -> Result<MetricSummary, EvalError> {
    let rows = parse_score_table(table_csv)?;
    let mut regular = Vec::with_capacity(rows.len());
    let mut shortcut = Vec::with_capacity(rows.len());
    for row in &rows {
        regular.push(DetectionOutcome::new(
            &row.dataset,
            Regime::Regular,
            None,
            detect(&row.regular, epsilon)?,
        )?);
        shortcut.push(DetectionOutcome::new(
            &row.dataset,
            Regime::Shortcut,
            Some(SCORE_TABLE_SHORTCUT_CLASS),
            detect(&row.shortcut, epsilon)?,
        )?);
    }
    MetricSummary::compute(&regular, &shortcut)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Header of the per-run detection CSV.
pub fn sag_report_csv_header(classes: usize) -> String {
    let mut h = String::from("dataset,regime");
    for c in 0..classes {
        h.push_str(&format!(",sag_class{c}"));
    }
    h.push_str(",epsilon,detected,detected_class");
    h
}

/// `dataset,regime,sag_class0,...,epsilon,detected,detected_class`, where
/// `detected` is `1`/`0` and `detected_class` is empty when nothing fired.
pub fn sag_report_csv_row(dataset: &str, regime: Regime, report: &SagReport) -> String {
    let mut row = format!("{dataset},{regime}");
    for s in &report.sag {
        row.push_str(&format!(",{s}"));
    }
    row.push_str(&format!(
        ",{},{},{}",
        report.epsilon,
        u8::from(report.detected),
        report.detected_class.map(|c| c.to_string()).unwrap_or_default()
    ));
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(regime: Regime, truth: Option<usize>, scores: &[f64]) -> DetectionOutcome {
        DetectionOutcome::new("d", regime, truth, detect(scores, 0.15).unwrap()).unwrap()
    }

    #[test]
    fn fixture_checksum() {
        assert_eq!(sha256_hex(SCORE_TABLE_CSV.as_bytes()), SCORE_TABLE_SHA256);
    }

    #[test]
    fn shipped_table_replays_exactly() {
        let s = replay_score_table(SCORE_TABLE_CSV, 0.15).unwrap();
        assert_eq!(s.regular.class_correct, vec![24, 24]);
        assert_eq!(s.shortcut.class_correct, vec![20, 19]);
        assert_eq!(s.regular.dataset_correct, 24);
        assert_eq!(s.shortcut.dataset_correct, 19);
        let rounded: Vec<String> = s.headline().iter().map(|v| format!("{v:.3}")).collect();
        assert_eq!(rounded, ["1.000", "1.000", "0.833", "0.792", "1.000", "0.792"]);
        assert!(matches_reference_headline(&s));
        assert!(!matches_reference_headline(&replay_score_table(SCORE_TABLE_CSV, 0.5).unwrap()));
    }

    #[test]
    fn all_zero_table() {
        let mut csv = String::from("dataset,reg_c0,reg_c1,sc_c0,sc_c1\n");
        for i in 0..24 {
            csv.push_str(&format!("d{i},0,0,0,0\n"));
        }
        let s = replay_score_table(&csv, 0.15).unwrap();
        assert_eq!(s.regular.class_accuracy, vec![1.0, 1.0]);
        assert_eq!(s.regular.dataset_accuracy, 1.0);
        // Class 0 is never the shortcut class, so staying quiet is correct.
        assert_eq!(s.shortcut.class_accuracy, vec![1.0, 0.0]);
        assert_eq!(s.shortcut.dataset_accuracy, 0.0);
    }

    #[test]
    fn epsilon_one_never_fires() {
        let s = replay_score_table(SCORE_TABLE_CSV, 1.0).unwrap();
        assert_eq!(s.regular.dataset_accuracy, 1.0);
        assert_eq!(s.shortcut.dataset_accuracy, 0.0);
    }

    #[test]
    fn wrong_class_detection_is_not_a_dataset_hit() {
        let o = [outcome(Regime::Shortcut, Some(1), &[0.4, 0.05])];
        assert_eq!(dataset_detection_accuracy(&o, Regime::Shortcut).unwrap(), 0.0);
        assert_eq!(class_detection_accuracy(&o, Regime::Shortcut, 1).unwrap(), 0.0);
        assert_eq!(class_detection_accuracy(&o, Regime::Shortcut, 0).unwrap(), 0.0);
    }

    #[test]
    fn mixed_regimes_rejected() {
        let o = [
            outcome(Regime::Regular, None, &[0.1, 0.1]),
            outcome(Regime::Shortcut, Some(1), &[0.1, 0.3]),
        ];
        assert!(matches!(
            dataset_detection_accuracy(&o, Regime::Regular),
            Err(EvalError::MixedRegimes { index: 1, .. })
        ));
        assert!(matches!(
            class_detection_accuracy(&o, Regime::Shortcut, 0),
            Err(EvalError::MixedRegimes { index: 0, .. })
        ));
        assert!(matches!(dataset_detection_accuracy(&[], Regime::Regular), Err(EvalError::Empty)));
    }

    #[test]
    fn outcome_invariants() {
        let r = detect(&[0.1, 0.2], 0.15).unwrap();
        assert!(DetectionOutcome::new("x", Regime::Regular, Some(1), r.clone()).is_err());
        assert!(DetectionOutcome::new("x", Regime::Shortcut, None, r.clone()).is_err());
        assert!(DetectionOutcome::new("x", Regime::Shortcut, Some(2), r).is_err());
    }

    #[test]
    fn malformed_table_reports_row() {
        let bad = "dataset,reg_c0,reg_c1,sc_c0,sc_c1\na,0.1,0.1,0.1,0.1\nb,0.1,zz,0.1,0.1\n";
        assert!(matches!(parse_score_table(bad), Err(EvalError::Parse { row: 2, .. })));
        let short = "dataset,reg_c0,reg_c1,sc_c0,sc_c1\na,0.1,0.1\n";
        assert!(matches!(parse_score_table(short), Err(EvalError::Parse { row: 1, .. })));
        assert!(matches!(parse_score_table("x,y\n"), Err(EvalError::Parse { row: 0, .. })));
    }

    #[test]
    fn report_csv_row() {
        let r = detect(&[0.0469, 0.2176], 0.15).unwrap();
        assert_eq!(sag_report_csv_header(2), "dataset,regime,sag_class0,sag_class1,epsilon,detected,detected_class");
        assert_eq!(sag_report_csv_row("GunPoint", Regime::Shortcut, &r), "GunPoint,shortcut,0.0469,0.2176,0.15,1,1");
        let r = detect(&[0.0350, 0.0356], 0.15).unwrap();
        assert_eq!(sag_report_csv_row("GunPoint", Regime::Regular, &r), "GunPoint,regular,0.035,0.0356,0.15,0,");
    }

    #[test]
    fn summary_csv_and_display() {
        let s = replay_score_table(SCORE_TABLE_CSV, 0.15).unwrap();
        let csv = s.to_csv();
        assert!(csv.contains("shortcut,class_detection,1,19,24,0.792\n"));
        assert!(csv.contains("shortcut,dataset_detection,,19,24,0.792\n"));
        let text = s.to_string();
        assert!(text.contains("0.833"));
    }
}
