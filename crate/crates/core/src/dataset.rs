//! Labeled univariate time-series datasets: UCR loading, z-normalization and
//! a seeded synthetic generator.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Rows whose population standard deviation falls below this are only
/// mean-centered by [`z_normalize`].
pub const CONSTANT_ROW_STD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("test label {label} never appears in the training file")]
    LabelMismatch { label: f64 },
    #[error("{path} contains no samples")]
    Empty { path: PathBuf },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// `n` series of common length `m`, each labeled with a class in `0..C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeriesSet {
    name: String,
    values: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledSeriesSet {
    pub fn new(
        name: impl Into<String>,
        values: Array2<f64>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DatasetError> {
        let (n, m) = values.dim();
        if n == 0 {
            return Err(DatasetError::Invalid("no samples".into()));
        }
        if m < 2 {
            return Err(DatasetError::Invalid(format!("series length {m} < 2")));
        }
        if labels.len() != n {
            return Err(DatasetError::Invalid(format!(
                "{} labels for {n} samples",
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(DatasetError::Invalid(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        let mut seen = vec![false; class_count];
        for &l in &labels {
            if l >= class_count {
                return Err(DatasetError::Invalid(format!(
                    "label {l} out of range for {class_count} classes"
                )));
            }
            seen[l] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(DatasetError::Invalid(format!("class {c} has no samples")));
        }
        if let Some(((i, t), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DatasetError::Invalid(format!(
                "non-finite value at sample {i}, t = {t}"
            )));
        }
        Ok(Self {
            name: name.into(),
            values,
            labels,
            class_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn series_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// Replaces the values, keeping labels and name. Used by transforms that
    /// preserve shape.
    pub(crate) fn with_values(&self, values: Array2<f64>) -> Result<Self, DatasetError> {
        if values.dim() != self.values.dim() {
            return Err(DatasetError::Invalid(format!(
                "shape {:?} does not match {:?}",
                values.dim(),
                self.values.dim()
            )));
        }
        Self::new(self.name.clone(), values, self.labels.clone(), self.class_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: LabeledSeriesSet,
    pub test: LabeledSeriesSet,
}

impl DatasetSplit {
    pub fn new(train: LabeledSeriesSet, test: LabeledSeriesSet) -> Result<Self, DatasetError> {
        if train.series_len() != test.series_len() {
            return Err(DatasetError::Invalid(format!(
                "train length {} != test length {}",
                train.series_len(),
                test.series_len()
            )));
        }
        if train.class_count() != test.class_count() {
            return Err(DatasetError::Invalid(format!(
                "train has {} classes, test has {}",
                train.class_count(),
                test.class_count()
            )));
        }
        Ok(Self { train, test })
    }

    pub fn map_both(
        &self,
        f: impl Fn(&LabeledSeriesSet) -> LabeledSeriesSet,
    ) -> Result<Self, DatasetError> {
        Self::new(f(&self.train), f(&self.test))
    }
}

struct RawTable {
    labels: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

fn read_raw_table(path: &Path) -> Result<RawTable, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |message: String| DatasetError::Format {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let mut fields = line
            .split(['\t', ' ', ','])
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| format_err(format!("not a number: {f:?}")))
            });
        let label = fields.next().expect("non-empty line has a field")?;
        let row = fields.collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(format_err(format!(
                    "expected {} values, found {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(format_err(format!("non-finite value {v}")));
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DatasetError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(RawTable { labels, rows })
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn table_to_set(
    name: &str,
    table: RawTable,
    raw_classes: &[f64],
) -> Result<LabeledSeriesSet, DatasetError> {
    let labels = table
        .labels
        .iter()
        .map(|&raw| {
            raw_classes
                .iter()
                .position(|&c| c == raw)
                .ok_or(DatasetError::LabelMismatch { label: raw })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (n, m) = (table.rows.len(), table.rows[0].len());
    let values = Array2::from_shape_vec((n, m), table.rows.into_iter().flatten().collect())
        .map_err(|e| DatasetError::Invalid(e.to_string()))?;
    LabeledSeriesSet::new(name, values, labels, raw_classes.len())
}

/// Loads `<prefix>_TRAIN.tsv` and `<prefix>_TEST.tsv`.
///
/// Raw labels are remapped to `0..C` in ascending order of the distinct
/// training labels, so `{1, 2}` becomes `{0, 1}` and `{-1, 1}` becomes
/// `{0, 1}`. Fields may be separated by tabs, spaces or commas.
pub fn load_ucr_tsv(prefix: impl AsRef<Path>) -> Result<DatasetSplit, DatasetError> {
    let prefix = prefix.as_ref();
    let name = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let train = read_raw_table(&suffixed(prefix, "_TRAIN.tsv"))?;
    let test = read_raw_table(&suffixed(prefix, "_TEST.tsv"))?;

    // Ascending total order over the distinct raw labels.
    let mut raw_classes: Vec<f64> = Vec::new();
    for &l in &train.labels {
        if !raw_classes.contains(&l) {
            raw_classes.push(l);
        }
    }
    raw_classes.sort_by(f64::total_cmp);

    let train = table_to_set(&name, train, &raw_classes)?;
    let test = table_to_set(&name, test, &raw_classes)?;
    DatasetSplit::new(train, test)
}

/// Per-row z-normalization with population standard deviation. Rows that
/// are (numerically) constant are only mean-centered.
pub fn z_normalize(set: &LabeledSeriesSet) -> LabeledSeriesSet {
    let mut values = set.values().clone();
    for mut row in values.rows_mut() {
        let m = row.len() as f64;
        let mean = row.iter().fold(0.0, |acc, &v| acc + v) / m;
        let var = row.iter().fold(0.0, |acc, &v| acc + (v - mean).powi(2)) / m;
        let std = var.sqrt();
        if std < CONSTANT_ROW_STD {
            row.mapv_inplace(|v| v - mean);
        } else {
            row.mapv_inplace(|v| (v - mean) / std);
        }
    }
    set.with_values(values)
        .expect("normalization keeps shape and finiteness")
}

/// Number of samples per class; entry `c` is `n_c`.
pub fn class_counts(set: &LabeledSeriesSet) -> Vec<usize> {
    let mut counts = vec![0; set.class_count()];
    for &l in set.labels() {
        counts[l] += 1;
    }
    counts
}

/// Generative family for [`make_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticFamily {
    /// Class 0 is a sine wave; class 1 adds a Gaussian bump centered in
    /// the series. Position 0 is uninformative.
    SineVsCenteredBump {
        /// Number of full sine periods across the series.
        periods: f64,
        bump_amplitude: f64,
        /// Standard deviation of the bump, as a fraction of the length.
        bump_width: f64,
        /// Per-sample sine phase is drawn uniformly from
        /// `[0, phase_jitter · 2π)`. Zero keeps every sample in phase.
        phase_jitter: f64,
        /// Standard deviation of a per-sample constant level offset.
        level_std: f64,
    },
}

impl Default for SyntheticFamily {
    fn default() -> Self {
        Self::SineVsCenteredBump {
            periods: 1.0,
            bump_amplitude: 2.0,
            bump_width: 0.05,
            phase_jitter: 1.0,
            level_std: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub length: usize,
    pub family: SyntheticFamily,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_class: 40,
            length: 64,
            family: SyntheticFamily::default(),
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_per_class < 4 {
            return Err(DatasetError::Invalid(format!(
                "n_per_class {} < 4",
                self.n_per_class
            )));
        }
        if self.length < 16 {
            return Err(DatasetError::Invalid(format!("length {} < 16", self.length)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DatasetError::Invalid(format!(
                "noise_std {} must be finite and >= 0",
                self.noise_std
            )));
        }
        Ok(())
    }

    fn template(&self, class: usize, phase: f64) -> Vec<f64> {
        let m = self.length as f64;
        let SyntheticFamily::SineVsCenteredBump {
            periods,
            bump_amplitude,
            bump_width,
            ..
        } = self.family;
        let center = (m - 1.0) / 2.0;
        let sigma = bump_width * m;
        (0..self.length)
            .map(|t| {
                let t = t as f64;
                let base = (2.0 * PI * periods * t / m + phase).sin();
                if class == 1 {
                    base + bump_amplitude * (-(t - center).powi(2) / (2.0 * sigma * sigma)).exp()
                } else {
                    base
                }
            })
            .collect()
    }
}

/// One ChaCha stream per (split, pair index). Sample `k` of every class
/// reads the same stream, so the classes differ only by their templates and
/// points where the templates agree carry no class signal in any draw.
fn sample_stream(seed: u64, split: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 48) | index);
    rng
}

fn synthetic_set(spec: &SyntheticSpec, split: u64, name: &str) -> LabeledSeriesSet {
    let n = 2 * spec.n_per_class;
    let m = spec.length;
    let SyntheticFamily::SineVsCenteredBump {
        phase_jitter,
        level_std,
        ..
    } = spec.family;
    // A noiseless spec switches off every per-sample draw, leaving the two
    // class templates.
    let noisy = spec.noise_std > 0.0;
    let noise = noisy.then(|| Normal::new(0.0, spec.noise_std).expect("validated noise_std"));
    let mut values = Array2::zeros((n, m));
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for k in 0..spec.n_per_class {
            let i = class * spec.n_per_class + k;
            let mut rng = sample_stream(spec.seed, split, k as u64);
            let (phase, level) = if noisy {
                (
                    2.0 * PI * phase_jitter * rng.random::<f64>(),
                    level_std * rng.sample::<f64, _>(rand_distr::StandardNormal),
                )
            } else {
                (0.0, 0.0)
            };
            let template = spec.template(class, phase);
            for (cell, base) in values.row_mut(i).iter_mut().zip(template) {
                let eps = noise.map_or(0.0, |d| d.sample(&mut rng));
                *cell = base + level + eps;
            }
            labels.push(class);
        }
    }
    LabeledSeriesSet::new(name, values, labels, 2).expect("synthetic set is valid by construction")
}

/// Deterministic two-class synthetic split. Class 0 is the base sine plus
/// noise, class 1 additionally carries a centered bump. Each sample gets its
/// own sine phase and level offset unless `noise_std` is zero.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit, DatasetError> {
    spec.validate()?;
    let name = format!("synthetic_{}", spec.seed);
    DatasetSplit::new(synthetic_set(spec, 0, &name), synthetic_set(spec, 1, &name))
}
