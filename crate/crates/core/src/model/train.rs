use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::network::{series_tensor, ResidualCNN1D};
use super::ModelError;
use crate::autodiff::{AutodiffError, Reduction, Tape, Tensor};
use crate::dataset::{DatasetSplit, LabeledSeriesSet};

/// Samples per forward pass when evaluating or computing input gradients.
const EVAL_CHUNK: usize = 64;

/// ChaCha stream used for minibatch shuffling.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` means `min(16, n_train)`.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 100,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(ModelError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_batch_size(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(16.min(n)).min(n).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Per-epoch loss and accuracy curves, measured after each epoch's updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,test_loss,train_acc,test_acc";

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.test_loss, e.train_accuracy, e.test_accuracy
            ));
        }
        out
    }
}

/// Mean cross-entropy and accuracy over a whole set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

fn check_classes(model: &ResidualCNN1D, set: &LabeledSeriesSet) -> Result<(), ModelError> {
    if model.classes() != set.class_count() {
        return Err(ModelError::Dimension(format!(
            "model has {} classes, data has {}",
            model.classes(),
            set.class_count()
        )));
    }
    Ok(())
}

fn argmax_low_tie(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(EVAL_CHUNK).map(move |lo| (lo, (lo + EVAL_CHUNK).min(n)))
}

pub fn evaluate(model: &ResidualCNN1D, set: &LabeledSeriesSet) -> Result<Evaluation, ModelError> {
    check_classes(model, set)?;
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for (lo, hi) in chunks(set.len()) {
        let mut tape = Tape::new();
        let x = tape.leaf(series_tensor(set.values().slice(s![lo..hi, ..])));
        let (_, logits) = model.forward(&mut tape, x)?;
        let labels = &set.labels()[lo..hi];
        let loss = tape.softmax_cross_entropy(logits, labels, Reduction::Sum)?;
        total_loss += tape.value(loss).data()[0];
        let z = tape.value(logits);
        correct += z
            .data()
            .chunks_exact(model.classes())
            .zip(labels)
            .filter(|(row, &l)| argmax_low_tie(row) == l)
            .count();
    }
    let n = set.len() as f64;
    Ok(Evaluation {
        loss: total_loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Argmax of the logits, ties going to the lower class id.
pub fn predict(model: &ResidualCNN1D, set: &LabeledSeriesSet) -> Result<Vec<usize>, ModelError> {
    check_classes(model, set)?;
    let mut out = Vec::with_capacity(set.len());
    for (lo, hi) in chunks(set.len()) {
        let z = model.logits(set.values().slice(s![lo..hi, ..]))?;
        out.extend(z.rows().into_iter().map(|r| argmax_low_tie(r.as_slice().expect("standard layout"))));
    }
    Ok(out)
}

pub fn evaluate_accuracy(model: &ResidualCNN1D, set: &LabeledSeriesSet) -> Result<f64, ModelError> {
    let predictions = predict(model, set)?;
    let correct = predictions
        .iter()
        .zip(set.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Trains with Adam on shuffled minibatches and returns the final-epoch
/// model together with its loss and accuracy curves.
///
/// Deterministic for a fixed model, data and config.
pub fn train(
    model: &ResidualCNN1D,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(ResidualCNN1D, TrainRecord), ModelError> {
    cfg.validate()?;
    check_classes(model, &split.train)?;
    let train_set = &split.train;
    let n = train_set.len();
    let batch = cfg.effective_batch_size(n);
    let mut model = model.clone();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut record = TrainRecord::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            let xb = Array2::from_shape_fn((idx.len(), train_set.series_len()), |(r, t)| {
                train_set.values()[[idx[r], t]]
            });
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels()[i]).collect();
            let grads = {
                let mut tape = Tape::new();
                let x = tape.leaf(series_tensor(xb.view()));
                let (params, logits) = model.forward(&mut tape, x)?;
                let loss = tape.softmax_cross_entropy(logits, &labels, Reduction::Mean)?;
                let g = match tape.backward(loss) {
                    Ok(g) => g,
                    Err(AutodiffError::NonFinite { .. }) => {
                        return Err(ModelError::Divergence { epoch })
                    }
                    Err(e) => return Err(e.into()),
                };
                params
                    .iter()
                    .zip(model.parameters())
                    .map(|(&node, p)| g.get_or_zeros(node, p.tensor.shape()))
                    .collect::<Vec<Tensor>>()
            };
            adam.step(model.parameters_mut().iter_mut().map(|p| &mut p.tensor), &grads);
        }

        let tr = evaluate(&model, train_set)?;
        let te = evaluate(&model, &split.test)?;
        if !tr.loss.is_finite() || !te.loss.is_finite() {
            return Err(ModelError::Divergence { epoch });
        }
        record.epochs.push(EpochRecord {
            epoch,
            train_loss: tr.loss,
            test_loss: te.loss,
            train_accuracy: tr.accuracy,
            test_accuracy: te.accuracy,
        });
    }
    Ok((model, record))
}

/// `G[i][t] = ∂ CE(f(x_i), y_i) / ∂ x_{i,t}` for every sample, using the
/// per-sample loss against the true label. The model is not modified.
pub fn input_gradients(model: &ResidualCNN1D, set: &LabeledSeriesSet) -> Result<Array2<f64>, ModelError> {
    check_classes(model, set)?;
    let (n, m) = set.values().dim();
    let mut out = Array2::zeros((n, m));
    for (lo, hi) in chunks(n) {
        let mut tape = Tape::new();
        let x = tape.leaf(series_tensor(set.values().slice(s![lo..hi, ..])));
        let (_, logits) = model.forward(&mut tape, x)?;
        // Summing per-sample losses leaves each sample's input gradient equal
        // to the gradient of its own loss, since samples do not interact.
        let loss = tape.softmax_cross_entropy(logits, &set.labels()[lo..hi], Reduction::Sum)?;
        let grads = tape.backward(loss)?;
        let g = grads.get_or_zeros(x, &[hi - lo, 1, m]);
        out.slice_mut(s![lo..hi, ..])
            .iter_mut()
            .zip(g.data())
            .for_each(|(o, &v)| *o = v);
    }
    Ok(out)
}
