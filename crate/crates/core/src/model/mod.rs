//! The residual CNN classifier, its Adam training loop, input gradients and
//! checkpoint format.

mod adam;
mod checkpoint;
mod network;
mod train;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use network::{
    init_model, series_tensor, Architecture, NamedTensor, ResidualCNN1D, DEFAULT_CHANNELS,
    KERNEL_SIZE,
};
pub use train::{
    evaluate, evaluate_accuracy, input_gradients, predict, train, EpochRecord, Evaluation,
    TrainConfig, TrainRecord,
};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{
    finite_difference_check_with, AutodiffError, BackwardFault, GradCheckConfig, GradCheckReport,
    Reduction,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Settings for checking the whole network against finite differences.
#[derive(Debug, Clone)]
pub struct ModelGradCheck {
    pub step: f64,
    /// Cap on probed coordinates per parameter tensor. Input coordinates
    /// are always probed exhaustively.
    pub max_param_coords: usize,
    pub fault: Option<BackwardFault>,
    pub seed: u64,
}

impl Default for ModelGradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_param_coords: 24,
            fault: None,
            seed: 0,
        }
    }
}

/// Checks input and parameter gradients of the mean cross-entropy of
/// `model` on `(x, labels)`.
pub fn model_gradcheck(
    model: &ResidualCNN1D,
    x: &Array2<f64>,
    labels: &[usize],
    cfg: &ModelGradCheck,
) -> Result<GradCheckReport, ModelError> {
    let base = GradCheckConfig {
        fault: cfg.fault,
        ..GradCheckConfig::new(cfg.step)
    };
    let input = series_tensor(x.view());

    let mut report = finite_difference_check_with(
        |tape, xn| {
            let (_, logits) = model.forward(tape, xn).map_err(into_autodiff)?;
            tape.softmax_cross_entropy(logits, labels, Reduction::Mean)
        },
        &input,
        &base,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (j, p) in model.parameters().iter().enumerate() {
        let len = p.tensor.len();
        let mut coords: Vec<usize> = if len <= cfg.max_param_coords {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, cfg.max_param_coords).into_vec()
        };
        coords.sort_unstable();
        let param_cfg = GradCheckConfig {
            coordinates: Some(coords),
            ..base.clone()
        };
        let sub = finite_difference_check_with(
            |tape, pn| {
                let xn = tape.leaf(input.clone());
                let params: Vec<_> = model
                    .parameters()
                    .iter()
                    .enumerate()
                    .map(|(k, q)| if k == j { pn } else { tape.leaf(q.tensor.clone()) })
                    .collect();
                let logits = model.forward_bound(tape, &params, xn).map_err(into_autodiff)?;
                tape.softmax_cross_entropy(logits, labels, Reduction::Mean)
            },
            &p.tensor,
            &param_cfg,
        )?;
        report.merge(&sub);
    }
    Ok(report)
}

fn into_autodiff(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(inner) => inner,
        other => AutodiffError::Contract(other.to_string()),
    }
}

/// Finite-difference check of the default architecture for one seed: random
/// weights, small random biases (so no pre-activation sits exactly on a ReLU
/// kink), and a random two-sample batch.
pub fn gradcheck_default_model(seed: u64, fault: Option<BackwardFault>) -> Result<GradCheckReport, ModelError> {
    const LENGTH: usize = 16;
    let mut model = init_model(&DEFAULT_CHANNELS, 2, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let bias_noise = Normal::new(0.0, 0.1).expect("valid");
    for p in model.parameters_mut() {
        if p.name.ends_with(".bias") {
            p.tensor
                .data_mut()
                .iter_mut()
                .for_each(|b| *b = bias_noise.sample(&mut rng));
        }
    }
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let x = Array2::from_shape_simple_fn((2, LENGTH), || unit.sample(&mut rng));
    let cfg = ModelGradCheck {
        fault,
        seed,
        ..Default::default()
    };
    model_gradcheck(&model, &x, &[0, 1], &cfg)
}
