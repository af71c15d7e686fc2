//! Point-shortcut detection for time-series classifiers.
//!
//! The pipeline: load or synthesize a labeled dataset, plant a single-point
//! shortcut into one class of the training split, train a small residual
//! CNN on clean and injected data, and decide from the aggregated input
//! gradients alone whether (and in which class) the trained model latched
//! onto a shortcut.

pub mod autodiff;
pub mod dataset;
pub mod evaluation;
pub mod experiment;
pub mod injector;
pub mod model;
pub mod report;
pub mod sag;

pub use dataset::{
    class_counts, load_ucr_tsv, make_synthetic, z_normalize, DatasetError, DatasetSplit,
    LabeledSeriesSet, SyntheticFamily, SyntheticSpec,
};
pub use evaluation::{
    class_detection_accuracy, dataset_detection_accuracy, replay_score_table, DetectionOutcome,
    EvalError, MetricSummary, Regime,
};
pub use injector::{inject, verify_receipt, Amplitude, InjectError, InjectionReceipt, ShortcutSpec};
pub use model::{
    init_model, input_gradients, predict, train, ModelError, ResidualCNN1D, TrainConfig,
    TrainRecord,
};
pub use sag::{
    detect, point_shortcut_score, sag, score_pipeline, ClassGradientProfile, DeltaVariant,
    SagError, SagReport, DEFAULT_EPSILON,
};
