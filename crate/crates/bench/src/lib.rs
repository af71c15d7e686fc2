//! Deterministic fixtures shared by the criterion benchmarks.

use sag_core::autodiff::Tensor;
use sag_core::experiment::inject_training_split;
use sag_core::{make_synthetic, DatasetSplit, ShortcutSpec, SyntheticSpec};

/// A tensor filled with a smooth, seed-dependent pattern.
pub fn patterned(shape: &[usize], seed: u64) -> Tensor {
    let len: usize = shape.iter().product();
    let phase = seed as f64 * 0.37;
    let data = (0..len).map(|i| (i as f64 * 0.113 + phase).sin() * 0.5).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// The default synthetic split with the point shortcut planted in its
/// training half.
pub fn shortcut_split(seed: u64) -> DatasetSplit {
    let clean = make_synthetic(&SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    })
    .expect("default spec is valid");
    inject_training_split(&clean, &ShortcutSpec::default())
        .expect("default shortcut fits the default split")
        .0
}
