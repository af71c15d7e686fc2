//! Point-shortcut injection into the training samples of one class.

use ndarray::Array2;
use thiserror::Error;

use crate::dataset::LabeledSeriesSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InjectError {
    #[error("shortcut span [{position}, {end}) exceeds series length {length}")]
    Bounds {
        position: usize,
        end: usize,
        length: usize,
    },
    #[error("target class {class} out of range for {classes} classes")]
    Class { class: usize, classes: usize },
    #[error("width must be at least 1")]
    Width,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("amplitude must be finite")]
    Amplitude,
}

/// Value written into the shortcut cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amplitude {
    Absolute(f64),
    /// `max(values) + k · std(values)` over the whole set before injection.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShortcutSpec {
    pub target_class: usize,
    pub position: usize,
    pub amplitude: Amplitude,
    pub width: usize,
}

impl Default for ShortcutSpec {
    fn default() -> Self {
        Self {
            target_class: 1,
            position: 0,
            amplitude: Amplitude::Relative(2.0),
            width: 1,
        }
    }
}

impl ShortcutSpec {
    pub fn validate_for(&self, set: &LabeledSeriesSet) -> Result<(), InjectError> {
        if self.width == 0 {
            return Err(InjectError::Width);
        }
        if self.target_class >= set.class_count() {
            return Err(InjectError::Class {
                class: self.target_class,
                classes: set.class_count(),
            });
        }
        let end = self.position.saturating_add(self.width);
        if end > set.series_len() {
            return Err(InjectError::Bounds {
                position: self.position,
                end,
                length: set.series_len(),
            });
        }
        match self.amplitude {
            Amplitude::Absolute(v) | Amplitude::Relative(v) if !v.is_finite() => {
                Err(InjectError::Amplitude)
            }
            _ => Ok(()),
        }
    }

    /// Resolves the amplitude against the (clean) set.
    pub fn resolve_value(&self, set: &LabeledSeriesSet) -> f64 {
        match self.amplitude {
            Amplitude::Absolute(v) => v,
            Amplitude::Relative(k) => {
                let values = set.values();
                let n = values.len() as f64;
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = values.iter().fold(0.0, |acc, &v| acc + v) / n;
                let var = values.iter().fold(0.0, |acc, &v| acc + (v - mean).powi(2)) / n;
                max + k * var.sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionReceipt {
    /// `n × m`, true exactly on the overwritten cells.
    pub mask: Array2<bool>,
    pub spec: ShortcutSpec,
    pub injected_value: f64,
}

/// Overwrites `[position, position + width)` of every target-class row with
/// the resolved amplitude. Every other cell is left bit-identical.
///
/// In relative mode the value depends on the set's global max, so injecting
/// twice is not idempotent; always inject into clean data.
pub fn inject(
    set: &LabeledSeriesSet,
    spec: &ShortcutSpec,
) -> Result<(LabeledSeriesSet, InjectionReceipt), InjectError> {
    spec.validate_for(set)?;
    let value = spec.resolve_value(set);
    let mut values = set.values().clone();
    let mut mask = Array2::from_elem(values.dim(), false);
    let span = spec.position..spec.position + spec.width;
    for (i, &label) in set.labels().iter().enumerate() {
        if label != spec.target_class {
            continue;
        }
        for t in span.clone() {
            values[[i, t]] = value;
            mask[[i, t]] = true;
        }
    }
    let injected = set
        .with_values(values)
        .map_err(|e| InjectError::Dimension(e.to_string()))?;
    Ok((
        injected,
        InjectionReceipt {
            mask,
            spec: *spec,
            injected_value: value,
        },
    ))
}

/// True iff `after` holds the injected value on every masked cell and is
/// bit-identical to `before` everywhere else.
pub fn verify_receipt(
    before: &LabeledSeriesSet,
    after: &LabeledSeriesSet,
    receipt: &InjectionReceipt,
) -> Result<bool, InjectError> {
    let dim = before.values().dim();
    if after.values().dim() != dim || receipt.mask.dim() != dim {
        return Err(InjectError::Dimension(format!(
            "before {:?}, after {:?}, mask {:?}",
            dim,
            after.values().dim(),
            receipt.mask.dim()
        )));
    }
    if before.labels() != after.labels() {
        return Ok(false);
    }
    let ok = ndarray::Zip::from(before.values())
        .and(after.values())
        .and(&receipt.mask)
        .all(|&b, &a, &masked| {
            if masked {
                a.to_bits() == receipt.injected_value.to_bits()
            } else {
                a.to_bits() == b.to_bits()
            }
        });
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, SyntheticSpec};
    use ndarray::array;

    fn small() -> LabeledSeriesSet {
        LabeledSeriesSet::new(
            "s",
            array![[0.5, 1.0, -1.0], [2.0, 0.0, 1.0], [0.0, 1.0, 1.0]],
            vec![0, 1, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn absolute_with_existing_value_is_a_no_op() {
        let set = LabeledSeriesSet::new("one", array![[0.7, 0.1], [0.3, 0.2]], vec![1, 0], 2).unwrap();
        let spec = ShortcutSpec {
            target_class: 1,
            position: 0,
            amplitude: Amplitude::Absolute(0.7),
            width: 1,
        };
        let (out, receipt) = inject(&set, &spec).unwrap();
        assert_eq!(out, set);
        assert_eq!(receipt.mask, array![[true, false], [false, false]]);
    }

    #[test]
    fn relative_amplitude_arithmetic() {
        // max 2.0; values {0,1,2,1} have mean 1 and population std sqrt(0.5)
        let set = LabeledSeriesSet::new("r", array![[0.0, 1.0], [2.0, 1.0]], vec![0, 1], 2).unwrap();
        let std = 0.5f64.sqrt();
        let spec = ShortcutSpec {
            amplitude: Amplitude::Relative(2.0),
            ..Default::default()
        };
        let (_, receipt) = inject(&set, &spec).unwrap();
        assert!((receipt.injected_value - (2.0 + 2.0 * std)).abs() < 1e-15);

        // max 2.0, std 0.5, k = 2 gives 3.0
        let set = LabeledSeriesSet::new(
            "r2",
            array![[1.0, 2.0, 1.0, 2.0], [1.0, 2.0, 1.0, 2.0]],
            vec![0, 1],
            2,
        )
        .unwrap();
        let (_, receipt) = inject(&set, &spec).unwrap();
        assert_eq!(receipt.injected_value, 3.0);
    }

    #[test]
    fn synthetic_diff_is_exactly_the_target_rows() {
        let split = make_synthetic(&SyntheticSpec {
            n_per_class: 5,
            length: 32,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let set = &split.train;
        let (out, receipt) = inject(set, &ShortcutSpec::default()).unwrap();
        let mut changed = 0;
        for i in 0..set.len() {
            for t in 0..set.series_len() {
                let differs = set.values()[[i, t]] != out.values()[[i, t]];
                if differs {
                    changed += 1;
                    assert_eq!(set.labels()[i], 1);
                    assert_eq!(t, 0);
                }
                assert_eq!(receipt.mask[[i, t]], set.labels()[i] == 1 && t == 0);
            }
        }
        assert_eq!(changed, set.labels().iter().filter(|&&l| l == 1).count());
        assert_eq!(out.labels(), set.labels());
    }

    #[test]
    fn receipt_round_trip_and_mutations() {
        let set = small();
        let (out, receipt) = inject(&set, &ShortcutSpec::default()).unwrap();
        assert!(verify_receipt(&set, &out, &receipt).unwrap());
        assert!(!verify_receipt(&set, &set, &receipt).unwrap());

        let mut tampered = out.values().clone();
        tampered[[0, 2]] += 1e-9;
        let tampered = out.with_values(tampered).unwrap();
        assert!(!verify_receipt(&set, &tampered, &receipt).unwrap());
    }

    #[test]
    fn receipt_shape_mismatch() {
        let set = small();
        let (_, receipt) = inject(&set, &ShortcutSpec::default()).unwrap();
        let other = LabeledSeriesSet::new("o", array![[0.0, 1.0], [1.0, 0.0]], vec![0, 1], 2).unwrap();
        assert!(matches!(
            verify_receipt(&other, &other, &receipt),
            Err(InjectError::Dimension(_))
        ));
    }

    #[test]
    fn absolute_mode_is_idempotent() {
        let set = small();
        let spec = ShortcutSpec {
            amplitude: Amplitude::Absolute(4.0),
            width: 2,
            ..Default::default()
        };
        let once = inject(&set, &spec).unwrap().0;
        let twice = inject(&once, &spec).unwrap().0;
        assert_eq!(once, twice);
    }

    #[test]
    fn rejects_bad_specs() {
        let set = small();
        let at = |position, width| ShortcutSpec {
            position,
            width,
            ..Default::default()
        };
        assert!(matches!(inject(&set, &at(3, 1)), Err(InjectError::Bounds { .. })));
        assert!(matches!(inject(&set, &at(2, 2)), Err(InjectError::Bounds { .. })));
        assert!(matches!(inject(&set, &at(0, 0)), Err(InjectError::Width)));
        let bad_class = ShortcutSpec {
            target_class: 2,
            ..Default::default()
        };
        assert!(matches!(inject(&set, &bad_class), Err(InjectError::Class { .. })));
    }
}
