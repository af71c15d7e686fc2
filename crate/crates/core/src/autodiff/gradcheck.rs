//! Central finite-difference validation of tape gradients.

use super::tape::{BackwardFault, NodeId, Tape};
use super::tensor::Tensor;
use super::AutodiffError;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is essentially zero are judged on absolute error instead.
pub const DEFAULT_REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_floor: f64,
    /// Flat coordinates to probe; `None` probes every coordinate.
    pub coordinates: Option<Vec<usize>>,
    pub fault: Option<BackwardFault>,
}

impl GradCheckConfig {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            rel_floor: DEFAULT_REL_FLOOR,
            coordinates: None,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    /// Coordinates whose perturbation flips a ReLU, where the one-sided
    /// derivatives disagree and central differences are meaningless.
    pub excluded: Vec<usize>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Folds another report in, e.g. when checking several tensors of one
    /// model. Coordinates of `other` are not re-indexed.
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_coordinate = other.worst_coordinate;
        }
        self.checked += other.checked;
        self.excluded.extend_from_slice(&other.excluded);
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_coordinate: None,
            checked: 0,
            excluded: Vec::new(),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId, AutodiffError>,
{
    finite_difference_check_with(f, x, &GradCheckConfig::new(step))
}

pub fn finite_difference_check_with<F>(
    f: F,
    x: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId, AutodiffError>,
{
    let mut tape = match cfg.fault {
        Some(fault) => Tape::with_fault(fault),
        None => Tape::new(),
    };
    let input = tape.leaf(x.clone());
    let loss = f(&mut tape, input)?;
    let analytic = tape.backward(loss)?.get_or_zeros(input, x.shape());
    let base_pattern = tape.relu_pattern();

    let evaluate = |probe: Tensor| -> Result<(f64, Vec<bool>), AutodiffError> {
        let mut tape = Tape::new();
        let node = tape.leaf(probe);
        let loss = f(&mut tape, node)?;
        Ok((tape.value(loss).data()[0], tape.relu_pattern()))
    };

    let all: Vec<usize>;
    let coords: &[usize] = match &cfg.coordinates {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };

    let mut report = GradCheckReport::default();
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += cfg.step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= cfg.step;
        let (f_plus, p_plus) = evaluate(plus)?;
        let (f_minus, p_minus) = evaluate(minus)?;
        if p_plus != base_pattern || p_minus != base_pattern {
            report.excluded.push(i);
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * cfg.step);
        let err = relative_error(analytic.data()[i], numeric, cfg.rel_floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_coordinate.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_coordinate = Some(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::tape::Reduction;
    use super::*;

    #[test]
    fn half_squared_norm() {
        let x = Tensor::from_vec(vec![0.3, -1.7, 2.5, 0.0, 4.1]);
        let report = finite_difference_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                let s = tape.sum(sq);
                Ok(tape.scale(s, 0.5))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(report.checked, 5);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn dense_cross_entropy_on_length_eight_input() {
        let x = Tensor::new(
            vec![1, 8],
            vec![0.4, -0.9, 1.3, 0.05, -0.6, 0.8, -1.1, 0.25],
        )
        .unwrap();
        let w = Tensor::new(
            vec![2, 8],
            (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect(),
        )
        .unwrap();
        let report = finite_difference_check(
            |tape, x| {
                let w = tape.leaf(w.clone());
                let b = tape.leaf(Tensor::from_vec(vec![0.1, -0.2]));
                let z = tape.dense(x, w, b)?;
                tape.softmax_cross_entropy(z, &[1], Reduction::Mean)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(report.checked, 8);
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn relu_kink_is_excluded_not_failed() {
        // x[1] sits exactly on the kink; x[0] and x[2] are well away from it.
        let x = Tensor::from_vec(vec![1.5, 0.0, -2.0]);
        let report = finite_difference_check(
            |tape, x| {
                let r = tape.relu(x);
                let sq = tape.mul(r, r)?;
                Ok(tape.sum(sq))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(report.excluded, vec![1]);
        assert_eq!(report.checked, 2);
        assert!(report.passes(1e-8));
    }

    #[test]
    fn sabotaged_relu_is_caught() {
        let x = Tensor::from_vec(vec![1.5, -0.5, -2.0]);
        let mut cfg = GradCheckConfig::new(1e-4);
        cfg.fault = Some(BackwardFault::ReluPassThrough);
        let report = finite_difference_check_with(
            |tape, x| {
                let r = tape.relu(x);
                Ok(tape.sum(r))
            },
            &x,
            &cfg,
        )
        .unwrap();
        assert!(!report.passes(1e-4));
    }
}
