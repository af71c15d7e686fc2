use ndarray::Array2;
use proptest::prelude::*;
use sag_core::sag::sag_of_row;
use sag_core::{detect, point_shortcut_score, sag, ClassGradientProfile, DeltaVariant};

/// Straight double loop over samples, no shared code with the library.
fn naive_delta(g: &[Vec<f64>], labels: &[usize], classes: usize, m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m]; classes];
    for (c, row) in out.iter_mut().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        for (t, cell) in row.iter_mut().enumerate() {
            let mut total = 0.0;
            for &i in &members {
                total += g[i][t];
            }
            *cell = (total / members.len() as f64).abs();
        }
    }
    out
}

fn profile_row() -> impl Strategy<Value = Vec<f64>> {
    (2usize..40).prop_flat_map(|m| {
        prop::collection::vec(0.0f64..1e3, m)
            .prop_filter("needs a positive entry", |r| r.iter().any(|&v| v > 0.0))
    })
}

/// Gradient matrix plus labels that cover every class.
fn gradient_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, usize)> {
    (2usize..=3, 2usize..=8).prop_flat_map(|(classes, m)| {
        (classes..=16).prop_flat_map(move |n| {
            (
                prop::collection::vec(prop::collection::vec(-10.0f64..10.0, m), n),
                prop::collection::vec(0..classes, n - classes),
                Just(classes),
            )
                .prop_map(move |(g, extra, classes)| {
                    let mut labels: Vec<usize> = (0..classes).collect();
                    labels.extend(extra);
                    (g, labels, classes)
                })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn score_stays_in_range(row in profile_row()) {
        let m = row.len() as f64;
        let s = sag_of_row(&row).unwrap();
        prop_assert!(s >= 1.0 / m && s <= 1.0, "score {} outside [1/{}, 1]", s, m);
    }

    #[test]
    fn score_ignores_positive_scale(row in profile_row(), lambda in 1e-6f64..1e6) {
        let scaled: Vec<f64> = row.iter().map(|v| v * lambda).collect();
        let a = sag_of_row(&row).unwrap();
        let b = sag_of_row(&scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn score_ignores_time_order(row in profile_row(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = row.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = sag_of_row(&row).unwrap();
        let b = sag_of_row(&shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn uniform_profile_scores_one_over_m(m in 2usize..200, v in 1e-9f64..1e9) {
        prop_assert_eq!(sag_of_row(&vec![v; m]).unwrap(), 1.0 / m as f64);
    }

    #[test]
    fn raising_epsilon_never_creates_a_detection(
        scores in prop::collection::vec(0.0f64..=1.0, 2..5),
        lo in 0.001f64..1.0,
        hi in 0.001f64..1.0,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let at_lo = detect(&scores, lo).unwrap();
        let at_hi = detect(&scores, hi).unwrap();
        prop_assert!(!at_hi.detected || at_lo.detected);
        for c in &at_hi.flagged_classes {
            prop_assert!(at_lo.flagged_classes.contains(c));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn class_mean_matches_double_loop((g, labels, classes) in gradient_instance()) {
        let n = g.len();
        let m = g[0].len();
        let flat: Vec<f64> = g.iter().flatten().copied().collect();
        let matrix = Array2::from_shape_vec((n, m), flat).unwrap();
        let want = naive_delta(&g, &labels, classes, m);
        let got = point_shortcut_score(&matrix, &labels, classes, DeltaVariant::AbsOfMean).unwrap();
        for c in 0..classes {
            for t in 0..m {
                let (a, b) = (got.delta()[[c, t]], want[c][t]);
                prop_assert!((a - b).abs() <= 1e-12, "class {} t {}: {} vs {}", c, t, a, b);
            }
        }
    }

    #[test]
    fn per_class_scores_follow_the_rows(rows in prop::collection::vec(profile_row(), 2..4)) {
        let m = rows.iter().map(Vec::len).min().unwrap();
        let trimmed: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r[..m].to_vec())
            .filter(|r| r.iter().any(|&v| v > 0.0))
            .collect();
        prop_assume!(trimmed.len() >= 2);
        let c = trimmed.len();
        let flat: Vec<f64> = trimmed.iter().flatten().copied().collect();
        let profile = ClassGradientProfile::from_delta(Array2::from_shape_vec((c, m), flat).unwrap(), vec![1; c]).unwrap();
        let scores = sag(&profile).unwrap();
        for (row, s) in trimmed.iter().zip(scores) {
            let max = row.iter().copied().fold(0.0, f64::max);
            let sum: f64 = row.iter().sum();
            prop_assert!((s - max / sum).abs() <= 1e-12);
        }
    }
}
