#[path = "support/cl_oracle.rs"]
mod cl_oracle;

use bicrank_core::denoise::{
    compute_thresholds, confident_joint, denoise_from_probs, estimate_joint, cell_count, ProbMatrix, ThresholdMode,
};
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn matches_brute_force_on_random_instances() {
    let checked = cl_oracle::check_equivalence(500, 2024).unwrap();
    assert_eq!(checked, 1000);
}

#[test]
fn planted_flips_are_recovered() {
    let out = cl_oracle::planted_noise(11);
    assert!(out.matches_oracle);
    assert!(out.f1 >= 0.7, "f1 {} (p {}, r {})", out.f1, out.precision, out.recall);
}

fn instance() -> impl Strategy<Value = (Array2<f64>, Vec<usize>, usize)> {
    (2usize..=4, 4usize..=60).prop_flat_map(|(m, n)| {
        (
            proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, m), n),
            proptest::collection::vec(0..m, n - m),
        )
            .prop_map(move |(rows, rest)| {
                let mut labels: Vec<usize> = (0..m).collect();
                labels.extend(rest);
                let mut p = Array2::zeros((n, m));
                for (i, r) in rows.iter().enumerate() {
                    let s: f64 = r.iter().sum();
                    for j in 0..m {
                        p[[i, j]] = r[j] / s;
                    }
                }
                (p, labels, m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn count_and_joint_invariants((p, labels, m) in instance()) {
        let pm = ProbMatrix::new(p).unwrap();
        let out = denoise_from_probs(pm, &labels, ThresholdMode::ClassConditional);
        let Ok(out) = out else { return Ok(()) };
        for i in 0..m {
            let size = labels.iter().filter(|&&y| y == i).count();
            prop_assert!(out.counts.0.row(i).sum() <= size);
        }
        prop_assert!((out.joint.0.sum() - 1.0).abs() < 1e-9);
        prop_assert!(out.thresholds.0.iter().all(|t| (0.0..=1.0).contains(t)));
        let n = labels.len();
        let bound: usize = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| cell_count(n, out.joint.0[[i, j]]))
            .sum();
        prop_assert!(out.report.removed().len() <= bound);
        prop_assert_eq!(out.report.removed().len() + out.report.kept().len(), n);
    }

    #[test]
    fn duplication_keeps_thresholds_and_joint((p, labels, _m) in instance()) {
        let pm = ProbMatrix::new(p.clone()).unwrap();
        let doubled = ndarray::concatenate(ndarray::Axis(0), &[p.view(), p.view()]).unwrap();
        let pm2 = ProbMatrix::new(doubled).unwrap();
        let labels2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let t1 = compute_thresholds(&pm, &labels, ThresholdMode::ClassConditional).unwrap();
        let t2 = compute_thresholds(&pm2, &labels2, ThresholdMode::ClassConditional).unwrap();
        for (a, b) in t1.0.iter().zip(&t2.0) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let c1 = confident_joint(&pm, &labels, &t1).unwrap();
        let c2 = confident_joint(&pm2, &labels2, &t2).unwrap();
        if let (Ok(q1), Ok(q2)) = (estimate_joint(&c1, &labels), estimate_joint(&c2, &labels2)) {
            for (a, b) in q1.0.iter().zip(q2.0.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn duplication_keeps_removed_fraction_when_cells_are_integral() {
    // Q = all 0.25 on n = 4: every off-diagonal cell count is exactly 1.
    let p = ndarray::array![[0.2, 0.8], [0.9, 0.1], [0.1, 0.9], [0.8, 0.2]];
    let labels = [0, 0, 1, 1];
    let one = denoise_from_probs(ProbMatrix::new(p.clone()).unwrap(), &labels, ThresholdMode::ClassConditional).unwrap();
    let doubled = ndarray::concatenate(ndarray::Axis(0), &[p.view(), p.view()]).unwrap();
    let labels2 = [0, 0, 1, 1, 0, 0, 1, 1];
    let two = denoise_from_probs(ProbMatrix::new(doubled).unwrap(), &labels2, ThresholdMode::ClassConditional).unwrap();
    assert_eq!(one.report.removed().len() * 2, two.report.removed().len());
    assert_eq!(two.report.removed().into_iter().collect::<Vec<_>>(), [0, 3, 4, 7]);
}
