//! Straight-line confident-learning reference, written without the library's
//! helpers, plus the randomized equivalence and planted-noise checks.

#![allow(dead_code)]

use std::collections::BTreeSet;

use bicrank_core::baseclf::ClassifierSpec;
use bicrank_core::denoise::{
    compute_thresholds, confident_joint, denoise, estimate_joint, select_noise, DenoiseConfig, ProbMatrix,
    ThresholdMode,
};
use bicrank_core::synth::noisy_blobs;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct OracleOut {
    pub t: Vec<f64>,
    pub c: Vec<Vec<usize>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub removed: BTreeSet<usize>,
}

pub fn oracle(p: &[Vec<f64>], labels: &[usize], m: usize, global: bool) -> OracleOut {
    let n = p.len();
    let mut t = vec![0.0; m];
    for j in 0..m {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if global || labels[i] == j {
                sum += p[i][j];
                count += 1;
            }
        }
        t[j] = sum / count as f64;
    }

    let mut c = vec![vec![0usize; m]; m];
    for i in 0..n {
        let mut best: Option<usize> = None;
        for j in 0..m {
            if p[i][j] >= t[j] {
                match best {
                    Some(b) if p[i][j] <= p[i][b] => {}
                    _ => best = Some(j),
                }
            }
        }
        if let Some(j) = best {
            c[labels[i]][j] += 1;
        }
    }

    let total_c: usize = c.iter().flatten().sum();
    if total_c == 0 {
        return OracleOut { t, c, q: None, removed: BTreeSet::new() };
    }
    let mut q = vec![vec![0.0; m]; m];
    for i in 0..m {
        let row: usize = c[i].iter().sum();
        let size = labels.iter().filter(|&&y| y == i).count() as f64;
        if row > 0 {
            for j in 0..m {
                q[i][j] = c[i][j] as f64 / row as f64 * size;
            }
        }
    }
    let z: f64 = q.iter().flatten().sum();
    for row in q.iter_mut() {
        for v in row.iter_mut() {
            *v /= z;
        }
    }

    let mut removed = BTreeSet::new();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let k = (n as f64 * q[i][j] + 1e-9).floor() as usize;
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&s| labels[s] == i)
                .map(|s| (p[s][j] - p[s][i], s))
                .collect();
            cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, s) in cand.iter().take(k) {
                removed.insert(s);
            }
        }
    }
    OracleOut { t, c, q: Some(q), removed }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
    let m = rng.random_range(2..=4);
    let n = rng.random_range(m..=200);
    let mut labels: Vec<usize> = (0..m).collect();
    labels.extend((m..n).map(|_| rng.random_range(0..m)));
    let style = rng.random_range(0..3);
    let p = (0..n)
        .map(|s| {
            let raw: Vec<f64> = (0..m)
                .map(|j| match style {
                    // coarse grid, many exact ties
                    0 => rng.random_range(0..4) as f64 + 1.0,
                    // peaked on the noisy label most of the time
                    1 => {
                        let boost = if j == labels[s] && rng.random_bool(0.8) { 5.0 } else { 0.0 };
                        rng.random::<f64>() + boost
                    }
                    _ => rng.random::<f64>() + 1e-3,
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    (p, labels, m)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// Compares the library against the oracle on `count` random instances in
/// both threshold modes. Returns the number of comparisons made.
pub fn check_equivalence(count: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for inst in 0..count {
        let (rows, labels, m) = random_instance(&mut rng);
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let pm = ProbMatrix::new(Array2::from_shape_vec((n, m), flat).unwrap()).map_err(|e| e.to_string())?;
        for (mode, global) in [(ThresholdMode::ClassConditional, false), (ThresholdMode::Global, true)] {
            let want = oracle(&rows, &labels, m, global);
            let t = compute_thresholds(&pm, &labels, mode).map_err(|e| e.to_string())?;
            if !t.0.iter().zip(&want.t).all(|(a, b)| close(*a, *b)) {
                return Err(format!("instance {inst} {mode:?}: thresholds {:?} vs {:?}", t.0, want.t));
            }
            let c = confident_joint(&pm, &labels, &t).map_err(|e| e.to_string())?;
            for i in 0..m {
                for j in 0..m {
                    if c.0[[i, j]] != want.c[i][j] {
                        return Err(format!("instance {inst} {mode:?}: C[{i}][{j}] {} vs {}", c.0[[i, j]], want.c[i][j]));
                    }
                }
            }
            let q = estimate_joint(&c, &labels);
            match (&q, &want.q) {
                (Err(_), None) => {
                    checked += 1;
                    continue;
                }
                (Ok(q), Some(wq)) => {
                    for i in 0..m {
                        for j in 0..m {
                            if !close(q.0[[i, j]], wq[i][j]) {
                                return Err(format!("instance {inst} {mode:?}: Q[{i}][{j}] {} vs {}", q.0[[i, j]], wq[i][j]));
                            }
                        }
                    }
                    let report = select_noise(&pm, &labels, q, n).map_err(|e| e.to_string())?;
                    if report.removed() != want.removed {
                        return Err(format!(
                            "instance {inst} {mode:?}: removed {:?} vs {:?}",
                            report.removed(),
                            want.removed
                        ));
                    }
                }
                _ => return Err(format!("instance {inst} {mode:?}: empty-count disagreement")),
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub struct PlantedOutcome {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub matches_oracle: bool,
}

/// 1000 two-class Gaussian samples, 20% of labels flipped, denoised with the
/// built-in logistic regression.
pub fn planted_noise(seed: u64) -> PlantedOutcome {
    let blobs = noisy_blobs(1000, 20, 6.0, 0.2, seed);
    let config = DenoiseConfig { seed, ..Default::default() };
    let out = denoise(blobs.features.view(), &blobs.noisy, 2, &ClassifierSpec::logistic(), &config).unwrap();
    let removed = out.report.removed();

    let rows: Vec<Vec<f64>> = out.probs.view().rows().into_iter().map(|r| r.to_vec()).collect();
    let matches_oracle = oracle(&rows, &blobs.noisy, 2, false).removed == removed;

    let flipped: BTreeSet<usize> = (0..1000).filter(|&i| blobs.flipped[i]).collect();
    let tp = removed.intersection(&flipped).count() as f64;
    let precision = if removed.is_empty() { 0.0 } else { tp / removed.len() as f64 };
    let recall = tp / flipped.len() as f64;
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    PlantedOutcome { f1, precision, recall, matches_oracle }
}
