//! Symmetry and eigenvalue range of the propagation operator, checked with a
//! dense symmetric eigensolver.

#![allow(dead_code)]

use bicrank_core::graphbuild::normalized_operator;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SpectrumStats {
    pub max_asymmetry: f64,
    pub min_eig: f64,
    pub max_eig: f64,
}

pub fn random_adjacency(rng: &mut ChaCha8Rng, max_nodes: usize) -> Array2<f64> {
    let n = rng.random_range(1..=max_nodes);
    let density = rng.random_range(0.0..1.0);
    let mut adj = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                let w = rng.random_range(0.01..5.0);
                adj[[i, j]] = w;
                adj[[j, i]] = w;
            }
        }
    }
    adj
}

pub fn operator_spectrum(adj: &Array2<f64>) -> SpectrumStats {
    let op = normalized_operator(adj).0;
    let n = op.nrows();
    let mut max_asymmetry: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            max_asymmetry = max_asymmetry.max((op[[i, j]] - op[[j, i]]).abs());
        }
    }
    let dense = DMatrix::from_fn(n, n, |i, j| op[[i, j]]);
    let eig = dense.symmetric_eigen().eigenvalues;
    SpectrumStats {
        max_asymmetry,
        min_eig: eig.iter().copied().fold(f64::INFINITY, f64::min),
        max_eig: eig.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Worst stats over `count` random graphs of up to `max_nodes` nodes.
pub fn check_random_graphs(count: usize, max_nodes: usize, seed: u64) -> SpectrumStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = SpectrumStats { max_asymmetry: 0.0, min_eig: f64::INFINITY, max_eig: f64::NEG_INFINITY };
    for _ in 0..count {
        let s = operator_spectrum(&random_adjacency(&mut rng, max_nodes));
        worst.max_asymmetry = worst.max_asymmetry.max(s.max_asymmetry);
        worst.min_eig = worst.min_eig.min(s.min_eig);
        worst.max_eig = worst.max_eig.max(s.max_eig);
    }
    worst
}
