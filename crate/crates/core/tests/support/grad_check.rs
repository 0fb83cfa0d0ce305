//! Central finite differences against the analytic backward pass.

#![allow(dead_code)]

use bicrank_core::gcnrank::{backward, forward, pair_targets, ModelConfig, Pair, PairBatch, RankModel};
use bicrank_core::graphbuild::normalized_operator;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub struct Problem {
    pub model: RankModel,
    pub operator: Array2<f64>,
    pub features: Array2<f64>,
    pub n_deleted: usize,
    pub batch: PairBatch,
}

/// Random weighted graph of `nodes` nodes with a random model on top.
pub fn random_problem(seed: u64, nodes: usize, layers: usize) -> Problem {
    random_problem_sized(seed, nodes, layers, 8, 8)
}

pub fn random_problem_sized(seed: u64, nodes: usize, layers: usize, in_dim: usize, hidden: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = Array2::zeros((nodes, nodes));
    for i in 0..nodes {
        for j in i + 1..nodes {
            if rng.random_bool(0.5) {
                let w = rng.random_range(0.2..2.0);
                adj[[i, j]] = w;
                adj[[j, i]] = w;
            }
        }
    }
    let operator = normalized_operator(&adj).0;
    let features = Array2::from_shape_fn((nodes, in_dim), |_| rng.random_range(-1.0..1.0));
    let mut model = RankModel::new(in_dim, &ModelConfig { layers, hidden_dim: hidden, ..Default::default() }, seed).unwrap();
    // Move the layer-norm affine and head off their trivial initial values.
    for v in model.ln_gain.iter_mut().chain(model.ln_bias.iter_mut()).chain(model.head_bias.iter_mut()) {
        *v += rng.random_range(-0.5..0.5);
    }
    let n_deleted = rng.random_range(2..=nodes);
    let labels: Vec<bool> = (0..n_deleted).map(|_| rng.random_bool(0.4)).collect();
    let mut pairs = Vec::new();
    for i in 0..n_deleted {
        for j in i + 1..n_deleted {
            pairs.push(Pair { i, j, target: pair_targets(labels[i], labels[j]) });
        }
    }
    Problem { model, operator, features, n_deleted, batch: PairBatch { pairs } }
}

fn loss(p: &Problem, model: &RankModel) -> f64 {
    let (scores, _) = forward(model, &p.operator, p.features.view(), p.n_deleted).unwrap();
    p.batch.loss(&scores)
}

/// Largest relative error over every parameter of the problem's model.
pub fn max_rel_error(p: &Problem) -> f64 {
    max_rel_error_with(p, FD_EPS)
}

pub fn max_rel_error_with(p: &Problem, eps: f64) -> f64 {
    let (_, cache) = forward(&p.model, &p.operator, p.features.view(), p.n_deleted).unwrap();
    let grads = backward(&p.model, &p.operator, &p.batch, &cache).unwrap();
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut probe = p.model.clone();
    for (b, block) in analytic.iter().enumerate() {
        for k in 0..block.len() {
            let orig = probe.blocks()[b][k];
            probe.blocks_mut()[b][k] = orig + eps;
            let up = loss(p, &probe);
            probe.blocks_mut()[b][k] = orig - eps;
            let down = loss(p, &probe);
            probe.blocks_mut()[b][k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(block[k], numeric));
        }
    }
    worst
}
