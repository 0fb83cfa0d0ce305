//! Weighted GCN scorer with RankNet pairwise training.
//!
//! Forward pass for a commit graph with propagation operator `L` and input
//! features `H0`:
//!
//! ```text
//! Z_l     = L H_l W_l
//! H_{l+1} = relu(Z_l)                       l = 0 .. layers-1
//! Y       = layernorm(H_layers) * gain + bias   (per node, over features)
//! s       = Y w + b
//! ```
//!
//! The loss is the mean RankNet cross-entropy over a batch of deleted-line
//! pairs, and [`backward`] returns exact gradients for every parameter.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-12;
pub const DEFAULT_LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    256
}
fn default_ln_eps() -> f64 {
    DEFAULT_LN_EPS
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: default_layers(),
            hidden_dim: default_hidden(),
            layer_norm_eps: DEFAULT_LN_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.layers) {
            return Err(Error::Config(format!("layers must be in 1..=4, got {}", self.layers)));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return Err(Error::Config("layer_norm_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Trainable parameters. Also used, with the same shapes, for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct RankModel {
    pub layers: Vec<Array2<f64>>,
    pub ln_gain: Array1<f64>,
    pub ln_bias: Array1<f64>,
    pub head_weight: Array1<f64>,
    /// Length one.
    pub head_bias: Array1<f64>,
    pub ln_eps: f64,
}

pub type Gradients = RankModel;

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..a))
}

impl RankModel {
    /// Glorot-uniform layer and head weights, identity layer norm, zero bias.
    pub fn new(input_dim: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let layers = (0..config.layers)
            .map(|l| glorot(&mut rng, if l == 0 { input_dim } else { h }, h))
            .collect();
        let head_weight = glorot(&mut rng, h, 1).column(0).to_owned();
        Ok(Self {
            layers,
            ln_gain: Array1::ones(h),
            ln_bias: Array1::zeros(h),
            head_weight,
            head_bias: Array1::zeros(1),
            ln_eps: config.layer_norm_eps,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            ln_gain: Array1::zeros(self.ln_gain.len()),
            ln_bias: Array1::zeros(self.ln_bias.len()),
            head_weight: Array1::zeros(self.head_weight.len()),
            head_bias: Array1::zeros(1),
            ln_eps: self.ln_eps,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.head_weight.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Named parameter blocks in checkpoint order.
    pub fn block_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers.len()).map(|l| format!("gcn.{l}.weight")).collect();
        names.extend(["norm.gain", "norm.bias", "head.weight", "head.bias"].map(String::from));
        names
    }

    pub fn block_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes: Vec<Vec<usize>> = self.layers.iter().map(|w| w.shape().to_vec()).collect();
        shapes.extend([
            vec![self.ln_gain.len()],
            vec![self.ln_bias.len()],
            vec![self.head_weight.len()],
            vec![1],
        ]);
        shapes
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self
            .layers
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .collect();
        for v in [&self.ln_gain, &self.ln_bias, &self.head_weight, &self.head_bias] {
            out.push(v.as_slice().expect("contiguous"));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .collect();
        for v in [
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ] {
            out.push(v.as_slice_mut().expect("contiguous"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `H_0 .. H_layers`.
    pub hidden: Vec<Array2<f64>>,
    /// `L H_l`, the input to each weight multiply.
    pub propagated: Vec<Array2<f64>>,
    /// Pre-activations `Z_l`.
    pub pre_activation: Vec<Array2<f64>>,
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
    /// Layer-norm output after gain and bias.
    pub output: Array2<f64>,
    pub n_deleted: usize,
}

/// Runs the network. Returns scores for the first `n_deleted` nodes (the
/// deleted lines) and the cache needed by [`backward`].
pub fn forward(
    model: &RankModel,
    operator: &Array2<f64>,
    features: ArrayView2<'_, f64>,
    n_deleted: usize,
) -> Result<(Array1<f64>, ForwardCache)> {
    let n = features.nrows();
    if operator.dim() != (n, n) {
        return Err(Error::dim(n, operator.nrows(), "propagation operator vs feature rows"));
    }
    if features.ncols() != model.input_dim() {
        return Err(Error::dim(model.input_dim(), features.ncols(), "feature columns"));
    }
    if n_deleted > n {
        return Err(Error::dim(n, n_deleted, "deleted node count"));
    }

    let mut hidden = vec![features.to_owned()];
    let mut propagated = Vec::with_capacity(model.layers.len());
    let mut pre_activation = Vec::with_capacity(model.layers.len());
    for w in &model.layers {
        let lh = operator.dot(hidden.last().unwrap());
        let z = lh.dot(w);
        hidden.push(z.mapv(|x| x.max(0.0)));
        propagated.push(lh);
        pre_activation.push(z);
    }

    let last = hidden.last().unwrap();
    let d = last.ncols() as f64;
    let mut normalized = Array2::zeros(last.raw_dim());
    let mut inv_std = Array1::zeros(n);
    for (i, row) in last.rows().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
        let r = 1.0 / (var + model.ln_eps).sqrt();
        inv_std[i] = r;
        normalized.row_mut(i).assign(&row.mapv(|x| (x - mean) * r));
    }
    let output = &normalized * &model.ln_gain + &model.ln_bias;
    let all_scores = output.dot(&model.head_weight) + model.head_bias[0];
    let scores = all_scores.slice(ndarray::s![..n_deleted]).to_owned();

    Ok((
        scores,
        ForwardCache {
            hidden,
            propagated,
            pre_activation,
            normalized,
            inv_std,
            output,
            n_deleted,
        },
    ))
}

/// `P(i outranks j) = sigmoid(s_i - s_j)`, evaluated without overflow.
pub fn pair_prob(s_i: f64, s_j: f64) -> f64 {
    let d = s_i - s_j;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Target probability that `i` outranks `j`: 1 when only `i` is a root cause,
/// 0 when only `j` is, one half otherwise.
pub fn pair_targets(label_i: bool, label_j: bool) -> f64 {
    match (label_i, label_j) {
        (true, false) => 1.0,
        (false, true) => 0.0,
        _ => 0.5,
    }
}

/// RankNet cross-entropy with the probability clamped away from 0 and 1.
pub fn pair_loss(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pair {
    /// Indices into the deleted-node prefix of the graph's node order.
    pub i: usize,
    pub j: usize,
    pub target: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Mean pair loss for the given scores.
    pub fn loss(&self, scores: &Array1<f64>) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .pairs
            .iter()
            .map(|p| pair_loss(pair_prob(scores[p.i], scores[p.j]), p.target))
            .sum();
        total / self.pairs.len() as f64
    }
}

/// Gradient of the mean pair loss with respect to every parameter.
pub fn backward(
    model: &RankModel,
    operator: &Array2<f64>,
    batch: &PairBatch,
    cache: &ForwardCache,
) -> Result<Gradients> {
    let n = cache.output.nrows();
    if operator.dim() != (n, n) || cache.hidden.len() != model.layers.len() + 1 {
        return Err(Error::dim(n, operator.nrows(), "cache does not match operator or model"));
    }
    let mut grads = model.zeros_like();
    if batch.is_empty() {
        return Ok(grads);
    }

    // dLoss/ds for every node (context rows stay zero).
    let scores = cache.output.dot(&model.head_weight) + model.head_bias[0];
    let mut d_scores = Array1::<f64>::zeros(n);
    let inv = 1.0 / batch.len() as f64;
    for p in &batch.pairs {
        if p.i >= cache.n_deleted || p.j >= cache.n_deleted {
            return Err(Error::dim(cache.n_deleted, p.i.max(p.j) + 1, "pair index"));
        }
        let g = (pair_prob(scores[p.i], scores[p.j]) - p.target) * inv;
        d_scores[p.i] += g;
        d_scores[p.j] -= g;
    }

    // Head.
    grads.head_weight = cache.output.t().dot(&d_scores);
    grads.head_bias[0] = d_scores.sum();
    let d_output = outer(&d_scores, &model.head_weight);

    // Layer norm affine.
    grads.ln_gain = (&d_output * &cache.normalized).sum_axis(Axis(0));
    grads.ln_bias = d_output.sum_axis(Axis(0));
    let d_norm = &d_output * &model.ln_gain;

    // Layer norm normalization, per row.
    let d = d_norm.ncols() as f64;
    let mut d_hidden = Array2::<f64>::zeros(d_norm.raw_dim());
    for i in 0..n {
        let g = d_norm.row(i);
        let xh = cache.normalized.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let r = cache.inv_std[i];
        for k in 0..g.len() {
            d_hidden[[i, k]] = r * (g[k] - mean_g - xh[k] * mean_gx);
        }
    }

    // GCN layers, last to first.
    for l in (0..model.layers.len()).rev() {
        let mut d_pre = d_hidden;
        d_pre.zip_mut_with(&cache.pre_activation[l], |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        grads.layers[l] = cache.propagated[l].t().dot(&d_pre);
        if l == 0 {
            // Input features are frozen.
            break;
        }
        d_hidden = operator.t().dot(&d_pre.dot(&model.layers[l].t()));
    }

    Ok(grads)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}
