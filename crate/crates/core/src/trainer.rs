//! Training orchestration: denoising, pair generation, the Adam epoch loop,
//! and k-fold / cross-project experiments.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseclf::ClassifierSpec;
use crate::dataset::{cross_project_split, kfold_split, DatasetIndex, Role, Split};
use crate::denoise::{denoise_dataset, ClassifierFeatures, DatasetNoise, DenoiseConfig, ThresholdMode};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::gcnrank::{backward, forward, pair_targets, ModelConfig, Pair, PairBatch, RankModel};
use crate::graphbuild::{build_commit_graph, CommitGraph};
use crate::metrics::{rank_commit, EvalReport, MetricSummary};
use crate::par::par_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseScope {
    /// Denoise inside each training split.
    #[default]
    Fold,
    /// Denoise once over every commit before splitting.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Hashed unsigned token counts of width `bow_dim`.
    #[default]
    BagOfWords,
    /// The same vectors the GCN consumes.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub denoise: bool,
    pub denoise_scope: DenoiseScope,
    pub cl_folds: usize,
    pub threshold_mode: ThresholdMode,
    pub classifier: ClassifierSpec,
    pub classifier_features: FeatureKind,
    pub bow_dim: usize,
    pub edge_weight: f64,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub model: ModelConfig,
    pub ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-6,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            denoise: true,
            denoise_scope: DenoiseScope::Fold,
            cl_folds: 5,
            threshold_mode: ThresholdMode::ClassConditional,
            classifier: ClassifierSpec::default(),
            classifier_features: FeatureKind::BagOfWords,
            bow_dim: 10_000,
            edge_weight: 1.0,
            embedding_dim: crate::embedding::DEFAULT_DIM,
            embedding_seed: 0,
            model: ModelConfig::default(),
            ks: vec![1, 2, 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0".into());
        }
        if self.cl_folds < 2 {
            return bad("cl_folds must be at least 2".into());
        }
        if self.bow_dim == 0 || self.embedding_dim == 0 {
            return bad("feature dimensions must be positive".into());
        }
        if !(self.edge_weight > 0.0 && self.edge_weight.is_finite()) {
            return bad("edge_weight must be > 0".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a nonempty list of positive ranks".into());
        }
        self.classifier.validate()?;
        self.model.validate()
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                write!(s, "{b:02x}").unwrap();
                s
            })
    }

    pub fn denoise_config(&self) -> DenoiseConfig {
        DenoiseConfig {
            folds: self.cl_folds,
            seed: self.seed,
            threshold_mode: self.threshold_mode,
        }
    }
}

/// Bias-corrected Adam over flat parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
        }
    }
}

/// First and second moments per parameter block, plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn for_blocks(sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_model(model: &RankModel) -> Self {
        Self::for_blocks(model.blocks().iter().map(|b| b.len()))
    }
}

/// One Adam update. Refuses non-finite gradients without touching state.
pub fn adam_step(params: Vec<&mut [f64]>, grads: Vec<&[f64]>, state: &mut OptimizerState, adam: &Adam) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::dim(state.first.len(), grads.len(), "parameter blocks"));
    }
    for (b, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[b].len() {
            return Err(Error::dim(p.len(), g.len(), format!("block {b}")));
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient block {b} entry {k} = {}", g[k])));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for (b, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let m = &mut state.first[b];
        let v = &mut state.second[b];
        for k in 0..p.len() {
            m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
            v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
    Ok(())
}

/// All unordered pairs `(i < j)` of kept deleted lines, with RankNet targets.
pub fn generate_pairs(graph: &CommitGraph, kept: &dyn Fn(&str) -> bool) -> PairBatch {
    let ids = graph.deleted_ids();
    let live: Vec<usize> = (0..ids.len()).filter(|&i| kept(&ids[i])).collect();
    let mut pairs = Vec::new();
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a + 1..] {
            pairs.push(Pair {
                i,
                j,
                target: pair_targets(graph.labels[i], graph.labels[j]),
            });
        }
    }
    PairBatch { pairs }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: RankModel,
    /// Mean pair loss per epoch, measured before each update.
    pub loss_trace: Vec<f64>,
    /// Commits that contributed at least one training pair.
    pub pair_commits: BTreeSet<String>,
    /// Deleted lines excluded from pair generation by the denoiser.
    pub removed: BTreeSet<String>,
}

impl TrainOutput {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,mean_pair_loss\n");
        for (e, l) in self.loss_trace.iter().enumerate() {
            writeln!(out, "{},{}", e + 1, l).unwrap();
        }
        out
    }
}

fn classifier_features<'a>(config: &TrainConfig, embeddings: &'a EmbeddingMatrix) -> ClassifierFeatures<'a> {
    match config.classifier_features {
        FeatureKind::BagOfWords => ClassifierFeatures::BagOfWords {
            dim: config.bow_dim,
            seed: config.embedding_seed,
        },
        FeatureKind::Embedding => ClassifierFeatures::Embeddings(embeddings),
    }
}

/// Confident-learning pass over the deleted lines of `commits`.
pub fn denoise_commits(
    index: &DatasetIndex,
    commits: &[String],
    embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
) -> Result<DatasetNoise> {
    denoise_dataset(
        index,
        commits,
        classifier_features(config, embeddings),
        &config.classifier,
        &config.denoise_config(),
    )
}

pub fn build_graphs(
    index: &DatasetIndex,
    commits: &[String],
    embeddings: &EmbeddingMatrix,
    edge_weight: f64,
) -> Result<Vec<CommitGraph>> {
    commits
        .iter()
        .map(|c| build_commit_graph(index, c, embeddings, edge_weight))
        .collect()
}

/// Trains on `commits`, denoising them first when enabled.
pub fn train(
    index: &DatasetIndex,
    commits: &[String],
    embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let removed = if config.denoise {
        denoise_commits(index, commits, embeddings, config)?.removed_ids()
    } else {
        BTreeSet::new()
    };
    train_with_removed(index, commits, embeddings, config, &removed)
}

/// Trains on `commits`, excluding `removed` deleted lines from pairs. The
/// removed lines stay in the graphs.
pub fn train_with_removed(
    index: &DatasetIndex,
    commits: &[String],
    embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
    removed: &BTreeSet<String>,
) -> Result<TrainOutput> {
    config.validate()?;
    let mut commits = commits.to_vec();
    commits.sort();
    let graphs = build_graphs(index, &commits, embeddings, config.edge_weight)?;

    struct Item {
        graph: CommitGraph,
        operator: ndarray::Array2<f64>,
        batch: PairBatch,
    }
    let kept = |id: &str| !removed.contains(id);
    let items: Vec<Item> = graphs
        .into_iter()
        .map(|graph| {
            let batch = generate_pairs(&graph, &kept);
            let operator = graph.operator().0;
            Item { graph, operator, batch }
        })
        .filter(|it| !it.batch.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::NoPairs);
    }
    let pair_commits = items.iter().map(|it| it.graph.commit_id.clone()).collect();
    let total_pairs: usize = items.iter().map(|it| it.batch.len()).sum();

    let mut model = RankModel::new(embeddings.dim(), &config.model, config.seed)?;
    let mut state = OptimizerState::for_model(&model);
    let adam = Adam::from_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &k in &order {
            let it = &items[k];
            let (scores, cache) = forward(&model, &it.operator, it.graph.features.view(), it.graph.n_deleted)?;
            let loss = it.batch.loss(&scores);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {} on commit `{}`",
                    epoch + 1,
                    it.graph.commit_id
                )));
            }
            epoch_loss += loss * it.batch.len() as f64;
            let grads = backward(&model, &it.operator, &it.batch, &cache)?;
            adam_step(model.blocks_mut(), grads.blocks(), &mut state, &adam)?;
        }
        let mean = epoch_loss / total_pairs as f64;
        log::debug!("epoch {}: mean pair loss {mean:.6}", epoch + 1);
        loss_trace.push(mean);
    }

    Ok(TrainOutput {
        model,
        loss_trace,
        pair_commits,
        removed: removed.clone(),
    })
}

/// Root-cause node ids over the given commits, from the original labels.
pub fn root_causes(index: &DatasetIndex, commits: &[String]) -> HashSet<String> {
    commits
        .iter()
        .filter_map(|c| index.commit(c))
        .flat_map(|entry| entry.nodes.iter())
        .map(|&p| &index.nodes()[p])
        .filter(|n| n.role == Role::Deleted && n.root_cause)
        .map(|n| n.node_id.clone())
        .collect()
}

/// Ranks and scores `commits` against the original (undenoised) labels.
pub fn evaluate(
    index: &DatasetIndex,
    commits: &[String],
    embeddings: &EmbeddingMatrix,
    model: &RankModel,
    config: &TrainConfig,
) -> Result<EvalReport> {
    let mut commits = commits.to_vec();
    commits.sort();
    let graphs = build_graphs(index, &commits, embeddings, config.edge_weight)?;
    let results = graphs
        .iter()
        .map(|g| rank_commit(model, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(results, &root_causes(index, &commits), &config.ks))
}

#[derive(Debug, Clone)]
pub struct FoldOutput {
    pub split: Split,
    pub train: TrainOutput,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub mean: MetricSummary,
    pub folds: Vec<FoldOutput>,
}

fn check_leakage(split: &Split, out: &TrainOutput) -> Result<()> {
    let test: BTreeSet<&String> = split.test.iter().collect();
    if let Some(c) = split.train.iter().find(|c| test.contains(c)) {
        return Err(Error::Leakage(c.clone()));
    }
    if let Some(c) = out.pair_commits.iter().find(|c| test.contains(c)) {
        return Err(Error::Leakage(c.clone()));
    }
    Ok(())
}

fn run_split(
    index: &DatasetIndex,
    split: Split,
    embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
    global_removed: Option<&BTreeSet<String>>,
) -> Result<FoldOutput> {
    let train = match global_removed {
        Some(removed) => train_with_removed(index, &split.train, embeddings, config, removed)?,
        None => train(index, &split.train, embeddings, config)?,
    };
    check_leakage(&split, &train)?;
    let report = evaluate(index, &split.test, embeddings, &train.model, config)?;
    Ok(FoldOutput { split, train, report })
}

fn global_removed(index: &DatasetIndex, embeddings: &EmbeddingMatrix, config: &TrainConfig) -> Result<Option<BTreeSet<String>>> {
    if config.denoise && config.denoise_scope == DenoiseScope::Global {
        let all = index.commit_ids();
        Ok(Some(denoise_commits(index, &all, embeddings, config)?.removed_ids()))
    } else {
        Ok(None)
    }
}

#[cfg(feature = "parallel")]
fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<R: Send>(_jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(f())
}

/// k-fold cross-validation at commit granularity. Folds run on `jobs`
/// worker threads; results do not depend on `jobs`.
pub fn run_kfold(
    index: &DatasetIndex,
    embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
    k: usize,
    jobs: usize,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let splits = kfold_split(index, k, config.seed)?;
    let removed = global_removed(index, embeddings, config)?;
    let folds = with_jobs(jobs, || {
        par_map(splits, |split| run_split(index, split, embeddings, config, removed.as_ref()))
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mean = MetricSummary::mean(folds.iter().map(|f| &f.report.summary));
    Ok(ExperimentOutput { mean, folds })
}

/// Single train/test run holding out whole projects.
pub fn run_cross_project(
    index: &DatasetIndex,
    embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
    test_projects: &[String],
) -> Result<ExperimentOutput> {
    config.validate()?;
    let split = cross_project_split(index, test_projects)?;
    let removed = global_removed(index, embeddings, config)?;
    let fold = run_split(index, split, embeddings, config, removed.as_ref())?;
    Ok(ExperimentOutput {
        mean: fold.report.summary.clone(),
        folds: vec![fold],
    })
}
