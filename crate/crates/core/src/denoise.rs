//! Confident-learning label denoiser.
//!
//! Pipeline: out-of-fold probabilities -> per-class thresholds -> confident
//! joint `C` -> joint distribution `Q` -> margin-ranked pruning of
//! `floor(n * Q[i][j])` samples per off-diagonal cell.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseclf::Classifier;
use crate::dataset::DatasetIndex;
use crate::embedding::{hash_counts, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::par::par_map;

/// Tolerance added before flooring `n * Q[i][j]`, so products that are
/// integral in exact arithmetic are not rounded down by one.
pub const CELL_COUNT_SLACK: f64 = 1e-9;

const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic `n x m` matrix of predicted class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    pub fn new(p: Array2<f64>) -> Result<Self> {
        for (i, row) in p.rows().into_iter().enumerate() {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::Classifier(format!("probability row {i} has entries outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Classifier(format!("probability row {i} sums to {s}")));
            }
        }
        Ok(Self(p))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Mean self-confidence over samples carrying the noisy label.
    #[default]
    ClassConditional,
    /// Mean probability over all samples.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thresholds(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountMatrix(pub Array2<usize>);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDist(pub Array2<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Removal {
    /// `(noisy label, inferred true label)` cell that flagged the sample.
    pub cell: (usize, usize),
    pub margin: f64,
}

/// Per-sample pruning decision; `None` means kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    pub decisions: Vec<Option<Removal>>,
}

impl NoiseReport {
    pub fn removed(&self) -> BTreeSet<usize> {
        self.decisions
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|_| i))
            .collect()
    }

    pub fn kept(&self) -> BTreeSet<usize> {
        self.decisions
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.is_none().then_some(i))
            .collect()
    }
}

fn class_sizes(labels: &[usize], m: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; m];
    for &y in labels {
        if y >= m {
            return Err(Error::Classifier(format!("label {y} out of range 0..{m}")));
        }
        sizes[y] += 1;
    }
    Ok(sizes)
}

fn check_shape(p: &ProbMatrix, labels: &[usize]) -> Result<()> {
    if p.n_samples() != labels.len() {
        return Err(Error::dim(p.n_samples(), labels.len(), "labels vs probability rows"));
    }
    Ok(())
}

/// Stratified, seeded fold assignment: each class is shuffled and dealt
/// round-robin, continuing the deal across classes.
pub fn stratified_folds(labels: &[usize], n_classes: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be at least 2, got {folds}")));
    }
    let sizes = class_sizes(labels, n_classes)?;
    for (class, &count) in sizes.iter().enumerate() {
        if count < folds {
            return Err(Error::Stratification { class, count, folds });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut dealt = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = dealt % folds;
            dealt += 1;
        }
    }
    Ok(assignment)
}

/// Out-of-fold class probabilities: row `i` comes from a model that never saw
/// sample `i`.
pub fn oof_probabilities(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    classifier: &dyn Classifier,
    folds: usize,
    seed: u64,
) -> Result<ProbMatrix> {
    if features.nrows() != labels.len() {
        return Err(Error::dim(features.nrows(), labels.len(), "labels vs feature rows"));
    }
    let assignment = stratified_folds(labels, n_classes, folds, seed)?;

    let per_fold = par_map((0..folds).collect(), |fold| -> Result<(Vec<usize>, Array2<f64>)> {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..labels.len()).partition(|&i| assignment[i] == fold);
        let train_x = features.select(ndarray::Axis(0), &train);
        let train_y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let model = classifier.fit(train_x.view(), &train_y, n_classes)?;
        let test_x = features.select(ndarray::Axis(0), &test);
        Ok((test, model.predict_proba(test_x.view())?))
    });

    let mut out = Array2::zeros((labels.len(), n_classes));
    for result in per_fold {
        let (rows, probs) = result?;
        for (r, i) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&probs.row(r));
        }
    }
    ProbMatrix::new(out)
}

pub fn compute_thresholds(p: &ProbMatrix, labels: &[usize], mode: ThresholdMode) -> Result<Thresholds> {
    check_shape(p, labels)?;
    let m = p.n_classes();
    let sizes = class_sizes(labels, m)?;
    let pv = p.view();
    let t = match mode {
        ThresholdMode::ClassConditional => (0..m)
            .map(|j| {
                if sizes[j] == 0 {
                    return Err(Error::Classifier(format!(
                        "class {j} has no samples; class-conditional threshold undefined"
                    )));
                }
                let s: f64 = labels
                    .iter()
                    .enumerate()
                    .filter(|&(_, &y)| y == j)
                    .map(|(i, _)| pv[[i, j]])
                    .sum();
                Ok(s / sizes[j] as f64)
            })
            .collect::<Result<Vec<_>>>()?,
        ThresholdMode::Global => {
            let n = pv.nrows().max(1) as f64;
            (0..m).map(|j| pv.column(j).sum() / n).collect()
        }
    };
    Ok(Thresholds(t))
}

/// Confident joint. A sample with noisy label `i` lands in `C[i][j*]` where
/// `j*` is the most probable class among those meeting their threshold
/// (ties to the lowest index); samples meeting no threshold are not counted.
pub fn confident_joint(p: &ProbMatrix, labels: &[usize], t: &Thresholds) -> Result<CountMatrix> {
    check_shape(p, labels)?;
    let m = p.n_classes();
    if t.0.len() != m {
        return Err(Error::dim(m, t.0.len(), "thresholds"));
    }
    let mut c = Array2::<usize>::zeros((m, m));
    for (row, &noisy) in p.view().rows().into_iter().zip(labels) {
        if noisy >= m {
            return Err(Error::Classifier(format!("label {noisy} out of range 0..{m}")));
        }
        let mut best: Option<usize> = None;
        for j in 0..m {
            if row[j] >= t.0[j] && best.is_none_or(|b| row[j] > row[b]) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            c[[noisy, j]] += 1;
        }
    }
    Ok(CountMatrix(c))
}

/// Joint distribution: rows of `C` normalized, rescaled by the noisy-class
/// sizes, then normalized to sum to one. All-zero rows stay zero.
pub fn estimate_joint(c: &CountMatrix, labels: &[usize]) -> Result<JointDist> {
    let m = c.0.nrows();
    let sizes = class_sizes(labels, m)?;
    let mut q = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let row_sum: usize = c.0.row(i).sum();
        if row_sum == 0 {
            continue;
        }
        for j in 0..m {
            q[[i, j]] = c.0[[i, j]] as f64 / row_sum as f64 * sizes[i] as f64;
        }
    }
    let total = q.sum();
    if total <= 0.0 {
        return Err(Error::EmptyCountMatrix);
    }
    q.mapv_inplace(|x| x / total);
    Ok(JointDist(q))
}

/// Number of samples to prune from cell `(i, j)`.
pub fn cell_count(n: usize, q: f64) -> usize {
    (n as f64 * q + CELL_COUNT_SLACK).floor() as usize
}

/// Margin-ranked pruning. For each off-diagonal cell `(i, j)` the samples
/// with noisy label `i` are ranked by `P[x][j] - P[x][i]` (descending, ties to
/// the lower sample index) and the top `floor(n * Q[i][j])` are flagged.
/// A sample keeps the first cell (row-major order) that flagged it.
pub fn select_noise(p: &ProbMatrix, labels: &[usize], q: &JointDist, n: usize) -> Result<NoiseReport> {
    check_shape(p, labels)?;
    let m = p.n_classes();
    if q.0.dim() != (m, m) {
        return Err(Error::dim(m, q.0.nrows(), "joint distribution"));
    }
    let pv = p.view();
    let mut decisions: Vec<Option<Removal>> = vec![None; labels.len()];
    for i in 0..m {
        let members: Vec<usize> = (0..labels.len()).filter(|&s| labels[s] == i).collect();
        for j in (0..m).filter(|&j| j != i) {
            let count = cell_count(n, q.0[[i, j]]).min(members.len());
            if count == 0 {
                continue;
            }
            let mut ranked: Vec<(f64, usize)> =
                members.iter().map(|&s| (pv[[s, j]] - pv[[s, i]], s)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(margin, s) in &ranked[..count] {
                decisions[s].get_or_insert(Removal { cell: (i, j), margin });
            }
        }
    }
    Ok(NoiseReport { decisions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub folds: usize,
    pub seed: u64,
    pub threshold_mode: ThresholdMode,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            threshold_mode: ThresholdMode::ClassConditional,
        }
    }
}

/// Every intermediate of one denoising run.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutcome {
    pub probs: ProbMatrix,
    pub thresholds: Thresholds,
    pub counts: CountMatrix,
    pub joint: JointDist,
    pub report: NoiseReport,
}

/// Runs the statistics stages on an already-computed probability matrix.
pub fn denoise_from_probs(probs: ProbMatrix, labels: &[usize], mode: ThresholdMode) -> Result<DenoiseOutcome> {
    let thresholds = compute_thresholds(&probs, labels, mode)?;
    let counts = confident_joint(&probs, labels, &thresholds)?;
    let joint = estimate_joint(&counts, labels)?;
    let report = select_noise(&probs, labels, &joint, labels.len())?;
    Ok(DenoiseOutcome {
        probs,
        thresholds,
        counts,
        joint,
        report,
    })
}

/// Full pipeline on a feature matrix.
pub fn denoise(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    classifier: &dyn Classifier,
    config: &DenoiseConfig,
) -> Result<DenoiseOutcome> {
    let probs = oof_probabilities(features, labels, n_classes, classifier, config.folds, config.seed)?;
    denoise_from_probs(probs, labels, config.threshold_mode)
}

/// Where classifier features for deleted lines come from.
#[derive(Debug, Clone, Copy)]
pub enum ClassifierFeatures<'a> {
    /// Unsigned hashed token counts, unnormalized.
    BagOfWords { dim: usize, seed: u64 },
    Embeddings(&'a EmbeddingMatrix),
}

/// Denoising result over the deleted lines of a set of commits.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetNoise {
    /// Sample order: commits in the order given, deleted lines in file order.
    pub node_ids: Vec<String>,
    pub outcome: DenoiseOutcome,
}

impl DatasetNoise {
    pub fn removed_ids(&self) -> BTreeSet<String> {
        self.outcome
            .report
            .removed()
            .into_iter()
            .map(|i| self.node_ids[i].clone())
            .collect()
    }

    /// One JSON object per sample: node_id, decision, cell, margin.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            node_id: &'a str,
            decision: &'static str,
            cell: Option<[usize; 2]>,
            margin: Option<f64>,
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (id, d) in self.node_ids.iter().zip(&self.outcome.report.decisions) {
            let rec = Record {
                node_id: id,
                decision: if d.is_some() { "removed" } else { "kept" },
                cell: d.map(|r| [r.cell.0, r.cell.1]),
                margin: d.map(|r| r.margin),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).expect("serializable"))
                .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Denoises the root-cause labels of every deleted line in `commits`
/// (binary task: 1 = root cause).
pub fn denoise_dataset(
    index: &DatasetIndex,
    commits: &[String],
    features: ClassifierFeatures<'_>,
    classifier: &dyn Classifier,
    config: &DenoiseConfig,
) -> Result<DatasetNoise> {
    let positions: Vec<usize> = commits
        .iter()
        .flat_map(|c| index.deleted_nodes(c))
        .collect();
    let nodes = index.nodes();
    let node_ids: Vec<String> = positions.iter().map(|&p| nodes[p].node_id.clone()).collect();
    let labels: Vec<usize> = positions.iter().map(|&p| usize::from(nodes[p].root_cause)).collect();

    let matrix = match features {
        ClassifierFeatures::BagOfWords { dim, seed } => {
            let mut x = Array2::zeros((positions.len(), dim));
            for (r, &p) in positions.iter().enumerate() {
                for (dst, v) in x.row_mut(r).iter_mut().zip(hash_counts(&nodes[p].text, dim, seed)) {
                    *dst = v;
                }
            }
            x
        }
        ClassifierFeatures::Embeddings(emb) => {
            let mut x = Array2::zeros((positions.len(), emb.dim()));
            for (r, id) in node_ids.iter().enumerate() {
                let row = emb.row(id).ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
                x.row_mut(r).assign(&row);
            }
            x
        }
    };

    let outcome = denoise(matrix.view(), &labels, 2, classifier, config)?;
    Ok(DatasetNoise { node_ids, outcome })
}
