//! Probabilistic base classifiers for out-of-fold confidence estimation.
//!
//! Built in: multinomial logistic regression (full-batch gradient descent) and
//! k-nearest neighbours with add-one smoothing. Other estimators plug in
//! through [`Classifier`].

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted model that emits row-stochastic class probabilities.
pub trait FittedClassifier: Send + Sync {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// An estimator that can be trained on a feature matrix.
pub trait Classifier: Sync {
    fn fit(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        n_classes: usize,
    ) -> Result<Box<dyn FittedClassifier>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    LogisticRegression {
        #[serde(default = "defaults::l2")]
        l2: f64,
        #[serde(default = "defaults::iterations")]
        iterations: usize,
        /// Upper bound on the step; the effective step is
        /// `min(learning_rate, 1 / smoothness)` so the loss never increases.
        #[serde(default = "defaults::learning_rate")]
        learning_rate: f64,
    },
    Knn {
        #[serde(default = "defaults::k")]
        k: usize,
    },
}

mod defaults {
    pub fn l2() -> f64 {
        1e-4
    }
    pub fn iterations() -> usize {
        200
    }
    pub fn learning_rate() -> f64 {
        1.0
    }
    pub fn k() -> usize {
        5
    }
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self::logistic()
    }
}

impl ClassifierSpec {
    pub fn logistic() -> Self {
        ClassifierSpec::LogisticRegression {
            l2: defaults::l2(),
            iterations: defaults::iterations(),
            learning_rate: defaults::learning_rate(),
        }
    }

    pub fn knn(k: usize) -> Self {
        ClassifierSpec::Knn { k }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ClassifierSpec::LogisticRegression {
                l2,
                iterations,
                learning_rate,
            } => {
                if !(l2 >= 0.0 && l2.is_finite()) {
                    return Err(Error::Config(format!("l2 must be >= 0, got {l2}")));
                }
                if iterations == 0 {
                    return Err(Error::Config("iterations must be positive".into()));
                }
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return Err(Error::Config(format!(
                        "learning_rate must be > 0, got {learning_rate}"
                    )));
                }
            }
            ClassifierSpec::Knn { k } => {
                if k == 0 {
                    return Err(Error::Config("knn k must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

impl Classifier for ClassifierSpec {
    fn fit(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        n_classes: usize,
    ) -> Result<Box<dyn FittedClassifier>> {
        Ok(match fit(self, features, labels, n_classes)? {
            Model::Logistic(m) => Box::new(m),
            Model::Knn(m) => Box::new(m),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Logistic(LogisticModel),
    Knn(KnnModel),
}

impl Model {
    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Model::Logistic(m) => m.predict_proba(features),
            Model::Knn(m) => m.predict_proba(features),
        }
    }
}

fn check_inputs(features: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::dim(features.nrows(), labels.len(), "labels vs feature rows"));
    }
    if n_classes < 2 {
        return Err(Error::Classifier(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        if y >= n_classes {
            return Err(Error::Classifier(format!("label {y} out of range 0..{n_classes}")));
        }
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Classifier(format!("class {c} has no training samples")));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("classifier features".into()));
    }
    Ok(())
}

/// Trains the classifier described by `spec`.
pub fn fit(
    spec: &ClassifierSpec,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<Model> {
    spec.validate()?;
    check_inputs(features, labels, n_classes)?;
    Ok(match *spec {
        ClassifierSpec::LogisticRegression {
            l2,
            iterations,
            learning_rate,
        } => Model::Logistic(LogisticModel::train(
            features,
            labels,
            n_classes,
            l2,
            iterations,
            learning_rate,
        )),
        ClassifierSpec::Knn { k } => Model::Knn(KnnModel {
            train: features.to_owned(),
            labels: labels.to_vec(),
            k,
            n_classes,
        }),
    })
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// Softmax regression, `p = softmax(x W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Regularized training loss before each update, plus the final loss.
    pub loss_trace: Vec<f64>,
}

impl LogisticModel {
    fn train(
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        m: usize,
        l2: f64,
        iterations: usize,
        learning_rate: f64,
    ) -> Self {
        let (n, d) = x.dim();
        let mut onehot = Array2::<f64>::zeros((n, m));
        for (i, &y) in labels.iter().enumerate() {
            onehot[[i, y]] = 1.0;
        }
        // Softmax cross-entropy is (max_i |[x_i, 1]|^2 / 2)-smooth in (W, b).
        let max_sq = x
            .rows()
            .into_iter()
            .map(|r| r.dot(&r) + 1.0)
            .fold(0.0, f64::max);
        let smoothness = 0.5 * max_sq + l2;
        let step = learning_rate.min(1.0 / smoothness);

        let mut model = LogisticModel {
            weights: Array2::zeros((d, m)),
            bias: Array1::zeros(m),
            loss_trace: Vec::with_capacity(iterations + 1),
        };
        let nf = n as f64;
        for it in 0..=iterations {
            let mut p = x.dot(&model.weights) + &model.bias;
            softmax_rows(&mut p);
            let ce: f64 = labels
                .iter()
                .enumerate()
                .map(|(i, &y)| -p[[i, y]].max(1e-300).ln())
                .sum::<f64>()
                / nf;
            let reg = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
            model.loss_trace.push(ce + reg);
            if it == iterations {
                break;
            }
            let resid = p - &onehot;
            let grad_w = x.t().dot(&resid) / nf + &model.weights * l2;
            let grad_b = resid.sum_axis(Axis(0)) / nf;
            model.weights.scaled_add(-step, &grad_w);
            model.bias.scaled_add(-step, &grad_b);
        }
        model
    }

    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.weights.nrows() {
            return Err(Error::dim(self.weights.nrows(), features.ncols(), "feature columns"));
        }
        let mut p = features.dot(&self.weights) + &self.bias;
        softmax_rows(&mut p);
        Ok(p)
    }
}

impl FittedClassifier for LogisticModel {
    fn n_features(&self) -> usize {
        self.weights.nrows()
    }
    fn n_classes(&self) -> usize {
        self.weights.ncols()
    }
    fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        LogisticModel::predict_proba(self, features)
    }
}

/// Euclidean k-NN. Probabilities are `(votes_c + 1) / (k + m)`, so no class
/// ever gets a hard zero. Distance ties go to the lower training index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    train: Array2<f64>,
    labels: Vec<usize>,
    k: usize,
    n_classes: usize,
}

impl KnnModel {
    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.train.ncols() {
            return Err(Error::dim(self.train.ncols(), features.ncols(), "feature columns"));
        }
        let k = self.k.min(self.train.nrows());
        let m = self.n_classes;
        let mut out = Array2::zeros((features.nrows(), m));
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.train.nrows());
        for (q, query) in features.rows().into_iter().enumerate() {
            dist.clear();
            dist.extend(self.train.rows().into_iter().enumerate().map(|(i, t)| {
                let d2: f64 = t.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            }));
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; m];
            for &(_, i) in &dist[..k] {
                votes[self.labels[i]] += 1;
            }
            let denom = (k + m) as f64;
            for c in 0..m {
                out[[q, c]] = (votes[c] + 1) as f64 / denom;
            }
        }
        Ok(out)
    }
}

impl FittedClassifier for KnnModel {
    fn n_features(&self) -> usize {
        self.train.ncols()
    }
    fn n_classes(&self) -> usize {
        self.n_classes
    }
    fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        KnnModel::predict_proba(self, features)
    }
}
