//! Browser demo: confident-learning denoising on 2-D blobs, the GCN
//! propagation operator of a hand-typed graph, and a small ranker trained on
//! the sentinel corpus. Every export returns a JSON string.

use std::cell::RefCell;

use bicrank_core::baseclf::ClassifierSpec;
use bicrank_core::dataset::{DatasetIndex, EdgeRecord, LineNode, Role, Version};
use bicrank_core::denoise::{denoise, DenoiseConfig};
use bicrank_core::embedding::hash_matrix;
use bicrank_core::gcnrank::{ModelConfig, RankModel};
use bicrank_core::graphbuild::{build_commit_graph, normalized_operator};
use bicrank_core::metrics::rank_commit;
use bicrank_core::synth::{noisy_blobs, sentinel_corpus};
use bicrank_core::trainer::{train, TrainConfig};
use nalgebra::DMatrix;
use ndarray::Array2;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct BlobPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub flipped: bool,
    pub removed: bool,
}

#[derive(Debug, Serialize)]
pub struct DenoiseView {
    pub points: Vec<BlobPoint>,
    pub flipped: usize,
    pub removed: usize,
    pub precision: f64,
    pub recall: f64,
}

pub fn denoise_view(n: usize, noise_rate: f64, seed: u64) -> Result<DenoiseView, String> {
    if !(0.0..0.5).contains(&noise_rate) {
        return Err("noise rate must be in [0, 0.5)".into());
    }
    let blobs = noisy_blobs(n.max(20), 2, 4.0, noise_rate, seed);
    let config = DenoiseConfig { seed, ..Default::default() };
    let out = denoise(blobs.features.view(), &blobs.noisy, 2, &ClassifierSpec::logistic(), &config)
        .map_err(|e| e.to_string())?;
    let removed = out.report.removed();
    let points: Vec<BlobPoint> = (0..blobs.noisy.len())
        .map(|i| BlobPoint {
            x: blobs.features[[i, 0]],
            y: blobs.features[[i, 1]],
            label: blobs.noisy[i],
            flipped: blobs.flipped[i],
            removed: removed.contains(&i),
        })
        .collect();
    let flipped = points.iter().filter(|p| p.flipped).count();
    let hits = points.iter().filter(|p| p.flipped && p.removed).count() as f64;
    Ok(DenoiseView {
        flipped,
        removed: removed.len(),
        precision: if removed.is_empty() { 0.0 } else { hits / removed.len() as f64 },
        recall: if flipped == 0 { 0.0 } else { hits / flipped as f64 },
        points,
    })
}

#[derive(Debug, Serialize)]
pub struct OperatorView {
    pub nodes: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

/// Parses `a b [weight]` lines (undirected, `#` comments) into the
/// normalized operator and its spectrum.
pub fn operator_view(edges: &str) -> Result<OperatorView, String> {
    let mut nodes: Vec<String> = Vec::new();
    let mut parsed = Vec::new();
    for (no, raw) in edges.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (a, b, w) = match parts[..] {
            [a] => (a, a, 0.0),
            [a, b] => (a, b, 1.0),
            [a, b, w] => (a, b, w.parse::<f64>().map_err(|_| format!("line {}: bad weight `{w}`", no + 1))?),
            _ => return Err(format!("line {}: expected `a b [weight]`", no + 1)),
        };
        if a != b && !(w > 0.0 && w.is_finite()) {
            return Err(format!("line {}: weight must be positive", no + 1));
        }
        for id in [a, b] {
            if !nodes.iter().any(|n| n == id) {
                nodes.push(id.to_string());
            }
        }
        parsed.push((a.to_string(), b.to_string(), w));
    }
    if nodes.len() > 60 {
        return Err("at most 60 nodes".into());
    }
    let pos = |id: &str| nodes.iter().position(|n| n == id).unwrap();
    let n = nodes.len();
    let mut adj = Array2::zeros((n, n));
    for (a, b, w) in &parsed {
        let (i, j) = (pos(a), pos(b));
        if i != j {
            let v = f64::max(adj[[i, j]], *w);
            adj[[i, j]] = v;
            adj[[j, i]] = v;
        }
    }
    let op = normalized_operator(&adj).0;
    let mut eigenvalues: Vec<f64> = DMatrix::from_fn(n, n, |i, j| op[[i, j]])
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    Ok(OperatorView {
        nodes,
        matrix: op.rows().into_iter().map(|r| r.to_vec()).collect(),
        eigenvalues,
    })
}

const DEMO_DIM: usize = 128;

fn demo_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        epochs,
        denoise: false,
        embedding_dim: DEMO_DIM,
        model: ModelConfig { layers: 2, hidden_dim: 32, ..Default::default() },
        ..Default::default()
    }
}

thread_local! {
    static MODEL: RefCell<Option<RankModel>> = const { RefCell::new(None) };
}

/// Trains on a fresh sentinel corpus and keeps the model for [`rank_lines`].
/// Returns the per-epoch loss.
pub fn train_sentinel(commits: usize, epochs: usize, seed: u64) -> Result<Vec<f64>, String> {
    let (nodes, edges) = sentinel_corpus(commits.clamp(4, 200), seed);
    let index = DatasetIndex::from_records(nodes, edges).map_err(|e| e.to_string())?;
    let config = TrainConfig { seed, ..demo_config(epochs.clamp(1, 200)) };
    let emb = hash_matrix(&index, DEMO_DIM, config.embedding_seed);
    let out = train(&index, &index.commit_ids(), &emb, &config).map_err(|e| e.to_string())?;
    MODEL.with(|m| *m.borrow_mut() = Some(out.model));
    Ok(out.loss_trace)
}

#[derive(Debug, Serialize)]
pub struct ScoredLine {
    pub line: String,
    pub score: f64,
}

/// Ranks each non-empty line of `text` as a deleted line of one commit;
/// consecutive lines are linked.
pub fn rank_lines(text: &str) -> Result<Vec<ScoredLine>, String> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err("enter at least one line".into());
    }
    let nodes: Vec<LineNode> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| LineNode {
            node_id: format!("line{i:03}"),
            commit_id: "demo".into(),
            project_id: "demo".into(),
            role: Role::Deleted,
            version: Version::Old,
            text: l.to_string(),
            root_cause: false,
        })
        .collect();
    let edges = (1..lines.len())
        .map(|i| EdgeRecord::new(format!("line{:03}", i - 1), format!("line{i:03}"), 1.0))
        .collect();
    let index = DatasetIndex::from_records(nodes, edges).map_err(|e| e.to_string())?;
    let emb = hash_matrix(&index, DEMO_DIM, 0);
    let graph = build_commit_graph(&index, "demo", &emb, 1.0).map_err(|e| e.to_string())?;
    MODEL.with(|m| {
        let model = m.borrow();
        let model = model.as_ref().ok_or("train the model first")?;
        let ranking = rank_commit(model, &graph).map_err(|e| e.to_string())?;
        Ok(ranking
            .ranking
            .into_iter()
            .map(|r| {
                let i: usize = r.node_id[4..].parse().unwrap();
                ScoredLine { line: lines[i].to_string(), score: r.score }
            })
            .collect())
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("serializable"))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn denoise_demo(n: usize, noise_rate: f64, seed: u32) -> Result<String, JsValue> {
    to_json(denoise_view(n, noise_rate, seed.into()))
}

#[wasm_bindgen]
pub fn operator_demo(edges: &str) -> Result<String, JsValue> {
    to_json(operator_view(edges))
}

#[wasm_bindgen]
pub fn rank_demo_train(commits: usize, epochs: usize, seed: u32) -> Result<String, JsValue> {
    to_json(train_sentinel(commits, epochs, seed.into()))
}

#[wasm_bindgen]
pub fn rank_demo_lines(text: &str) -> Result<String, JsValue> {
    to_json(rank_lines(text))
}
