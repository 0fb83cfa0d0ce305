//! Seeded synthetic corpora for tests, the acceptance suite and the demo.

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{EdgeRecord, LineNode, Role, Version};

pub const SENTINEL_TOKEN: &str = "SENTINEL";

const VOCAB: &[&str] = &[
    "int", "return", "if", "else", "for", "while", "self", "this", "len", "size", "buf", "ptr", "idx", "count",
    "value", "result", "null", "None", "true", "false", "append", "push", "get", "set", "map", "list", "str",
    "node", "next", "prev", "data", "key", "item", "offset", "limit", "error", "close", "open", "read", "write",
    "init", "config", "path", "name", "total", "flag", "tmp", "out", "args", "options",
];

fn code_line(rng: &mut ChaCha8Rng, extra: Option<&str>) -> String {
    let n = rng.random_range(3..=6);
    let mut toks: Vec<&str> = (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect();
    if let Some(t) = extra {
        let at = rng.random_range(0..=toks.len());
        toks.insert(at, t);
    }
    let mut line = toks.join(" ");
    line.push(';');
    line
}

fn node(id: String, commit: &str, project: &str, role: Role, text: String, root: bool) -> LineNode {
    LineNode {
        node_id: id,
        commit_id: commit.into(),
        project_id: project.into(),
        role,
        version: Version::Old,
        text,
        root_cause: root,
    }
}

/// Commits with 3..=8 deleted lines, exactly one of which carries
/// [`SENTINEL_TOKEN`] and is the root cause. Context lines form a chain and
/// each deleted line links to one or two of them.
pub fn sentinel_corpus(n_commits: usize, seed: u64) -> (Vec<LineNode>, Vec<EdgeRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for c in 0..n_commits {
        let commit = format!("s{c:04}");
        let n_del = rng.random_range(3..=8);
        let n_ctx = rng.random_range(2..=5);
        let root = rng.random_range(0..n_del);
        let ctx_ids: Vec<String> = (0..n_ctx).map(|k| format!("{commit}:c{k}")).collect();
        for (k, id) in ctx_ids.iter().enumerate() {
            let mut n = node(id.clone(), &commit, "sentinel", Role::Context, code_line(&mut rng, None), false);
            n.version = if k % 2 == 0 { Version::Old } else { Version::New };
            nodes.push(n);
        }
        for w in ctx_ids.windows(2) {
            edges.push(EdgeRecord::new(w[0].clone(), w[1].clone(), 1.0));
        }
        for d in 0..n_del {
            let id = format!("{commit}:d{d}");
            let is_root = d == root;
            let text = code_line(&mut rng, is_root.then_some(SENTINEL_TOKEN));
            nodes.push(node(id.clone(), &commit, "sentinel", Role::Deleted, text, is_root));
            let links = rng.random_range(1..=2usize).min(n_ctx);
            for ctx in ctx_ids.choose_multiple(&mut rng, links) {
                edges.push(EdgeRecord::new(id.clone(), ctx.clone(), 1.0));
            }
        }
    }
    (nodes, edges)
}

/// Size of one project in [`counted_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectShape {
    pub commits: usize,
    pub nodes: usize,
    pub edges: usize,
}

/// Per-project sizes of the reference dataset after preprocessing.
pub const REFERENCE_SHAPES: [(&str, ProjectShape); 3] = [
    ("D1", ProjectShape { commits: 157, nodes: 2677, edges: 5283 }),
    ("D2", ProjectShape { commits: 284, nodes: 5659, edges: 12965 }),
    ("D3", ProjectShape { commits: 234, nodes: 2186, edges: 4398 }),
];

fn spread(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Random corpus with exactly the requested commit, node and edge counts per
/// project. Panics if a commit cannot hold its share of edges.
pub fn counted_corpus(shapes: &[(&str, ProjectShape)], seed: u64) -> (Vec<LineNode>, Vec<EdgeRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (project, shape) in shapes {
        let node_split = spread(shape.nodes, shape.commits);
        let edge_split = spread(shape.edges, shape.commits);
        for (c, (&n, &m)) in node_split.iter().zip(&edge_split).enumerate() {
            assert!(n >= 2 && m >= n - 1 && m <= n * (n - 1) / 2, "commit cannot hold {m} edges over {n} nodes");
            let commit = format!("{project}-{c:04}");
            let n_del = (n * 2 / 5).max(1);
            let root = rng.random_range(0..n_del);
            let ids: Vec<String> = (0..n).map(|k| format!("{commit}:{k}")).collect();
            for (k, id) in ids.iter().enumerate() {
                let role = if k < n_del { Role::Deleted } else { Role::Context };
                nodes.push(node(id.clone(), &commit, project, role, code_line(&mut rng, None), k == root));
            }
            let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            let chain: Vec<(usize, usize)> = (1..n).map(|k| (k - 1, k)).collect();
            pairs.retain(|p| p.1 != p.0 + 1);
            pairs.shuffle(&mut rng);
            for &(i, j) in chain.iter().chain(&pairs[..m - chain.len()]) {
                edges.push(EdgeRecord::new(ids[i].clone(), ids[j].clone(), rng.random_range(0.5..2.0)));
            }
        }
    }
    (nodes, edges)
}

/// Two Gaussian blobs with a fraction of labels flipped uniformly at random.
#[derive(Debug, Clone)]
pub struct NoisyBlobs {
    pub features: Array2<f64>,
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
    pub flipped: Vec<bool>,
}

pub fn noisy_blobs(n: usize, dim: usize, separation: f64, flip_rate: f64, seed: u64) -> NoisyBlobs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let clean: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut features = Array2::zeros((n, dim));
    let shift = separation / (2.0 * (dim as f64).sqrt());
    for (i, &y) in clean.iter().enumerate() {
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for v in features.row_mut(i).iter_mut() {
            *v = normal.sample(&mut rng) + sign * shift;
        }
    }
    let n_flip = (n as f64 * flip_rate).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut flipped = vec![false; n];
    for &i in &order[..n_flip] {
        flipped[i] = true;
    }
    let noisy = clean.iter().zip(&flipped).map(|(&y, &f)| if f { 1 - y } else { y }).collect();
    NoisyBlobs {
        features,
        clean,
        noisy,
        flipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetIndex;

    #[test]
    fn sentinel_corpus_shape() {
        let (nodes, edges) = sentinel_corpus(20, 3);
        let idx = DatasetIndex::from_records(nodes, edges).unwrap();
        assert_eq!(idx.commit_ids().len(), 20);
        for c in idx.commit_ids() {
            let del = idx.deleted_nodes(&c);
            assert!((3..=8).contains(&del.len()));
            let roots: Vec<_> = del.iter().filter(|&&p| idx.nodes()[p].root_cause).collect();
            assert_eq!(roots.len(), 1);
            assert!(idx.nodes()[*roots[0]].text.contains(SENTINEL_TOKEN));
        }
    }

    #[test]
    fn counted_corpus_hits_counts() {
        let shapes = [("A", ProjectShape { commits: 4, nodes: 30, edges: 50 })];
        let (nodes, edges) = counted_corpus(&shapes, 1);
        let idx = DatasetIndex::from_records(nodes, edges).unwrap();
        let s = idx.summary();
        assert_eq!((s.commits, s.nodes, s.edges), (4, 30, 50));
    }

    #[test]
    fn blobs_flip_exact_fraction() {
        let b = noisy_blobs(100, 5, 4.0, 0.2, 0);
        assert_eq!(b.flipped.iter().filter(|&&f| f).count(), 20);
        assert!(b.clean.iter().zip(&b.noisy).zip(&b.flipped).all(|((c, n), f)| (c != n) == *f));
    }
}
