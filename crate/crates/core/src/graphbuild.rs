//! Per-commit homogeneous graphs and the self-looped, symmetrically
//! normalized propagation operator used by every GCN layer.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use serde::Serialize;

use crate::dataset::{DatasetIndex, EdgeRecord, Role};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Dense graph for one commit. Deleted lines occupy rows `0..n_deleted`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommitGraph {
    pub commit_id: String,
    /// Deleted nodes sorted by id, then context nodes sorted by id.
    pub node_ids: Vec<String>,
    pub n_deleted: usize,
    #[serde(skip)]
    pub adjacency: Array2<f64>,
    #[serde(skip)]
    pub features: Array2<f64>,
    /// Root-cause flags of the deleted nodes, in node order.
    pub labels: Vec<bool>,
}

impl CommitGraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn deleted_ids(&self) -> &[String] {
        &self.node_ids[..self.n_deleted]
    }

    pub fn operator(&self) -> PropagationOperator {
        normalized_operator(&self.adjacency)
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator(pub Array2<f64>);

impl PropagationOperator {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// Emits an undirected edge for every `(u, v)` in `sources x targets`, `u != v`,
/// such that `raw_deps` contains a directed path from `u` to `v`. Each
/// unordered pair is emitted once, ordered by `(min, max)` id; weights are
/// left unset so the configured default applies.
pub fn derive_edges_by_reachability<S: AsRef<str>>(
    raw_deps: &[(S, S)],
    sources: &BTreeSet<String>,
    targets: &BTreeSet<String>,
) -> Vec<EdgeRecord> {
    let mut succ: HashMap<&str, Vec<&str>> = HashMap::new();
    for (from, to) in raw_deps {
        succ.entry(from.as_ref()).or_default().push(to.as_ref());
    }

    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for src in sources {
        let mut visited: BTreeSet<&str> = BTreeSet::new();
        let mut stack: Vec<&str> = succ.get(src.as_str()).cloned().unwrap_or_default();
        while let Some(node) = stack.pop() {
            if !visited.insert(node) {
                continue;
            }
            if let Some(next) = succ.get(node) {
                stack.extend(next.iter().copied().filter(|n| !visited.contains(n)));
            }
        }
        for dst in targets {
            if dst != src && visited.contains(dst.as_str()) {
                let key = if src < dst {
                    (src.clone(), dst.clone())
                } else {
                    (dst.clone(), src.clone())
                };
                pairs.insert(key);
            }
        }
    }

    pairs
        .into_iter()
        .map(|(a, b)| EdgeRecord {
            src: a,
            dst: b,
            weight: None,
            relation: Some("reachability".into()),
        })
        .collect()
}

/// Builds the dense graph of one commit. Asymmetric or duplicate edges
/// resolve to the larger weight; edges without a weight get `default_weight`.
pub fn build_commit_graph(
    index: &DatasetIndex,
    commit_id: &str,
    embeddings: &EmbeddingMatrix,
    default_weight: f64,
) -> Result<CommitGraph> {
    let entry = index
        .commit(commit_id)
        .ok_or_else(|| Error::UnknownCommit(commit_id.to_string()))?;
    if !(default_weight.is_finite() && default_weight > 0.0) {
        return Err(Error::Config(format!(
            "default edge weight must be finite and > 0, got {default_weight}"
        )));
    }
    let nodes = index.nodes();

    let mut deleted: Vec<&str> = Vec::new();
    let mut context: Vec<&str> = Vec::new();
    for &p in &entry.nodes {
        match nodes[p].role {
            Role::Deleted => deleted.push(&nodes[p].node_id),
            Role::Context => context.push(&nodes[p].node_id),
        }
    }
    deleted.sort_unstable();
    context.sort_unstable();
    let n_deleted = deleted.len();
    let node_ids: Vec<String> = deleted.into_iter().chain(context).map(String::from).collect();
    let order: BTreeMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let n = node_ids.len();
    let mut adjacency = Array2::<f64>::zeros((n, n));
    for &e in &entry.edges {
        let edge = &index.edges()[e];
        let (i, j) = (order[edge.src.as_str()], order[edge.dst.as_str()]);
        let w = edge.weight_or(default_weight);
        let cur = adjacency[[i, j]].max(w);
        adjacency[[i, j]] = cur;
        adjacency[[j, i]] = cur;
    }

    let mut features = Array2::<f64>::zeros((n, embeddings.dim()));
    for (i, id) in node_ids.iter().enumerate() {
        let row = embeddings
            .row(id)
            .ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
        features.row_mut(i).assign(&row);
    }

    let labels = node_ids[..n_deleted]
        .iter()
        .map(|id| index.node(id).map(|n| n.root_cause).unwrap_or(false))
        .collect();

    Ok(CommitGraph {
        commit_id: commit_id.to_string(),
        node_ids,
        n_deleted,
        adjacency,
        features,
        labels,
    })
}

/// Normalized self-looped adjacency. Degrees include the self loop, so every
/// degree is at least one.
pub fn normalized_operator(adjacency: &Array2<f64>) -> PropagationOperator {
    let n = adjacency.nrows();
    let degree: Vec<f64> = adjacency.rows().into_iter().map(|r| r.sum() + 1.0).collect();
    let mut op = adjacency.clone();
    for i in 0..n {
        op[[i, i]] += 1.0;
    }
    for ((i, j), x) in op.indexed_iter_mut() {
        *x /= (degree[i] * degree[j]).sqrt();
    }
    PropagationOperator(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LineNode, Version};
    use crate::embedding::hash_matrix;
    use ndarray::array;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn pairs(edges: &[EdgeRecord]) -> Vec<(String, String)> {
        edges.iter().map(|e| (e.src.clone(), e.dst.clone())).collect()
    }

    #[test]
    fn reachability_chain() {
        let deps = [("a", "b"), ("b", "c")];
        let edges = derive_edges_by_reachability(&deps, &set(&["a"]), &set(&["c"]));
        assert_eq!(pairs(&edges), [("a".into(), "c".into())]);
        assert_eq!(edges[0].weight_or(1.0), 1.0);
    }

    #[test]
    fn reachability_disconnected() {
        let deps = [("a", "b"), ("c", "d")];
        assert!(derive_edges_by_reachability(&deps, &set(&["a"]), &set(&["d"])).is_empty());
        // direction matters
        assert!(derive_edges_by_reachability(&deps, &set(&["b"]), &set(&["a"])).is_empty());
    }

    #[test]
    fn reachability_cycle_terminates() {
        let deps = [("a", "b"), ("b", "c"), ("c", "a")];
        // Transitive closure of the 3-cycle is complete, so a reaches b and c.
        let edges = derive_edges_by_reachability(&deps, &set(&["a"]), &set(&["b", "c"]));
        assert_eq!(
            pairs(&edges),
            [("a".into(), "b".into()), ("a".into(), "c".into())]
        );
    }

    #[test]
    fn single_node_operator_is_one() {
        let op = normalized_operator(&Array2::zeros((1, 1)));
        assert_eq!(op.0, array![[1.0]]);
    }

    #[test]
    fn unit_edge_operator() {
        let op = normalized_operator(&array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(op.0, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn path_operator_matches_dense_product() {
        // Oracle: D^{-1/2} (A+I) D^{-1/2} by explicit matrix products.
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let at = &a + &Array2::<f64>::eye(3);
        let d = Array2::from_diag(&at.sum_axis(ndarray::Axis(1)).mapv(|x| 1.0 / x.sqrt()));
        let expected = d.dot(&at).dot(&d);
        let op = normalized_operator(&a);
        for (x, y) in op.0.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        // hand values: d = (2, 3, 2)
        assert!((op.0[[0, 1]] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((op.0[[1, 1]] - 1.0 / 3.0).abs() < 1e-15);
    }

    fn line(id: &str, role: Role) -> LineNode {
        LineNode {
            node_id: id.into(),
            commit_id: "c".into(),
            project_id: "p".into(),
            role,
            version: Version::Old,
            text: format!("foo {id}"),
            root_cause: false,
        }
    }

    #[test]
    fn single_deleted_node_graph() {
        let idx = DatasetIndex::from_records(vec![line("a", Role::Deleted)], vec![]).unwrap();
        let emb = hash_matrix(&idx, 8, 0);
        let g = build_commit_graph(&idx, "c", &emb, 1.0).unwrap();
        assert_eq!(g.adjacency, Array2::<f64>::zeros((1, 1)));
        assert_eq!(g.n_deleted, 1);
    }

    #[test]
    fn symmetrization_and_max_rule() {
        let nodes = vec![
            line("z", Role::Context),
            line("b", Role::Deleted),
            line("a", Role::Deleted),
        ];
        let edges = vec![
            EdgeRecord::new("a", "b", 1.0),
            EdgeRecord::new("b", "a", 3.0),
            EdgeRecord::new("a", "z", 2.5),
        ];
        let idx = DatasetIndex::from_records(nodes, edges).unwrap();
        let emb = hash_matrix(&idx, 8, 0);
        let g = build_commit_graph(&idx, "c", &emb, 1.0).unwrap();
        assert_eq!(g.node_ids, ["a", "b", "z"]);
        assert_eq!(g.adjacency[[0, 1]], 3.0);
        assert_eq!(g.adjacency[[1, 0]], 3.0);
        assert_eq!(g.adjacency[[0, 2]], 2.5);
        assert_eq!(g.adjacency[[2, 0]], 2.5);
        assert_eq!(g.adjacency[[1, 2]], 0.0);
        assert!(matches!(
            build_commit_graph(&idx, "nope", &emb, 1.0),
            Err(Error::UnknownCommit(_))
        ));
    }

    #[test]
    fn unweighted_edges_take_default() {
        let nodes = vec![line("a", Role::Deleted), line("b", Role::Context)];
        let mut e = EdgeRecord::new("a", "b", 1.0);
        e.weight = None;
        let idx = DatasetIndex::from_records(nodes, vec![e]).unwrap();
        let emb = hash_matrix(&idx, 4, 0);
        let g = build_commit_graph(&idx, "c", &emb, 0.7).unwrap();
        assert_eq!(g.adjacency[[0, 1]], 0.7);
    }
}
