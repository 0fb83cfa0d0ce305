//! On-disk data model: line nodes, dependency edges, and the validated index
//! built from the two JSONL files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Deleted,
    Context,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    Old,
    New,
}

/// A single code line belonging to a bug-fixing commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineNode {
    pub node_id: String,
    pub commit_id: String,
    pub project_id: String,
    pub role: Role,
    pub version: Version,
    pub text: String,
    #[serde(default)]
    pub root_cause: bool,
}

/// Weighted dependency edge between two lines of the same commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    /// Absent means "use the configured default weight".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

impl EdgeRecord {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, weight: f64) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            weight: Some(weight),
            relation: None,
        }
    }

    pub fn weight_or(&self, default_weight: f64) -> f64 {
        self.weight.unwrap_or(default_weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitEntry {
    pub project_id: String,
    /// Positions into [`DatasetIndex::nodes`], in file order.
    pub nodes: Vec<usize>,
    /// Positions into [`DatasetIndex::edges`], in file order.
    pub edges: Vec<usize>,
}

/// Counts reported by validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub nodes: usize,
    pub edges: usize,
    pub commits: usize,
    pub projects: usize,
    pub deleted_nodes: usize,
    pub root_cause_nodes: usize,
    pub excluded_commits: Vec<String>,
}

/// A train/test partition at commit granularity. Both sides are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Validated, cross-referenced dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    nodes: Vec<LineNode>,
    edges: Vec<EdgeRecord>,
    by_id: HashMap<String, usize>,
    commits: BTreeMap<String, CommitEntry>,
    projects: BTreeMap<String, BTreeSet<String>>,
    excluded: BTreeSet<String>,
}

impl DatasetIndex {
    /// Validates records and builds the index. `edge_lines` gives the 1-based
    /// source line for each edge, used in error messages.
    fn build(
        nodes: Vec<LineNode>,
        node_lines: &[usize],
        edges: Vec<EdgeRecord>,
        edge_lines: &[usize],
        nodes_origin: &Path,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(nodes.len());
        let mut commits: BTreeMap<String, CommitEntry> = BTreeMap::new();
        let mut projects: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();

        for (pos, node) in nodes.iter().enumerate() {
            if by_id.insert(node.node_id.clone(), pos).is_some() {
                return Err(Error::DuplicateNode(node.node_id.clone()));
            }
            if node.root_cause && node.role != Role::Deleted {
                return Err(Error::Malformed {
                    path: nodes_origin.to_path_buf(),
                    line: node_lines[pos],
                    reason: format!("node `{}` is a root cause but not a deleted line", node.node_id),
                });
            }
            let entry = commits
                .entry(node.commit_id.clone())
                .or_insert_with(|| CommitEntry {
                    project_id: node.project_id.clone(),
                    nodes: Vec::new(),
                    edges: Vec::new(),
                });
            if entry.project_id != node.project_id {
                return Err(Error::Malformed {
                    path: nodes_origin.to_path_buf(),
                    line: node_lines[pos],
                    reason: format!(
                        "commit `{}` spans projects `{}` and `{}`",
                        node.commit_id, entry.project_id, node.project_id
                    ),
                });
            }
            entry.nodes.push(pos);
            projects
                .entry(node.project_id.clone())
                .or_default()
                .insert(node.commit_id.clone());
        }

        for (pos, edge) in edges.iter().enumerate() {
            let bad = |reason: &str| Error::BadEdge {
                line: edge_lines[pos],
                src: edge.src.clone(),
                dst: edge.dst.clone(),
                reason: reason.to_string(),
            };
            let src = *by_id.get(&edge.src).ok_or_else(|| bad("unknown src node"))?;
            let dst = *by_id.get(&edge.dst).ok_or_else(|| bad("unknown dst node"))?;
            if src == dst {
                return Err(bad("self loop"));
            }
            if nodes[src].commit_id != nodes[dst].commit_id {
                return Err(bad("endpoints belong to different commits"));
            }
            if edge.weight.is_some_and(|w| !(w.is_finite() && w > 0.0)) {
                return Err(bad("weight must be finite and > 0"));
            }
            commits
                .get_mut(&nodes[src].commit_id)
                .expect("commit registered with its nodes")
                .edges
                .push(pos);
        }

        let mut excluded = BTreeSet::new();
        for (id, entry) in &commits {
            if !entry.nodes.iter().any(|&p| nodes[p].role == Role::Deleted) {
                log::warn!("commit `{id}` has no deleted lines; excluded from training and evaluation");
                excluded.insert(id.clone());
            }
        }

        Ok(Self {
            nodes,
            edges,
            by_id,
            commits,
            projects,
            excluded,
        })
    }

    /// Builds an index from in-memory records. Error line numbers are 1-based
    /// record positions.
    pub fn from_records(nodes: Vec<LineNode>, edges: Vec<EdgeRecord>) -> Result<Self> {
        let node_lines: Vec<usize> = (1..=nodes.len()).collect();
        let edge_lines: Vec<usize> = (1..=edges.len()).collect();
        Self::build(nodes, &node_lines, edges, &edge_lines, Path::new("<memory>"))
    }

    pub fn nodes(&self) -> &[LineNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn node(&self, node_id: &str) -> Option<&LineNode> {
        self.by_id.get(node_id).map(|&p| &self.nodes[p])
    }

    pub fn position(&self, node_id: &str) -> Option<usize> {
        self.by_id.get(node_id).copied()
    }

    pub fn commit(&self, commit_id: &str) -> Option<&CommitEntry> {
        self.commits.get(commit_id)
    }

    /// All commits, including ones excluded for lacking deleted lines.
    pub fn all_commits(&self) -> impl Iterator<Item = (&String, &CommitEntry)> {
        self.commits.iter()
    }

    /// Commits usable for training and evaluation, sorted by id.
    pub fn commit_ids(&self) -> Vec<String> {
        self.commits
            .keys()
            .filter(|id| !self.excluded.contains(*id))
            .cloned()
            .collect()
    }

    pub fn excluded_commits(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    pub fn projects(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.projects
    }

    /// Deleted-line positions of one commit, in file order.
    pub fn deleted_nodes(&self, commit_id: &str) -> Vec<usize> {
        self.commits
            .get(commit_id)
            .map(|c| {
                c.nodes
                    .iter()
                    .copied()
                    .filter(|&p| self.nodes[p].role == Role::Deleted)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn summary(&self) -> ValidationSummary {
        ValidationSummary {
            nodes: self.nodes.len(),
            edges: self.edges.len(),
            commits: self.commits.len(),
            projects: self.projects.len(),
            deleted_nodes: self.nodes.iter().filter(|n| n.role == Role::Deleted).count(),
            root_cause_nodes: self.nodes.iter().filter(|n| n.root_cause).count(),
            excluded_commits: self.excluded.iter().cloned().collect(),
        }
    }

    /// Writes the index back out as a nodes file and an edges file.
    pub fn write_jsonl(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        write_jsonl(nodes_path, &self.nodes)?;
        write_jsonl(edges_path, &self.edges)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Vec<T>, Vec<usize>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
        lines.push(i + 1);
    }
    Ok((records, lines))
}

/// Loads and validates a nodes file and an edges file.
pub fn load_dataset(nodes_path: &Path, edges_path: &Path) -> Result<DatasetIndex> {
    let (nodes, node_lines) = read_jsonl::<LineNode>(nodes_path)?;
    let (edges, edge_lines) = read_jsonl::<EdgeRecord>(edges_path)?;
    DatasetIndex::build(nodes, &node_lines, edges, &edge_lines, nodes_path)
}

/// Shuffles the sorted commit ids with a seeded Fisher-Yates pass and cuts
/// them into `k` folds whose sizes differ by at most one.
pub fn kfold_split(index: &DatasetIndex, k: usize, seed: u64) -> Result<Vec<Split>> {
    let ids = index.commit_ids();
    kfold_ids(&ids, k, seed)
}

pub(crate) fn kfold_ids(ids: &[String], k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::Split(format!("k must be at least 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Split(format!(
            "k = {k} exceeds the number of commits ({})",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = shuffled.len() / k;
    let extra = shuffled.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(&shuffled[start..start + len]);
        start += len;
    }

    Ok((0..k)
        .map(|f| {
            let mut test = folds[f].to_vec();
            let mut train: Vec<String> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, fold)| fold.iter().cloned())
                .collect();
            test.sort();
            train.sort();
            Split { train, test }
        })
        .collect())
}

/// Holds out every commit of `test_projects`; everything else trains.
pub fn cross_project_split(index: &DatasetIndex, test_projects: &[String]) -> Result<Split> {
    if test_projects.is_empty() {
        return Err(Error::Split("no test projects given".into()));
    }
    let wanted: BTreeSet<&str> = test_projects.iter().map(String::as_str).collect();
    for p in &wanted {
        if !index.projects.contains_key(*p) {
            return Err(Error::UnknownProject(p.to_string()));
        }
    }
    let (test, train): (Vec<String>, Vec<String>) = index
        .commit_ids()
        .into_iter()
        .partition(|id| wanted.contains(index.commits[id].project_id.as_str()));
    if train.is_empty() {
        return Err(Error::Split("cross-project split leaves an empty training set".into()));
    }
    if test.is_empty() {
        return Err(Error::Split("cross-project split leaves an empty test set".into()));
    }
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn node(id: &str, commit: &str, project: &str, role: Role, root: bool) -> LineNode {
        LineNode {
            node_id: id.into(),
            commit_id: commit.into(),
            project_id: project.into(),
            role,
            version: Version::Old,
            text: format!("line {id}"),
            root_cause: root,
        }
    }

    fn commits(n: usize) -> DatasetIndex {
        let nodes = (0..n)
            .map(|i| node(&format!("n{i}"), &format!("c{i:02}"), "p", Role::Deleted, i % 2 == 0))
            .collect();
        DatasetIndex::from_records(nodes, vec![]).unwrap()
    }

    #[test]
    fn empty_input_gives_empty_index() {
        let idx = DatasetIndex::from_records(vec![], vec![]).unwrap();
        let s = idx.summary();
        assert_eq!((s.nodes, s.edges, s.commits), (0, 0, 0));
    }

    #[test]
    fn rejects_dangling_edge() {
        let nodes = vec![node("a", "c", "p", Role::Deleted, true)];
        let err = DatasetIndex::from_records(nodes, vec![EdgeRecord::new("a", "ghost", 1.0)])
            .unwrap_err();
        assert!(matches!(err, Error::BadEdge { line: 1, ref dst, .. } if dst == "ghost"), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids_and_cross_commit_edges() {
        let dup = vec![
            node("a", "c", "p", Role::Deleted, false),
            node("a", "c", "p", Role::Context, false),
        ];
        assert!(matches!(
            DatasetIndex::from_records(dup, vec![]),
            Err(Error::DuplicateNode(_))
        ));

        let nodes = vec![
            node("a", "c1", "p", Role::Deleted, false),
            node("b", "c2", "p", Role::Deleted, false),
        ];
        let err = DatasetIndex::from_records(nodes, vec![EdgeRecord::new("a", "b", 1.0)]);
        assert!(matches!(err, Err(Error::BadEdge { .. })));
    }

    #[test]
    fn rejects_bad_weight_and_context_root_cause() {
        let nodes = vec![
            node("a", "c", "p", Role::Deleted, false),
            node("b", "c", "p", Role::Context, false),
        ];
        let err = DatasetIndex::from_records(nodes.clone(), vec![EdgeRecord::new("a", "b", 0.0)]);
        assert!(matches!(err, Err(Error::BadEdge { .. })));

        let bad = vec![node("x", "c", "p", Role::Context, true)];
        assert!(matches!(
            DatasetIndex::from_records(bad, vec![]),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn context_only_commit_is_excluded_not_fatal() {
        let nodes = vec![
            node("a", "c1", "p", Role::Deleted, true),
            node("b", "c2", "p", Role::Context, false),
        ];
        let idx = DatasetIndex::from_records(nodes, vec![]).unwrap();
        assert_eq!(idx.commit_ids(), vec!["c1".to_string()]);
        assert!(idx.excluded_commits().contains("c2"));
        assert_eq!(idx.summary().nodes, 2);
    }

    #[test]
    fn kfold_ten_commits_ten_folds() {
        let idx = commits(10);
        let folds = kfold_split(&idx, 10, 7).unwrap();
        assert_eq!(folds.len(), 10);
        for f in &folds {
            assert_eq!(f.test.len(), 1);
            assert_eq!(f.train.len(), 9);
        }
    }

    #[test]
    fn kfold_sizes_near_equal() {
        // 11 commits over 10 folds: one fold of 2, nine of 1.
        let idx = commits(11);
        let mut sizes: Vec<usize> = kfold_split(&idx, 10, 3)
            .unwrap()
            .iter()
            .map(|f| f.test.len())
            .collect();
        sizes.sort();
        assert_eq!(sizes, [1, 1, 1, 1, 1, 1, 1, 1, 1, 2]);
    }

    #[test]
    fn kfold_deterministic_and_rejects_large_k() {
        let idx = commits(12);
        assert_eq!(kfold_split(&idx, 4, 9).unwrap(), kfold_split(&idx, 4, 9).unwrap());
        assert_ne!(kfold_split(&idx, 4, 9).unwrap(), kfold_split(&idx, 4, 10).unwrap());
        assert!(matches!(kfold_split(&idx, 13, 0), Err(Error::Split(_))));
        assert!(matches!(kfold_split(&idx, 1, 0), Err(Error::Split(_))));
    }

    #[test]
    fn cross_project_set_difference() {
        let nodes = vec![
            node("a", "c1", "D1", Role::Deleted, true),
            node("b", "c2", "D2", Role::Deleted, true),
            node("c", "c3", "D3", Role::Deleted, true),
            node("d", "c4", "D2", Role::Deleted, true),
        ];
        let idx = DatasetIndex::from_records(nodes, vec![]).unwrap();
        let split = cross_project_split(&idx, &["D2".into()]).unwrap();
        assert_eq!(split.test, vec!["c2", "c4"]);
        assert_eq!(split.train, vec!["c1", "c3"]);

        let all: Vec<String> = ["D1", "D2", "D3"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(cross_project_split(&idx, &all), Err(Error::Split(_))));
        assert!(matches!(
            cross_project_split(&idx, &["D9".into()]),
            Err(Error::UnknownProject(_))
        ));
    }
}
