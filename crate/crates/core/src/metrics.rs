//! Per-commit rankings, Recall@N and mean first rank (MFR).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gcnrank::{forward, RankModel};
use crate::graphbuild::CommitGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLine {
    pub node_id: String,
    pub score: f64,
}

/// Deleted lines of one commit, best first. Equal scores are ordered by
/// node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub commit_id: String,
    pub ranking: Vec<RankedLine>,
}

impl RankingResult {
    pub fn from_scores(commit_id: &str, ids: &[String], scores: &[f64]) -> Self {
        let mut ranking: Vec<RankedLine> = ids
            .iter()
            .zip(scores)
            .map(|(id, &score)| RankedLine {
                node_id: id.clone(),
                score,
            })
            .collect();
        ranking.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.node_id.cmp(&b.node_id)));
        Self {
            commit_id: commit_id.to_string(),
            ranking,
        }
    }

    /// 1-based rank of the first root-cause line, if any.
    pub fn first_rank(&self, root_causes: &HashSet<String>) -> Option<usize> {
        self.ranking
            .iter()
            .position(|l| root_causes.contains(&l.node_id))
            .map(|p| p + 1)
    }
}

pub fn rank_commit(model: &RankModel, graph: &CommitGraph) -> Result<RankingResult> {
    let op = graph.operator();
    let (scores, _) = forward(model, op.matrix(), graph.features.view(), graph.n_deleted)?;
    Ok(RankingResult::from_scores(
        &graph.commit_id,
        graph.deleted_ids(),
        scores.as_slice().expect("contiguous"),
    ))
}

fn first_ranks(results: &[RankingResult], root_causes: &HashSet<String>) -> Vec<Option<usize>> {
    results.iter().map(|r| r.first_rank(root_causes)).collect()
}

/// Fraction of evaluated commits with a root cause in the top `n`. Commits
/// without any root-cause line are skipped. Returns `None` when nothing is
/// evaluable.
pub fn recall_at_n(results: &[RankingResult], root_causes: &HashSet<String>, n: usize) -> Option<f64> {
    let ranks: Vec<usize> = first_ranks(results, root_causes).into_iter().flatten().collect();
    if ranks.is_empty() {
        return None;
    }
    Some(ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64)
}

/// Mean 1-based rank of the first root-cause line over evaluated commits.
pub fn mfr(results: &[RankingResult], root_causes: &HashSet<String>) -> Option<f64> {
    let ranks: Vec<usize> = first_ranks(results, root_causes).into_iter().flatten().collect();
    if ranks.is_empty() {
        return None;
    }
    Some(ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
}

/// Aggregate metrics. Serialized with `recall@N` keys next to `mfr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(flatten)]
    pub recall: BTreeMap<String, f64>,
    pub mfr: Option<f64>,
    pub commits_evaluated: usize,
    pub commits_skipped: usize,
}

impl MetricSummary {
    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.recall.get(&format!("recall@{n}")).copied()
    }

    /// Unweighted mean over reports that evaluated at least one commit.
    pub fn mean<'a>(parts: impl IntoIterator<Item = &'a MetricSummary>) -> MetricSummary {
        let parts: Vec<&MetricSummary> = parts.into_iter().collect();
        let used: Vec<&&MetricSummary> = parts.iter().filter(|p| p.commits_evaluated > 0).collect();
        let mut recall = BTreeMap::new();
        if let Some(first) = used.first() {
            for key in first.recall.keys() {
                let total: f64 = used.iter().map(|p| p.recall[key]).sum();
                recall.insert(key.clone(), total / used.len() as f64);
            }
        }
        let mfr = (!used.is_empty())
            .then(|| used.iter().map(|p| p.mfr.unwrap_or(0.0)).sum::<f64>() / used.len() as f64);
        MetricSummary {
            recall,
            mfr,
            commits_evaluated: parts.iter().map(|p| p.commits_evaluated).sum(),
            commits_skipped: parts.iter().map(|p| p.commits_skipped).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitOutcome {
    pub commit_id: String,
    pub first_rank: Option<usize>,
    pub ranking: Vec<RankedLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub summary: MetricSummary,
    pub per_commit: Vec<CommitOutcome>,
}

impl EvalReport {
    pub fn new(results: Vec<RankingResult>, root_causes: &HashSet<String>, ks: &[usize]) -> Self {
        let ranks = first_ranks(&results, root_causes);
        let evaluated = ranks.iter().flatten().count();
        let recall = if evaluated == 0 {
            BTreeMap::new()
        } else {
            ks.iter()
                .map(|&k| {
                    let r = recall_at_n(&results, root_causes, k).unwrap_or(0.0);
                    (format!("recall@{k}"), r)
                })
                .collect()
        };
        let summary = MetricSummary {
            recall,
            mfr: mfr(&results, root_causes),
            commits_evaluated: evaluated,
            commits_skipped: ranks.len() - evaluated,
        };
        let per_commit = results
            .into_iter()
            .zip(ranks)
            .map(|(r, first_rank)| CommitOutcome {
                commit_id: r.commit_id,
                first_rank,
                ranking: r.ranking,
            })
            .collect();
        Self { summary, per_commit }
    }

    /// `commit_id,first_rank` lines; skipped commits have an empty rank.
    pub fn first_rank_csv(&self) -> String {
        let mut out = String::from("commit_id,first_rank\n");
        for c in &self.per_commit {
            let rank = c.first_rank.map(|r| r.to_string()).unwrap_or_default();
            writeln!(out, "{},{}", c.commit_id, rank).unwrap();
        }
        out
    }
}
