//! Filtered ranking evaluation, per-distance breakdown and the inference
//! benchmark.

mod bench;
mod ranking;

pub use bench::{bench_inference, BenchReport};
pub use ranking::{
    mean_reciprocal_rank, rank_with_ties, DistanceBucket, FilterIndex, RankedTriple, RankingReport,
    TieRank,
};

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::model::{forward_redgnn, ModelError, ParameterSet, Query};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("answer {answer} outside the {candidates} scored candidates")]
    MissingAnswer { answer: usize, candidates: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ranks the tail of every query triple against all entities of `graph`,
/// filtering the other known answers. `queries` should already contain both
/// directions. Queries are grouped by head into batches of `batch_size`;
/// the report keeps the input order.
pub fn evaluate(
    params: &ParameterSet<f32>,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    filter: &FilterIndex,
    batch_size: usize,
) -> Result<RankingReport, EvalError> {
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.sort_by_key(|&i| (queries[i].head, i));
    let batches: Vec<&[usize]> = order.chunks(batch_size.max(1)).collect();
    let view = graph.view();
    let range = graph.entity_range();

    let ranked: Vec<Vec<(usize, TieRank)>> = batches
        .par_iter()
        .map(|batch| -> Result<_, EvalError> {
            let qs: Vec<Query> = batch.iter().map(|&i| Query::from(queries[i])).collect();
            let fwd = forward_redgnn(params, &view, &qs, None)?;
            let mut out = Vec::with_capacity(batch.len());
            for (k, &i) in batch.iter().enumerate() {
                let t = queries[i];
                let scores = fwd.dense_scores(k, range.clone());
                let rank = rank_with_ties(&scores, (t.tail - range.start) as usize, |e| {
                    filter.is_known(t.head, t.rel, range.start + e as EntityId)
                })?;
                out.push((i, rank));
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let mut ranks = vec![None; queries.len()];
    for (i, r) in ranked.into_iter().flatten() {
        ranks[i] = Some(r);
    }
    let ranks = ranks
        .into_iter()
        .zip(queries)
        .map(|(r, &triple)| RankedTriple {
            triple,
            rank: r.expect("every query ranked"),
        })
        .collect();
    Ok(RankingReport::from_ranks(ranks))
}

/// Hop distances from `source` over stored (non-identity) edges.
pub fn hop_distances(graph: &KnowledgeGraph, source: EntityId) -> HashMap<EntityId, usize> {
    let mut dist = HashMap::from([(source, 0)]);
    let mut queue = VecDeque::from([source]);
    while let Some(e) = queue.pop_front() {
        let d = dist[&e];
        for t in graph.out_edges(e) {
            dist.entry(t.tail).or_insert_with(|| {
                queue.push_back(t.tail);
                d + 1
            });
        }
    }
    dist
}

pub const DISTANCE_LABELS: [&str; 6] = ["1", "2", "3", "4", "5", ">5"];

/// Bucket index of a hop distance: 0..=4 for distances 1..=5 (a self-query
/// at distance 0 joins the first bucket), 5 for longer or unreachable.
pub fn distance_bucket(distance: Option<usize>) -> usize {
    match distance {
        Some(d) if d <= 5 => d.max(1) - 1,
        _ => 5,
    }
}

/// Splits the report's queries by shortest head-to-answer distance in
/// `graph`.
pub fn per_distance(report: &RankingReport, graph: &KnowledgeGraph) -> Vec<DistanceBucket> {
    let mut cache: HashMap<EntityId, HashMap<EntityId, usize>> = HashMap::new();
    let mut groups: Vec<Vec<TieRank>> = vec![Vec::new(); DISTANCE_LABELS.len()];
    for r in &report.ranks {
        let dist = cache
            .entry(r.triple.head)
            .or_insert_with(|| hop_distances(graph, r.triple.head));
        groups[distance_bucket(dist.get(&r.triple.tail).copied())].push(r.rank);
    }
    let total = report.ranks.len().max(1) as f64;
    groups
        .iter()
        .zip(DISTANCE_LABELS)
        .map(|(g, label)| DistanceBucket {
            label: label.to_string(),
            count: g.len(),
            ratio: g.len() as f64 / total,
            mrr: mean_reciprocal_rank(g),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationSpace;

    #[test]
    fn distances_use_reverse_edges() {
        let g = KnowledgeGraph::from_facts(
            0..5,
            RelationSpace::new(1),
            &[Triple::new(1, 0, 0), Triple::new(1, 0, 2), Triple::new(2, 0, 3)],
        )
        .unwrap();
        let d = hop_distances(&g, 0);
        assert_eq!(d[&1], 1);
        assert_eq!(d[&3], 3);
        assert!(!d.contains_key(&4));
    }

    #[test]
    fn buckets() {
        assert_eq!(distance_bucket(Some(1)), 0);
        assert_eq!(distance_bucket(Some(0)), 0);
        assert_eq!(distance_bucket(Some(5)), 4);
        assert_eq!(distance_bucket(Some(6)), 5);
        assert_eq!(distance_bucket(None), 5);
    }
}
