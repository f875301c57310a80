use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::kg::{KnowledgeGraph, Triple};
use crate::model::{forward_redgnn, forward_redsimp, ModelError, ParameterSet, Query};
use crate::rdigraph::frontier_chain;

/// Cost of answering full `(e_q, r_q, ?)` queries: once by the recursive
/// encoder, and by the single-pair encoder run for every candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub num_entities: usize,
    pub num_edges: usize,
    pub depth: usize,
    pub dim: usize,
    pub queries: usize,
    pub seconds_recursive: f64,
    pub seconds_single_pair: f64,
    pub speedup: f64,
    /// Edge instances the recursive encoder processed.
    pub edges_recursive: usize,
    /// `Σ_ℓ |Ê^ℓ|` over the queries, counted independently.
    pub frontier_edges: usize,
    /// Edges scanned and encoded by the per-candidate loop.
    pub edges_single_pair: usize,
}

impl BenchReport {
    pub fn csv_header() -> &'static str {
        "num_entities,num_edges,depth,dim,queries,seconds_recursive,seconds_single_pair,speedup,edges_recursive,frontier_edges,edges_single_pair"
    }

    pub fn to_csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{:.6},{:.6},{:.2},{},{},{}",
            self.num_entities,
            self.num_edges,
            self.depth,
            self.dim,
            self.queries,
            self.seconds_recursive,
            self.seconds_single_pair,
            self.speedup,
            self.edges_recursive,
            self.frontier_edges,
            self.edges_single_pair
        );
        s
    }
}

pub fn bench_inference(
    params: &ParameterSet<f32>,
    graph: &KnowledgeGraph,
    queries: &[Query],
) -> Result<BenchReport, ModelError> {
    let view = graph.view();
    let depth = params.config.depth;

    let mut edges_recursive = 0;
    let start = Instant::now();
    for &q in queries {
        let fwd = forward_redgnn(params, &view, &[q], None)?;
        edges_recursive += fwd.plan.num_edges();
    }
    let seconds_recursive = start.elapsed().as_secs_f64();

    let mut edges_single_pair = 0;
    let start = Instant::now();
    for &q in queries {
        for e in graph.entity_range() {
            let out = forward_redsimp(params, &view, Triple::new(q.head, q.rel, e))?;
            edges_single_pair += out.rdigraph.edges_scanned + out.rdigraph.num_edges();
        }
    }
    let seconds_single_pair = start.elapsed().as_secs_f64();

    let frontier_edges = queries
        .iter()
        .map(|q| {
            frontier_chain(&view, &[q.head], depth)
                .iter()
                .map(|f| f.edges.len())
                .sum::<usize>()
        })
        .sum();

    Ok(BenchReport {
        num_entities: graph.num_entities(),
        num_edges: graph.num_edges(),
        depth,
        dim: params.config.dim,
        queries: queries.len(),
        seconds_recursive,
        seconds_single_pair,
        speedup: seconds_single_pair / seconds_recursive.max(1e-12),
        edges_recursive,
        frontier_edges,
        edges_single_pair,
    })
}
