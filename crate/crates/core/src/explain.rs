//! Evidence subgraphs selected by attention.
//!
//! Starting from the answer, layers are walked from `L` down to `1`; an edge
//! is kept when its destination is already retained and its attention is at
//! least `θ`. Kept edges add their sources to the retained set of the layer
//! below.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, FactView, RelationId, RelationSpace, Triple, Vocab};
use crate::model::{forward_redgnn, ModelError, ParameterSet, Query};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedEdge {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
    pub alpha: f64,
}

impl ExplainedEdge {
    pub fn triple(&self) -> Triple {
        Triple::new(self.head, self.rel, self.tail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub source: EntityId,
    pub sink: EntityId,
    pub query_rel: RelationId,
    pub theta: f64,
    /// Whether the sink is reached in `depth` hops at all.
    pub reachable: bool,
    /// `layers[l - 1]` holds the retained layer-`l` edges in encoder order.
    pub layers: Vec<Vec<ExplainedEdge>>,
}

impl Explanation {
    pub fn num_edges(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_edges() == 0
    }
}

/// Extracts the subgraph of `triple` whose edges carry attention `≥ θ`.
pub fn explain(
    params: &ParameterSet<f32>,
    view: &FactView<'_>,
    triple: Triple,
    theta: f64,
) -> Result<Explanation, ModelError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(ModelError::Config(format!("theta {theta} outside (0, 1)")));
    }
    let fwd = forward_redgnn(params, view, &[Query::from(triple)], None)?;
    let depth = fwd.plan.depth();
    let mut layers = vec![Vec::new(); depth];
    let reachable = fwd.plan.final_row(0, triple.tail).is_some();
    if reachable {
        let mut retained: BTreeSet<EntityId> = BTreeSet::from([triple.tail]);
        for l in (1..=depth).rev() {
            let alphas = fwd.alphas(l);
            let mut next = BTreeSet::new();
            for (i, &alpha) in alphas.iter().enumerate() {
                let (_, t) = fwd.plan.edge(l, i);
                if retained.contains(&t.tail) && alpha as f64 >= theta {
                    next.insert(t.head);
                    layers[l - 1].push(ExplainedEdge {
                        head: t.head,
                        rel: t.rel,
                        tail: t.tail,
                        alpha: alpha as f64,
                    });
                }
            }
            retained = next;
        }
    }
    Ok(Explanation {
        source: triple.head,
        sink: triple.tail,
        query_rel: triple.rel,
        theta,
        reachable,
        layers,
    })
}

/// Token tables used to label exported graphs; ids are used when absent.
#[derive(Clone, Copy, Debug)]
pub struct Labels<'a> {
    pub entities: Option<&'a Vocab>,
    pub relations: Option<&'a Vocab>,
    pub space: RelationSpace,
}

impl Labels<'_> {
    pub fn entity(&self, e: EntityId) -> String {
        self.entities
            .and_then(|v| v.token(e))
            .map_or_else(|| e.to_string(), str::to_string)
    }

    pub fn relation(&self, r: RelationId) -> String {
        if self.space.is_identity(r) {
            return "id".to_string();
        }
        let raw = if self.space.is_reverse(r) { self.space.inverse(r) } else { r };
        let name = self
            .relations
            .and_then(|v| v.token(raw))
            .map_or_else(|| raw.to_string(), str::to_string);
        if self.space.is_reverse(r) {
            format!("{name}^-1")
        } else {
            name
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: one node per (layer, entity), layers left to right,
/// reverse relations dashed, attention on the edge labels.
pub fn to_dot(x: &Explanation, labels: &Labels<'_>) -> String {
    let depth = x.layers.len();
    let mut s = String::new();
    let _ = writeln!(s, "digraph explanation {{");
    let _ = writeln!(s, "  rankdir=LR;");
    let _ = writeln!(s, "  node [shape=ellipse];");
    let mut nodes: BTreeSet<(usize, EntityId)> = BTreeSet::from([(0, x.source), (depth, x.sink)]);
    for (l, layer) in x.layers.iter().enumerate() {
        for e in layer {
            nodes.insert((l, e.head));
            nodes.insert((l + 1, e.tail));
        }
    }
    for l in 0..=depth {
        let _ = writeln!(s, "  subgraph layer{l} {{ rank=same;");
        for &(nl, e) in nodes.iter().filter(|(nl, _)| *nl == l) {
            let shape = if (nl == 0 && e == x.source) || (nl == depth && e == x.sink) {
                ", shape=box"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "    \"{nl}:{e}\" [label=\"{}\"{shape}];",
                dot_escape(&labels.entity(e))
            );
        }
        let _ = writeln!(s, "  }}");
    }
    for (l, layer) in x.layers.iter().enumerate() {
        for e in layer {
            let style = if labels.space.is_reverse(e.rel) { ", style=dashed" } else { "" };
            let _ = writeln!(
                s,
                "  \"{l}:{}\" -> \"{}:{}\" [label=\"{} ({:.3})\"{style}];",
                e.head,
                l + 1,
                e.tail,
                dot_escape(&labels.relation(e.rel)),
                e.alpha
            );
        }
    }
    let _ = writeln!(s, "}}");
    s
}

pub fn to_json(x: &Explanation) -> String {
    serde_json::to_string_pretty(x).expect("explanation serializes")
}

pub fn from_json(text: &str) -> Result<Explanation, serde_json::Error> {
    serde_json::from_str(text)
}

/// Precision, recall and F1 of predicted against gold edge sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeF1 {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EdgeF1 {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { true_positives as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { true_positives as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self {
            true_positives,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}
