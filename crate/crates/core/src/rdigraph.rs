//! Frontier expansion and explicit r-digraph construction.
//!
//! [`expand_out`] is the shared-frontier step used by the recursive encoder:
//! one call extends every query's visible edge set by one hop. Identity
//! edges `(e, id, e)` are synthesized for every frontier entity, so the
//! entity sets grow monotonically.
//!
//! [`build_rdigraph`] is the brute-force construction for a single
//! `(e_q, e_a)` pair: the forward sets from `e_q` are intersected layer by
//! layer with the backward sets from `e_a`.

use std::collections::{BTreeSet, HashSet};

use crate::kg::{EntityId, FactView, RelationId, Triple};

/// A `(query, entity)` pair of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrontierNode {
    pub query: u32,
    pub entity: EntityId,
}

/// One edge instance between two consecutive layers. `src` and `dst` are
/// positions into the node lists of the source and destination layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrontierEdge {
    pub query: u32,
    pub src: u32,
    pub rel: RelationId,
    pub dst: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frontier {
    pub layer: usize,
    /// Sorted by `(query, entity)`, unique.
    pub nodes: Vec<FrontierNode>,
    /// Sorted by `(query, src, rel, dst)`.
    pub edges: Vec<FrontierEdge>,
}

impl Frontier {
    /// Layer 0: one node per query.
    pub fn initial(heads: &[EntityId]) -> Self {
        let nodes = heads
            .iter()
            .enumerate()
            .map(|(q, &entity)| FrontierNode {
                query: q as u32,
                entity,
            })
            .collect();
        Self {
            layer: 0,
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn position(&self, query: u32, entity: EntityId) -> Option<usize> {
        self.nodes
            .binary_search(&FrontierNode { query, entity })
            .ok()
    }

    /// Edges of an outward layer as `(query, triple)`, given the layer it
    /// was expanded from.
    pub fn triples(&self, prev: &Frontier) -> Vec<(u32, Triple)> {
        self.edges
            .iter()
            .map(|e| {
                let s = prev.nodes[e.src as usize].entity;
                let o = self.nodes[e.dst as usize].entity;
                (e.query, Triple::new(s, e.rel, o))
            })
            .collect()
    }

    pub fn entities_of(&self, query: u32) -> impl Iterator<Item = EntityId> + '_ {
        self.nodes
            .iter()
            .filter(move |n| n.query == query)
            .map(|n| n.entity)
    }
}

fn dedup_nodes(mut nodes: Vec<FrontierNode>) -> Vec<FrontierNode> {
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

fn locate(nodes: &[FrontierNode], query: u32, entity: EntityId) -> u32 {
    nodes
        .binary_search(&FrontierNode { query, entity })
        .expect("node collected before lookup") as u32
}

/// One outward hop: every unmasked out-edge of the previous layer plus an
/// identity edge per previous entity.
pub fn expand_out(view: &FactView<'_>, prev: &Frontier) -> Frontier {
    let identity = view.graph().relations().identity();
    // (query, src position, rel, dst entity), already in (query, src, rel, dst) order
    let mut raw = Vec::new();
    for (pos, node) in prev.nodes.iter().enumerate() {
        for t in view.out_edges(node.entity) {
            raw.push((node.query, pos as u32, t.rel, t.tail));
        }
        raw.push((node.query, pos as u32, identity, node.entity));
    }
    let nodes = dedup_nodes(
        raw.iter()
            .map(|&(query, _, _, entity)| FrontierNode { query, entity })
            .collect(),
    );
    let edges = raw
        .into_iter()
        .map(|(query, src, rel, o)| FrontierEdge {
            query,
            src,
            rel,
            dst: locate(&nodes, query, o),
        })
        .collect();
    Frontier {
        layer: prev.layer + 1,
        nodes,
        edges,
    }
}

/// One inward hop. The returned frontier's nodes are the *sources*; each
/// edge's `src` indexes the returned nodes and `dst` indexes `prev.nodes`.
pub fn expand_in(view: &FactView<'_>, prev: &Frontier) -> Frontier {
    let identity = view.graph().relations().identity();
    let mut raw = Vec::new();
    for (pos, node) in prev.nodes.iter().enumerate() {
        for t in view.in_edges(node.entity) {
            raw.push((node.query, t.head, t.rel, pos as u32));
        }
        raw.push((node.query, node.entity, identity, pos as u32));
    }
    let nodes = dedup_nodes(
        raw.iter()
            .map(|&(query, entity, _, _)| FrontierNode { query, entity })
            .collect(),
    );
    let mut edges: Vec<FrontierEdge> = raw
        .into_iter()
        .map(|(query, s, rel, dst)| FrontierEdge {
            query,
            src: locate(&nodes, query, s),
            rel,
            dst,
        })
        .collect();
    edges.sort_unstable();
    Frontier {
        layer: prev.layer + 1,
        nodes,
        edges,
    }
}

/// Layers `0..=depth` of outward frontiers for a set of heads (one query
/// index per head).
pub fn frontier_chain(view: &FactView<'_>, heads: &[EntityId], depth: usize) -> Vec<Frontier> {
    let mut chain = Vec::with_capacity(depth + 1);
    chain.push(Frontier::initial(heads));
    for _ in 0..depth {
        let next = expand_out(view, chain.last().expect("non-empty chain"));
        chain.push(next);
    }
    chain
}

/// Backward edge sets `Ě^k` (k = 1..=depth) of a single sink, as triples.
fn inward_edge_sets(view: &FactView<'_>, sink: EntityId, depth: usize) -> (Vec<HashSet<Triple>>, usize) {
    let mut prev = Frontier::initial(&[sink]);
    let mut sets = Vec::with_capacity(depth);
    let mut scanned = 0;
    for _ in 0..depth {
        let next = expand_in(view, &prev);
        scanned += next.edges.len();
        let set = next
            .edges
            .iter()
            .map(|e| {
                Triple::new(
                    next.nodes[e.src as usize].entity,
                    e.rel,
                    prev.nodes[e.dst as usize].entity,
                )
            })
            .collect();
        sets.push(set);
        prev = next;
    }
    (sets, scanned)
}

/// An explicit r-digraph between one source and one sink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RDigraph {
    pub source: EntityId,
    pub sink: EntityId,
    pub depth: usize,
    /// `layers[l - 1]` holds the layer-`l` edges, sorted.
    pub layers: Vec<Vec<Triple>>,
    pub empty: bool,
    /// Edges examined by both expansions; used by the complexity benchmark.
    pub edges_scanned: usize,
}

impl RDigraph {
    /// Entities of layer `l` (layer 0 is the source).
    pub fn nodes(&self, layer: usize) -> Vec<EntityId> {
        if layer == 0 {
            return if self.empty { Vec::new() } else { vec![self.source] };
        }
        let set: BTreeSet<EntityId> = self.layers[layer - 1].iter().map(|t| t.tail).collect();
        set.into_iter().collect()
    }

    pub fn num_edges(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

/// Brute-force r-digraph: `E^l = Ê^l(e_q) ∩ Ě^{L-l+1}(e_a)`.
///
/// Layer `l` forward edges leave entities reachable from `e_q` in `l-1`
/// hops; backward set `Ě^k` holds edges entering entities that reach `e_a`
/// in `k-1` hops, so an edge lies on a length-`L` path exactly when it is in
/// both `Ê^l` and `Ě^{L-l+1}`.
pub fn build_rdigraph(view: &FactView<'_>, source: EntityId, sink: EntityId, depth: usize) -> RDigraph {
    assert!(depth >= 1, "r-digraph depth must be at least 1");
    let chain = frontier_chain(view, &[source], depth);
    let (inward, mut scanned) = inward_edge_sets(view, sink, depth);
    scanned += chain.iter().map(|f| f.edges.len()).sum::<usize>();

    let mut layers = Vec::with_capacity(depth);
    for l in 1..=depth {
        let backward = &inward[depth - l];
        let layer: Vec<Triple> = chain[l]
            .triples(&chain[l - 1])
            .into_iter()
            .map(|(_, t)| t)
            .filter(|t| backward.contains(t))
            .collect();
        layers.push(layer);
    }
    let empty = layers.iter().any(Vec::is_empty);
    if empty {
        layers.iter_mut().for_each(Vec::clear);
    }
    RDigraph {
        source,
        sink,
        depth,
        layers,
        empty,
        edges_scanned: scanned,
    }
}

/// `∪_{e_a} E^l_{e_q, e_a | L}` by brute force over every entity of the
/// graph. Test and self-check use only.
pub fn union_layer_edges(view: &FactView<'_>, source: EntityId, depth: usize, layer: usize) -> BTreeSet<Triple> {
    assert!((1..=depth).contains(&layer));
    let mut out = BTreeSet::new();
    for sink in view.graph().entity_range() {
        let g = build_rdigraph(view, source, sink, depth);
        out.extend(g.layers[layer - 1].iter().copied());
    }
    out
}
