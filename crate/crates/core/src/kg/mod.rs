//! Knowledge-graph storage.
//!
//! Facts are stored once per direction: every raw triple `(s, r, o)` is
//! accompanied by its reverse `(o, r⁻¹, s)`. The identity relation has a
//! fixed id but is never stored; traversal code synthesizes `(e, id, e)`
//! for every frontier entity.

mod dataset;
mod vocab;

pub use dataset::{
    inductive_sibling, load_dataset, split_facts_labels, DatasetLayout, InductiveDataset, Mode,
    Role, TransductiveDataset, TripleSet,
};
pub use vocab::Vocab;

use std::collections::HashSet;
use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown {kind} `{token}`")]
    UnknownToken {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        token: String,
    },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("triple ({head}, {rel}, {tail}) is outside the graph's id space")]
    OutOfRange {
        head: EntityId,
        rel: RelationId,
        tail: EntityId,
    },
}

/// A `(head, relation, tail)` triple. Used both for raw facts and for
/// edges of the augmented graph, where `head` is the edge source.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Self { head, rel, tail }
    }
}

/// Relation id space after augmentation: `0..n` are the raw relations,
/// `n..2n` their reverses and `2n` the identity relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpace {
    num_raw: u32,
}

impl RelationSpace {
    pub const fn new(num_raw: u32) -> Self {
        Self { num_raw }
    }

    pub fn num_raw(self) -> usize {
        self.num_raw as usize
    }

    pub fn num_augmented(self) -> usize {
        2 * self.num_raw as usize + 1
    }

    pub fn identity(self) -> RelationId {
        2 * self.num_raw
    }

    pub fn is_identity(self, rel: RelationId) -> bool {
        rel == self.identity()
    }

    pub fn is_reverse(self, rel: RelationId) -> bool {
        rel >= self.num_raw && rel < 2 * self.num_raw
    }

    pub fn inverse(self, rel: RelationId) -> RelationId {
        if rel < self.num_raw {
            rel + self.num_raw
        } else if rel < 2 * self.num_raw {
            rel - self.num_raw
        } else {
            rel
        }
    }

    pub fn reverse(self, t: Triple) -> Triple {
        Triple::new(t.tail, self.inverse(t.rel), t.head)
    }

    /// The triple plus its reverse-direction query.
    pub fn with_reverses(self, triples: &[Triple]) -> Vec<Triple> {
        let mut out = Vec::with_capacity(triples.len() * 2);
        out.extend_from_slice(triples);
        out.extend(triples.iter().map(|&t| self.reverse(t)));
        out
    }
}

/// Immutable augmented fact store with a source-indexed adjacency.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Range<EntityId>,
    relations: RelationSpace,
    /// Sorted by `(head, rel, tail)`, deduplicated.
    edges: Vec<Triple>,
    /// `offsets[e - start]..offsets[e - start + 1]` is the out-edge slice of `e`.
    offsets: Vec<usize>,
}

impl KnowledgeGraph {
    /// Builds the graph from raw facts, adding the reverse of every fact.
    pub fn from_facts(
        entities: Range<EntityId>,
        relations: RelationSpace,
        facts: &[Triple],
    ) -> Result<Self, KgError> {
        let mut edges = Vec::with_capacity(facts.len() * 2);
        for &t in facts {
            let ok = entities.contains(&t.head)
                && entities.contains(&t.tail)
                && (t.rel as usize) < relations.num_raw();
            if !ok {
                return Err(KgError::OutOfRange {
                    head: t.head,
                    rel: t.rel,
                    tail: t.tail,
                });
            }
            edges.push(t);
            edges.push(relations.reverse(t));
        }
        edges.sort_unstable();
        edges.dedup();

        let n = (entities.end - entities.start) as usize;
        let mut offsets = vec![0usize; n + 1];
        for e in &edges {
            offsets[(e.head - entities.start) as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            entities,
            relations,
            edges,
            offsets,
        })
    }

    pub fn num_entities(&self) -> usize {
        (self.entities.end - self.entities.start) as usize
    }

    pub fn entity_range(&self) -> Range<EntityId> {
        self.entities.clone()
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        self.entities.contains(&e)
    }

    pub fn relations(&self) -> RelationSpace {
        self.relations
    }

    pub fn num_relations_raw(&self) -> usize {
        self.relations.num_raw()
    }

    pub fn num_relations_aug(&self) -> usize {
        self.relations.num_augmented()
    }

    /// All stored edges (raw and reverse), sorted by `(head, rel, tail)`.
    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Out-edges of `e`, sorted by `(rel, tail)`. Empty for foreign ids.
    pub fn out_edges(&self, e: EntityId) -> &[Triple] {
        if !self.entities.contains(&e) {
            return &[];
        }
        let i = (e - self.entities.start) as usize;
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.out_edges(t.head).binary_search_by(|x| x.cmp(t)).is_ok()
    }

    /// Unmasked view over all facts.
    pub fn view(&self) -> FactView<'_> {
        FactView {
            graph: self,
            masked: HashSet::new(),
        }
    }

    /// View that hides `triple` and its reverse.
    pub fn mask_target(&self, triple: Triple) -> FactView<'_> {
        let mut view = self.view();
        view.mask(triple);
        view
    }
}

/// The fact edges of a graph minus a set of masked triples.
///
/// Masks are always applied in reverse-closed pairs so the view keeps the
/// graph's reverse-closure invariant.
#[derive(Clone, Debug)]
pub struct FactView<'g> {
    graph: &'g KnowledgeGraph,
    masked: HashSet<Triple>,
}

impl<'g> FactView<'g> {
    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.graph
    }

    pub fn mask(&mut self, triple: Triple) {
        let rels = self.graph.relations;
        self.masked.insert(triple);
        self.masked.insert(rels.reverse(triple));
    }

    pub fn mask_all<'a>(&mut self, triples: impl IntoIterator<Item = &'a Triple>) {
        for t in triples {
            self.mask(*t);
        }
    }

    pub fn is_masked(&self, t: &Triple) -> bool {
        !self.masked.is_empty() && self.masked.contains(t)
    }

    pub fn out_edges(&self, e: EntityId) -> impl Iterator<Item = &'g Triple> + '_ {
        self.graph
            .out_edges(e)
            .iter()
            .filter(move |t| !self.is_masked(t))
    }

    /// In-edges of `e`, i.e. the reverses of its out-edges, sorted by
    /// `(head, rel)`.
    pub fn in_edges(&self, e: EntityId) -> Vec<Triple> {
        let rels = self.graph.relations;
        let mut v: Vec<Triple> = self.out_edges(e).map(|&t| rels.reverse(t)).collect();
        v.sort_unstable();
        v
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.graph.contains(t) && !self.is_masked(t)
    }

    /// Number of stored edges visible through the view.
    pub fn num_edges(&self) -> usize {
        let hidden = self
            .masked
            .iter()
            .filter(|t| self.graph.contains(t))
            .count();
        self.graph.num_edges() - hidden
    }
}
