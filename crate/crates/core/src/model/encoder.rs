//! Batched layer-by-layer encoding over edge tables.
//!
//! Both encoders reduce to the same computation: a sequence of edge tables
//! between consecutive node tables. The recursive encoder builds the tables
//! from shared outward frontiers; the single-pair encoder builds them from an
//! explicit r-digraph. [`encode`] then runs attention message passing over
//! whichever tables it is given.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffkernel::{Array, Scalar, Tape, Var};
use crate::kg::{EntityId, FactView, RelationId, Triple};
use crate::rdigraph::{build_rdigraph, frontier_chain, RDigraph};

use super::{ModelConfig, ModelError, ParameterSet, Variant};

/// A `(e_q, r_q, ?)` query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query {
    pub head: EntityId,
    pub rel: RelationId,
}

impl Query {
    pub fn new(head: EntityId, rel: RelationId) -> Self {
        Self { head, rel }
    }
}

impl From<Triple> for Query {
    fn from(t: Triple) -> Self {
        Self::new(t.head, t.rel)
    }
}

/// Edges from the node table of layer `ℓ-1` into the node table of layer `ℓ`.
#[derive(Clone, Debug, Default)]
pub struct LayerGraph {
    /// Entity of each node of this layer.
    pub node_entity: Vec<EntityId>,
    /// Owning query of each node of this layer.
    pub node_query: Vec<u32>,
    /// Node of the previous layer each edge leaves.
    pub src: Arc<[u32]>,
    pub rel: Arc<[u32]>,
    /// Node of this layer each edge enters.
    pub dst: Arc<[u32]>,
    /// Query relation of the edge's query.
    pub query_rel: Arc<[u32]>,
}

impl LayerGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_entity.len()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// Node and edge tables for a batch of queries.
///
/// Layer 0 is implicit: node `q` is the head of query `q`. Within every
/// layer, the nodes of one query are contiguous and sorted by entity.
#[derive(Clone, Debug)]
pub struct EncodingPlan {
    pub queries: Vec<Query>,
    pub layers: Vec<LayerGraph>,
    /// Final-layer node range of query `q` is `final_offsets[q]..final_offsets[q + 1]`.
    pub final_offsets: Vec<usize>,
}

impl EncodingPlan {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Total edge instances over all layers.
    pub fn num_edges(&self) -> usize {
        self.layers.iter().map(LayerGraph::num_edges).sum()
    }

    pub fn node_entities(&self, layer: usize) -> &[EntityId] {
        &self.layers[layer - 1].node_entity
    }

    fn prev_entity(&self, layer: usize, node: usize) -> EntityId {
        if layer == 1 {
            self.queries[node].head
        } else {
            self.layers[layer - 2].node_entity[node]
        }
    }

    /// Edge `i` of layer `ℓ` (1-based) as `(query, triple)`.
    pub fn edge(&self, layer: usize, i: usize) -> (u32, Triple) {
        let lg = &self.layers[layer - 1];
        let dst = lg.dst[i] as usize;
        let t = Triple::new(
            self.prev_entity(layer, lg.src[i] as usize),
            lg.rel[i],
            lg.node_entity[dst],
        );
        (lg.node_query[dst], t)
    }

    /// Final-layer `(entity, row)` pairs of query `q`, sorted by entity.
    pub fn reached(&self, q: usize) -> impl Iterator<Item = (EntityId, usize)> + '_ {
        let last = self.layers.last().expect("plan has at least one layer");
        (self.final_offsets[q]..self.final_offsets[q + 1]).map(move |row| (last.node_entity[row], row))
    }

    /// Final-layer row of `(q, entity)`, if the entity was reached.
    pub fn final_row(&self, q: usize, entity: EntityId) -> Option<usize> {
        let last = self.layers.last()?;
        let range = self.final_offsets[q]..self.final_offsets[q + 1];
        last.node_entity[range.clone()]
            .binary_search(&entity)
            .ok()
            .map(|i| range.start + i)
    }

    /// Recursive encoding tables: queries with the same head share one
    /// frontier chain.
    pub fn recursive(view: &FactView<'_>, queries: &[Query], depth: usize) -> Result<Self, ModelError> {
        if depth < 1 {
            return Err(ModelError::Config("depth must be at least 1".into()));
        }
        if queries.is_empty() {
            return Err(ModelError::Config("empty query batch".into()));
        }
        let mut heads: Vec<EntityId> = queries.iter().map(|q| q.head).collect();
        heads.sort_unstable();
        heads.dedup();
        let group_of: Vec<usize> = queries
            .iter()
            .map(|q| heads.binary_search(&q.head).expect("head collected"))
            .collect();
        let chain = frontier_chain(view, &heads, depth);

        let nq = queries.len();
        // base row of each query's block in the previous layer's node table
        let mut prev_base: Vec<usize> = (0..nq).collect();
        let mut prev_start: Vec<usize> = (0..heads.len()).collect();
        let mut layers = Vec::with_capacity(depth);
        let mut final_offsets = Vec::new();
        for f in &chain[1..] {
            let node_start: Vec<usize> = (0..=heads.len())
                .map(|g| f.nodes.partition_point(|n| (n.query as usize) < g))
                .collect();
            let edge_start: Vec<usize> = (0..=heads.len())
                .map(|g| f.edges.partition_point(|e| (e.query as usize) < g))
                .collect();

            let mut lg = LayerGraph::default();
            let (mut src, mut rel, mut dst, mut qrel) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut base = Vec::with_capacity(nq + 1);
            for (q, query) in queries.iter().enumerate() {
                let g = group_of[q];
                let b = lg.node_entity.len();
                base.push(b);
                for n in &f.nodes[node_start[g]..node_start[g + 1]] {
                    lg.node_entity.push(n.entity);
                    lg.node_query.push(q as u32);
                }
                for e in &f.edges[edge_start[g]..edge_start[g + 1]] {
                    src.push((prev_base[q] + e.src as usize - prev_start[g]) as u32);
                    rel.push(e.rel);
                    dst.push((b + e.dst as usize - node_start[g]) as u32);
                    qrel.push(query.rel);
                }
            }
            base.push(lg.node_entity.len());
            lg.src = src.into();
            lg.rel = rel.into();
            lg.dst = dst.into();
            lg.query_rel = qrel.into();
            layers.push(lg);
            final_offsets = base.clone();
            base.pop();
            prev_base = base;
            prev_start = node_start;
        }
        Ok(Self {
            queries: queries.to_vec(),
            layers,
            final_offsets,
        })
    }

    /// Tables of one explicit r-digraph. Returns `None` when it is empty.
    pub fn single(graph: &RDigraph, query_rel: RelationId) -> Option<Self> {
        if graph.empty {
            return None;
        }
        let mut layers = Vec::with_capacity(graph.depth);
        let mut prev_nodes = vec![graph.source];
        for l in 1..=graph.depth {
            let nodes = graph.nodes(l);
            let edges = &graph.layers[l - 1];
            let pos = |set: &[EntityId], e: EntityId| set.binary_search(&e).expect("edge endpoint in layer") as u32;
            let src: Vec<u32> = edges.iter().map(|t| pos(&prev_nodes, t.head)).collect();
            let dst: Vec<u32> = edges.iter().map(|t| pos(&nodes, t.tail)).collect();
            layers.push(LayerGraph {
                node_query: vec![0; nodes.len()],
                node_entity: nodes.clone(),
                src: src.into(),
                rel: edges.iter().map(|t| t.rel).collect::<Vec<_>>().into(),
                dst: dst.into(),
                query_rel: vec![query_rel; edges.len()].into(),
            });
            prev_nodes = nodes;
        }
        let n = layers.last().map_or(0, LayerGraph::num_nodes);
        Some(Self {
            queries: vec![Query::new(graph.source, query_rel)],
            layers,
            final_offsets: vec![0, n],
        })
    }
}

/// Tape handles of one layer's parameters, with the attention input matrix
/// split into its source, relation and query-relation row blocks.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub attn_src: Var,
    pub attn_rel: Var,
    pub attn_query: Option<Var>,
    pub attn_out: Var,
    pub relations: Var,
}

#[derive(Clone, Debug)]
pub struct ParamVars {
    pub layers: Vec<LayerVars>,
    pub readout: Var,
    /// Leaf handles in [`ParameterSet::named_arrays`] order.
    pub leaves: Vec<Var>,
}

impl ParamVars {
    /// Records the parameters as leaves. With `trainable == false` they are
    /// constants and no gradient bookkeeping is kept.
    pub fn record<T: Scalar>(tape: &mut Tape<T>, params: &ParameterSet<T>, trainable: bool) -> Result<Self, ModelError> {
        let leaves: Vec<Var> = params
            .named_arrays()
            .into_iter()
            .map(|(_, a)| {
                if trainable {
                    tape.parameter(a.clone())
                } else {
                    tape.constant(a.clone())
                }
            })
            .collect();
        Self::from_leaves(tape, &params.config, leaves)
    }

    /// Wraps leaves already on the tape, given in
    /// [`ParameterSet::named_arrays`] order.
    pub fn from_leaves<T: Scalar>(tape: &mut Tape<T>, config: &ModelConfig, leaves: Vec<Var>) -> Result<Self, ModelError> {
        if leaves.len() != 4 * config.depth + 1 {
            return Err(ModelError::Shape(format!(
                "{} leaves for depth {}",
                leaves.len(),
                config.depth
            )));
        }
        let d = config.dim;
        let block = |lo: usize| -> Vec<u32> { (lo as u32..(lo + d) as u32).collect() };
        let mut layers = Vec::with_capacity(config.depth);
        for chunk in leaves[..4 * config.depth].chunks(4) {
            let [weight, attn_in, attn_out, relations] = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let attn_src = tape.gather_rows(attn_in, block(0))?;
            let attn_rel = tape.gather_rows(attn_in, block(d))?;
            let attn_query = match config.variant {
                Variant::Full => Some(tape.gather_rows(attn_in, block(2 * d))?),
                Variant::AttnWithoutQuery => None,
            };
            layers.push(LayerVars {
                weight,
                attn_src,
                attn_rel,
                attn_query,
                attn_out,
                relations,
            });
        }
        Ok(Self {
            layers,
            readout: leaves[4 * config.depth],
            leaves,
        })
    }
}

/// One round of attention message passing:
/// `h_o = δ(W · Σ α · (h_s + h_r))` over the edges of `lg`.
///
/// Returns the new node states and the per-edge attention column. Dropout
/// on edge messages is applied when `train` carries an RNG.
pub fn propagate_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParameterSet<T>,
    vars: &LayerVars,
    lg: &LayerGraph,
    h_prev: Var,
    train: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var), ModelError> {
    // W_α·(h_s ⊕ h_r ⊕ h_rq) = W_α,s·h_s + W_α,r·h_r + W_α,q·h_rq, with each
    // block product taken once per node or relation and gathered per edge.
    let node_part = tape.matmul(h_prev, vars.attn_src)?;
    let rel_part = tape.matmul(vars.relations, vars.attn_rel)?;
    let a_s = tape.gather_rows(node_part, lg.src.clone())?;
    let a_r = tape.gather_rows(rel_part, lg.rel.clone())?;
    let mut pre = tape.add(a_s, a_r)?;
    if let Some(attn_query) = vars.attn_query {
        let query_part = tape.matmul(vars.relations, attn_query)?;
        let a_q = tape.gather_rows(query_part, lg.query_rel.clone())?;
        pre = tape.add(pre, a_q)?;
    }
    let hidden = tape.relu(pre);
    let logit = tape.matmul(hidden, vars.attn_out)?;
    let alpha = tape.sigmoid(logit);

    let dropout = train.map(|rng| (params.config.dropout, rng.gen::<u64>()));
    let agg = tape.edge_message(
        h_prev,
        vars.relations,
        alpha,
        lg.src.clone(),
        lg.rel.clone(),
        lg.dst.clone(),
        lg.num_nodes(),
        dropout,
    )?;
    let lin = tape.matmul(agg, vars.weight)?;
    let h = match params.config.activation {
        super::Activation::Identity => tape.identity(lin),
        super::Activation::Tanh => tape.tanh(lin),
        super::Activation::Relu => tape.relu(lin),
    };
    Ok((h, alpha))
}

#[derive(Clone, Debug)]
pub struct Encoded {
    /// Final-layer node states, one row per final node.
    pub states: Var,
    /// `(final nodes, 1)` scores.
    pub scores: Var,
    /// Per-layer `(edges, 1)` attention columns.
    pub alphas: Vec<Var>,
}

/// Runs every layer of `plan` and the readout.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParameterSet<T>,
    vars: &ParamVars,
    plan: &EncodingPlan,
    mut train: Option<&mut ChaCha8Rng>,
) -> Result<Encoded, ModelError> {
    if plan.depth() != params.layers.len() {
        return Err(ModelError::Config(format!(
            "plan depth {} but {} parameter layers",
            plan.depth(),
            params.layers.len()
        )));
    }
    let mut h = tape.constant(Array::zeros(plan.num_queries(), params.config.dim));
    let mut alphas = Vec::with_capacity(plan.depth());
    for (lv, lg) in vars.layers.iter().zip(&plan.layers) {
        let (next, alpha) = propagate_layer(tape, params, lv, lg, h, train.as_deref_mut())?;
        h = next;
        alphas.push(alpha);
    }
    let features = match params.config.variant {
        Variant::Full => h,
        Variant::AttnWithoutQuery => {
            let last = plan.layers.last().expect("depth checked");
            let qrel: Vec<u32> = last
                .node_query
                .iter()
                .map(|&q| plan.queries[q as usize].rel)
                .collect();
            let rel_tab = vars.layers.last().expect("depth checked").relations;
            let hq = tape.gather_rows(rel_tab, qrel)?;
            tape.concat_cols(h, hq)?
        }
    };
    let scores = tape.matmul(features, vars.readout)?;
    Ok(Encoded {
        states: h,
        scores,
        alphas,
    })
}

/// A recorded forward pass over a query batch.
#[derive(Debug)]
pub struct Forward<T> {
    pub tape: Tape<T>,
    pub plan: EncodingPlan,
    pub vars: ParamVars,
    pub encoded: Encoded,
}

impl<T: Scalar> Forward<T> {
    pub fn scores(&self) -> &[T] {
        self.tape.value(self.encoded.scores).data()
    }

    /// Score of `entity` for query `q`; exactly zero when unreached.
    pub fn score(&self, q: usize, entity: EntityId) -> T {
        self.plan
            .final_row(q, entity)
            .map_or(T::zero(), |row| self.scores()[row])
    }

    /// Scores of every entity in `range` for query `q`, zero where unreached.
    pub fn dense_scores(&self, q: usize, range: std::ops::Range<EntityId>) -> Vec<T> {
        let mut out = vec![T::zero(); (range.end - range.start) as usize];
        let scores = self.scores();
        for (e, row) in self.plan.reached(q) {
            out[(e - range.start) as usize] = scores[row];
        }
        out
    }

    /// Final state of `(q, entity)`; `None` when unreached.
    pub fn state(&self, q: usize, entity: EntityId) -> Option<&[T]> {
        let row = self.plan.final_row(q, entity)?;
        Some(self.tape.value(self.encoded.states).row(row))
    }

    /// Attention values of layer `ℓ` (1-based), aligned with its edges.
    pub fn alphas(&self, layer: usize) -> &[T] {
        self.tape.value(self.encoded.alphas[layer - 1]).data()
    }
}

/// Recursive encoding of a query batch over `view`.
pub fn forward_redgnn<T: Scalar>(
    params: &ParameterSet<T>,
    view: &FactView<'_>,
    queries: &[Query],
    train: Option<&mut ChaCha8Rng>,
) -> Result<Forward<T>, ModelError> {
    let plan = EncodingPlan::recursive(view, queries, params.config.depth)?;
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params, train.is_some())?;
    let encoded = encode(&mut tape, params, &vars, &plan, train)?;
    Ok(Forward {
        tape,
        plan,
        vars,
        encoded,
    })
}

/// The query-agnostic attention variant; same encoder, checked variant.
pub fn forward_attn_wo_rq<T: Scalar>(
    params: &ParameterSet<T>,
    view: &FactView<'_>,
    queries: &[Query],
) -> Result<Forward<T>, ModelError> {
    if params.config.variant != Variant::AttnWithoutQuery {
        return Err(ModelError::Config(
            "parameters were not built for the attention variant without query relation".into(),
        ));
    }
    forward_redgnn(params, view, queries, None)
}

#[derive(Clone, Debug)]
pub struct SinglePairOutput<T> {
    pub rdigraph: RDigraph,
    /// Sink representation; zeros when the r-digraph is empty.
    pub state: Vec<T>,
    pub score: T,
}

/// Encodes the single r-digraph between `triple.head` and `triple.tail`.
pub fn forward_redsimp<T: Scalar>(
    params: &ParameterSet<T>,
    view: &FactView<'_>,
    triple: Triple,
) -> Result<SinglePairOutput<T>, ModelError> {
    params.config.validate()?;
    let rdigraph = build_rdigraph(view, triple.head, triple.tail, params.config.depth);
    let Some(plan) = EncodingPlan::single(&rdigraph, triple.rel) else {
        return Ok(SinglePairOutput {
            rdigraph,
            state: vec![T::zero(); params.config.dim],
            score: T::zero(),
        });
    };
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params, false)?;
    let enc = encode(&mut tape, params, &vars, &plan, None)?;
    let state = tape.value(enc.states).row(0).to_vec();
    let score = tape.value(enc.scores).data()[0];
    Ok(SinglePairOutput {
        rdigraph,
        state,
        score,
    })
}
