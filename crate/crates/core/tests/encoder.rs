use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redkgr::diffkernel::{Array, Tape};
use redkgr::kg::{FactView, KnowledgeGraph, RelationSpace, Triple};
use redkgr::model::{
    forward_attn_wo_rq, forward_redgnn, forward_redsimp, propagate_layer, Activation, LayerGraph,
    ModelConfig, ParamVars, ParameterSet, Query, Variant,
};
use redkgr::synth::random_graph;

const A: u32 = 0;
const B: u32 = 1;
const C: u32 = 2;
const D: u32 = 3;
const R1: u32 = 0;
const R2: u32 = 1;

fn toy() -> KnowledgeGraph {
    KnowledgeGraph::from_facts(
        0..4,
        RelationSpace::new(2),
        &[
            Triple::new(A, R1, B),
            Triple::new(B, R2, C),
            Triple::new(A, R1, D),
            Triple::new(D, R2, C),
        ],
    )
    .unwrap()
}

fn config(depth: usize, activation: Activation, variant: Variant) -> ModelConfig {
    ModelConfig {
        dim: 4,
        attn_dim: 3,
        depth,
        activation,
        variant,
        dropout: 0.0,
    }
}

fn random_params(cfg: ModelConfig, rels: RelationSpace, seed: u64) -> ParameterSet<f64> {
    let mut p = ParameterSet::<f64>::init(cfg, rels, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for a in p.arrays_mut() {
        a.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    p
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => x,
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
    }
}

/// Direct evaluation of the layer recursion with maps keyed by entity:
/// edges are found by scanning the full augmented edge list.
fn naive_scores(p: &ParameterSet<f64>, view: &FactView<'_>, q: Query) -> BTreeMap<u32, f64> {
    let g = view.graph();
    let cfg = p.config;
    let d = cfg.dim;
    let identity = g.relations().identity();
    let mut states: BTreeMap<u32, Vec<f64>> = BTreeMap::from([(q.head, vec![0.0; d])]);
    for layer in &p.layers {
        let mut edges: Vec<Triple> = g
            .edges()
            .iter()
            .filter(|t| states.contains_key(&t.head) && !view.is_masked(t))
            .copied()
            .collect();
        edges.extend(states.keys().map(|&e| Triple::new(e, identity, e)));
        let mut agg: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for t in edges {
            let hs = &states[&t.head];
            let hr = layer.relations.row(t.rel as usize);
            let hq = layer.relations.row(q.rel as usize);
            let mut input = hs.clone();
            input.extend_from_slice(hr);
            if cfg.variant == Variant::Full {
                input.extend_from_slice(hq);
            }
            let mut logit = 0.0;
            for k in 0..cfg.attn_dim {
                let z: f64 = input.iter().enumerate().map(|(i, x)| x * layer.attn_in.get(i, k)).sum();
                logit += z.max(0.0) * layer.attn_out.get(k, 0);
            }
            let alpha = 1.0 / (1.0 + (-logit).exp());
            let slot = agg.entry(t.tail).or_insert_with(|| vec![0.0; d]);
            for i in 0..d {
                slot[i] += alpha * (hs[i] + hr[i]);
            }
        }
        states = agg
            .into_iter()
            .map(|(e, m)| {
                let h = (0..d)
                    .map(|j| act(cfg.activation, (0..d).map(|i| m[i] * layer.weight.get(i, j)).sum()))
                    .collect();
                (e, h)
            })
            .collect();
    }
    let hq = p.layers.last().unwrap().relations.row(q.rel as usize);
    states
        .into_iter()
        .map(|(e, h)| {
            let mut feat = h;
            if cfg.variant == Variant::AttnWithoutQuery {
                feat.extend_from_slice(hq);
            }
            let s = feat.iter().enumerate().map(|(i, x)| x * p.readout.get(i, 0)).sum();
            (e, s)
        })
        .collect()
}

#[test]
fn recursive_scores_match_naive_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..40u64 {
        let g = random_graph(&mut rng, 10, 3, 18);
        let activation = [Activation::Identity, Activation::Tanh, Activation::Relu][case as usize % 3];
        let variant = if case % 4 == 3 { Variant::AttnWithoutQuery } else { Variant::Full };
        let p = random_params(config(1 + case as usize % 3, activation, variant), g.relations(), case);
        let queries: Vec<Query> = (0..4).map(|_| Query::new(rng.gen_range(0..10), rng.gen_range(0..6))).collect();
        let view = g.view();
        let fwd = forward_redgnn(&p, &view, &queries, None).unwrap();
        for (qi, &q) in queries.iter().enumerate() {
            let want = naive_scores(&p, &view, q);
            for e in g.entity_range() {
                let got = fwd.score(qi, e);
                match want.get(&e) {
                    Some(&w) => assert!((got - w).abs() < 1e-10, "case {case} q {qi} e {e}: {got} vs {w}"),
                    None => assert_eq!(got.to_bits(), 0.0f64.to_bits(), "unreached {e} must score +0"),
                }
            }
        }
    }
}

#[test]
fn zero_readout_scores_everything_zero() {
    let g = toy();
    let p = ParameterSet::<f32>::init(config(2, Activation::Tanh, Variant::Full), g.relations(), 5).unwrap();
    let fwd = forward_redgnn(&p, &g.view(), &[Query::new(A, R1), Query::new(C, R2)], None).unwrap();
    for q in 0..2 {
        assert!(fwd.dense_scores(q, g.entity_range()).iter().all(|&s| s == 0.0));
    }
}

#[test]
fn unreachable_entity_scores_exactly_zero() {
    // e=4 has no edges at all
    let g = KnowledgeGraph::from_facts(0..5, RelationSpace::new(1), &[Triple::new(0, 0, 1), Triple::new(1, 0, 2)]).unwrap();
    let p = random_params(config(2, Activation::Tanh, Variant::Full), g.relations(), 9);
    let fwd = forward_redgnn(&p, &g.view(), &[Query::new(0, 0)], None).unwrap();
    let reached: BTreeSet<u32> = fwd.plan.reached(0).map(|(e, _)| e).collect();
    assert_eq!(reached, BTreeSet::from([0, 1, 2]));
    assert_eq!(fwd.score(0, 3), 0.0);
    assert_eq!(fwd.score(0, 4), 0.0);
    assert!(fwd.score(0, 2) != 0.0);
}

#[test]
fn single_pair_matches_recursive_on_toy() {
    let g = toy();
    let view = g.view();
    let p = random_params(config(2, Activation::Tanh, Variant::Full), g.relations(), 1);
    let fwd = forward_redgnn(&p, &view, &[Query::new(A, R2)], None).unwrap();
    let simp = forward_redsimp(&p, &view, Triple::new(A, R2, C)).unwrap();
    assert_eq!(simp.rdigraph.layers[0], vec![Triple::new(A, R1, B), Triple::new(A, R1, D)]);
    let h = fwd.state(0, C).unwrap();
    for (x, y) in h.iter().zip(&simp.state) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((fwd.score(0, C) - simp.score).abs() < 1e-12);
}

#[test]
fn dead_end_branch_is_excluded_but_sink_state_agrees() {
    // a→b→c chain plus a dead-end a→d
    let g = KnowledgeGraph::from_facts(
        0..4,
        RelationSpace::new(2),
        &[Triple::new(A, R1, B), Triple::new(B, R2, C), Triple::new(A, R1, D)],
    )
    .unwrap();
    let view = g.view();
    let p = random_params(config(2, Activation::Relu, Variant::Full), g.relations(), 2);
    let simp = forward_redsimp(&p, &view, Triple::new(A, R1, C)).unwrap();
    assert!(simp.rdigraph.layers.iter().flatten().all(|t| t.head != D && t.tail != D));
    let fwd = forward_redgnn(&p, &view, &[Query::new(A, R1)], None).unwrap();
    assert!(fwd.plan.node_entities(1).contains(&D));
    assert!(fwd.state(0, D).is_some());
    for (x, y) in fwd.state(0, C).unwrap().iter().zip(&simp.state) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn empty_rdigraph_gives_zero_state() {
    let g = toy();
    let p = random_params(config(1, Activation::Tanh, Variant::Full), g.relations(), 3);
    let out = forward_redsimp(&p, &g.view(), Triple::new(A, R1, C)).unwrap();
    assert!(out.rdigraph.empty);
    assert!(out.state.iter().all(|&v| v == 0.0));
    assert_eq!(out.score, 0.0);
}

#[test]
fn batch_composition_does_not_change_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = random_graph(&mut rng, 12, 3, 30);
    let p = random_params(config(3, Activation::Tanh, Variant::Full), g.relations(), 4).cast::<f32>();
    let view = g.view();
    let batch: Vec<Query> = vec![Query::new(3, 1), Query::new(0, 4), Query::new(3, 2), Query::new(7, 0), Query::new(3, 1)];
    let together = forward_redgnn(&p, &view, &batch, None).unwrap();
    for (qi, &q) in batch.iter().enumerate() {
        let alone = forward_redgnn(&p, &view, &[q], None).unwrap();
        let a: Vec<u32> = alone.dense_scores(0, g.entity_range()).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = together.dense_scores(qi, g.entity_range()).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "query {qi}");
    }
}

#[test]
fn attention_stays_strictly_inside_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(&mut rng, 12, 2, 25);
    let p = random_params(config(3, Activation::Tanh, Variant::Full), g.relations(), 8);
    let fwd = forward_redgnn(&p, &g.view(), &[Query::new(1, 0), Query::new(5, 3)], None).unwrap();
    for l in 1..=3 {
        assert_eq!(fwd.alphas(l).len(), fwd.plan.layers[l - 1].num_edges());
        assert!(fwd.alphas(l).iter().all(|&a| a > 0.0 && a < 1.0));
    }
}

#[test]
fn masking_hides_the_direct_edge() {
    let g = toy();
    let p = random_params(config(1, Activation::Tanh, Variant::Full), g.relations(), 6);
    let open = forward_redgnn(&p, &g.view(), &[Query::new(A, R1)], None).unwrap();
    let masked_view = g.mask_target(Triple::new(A, R1, B));
    let masked = forward_redgnn(&p, &masked_view, &[Query::new(A, R1)], None).unwrap();
    assert!(open.score(0, B) != 0.0);
    assert_eq!(masked.score(0, B), 0.0);
    // the other one-hop answer is untouched
    assert_eq!(open.score(0, D), masked.score(0, D));
}

#[test]
fn saturated_attention_single_edge_passes_relation_through() {
    let g = KnowledgeGraph::from_facts(0..2, RelationSpace::new(1), &[Triple::new(0, 0, 1)]).unwrap();
    let cfg = ModelConfig {
        dim: 2,
        attn_dim: 1,
        depth: 1,
        activation: Activation::Identity,
        variant: Variant::Full,
        dropout: 0.0,
    };
    let mut p = ParameterSet::<f64>::init(cfg, g.relations(), 0).unwrap();
    p.layers[0].weight = Array::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 });
    p.layers[0].attn_in = Array::filled(6, 1, 1.0);
    p.layers[0].attn_out = Array::scalar(1e3);
    p.layers[0].relations = Array::new(3, 2, vec![0.5, 0.25, -0.1, 0.2, 0.75, 0.125]).unwrap();
    let fwd = forward_redgnn(&p, &g.view(), &[Query::new(0, 0)], None).unwrap();
    assert!(fwd.alphas(1).iter().all(|&a| a == 1.0));
    assert_eq!(fwd.state(0, 1).unwrap(), &[0.5, 0.25]);
    // the head itself is reached through the identity edge
    assert_eq!(fwd.state(0, 0).unwrap(), &[0.75, 0.125]);
}

#[test]
fn parallel_edges_into_one_node_add_up() {
    let cfg = config(1, Activation::Identity, Variant::Full);
    let rels = RelationSpace::new(1);
    let p = random_params(cfg, rels, 12);
    let lg = LayerGraph {
        node_entity: vec![9],
        node_query: vec![0],
        src: vec![0, 1].into(),
        rel: vec![0, 0].into(),
        dst: vec![0, 0].into(),
        query_rel: vec![0, 0].into(),
    };
    let single = LayerGraph {
        src: vec![0].into(),
        rel: vec![0].into(),
        dst: vec![0].into(),
        query_rel: vec![0].into(),
        ..lg.clone()
    };
    let run = |lg: &LayerGraph| {
        let mut tape = Tape::new();
        let vars = ParamVars::record(&mut tape, &p, false).unwrap();
        let h0 = tape.constant(Array::zeros(2, cfg.dim));
        let (h, _) = propagate_layer(&mut tape, &p, &vars.layers[0], lg, h0, None).unwrap();
        tape.value(h).data().to_vec()
    };
    let two = run(&lg);
    let one = run(&single);
    for (x, y) in two.iter().zip(&one) {
        assert!((x - 2.0 * y).abs() < 1e-12);
    }
}

#[test]
fn query_free_variant_reads_out_query_relation() {
    let g = toy();
    let cfg = config(2, Activation::Tanh, Variant::AttnWithoutQuery);
    let mut p = ParameterSet::<f64>::init(cfg, g.relations(), 1).unwrap();
    assert_eq!(p.readout.shape(), (8, 1));
    assert_eq!(p.layers[0].attn_in.shape(), (8, 3));
    for a in p.arrays_mut() {
        a.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let fwd = forward_attn_wo_rq(&p, &g.view(), &[Query::new(A, R1)]).unwrap();
    assert!(fwd.alphas(1).iter().all(|&a| a == 0.5));
    let full = ParameterSet::<f64>::init(config(2, Activation::Tanh, Variant::Full), g.relations(), 1).unwrap();
    assert!(forward_attn_wo_rq(&full, &g.view(), &[Query::new(A, R1)]).is_err());
}

#[test]
fn query_relation_changes_attention() {
    let g = toy();
    let p = random_params(config(2, Activation::Tanh, Variant::Full), g.relations(), 21);
    let fwd = forward_redgnn(&p, &g.view(), &[Query::new(A, R1), Query::new(A, R2)], None).unwrap();
    let lg = &fwd.plan.layers[0];
    let n = lg.num_edges() / 2;
    assert_ne!(fwd.alphas(1)[..n], fwd.alphas(1)[n..]);
}

#[test]
fn plan_edges_reconstruct_frontier_triples() {
    let g = toy();
    let p = random_params(config(2, Activation::Tanh, Variant::Full), g.relations(), 2);
    let fwd = forward_redgnn(&p, &g.view(), &[Query::new(A, R1), Query::new(C, R2)], None).unwrap();
    let first: BTreeSet<Triple> = (0..fwd.plan.layers[0].num_edges())
        .map(|i| fwd.plan.edge(1, i))
        .filter(|(q, _)| *q == 0)
        .map(|(_, t)| t)
        .collect();
    assert_eq!(
        first,
        BTreeSet::from([Triple::new(A, R1, B), Triple::new(A, R1, D), Triple::new(A, 4, A)])
    );
}
