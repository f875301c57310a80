use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redkgr::diffkernel::{Array, Index, Tape};
use redkgr::eval::{mean_reciprocal_rank, per_distance, rank_with_ties, RankedTriple, RankingReport, TieRank};
use redkgr::explain::explain;
use redkgr::kg::{load_dataset, DatasetLayout, KnowledgeGraph, Mode, RelationSpace, Triple};
use redkgr::model::{forward_redgnn, Activation, ModelConfig, ParameterSet, Query, Variant};
use redkgr::rdigraph::{build_rdigraph, frontier_chain, union_layer_edges};
use redkgr::selftest::random_params;
use redkgr::train::log_loss;

fn graph_from(n: u32, rels: u32, raw: &[(u32, u32, u32)]) -> KnowledgeGraph {
    let facts: BTreeSet<Triple> = raw
        .iter()
        .map(|&(h, r, t)| Triple::new(h % n, r % rels, t % n))
        .collect();
    let facts: Vec<Triple> = facts.into_iter().collect();
    KnowledgeGraph::from_facts(0..n, RelationSpace::new(rels), &facts).unwrap()
}

prop_compose! {
    fn small_graph(max_entities: u32, max_facts: usize)
        (n in 1..=max_entities, rels in 1u32..=3,
         raw in prop::collection::vec((0u32..64, 0u32..8, 0u32..64), 0..=max_facts))
        -> KnowledgeGraph {
        graph_from(n, rels, &raw)
    }
}

fn model_config(depth: usize, activation: Activation) -> ModelConfig {
    ModelConfig {
        dim: 4,
        attn_dim: 3,
        depth,
        activation,
        variant: Variant::Full,
        dropout: 0.0,
    }
}

fn activation(i: usize) -> Activation {
    [Activation::Identity, Activation::Tanh, Activation::Relu][i % 3]
}

fn params_for(g: &KnowledgeGraph, depth: usize, act: usize, seed: u64) -> ParameterSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_params(model_config(depth, activation(act)), g.relations(), &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_stored_edge_has_its_inverse(g in small_graph(12, 40)) {
        let rels = g.relations();
        prop_assert_eq!(g.num_edges() % 2, 0);
        for t in g.edges() {
            prop_assert!(g.contains(&rels.reverse(*t)));
        }
    }

    #[test]
    fn masking_removes_exactly_the_triple_and_its_reverse(g in small_graph(12, 40), pick in 0usize..1000) {
        prop_assume!(g.num_edges() > 0);
        let target = g.edges()[pick % g.num_edges()];
        let rels = g.relations();
        let view = g.mask_target(target);
        let mut twice = g.mask_target(target);
        twice.mask(target);
        for t in g.edges() {
            let hidden = *t == target || *t == rels.reverse(target);
            prop_assert_eq!(view.contains(t), !hidden);
            prop_assert_eq!(twice.contains(t), !hidden);
        }
        prop_assert_eq!(view.num_edges(), g.num_edges() - 2);
    }

    #[test]
    fn layer_edges_are_the_union_of_pair_rdigraphs(g in small_graph(12, 40), depth in 1usize..=3, src in 0u32..12) {
        let src = src % g.num_entities() as u32;
        let view = g.view();
        let chain = frontier_chain(&view, &[src], depth);
        for l in 1..=depth {
            let shared: BTreeSet<Triple> = chain[l].triples(&chain[l - 1]).into_iter().map(|(_, t)| t).collect();
            prop_assert_eq!(shared, union_layer_edges(&view, src, depth, l), "layer {}", l);
        }
    }

    #[test]
    fn frontier_only_grows(g in small_graph(12, 40), depth in 1usize..=4) {
        let heads: Vec<u32> = g.entity_range().collect();
        let chain = frontier_chain(&g.view(), &heads, depth);
        for l in 1..=depth {
            for q in 0..heads.len() as u32 {
                let before: BTreeSet<u32> = chain[l - 1].entities_of(q).collect();
                let after: BTreeSet<u32> = chain[l].entities_of(q).collect();
                prop_assert!(before.is_subset(&after));
            }
        }
    }

    #[test]
    fn rdigraph_edges_lie_on_source_sink_paths(g in small_graph(12, 40), depth in 1usize..=4, a in 0u32..12, b in 0u32..12) {
        let n = g.num_entities() as u32;
        let (src, sink) = (a % n, b % n);
        let view = g.view();
        let rd = build_rdigraph(&view, src, sink, depth);
        prop_assert_eq!(&rd, &build_rdigraph(&view, src, sink, depth));
        if rd.empty {
            prop_assert_eq!(rd.num_edges(), 0);
            return Ok(());
        }
        let mut reach = BTreeSet::from([src]);
        for layer in &rd.layers {
            prop_assert!(layer.iter().all(|t| reach.contains(&t.head)));
            reach = layer.iter().map(|t| t.tail).collect();
        }
        prop_assert_eq!(reach, BTreeSet::from([sink]));
        let mut back = BTreeSet::from([sink]);
        for layer in rd.layers.iter().rev() {
            prop_assert!(layer.iter().all(|t| back.contains(&t.tail)));
            back = layer.iter().map(|t| t.head).collect();
        }
        prop_assert_eq!(back, BTreeSet::from([src]));
    }

    #[test]
    fn logsumexp_shifts_with_its_input(xs in prop::collection::vec(-50.0f64..50.0, 1..20), c in -100.0f64..100.0) {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Array::column(xs.clone()));
        let b = tape.constant(Array::column(xs.iter().map(|x| x + c).collect()));
        let la = tape.logsumexp_all(a).unwrap();
        let lb = tape.logsumexp_all(b).unwrap();
        let (la, lb) = (tape.value(la).data()[0], tape.value(lb).data()[0]);
        prop_assert!((lb - (la + c)).abs() <= 1e-6, "{} vs {}", lb, la + c);
    }

    #[test]
    fn edge_messages_replay_bit_for_bit(seed in any::<u64>(), p in 0.0f64..0.9, edges in prop::collection::vec((0u32..5, 0u32..3, 0u32..4), 1..30)) {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let nodes = tape.constant(Array::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.4));
            let rels = tape.constant(Array::from_fn(3, 3, |r, c| (r + 2 * c) as f64 * 0.2));
            let alpha = tape.constant(Array::from_fn(edges.len(), 1, |r, _| 0.1 + 0.8 * (r % 7) as f64 / 7.0));
            let src: Index = edges.iter().map(|e| e.0).collect();
            let rel: Index = edges.iter().map(|e| e.1).collect();
            let dst: Index = edges.iter().map(|e| e.2).collect();
            let out = tape
                .edge_message(nodes, rels, alpha, src, rel, dst, 4, Some((p, seed)))
                .unwrap();
            tape.value(out).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batching_never_changes_scores(g in small_graph(15, 40), depth in 1usize..=3, act in 0usize..3, seed in any::<u64>(),
                                     queries in prop::collection::vec((0u32..15, 0u32..6), 1..6)) {
        let p = params_for(&g, depth, act, seed);
        let n = g.num_entities() as u32;
        let rels = g.relations().num_raw() as u32 * 2;
        let qs: Vec<Query> = queries.iter().map(|&(h, r)| Query::new(h % n, r % rels)).collect();
        let view = g.view();
        let batch = forward_redgnn(&p, &view, &qs, None).unwrap();
        for (i, &q) in qs.iter().enumerate() {
            let alone = forward_redgnn(&p, &view, &[q], None).unwrap();
            for e in g.entity_range() {
                prop_assert_eq!(batch.score(i, e).to_bits(), alone.score(0, e).to_bits());
            }
        }
    }

    #[test]
    fn attention_inside_unit_interval_and_scores_only_on_reached(g in small_graph(15, 40), depth in 1usize..=4, act in 0usize..3,
                                                                 seed in any::<u64>(), h in 0u32..15, r in 0u32..6) {
        let p = params_for(&g, depth, act, seed);
        let n = g.num_entities() as u32;
        let q = Query::new(h % n, r % (g.relations().num_raw() as u32 * 2));
        let fwd = forward_redgnn(&p, &g.view(), &[q], None).unwrap();
        for l in 1..=depth {
            prop_assert!(fwd.alphas(l).iter().all(|&a| a > 0.0 && a < 1.0));
        }
        let reached: BTreeSet<u32> = fwd.plan.reached(0).map(|(e, _)| e).collect();
        for e in g.entity_range() {
            if !reached.contains(&e) {
                prop_assert_eq!(fwd.score(0, e), 0.0);
                prop_assert!(fwd.state(0, e).is_none());
            }
        }
    }

    #[test]
    fn explanations_are_sound_and_backtrack_to_the_sink(g in small_graph(12, 40), depth in 1usize..=3, seed in any::<u64>(),
                                                       pick in 0usize..1000, theta in 0.05f64..0.95) {
        prop_assume!(g.num_edges() > 0);
        let t = g.edges()[pick % g.num_edges()];
        let p = params_for(&g, depth, 1, seed).cast::<f32>();
        let view = g.view();
        let x = explain(&p, &view, t, theta).unwrap();
        let fwd = forward_redgnn(&p, &view, &[Query::from(t)], None).unwrap();
        let rels = g.relations();
        for (l, layer) in x.layers.iter().enumerate() {
            for e in layer {
                prop_assert!(e.alpha >= theta);
                let tr = e.triple();
                let exists = if rels.is_identity(tr.rel) { tr.head == tr.tail } else { g.contains(&tr) };
                prop_assert!(exists, "{:?} not in the graph", tr);
                let recorded = (0..fwd.alphas(l + 1).len())
                    .find(|&i| fwd.plan.edge(l + 1, i).1 == tr)
                    .map(|i| fwd.alphas(l + 1)[i] as f64);
                prop_assert_eq!(recorded, Some(e.alpha));
                let consumed = if l + 1 == x.layers.len() {
                    tr.tail == t.tail
                } else {
                    x.layers[l + 1].iter().any(|next| next.head == tr.tail)
                };
                prop_assert!(consumed, "edge {:?} at layer {} is a dead end", tr, l + 1);
            }
        }
    }
}

fn ranks_strategy() -> impl Strategy<Value = (Vec<i8>, usize)> {
    prop::collection::vec(-3i8..=3, 1..40).prop_flat_map(|s| {
        let n = s.len();
        (Just(s), 0..n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn tie_rank_ignores_candidate_order((scores, answer) in ranks_strategy(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let scores: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
        let base = rank_with_ties(&scores, answer, |_| false).unwrap();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let new_answer = order.iter().position(|&i| i == answer).unwrap();
        prop_assert_eq!(rank_with_ties(&permuted, new_answer, |_| false).unwrap(), base);
        prop_assert!(base.value() >= 1.0 && base.value() <= scores.len() as f64);
    }

    #[test]
    fn filtering_more_never_raises_the_rank((scores, answer) in ranks_strategy(), small in any::<u64>(), extra in any::<u64>()) {
        let scores: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
        let in_small = |i: usize| small >> (i % 64) & 1 == 1;
        let in_big = |i: usize| in_small(i) || extra >> (i % 64) & 1 == 1;
        let a = rank_with_ties(&scores, answer, in_small).unwrap();
        let b = rank_with_ties(&scores, answer, in_big).unwrap();
        prop_assert!(b.value() <= a.value());
        prop_assert!(b.value() >= 1.0);
    }

    #[test]
    fn report_metrics_agree_with_ranks(ranks in prop::collection::vec((0u64..30, 1u64..5), 1..60)) {
        let ranks: Vec<TieRank> = ranks.into_iter().map(|(better, tied)| TieRank { better, tied }).collect();
        let mean = ranks.iter().map(|r| 1.0 / r.value()).sum::<f64>() / ranks.len() as f64;
        prop_assert!((mean_reciprocal_rank(&ranks) - mean).abs() <= 1e-9);
        let report = RankingReport::from_ranks(
            ranks.iter().map(|&rank| RankedTriple { triple: Triple::new(0, 0, 0), rank }).collect(),
        );
        prop_assert!(report.mrr > 0.0 && report.mrr <= 1.0);
        prop_assert!(report.hit1 <= report.hit3 && report.hit3 <= report.hit10);
    }

    #[test]
    fn distance_buckets_partition_the_queries(g in small_graph(15, 30), queries in prop::collection::vec((0u32..15, 0u32..15), 0..40)) {
        let n = g.num_entities() as u32;
        let report = RankingReport::from_ranks(
            queries
                .iter()
                .map(|&(h, t)| RankedTriple { triple: Triple::new(h % n, 0, t % n), rank: TieRank { better: 0, tied: 1 } })
                .collect(),
        );
        let buckets = per_distance(&report, &g);
        prop_assert_eq!(buckets.len(), 6);
        prop_assert_eq!(buckets.iter().map(|b| b.count).sum::<usize>(), queries.len());
        if !queries.is_empty() {
            prop_assert!((buckets.iter().map(|b| b.ratio).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_loss_is_never_negative(scores in prop::collection::vec(-30.0f64..30.0, 0..20), extra in 0usize..20, pick in 0usize..100) {
        let n = scores.len() + extra;
        prop_assume!(n > 0);
        let answer = if scores.is_empty() || pick % (scores.len() + 1) == scores.len() {
            prop_assume!(extra > 0);
            0.0
        } else {
            scores[pick % scores.len()]
        };
        prop_assert!(log_loss(&scores, answer, n) >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn index_round_trip_reproduces_ids(
        facts in prop::collection::vec((0u8..10, 0u8..3, 0u8..10), 1..30),
        held in prop::collection::vec(0usize..100, 0..6),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let line = |&(h, r, t): &(u8, u8, u8)| format!("n{h}\tp{r}\tn{t}\n");
        let train: String = facts.iter().map(line).collect();
        // held-out triples reuse training tokens so they always resolve
        let extra: String = held.iter().map(|i| line(&facts[i % facts.len()])).collect();
        fs::write(dir.path().join("train.txt"), &train).unwrap();
        fs::write(dir.path().join("valid.txt"), &extra).unwrap();
        fs::write(dir.path().join("test.txt"), &extra).unwrap();

        let first = load_dataset(dir.path(), Mode::Transductive).unwrap();
        let out = tempfile::tempdir().unwrap();
        first.write_index(out.path()).unwrap();
        let second = load_dataset(out.path(), Mode::Transductive).unwrap();
        let again = tempfile::tempdir().unwrap();
        second.write_index(again.path()).unwrap();

        let (DatasetLayout::Transductive(a), DatasetLayout::Transductive(b)) = (&first, &second) else {
            unreachable!()
        };
        prop_assert_eq!(a.entities.tokens(), b.entities.tokens());
        prop_assert_eq!(a.relations.tokens(), b.relations.tokens());
        prop_assert_eq!(&a.facts, &b.facts);
        prop_assert_eq!(&a.test, &b.test);
        for f in ["entities.txt", "relations.txt", "train.txt", "valid.txt", "test.txt", "index.json"] {
            prop_assert_eq!(fs::read(out.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{}", f);
        }
    }
}
