//! Synthetic graph generators for property suites, benchmarks and the
//! rule-recovery experiment.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{EntityId, KnowledgeGraph, RelationSpace, Triple};

/// Uniform random facts without duplicates or self-loops. Fewer than
/// `num_facts` are returned if the graph is too small to hold them.
pub fn random_facts<R: Rng + ?Sized>(
    rng: &mut R,
    num_entities: u32,
    num_relations: u32,
    num_facts: usize,
) -> Vec<Triple> {
    let capacity = num_entities as usize * num_entities.saturating_sub(1) as usize * num_relations as usize;
    let target = num_facts.min(capacity);
    let mut set = BTreeSet::new();
    while set.len() < target {
        let h = rng.gen_range(0..num_entities);
        let t = rng.gen_range(0..num_entities);
        if h == t {
            continue;
        }
        set.insert(Triple::new(h, rng.gen_range(0..num_relations), t));
    }
    let mut facts: Vec<Triple> = set.into_iter().collect();
    facts.shuffle(rng);
    facts
}

pub fn random_graph<R: Rng + ?Sized>(
    rng: &mut R,
    num_entities: u32,
    num_relations: u32,
    num_facts: usize,
) -> KnowledgeGraph {
    let facts = random_facts(rng, num_entities, num_relations, num_facts);
    KnowledgeGraph::from_facts(0..num_entities, RelationSpace::new(num_relations), &facts)
        .expect("generated facts are in range")
}

/// Graph with `|F| = |V|·D̄/2` random facts, so the mean augmented degree
/// (in plus out, reverses counted) is `D̄`.
pub fn degree_controlled(num_entities: u32, avg_degree: f64, num_relations: u32, seed: u64) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_facts = (num_entities as f64 * avg_degree / 2.0).round() as usize;
    random_graph(&mut rng, num_entities, num_relations, num_facts)
}

/// Knowledge graph generated from two composition rules
/// `q1(x, z) ← a(x, y) ∧ b(y, z)` and `q2(x, z) ← c(x, y) ∧ d(y, z)`, plus
/// distractor facts of a fifth relation.
#[derive(Clone, Debug)]
pub struct PlantedRules {
    pub graph: KnowledgeGraph,
    /// Relation ids: `[q1, q2]` are query relations (never facts).
    pub query_rels: [u32; 2],
    /// Body relations `[[a, b], [c, d]]`.
    pub bodies: [[u32; 2]; 2],
    pub distractor: u32,
    /// Every rule-implied `(x, q, z)` with the body paths that imply it.
    pub labels: Vec<PlantedTriple>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedTriple {
    pub triple: Triple,
    /// Two-edge body paths `(x, a, y), (y, b, z)` that derive the triple.
    pub paths: Vec<[Triple; 2]>,
}

pub fn planted_rules(num_entities: u32, body_facts: usize, distractors: usize, seed: u64) -> PlantedRules {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q1, q2, a, b, c, d, z) = (0, 1, 2, 3, 4, 5, 6);
    let rels = RelationSpace::new(7);
    let mut facts = BTreeSet::new();
    let add = |rng: &mut ChaCha8Rng, facts: &mut BTreeSet<Triple>, rel: u32, n: usize| {
        let mut added = 0;
        while added < n {
            let h = rng.gen_range(0..num_entities);
            let t = rng.gen_range(0..num_entities);
            if h != t && facts.insert(Triple::new(h, rel, t)) {
                added += 1;
            }
        }
    };
    for rel in [a, b, c, d] {
        add(&mut rng, &mut facts, rel, body_facts);
    }
    add(&mut rng, &mut facts, z, distractors);
    let facts: Vec<Triple> = facts.into_iter().collect();
    let graph = KnowledgeGraph::from_facts(0..num_entities, rels, &facts).expect("in range");

    let mut labels = Vec::new();
    for (q, [r1, r2]) in [(q1, [a, b]), (q2, [c, d])] {
        let mut derived: std::collections::BTreeMap<(EntityId, EntityId), Vec<[Triple; 2]>> =
            Default::default();
        for f1 in facts.iter().filter(|t| t.rel == r1) {
            for f2 in graph.out_edges(f1.tail).iter().filter(|t| t.rel == r2) {
                if f2.tail != f1.head {
                    derived.entry((f1.head, f2.tail)).or_default().push([*f1, *f2]);
                }
            }
        }
        labels.extend(derived.into_iter().map(|((x, y), paths)| PlantedTriple {
            triple: Triple::new(x, q, y),
            paths,
        }));
    }
    PlantedRules {
        graph,
        query_rels: [q1, q2],
        bodies: [[a, b], [c, d]],
        distractor: z,
        labels,
    }
}
