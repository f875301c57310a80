//! Executable property suites run by the `selftest` command and the
//! acceptance target. Each suite draws its instances from a seed and
//! reports every failing case instead of stopping at the first one.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffkernel::gradcheck::check_gradients;
use crate::diffkernel::{Array, Tape};
use crate::eval::{evaluate, mean_reciprocal_rank, rank_with_ties, FilterIndex, TieRank};
use crate::kg::{RelationSpace, Triple};
use crate::model::{
    encode, forward_redgnn, forward_redsimp, Activation, EncodingPlan, ModelConfig,
    ParamVars, ParameterSet, Query, Variant,
};
use crate::rdigraph::{frontier_chain, union_layer_edges};
use crate::synth::random_graph;
use crate::train::batch_loss;

/// Tolerance of the single-pair vs recursive comparison at 64-bit.
pub const STATE_TOLERANCE: f64 = 1e-10;
/// Maximum relative error allowed between analytic and numeric gradients.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error, where the suite measures one.
    pub max_error: Option<f64>,
    pub first_failure: Option<String>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            max_error: None,
            first_failure: None,
            seconds: 0.0,
        }
    }

    pub fn fail(&mut self, msg: String) {
        self.failures += 1;
        self.first_failure.get_or_insert(msg);
    }

    fn error(&mut self, e: f64) {
        let m = self.max_error.get_or_insert(0.0);
        if e > *m || e.is_nan() {
            *m = e;
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {} cases, {} failures", self.name, self.cases, self.failures)?;
        if let Some(e) = self.max_error {
            write!(f, ", max error {e:.3e}")?;
        }
        write!(f, " ({:.1}s)", self.seconds)?;
        if let Some(m) = &self.first_failure {
            write!(f, "; first failure: {m}")?;
        }
        Ok(())
    }
}

/// Parameters with every entry drawn from `U(-1, 1)`, readout included.
pub fn random_params(config: ModelConfig, relations: RelationSpace, rng: &mut impl Rng) -> ParameterSet<f64> {
    let mut p = ParameterSet::<f64>::init(config, relations, rng.gen()).expect("valid config");
    for a in p.arrays_mut() {
        a.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    p
}

const ACTIVATIONS: [Activation; 3] = [Activation::Identity, Activation::Tanh, Activation::Relu];

/// Union over all sinks of brute-force r-digraph layers against the shared
/// outward frontier edges of the source.
pub fn frontier_union_suite(cases: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::new("frontier-union");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let nv = rng.gen_range(1..=12u32);
        let nr = rng.gen_range(1..=3u32);
        let nf = rng.gen_range(0..=2 * nv as usize);
        let g = random_graph(&mut rng, nv, nr, nf);
        let mut view = g.view();
        if !g.edges().is_empty() && rng.gen_bool(0.3) {
            let t = g.edges()[rng.gen_range(0..g.edges().len())];
            view.mask(t);
        }
        let depth = rng.gen_range(1..=3);
        let source = rng.gen_range(0..nv);
        let chain = frontier_chain(&view, &[source], depth);
        report.cases += 1;
        for l in 1..=depth {
            let shared: BTreeSet<Triple> = chain[l].triples(&chain[l - 1]).into_iter().map(|(_, t)| t).collect();
            let union = union_layer_edges(&view, source, depth, l);
            if shared != union {
                report.fail(format!(
                    "case {case} (|V|={nv}, L={depth}, source {source}) layer {l}: {} shared vs {} union edges",
                    shared.len(),
                    union.len()
                ));
                break;
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

/// Sink state and score from the explicit single-pair encoder against the
/// recursive encoder. With `params`, every instance uses them (graphs are
/// drawn over their relation vocabulary); otherwise each instance draws
/// its own random parameters.
pub fn single_pair_suite(cases: usize, seed: u64, params: Option<&ParameterSet<f64>>) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::new("single-pair-vs-recursive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let nv = rng.gen_range(1..=20u32);
        let drawn;
        let p = match params {
            Some(p) => p,
            None => {
                let nr = rng.gen_range(1..=4u32);
                let cfg = ModelConfig {
                    dim: 4,
                    attn_dim: 3,
                    depth: rng.gen_range(1..=4),
                    activation: ACTIVATIONS[case % 3],
                    variant: if case % 4 == 3 { Variant::AttnWithoutQuery } else { Variant::Full },
                    dropout: 0.0,
                };
                drawn = random_params(cfg, RelationSpace::new(nr), &mut rng);
                &drawn
            }
        };
        let rels = p.relation_space;
        let nr = rels.num_raw() as u32;
        let nf = rng.gen_range(0..=3 * nv as usize);
        let g = random_graph(&mut rng, nv, nr, nf);
        let view = g.view();
        let source = rng.gen_range(0..nv);
        let sink = rng.gen_range(0..nv);
        let qrel = rng.gen_range(0..rels.num_augmented() as u32);
        report.cases += 1;

        let outcome = (|| -> Result<Option<String>, crate::model::ModelError> {
            let simp = forward_redsimp(p, &view, Triple::new(source, qrel, sink))?;
            let fwd = forward_redgnn(p, &view, &[Query::new(source, qrel)], None)?;
            let mut err: f64 = 0.0;
            match fwd.state(0, sink) {
                Some(h) => {
                    if simp.rdigraph.empty {
                        return Ok(Some("sink reached but r-digraph empty".into()));
                    }
                    for (x, y) in h.iter().zip(&simp.state) {
                        err = err.max((x - y).abs());
                    }
                    err = err.max((fwd.score(0, sink) - simp.score).abs());
                }
                None => {
                    if !simp.rdigraph.empty {
                        return Ok(Some("sink unreached but r-digraph non-empty".into()));
                    }
                    err = simp.state.iter().fold(simp.score.abs(), |m, v| m.max(v.abs()));
                }
            }
            report.error(err);
            Ok((!(err <= STATE_TOLERANCE)).then(|| format!("max difference {err:.3e}")))
        })();
        match outcome {
            Ok(None) => {}
            Ok(Some(m)) => report.fail(format!("case {case} (|V|={nv}, {source}->{sink}, r_q {qrel}): {m}")),
            Err(e) => report.fail(format!("case {case}: {e}")),
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

/// Full training loss gradient against central finite differences on toy
/// graphs, with and without message dropout.
pub fn gradient_suite(cases: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::new("loss-gradient");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let nv = rng.gen_range(3..=7u32);
        let nf = rng.gen_range(2..=10);
        let g = random_graph(&mut rng, nv, 2, nf);
        let cfg = ModelConfig {
            dim: rng.gen_range(2..=4),
            attn_dim: 2,
            depth: rng.gen_range(1..=3),
            activation: ACTIVATIONS[case % 3],
            variant: if case % 4 == 3 { Variant::AttnWithoutQuery } else { Variant::Full },
            dropout: if case % 2 == 1 { 0.25 } else { 0.0 },
        };
        let p = random_params(cfg, g.relations(), &mut rng);
        let triples: Vec<Triple> = (0..2)
            .map(|_| Triple::new(rng.gen_range(0..nv), rng.gen_range(0..4), rng.gen_range(0..nv)))
            .collect();
        let mut view = g.view();
        view.mask_all(&triples);
        let qs: Vec<Query> = triples.iter().map(|&t| Query::from(t)).collect();
        let answers: Vec<u32> = triples.iter().map(|t| t.tail).collect();
        let plan = match EncodingPlan::recursive(&view, &qs, cfg.depth) {
            Ok(plan) => plan,
            Err(e) => {
                report.fail(format!("case {case}: {e}"));
                continue;
            }
        };
        let drop_seed: u64 = rng.gen();
        let arrays: Vec<Array<f64>> = p.named_arrays().into_iter().map(|(_, a)| a.clone()).collect();
        report.cases += 1;
        let result = check_gradients(&arrays, 1e-5, |tape: &mut Tape<f64>, leaves| {
            let vars = ParamVars::from_leaves(tape, &cfg, leaves.to_vec()).map_err(kernel_err)?;
            let mut drop_rng = ChaCha8Rng::seed_from_u64(drop_seed);
            let train = (cfg.dropout > 0.0).then_some(&mut drop_rng);
            let enc = encode(tape, &p, &vars, &plan, train).map_err(kernel_err)?;
            batch_loss(tape, enc.scores, &plan, &answers, nv as usize).map_err(kernel_err)
        });
        match result {
            Ok(r) => {
                report.error(r.max_rel_error);
                if !(r.max_rel_error < GRADIENT_TOLERANCE) {
                    report.fail(format!("case {case}: relative error {:.3e}", r.max_rel_error));
                }
            }
            Err(e) => report.fail(format!("case {case}: {e}")),
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

fn kernel_err(e: crate::model::ModelError) -> crate::diffkernel::KernelError {
    match e {
        crate::model::ModelError::Kernel(k) => k,
        other => crate::diffkernel::KernelError::Invalid(other.to_string()),
    }
}

/// The average-tie rank examples, plus a full evaluation of an all-zero
/// model on a 135-entity graph, whose MRR must be exactly `1/68`.
pub fn tie_policy_suite(seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::new("tie-policy");
    let mut check = |name: &str, ok: bool| {
        report.cases += 1;
        if !ok {
            report.fail(name.to_string());
        }
    };
    let three_way = rank_with_ties(&[0.9f64, 0.9, 0.1, 0.9], 0, |_| false);
    check(
        "three-way tie ranks 2",
        matches!(three_way, Ok(r) if r.value() == 2.0 && r.reciprocal() == 0.5),
    );
    let top = rank_with_ties(&[0.2f64, 0.9, 0.1], 1, |_| false);
    check("unique top ranks 1", matches!(top, Ok(r) if r.value() == 1.0));
    let zeros = vec![0.0f64; 135];
    let full = rank_with_ties(&zeros, 42, |_| false);
    check("full tie ranks 68", matches!(full, Ok(r) if r == TieRank { better: 0, tied: 135 } && r.value() == 68.0));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, 135, 4, 300);
    let cfg = ModelConfig {
        dim: 4,
        attn_dim: 2,
        depth: 2,
        ..ModelConfig::default()
    };
    let p = ParameterSet::<f32>::init(cfg, g.relations(), seed).expect("valid config");
    let queries: Vec<Triple> = g.edges().iter().copied().take(50).collect();
    let mrr = evaluate(&p, &g, &queries, &FilterIndex::default(), 16).map(|r| r.mrr);
    check("zero-readout model MRR is 1/68", matches!(mrr, Ok(m) if m == 1.0 / 68.0));
    check(
        "MRR of full ties is 1/68",
        mean_reciprocal_rank(&vec![TieRank { better: 0, tied: 135 }; 633]) == 1.0 / 68.0,
    );
    report.seconds = start.elapsed().as_secs_f64();
    report
}

#[derive(Clone, Debug)]
pub struct SelftestOptions {
    pub seed: u64,
    pub frontier_cases: usize,
    pub single_pair_cases: usize,
    pub gradient_cases: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            frontier_cases: 200,
            single_pair_cases: 500,
            gradient_cases: 50,
        }
    }
}

/// Runs all four suites; `params` feeds the single-pair suite.
pub fn run_all(opts: &SelftestOptions, params: Option<&ParameterSet<f64>>) -> Vec<SuiteReport> {
    vec![
        frontier_union_suite(opts.frontier_cases, opts.seed),
        single_pair_suite(opts.single_pair_cases, opts.seed.wrapping_add(1), params),
        gradient_suite(opts.gradient_cases, opts.seed.wrapping_add(2)),
        tie_policy_suite(opts.seed.wrapping_add(3)),
    ]
}
