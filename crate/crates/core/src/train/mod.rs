//! Optimization of the encoder parameters with the multi-class log loss.

mod config;
mod loss;

pub use config::TrainConfig;
pub use loss::{batch_loss, log_loss};

use std::borrow::Cow;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkernel::{Adam, Array, KernelError};
use crate::eval::{evaluate, EvalError, FilterIndex, RankingReport};
use crate::kg::{InductiveDataset, KgError, KnowledgeGraph, RelationSpace, TransductiveDataset, Triple};
use crate::model::{checkpoint, forward_redgnn, EncodingPlan, ModelError, ParameterSet, Query};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<KernelError> for TrainError {
    fn from(e: KernelError) -> Self {
        TrainError::Model(ModelError::Kernel(e))
    }
}

/// Folds a sequence of integers into one 64-bit seed (splitmix64 steps).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss per query over applied batches.
    pub loss: f64,
    pub queries: usize,
    pub skipped_batches: usize,
    pub seconds: f64,
}

struct ChunkResult {
    loss: f64,
    grads: Vec<Array<f32>>,
    plan: EncodingPlan,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub params: ParameterSet<f32>,
    adam: Adam,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, relation_space: RelationSpace) -> Result<Self, TrainError> {
        config.validate()?;
        let params = ParameterSet::init(config.model_config(), relation_space, config.seed)?;
        Ok(Self::with_params(config, params))
    }

    pub fn with_params(config: TrainConfig, params: ParameterSet<f32>) -> Self {
        Self {
            adam: Adam::new(config.adam_config()),
            config,
            params,
            epoch: 0,
        }
    }

    /// One pass over `labels` (both directions) on `fact_graph`.
    pub fn train_epoch(&mut self, fact_graph: &KnowledgeGraph, labels: &[Triple]) -> Result<EpochStats, TrainError> {
        self.train_epoch_observed(fact_graph, labels, &mut |_, _| {})
    }

    /// Like [`train_epoch`](Self::train_epoch), handing every batch and the
    /// encoding plans built for it to `observe`.
    pub fn train_epoch_observed(
        &mut self,
        fact_graph: &KnowledgeGraph,
        labels: &[Triple],
        observe: &mut dyn FnMut(&[Triple], &EncodingPlan),
    ) -> Result<EpochStats, TrainError> {
        let start = Instant::now();
        self.epoch += 1;
        let cfg = self.config.clone();
        let rels = fact_graph.relations();
        let mut queries = rels.with_reverses(labels);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, self.epoch as u64]));
        queries.shuffle(&mut rng);

        let num_entities = fact_graph.num_entities();
        let (mut total, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        for (b, batch) in queries.chunks(cfg.batch_size).enumerate() {
            let mut view = fact_graph.view();
            if cfg.masking {
                view.mask_all(batch);
            }
            let params = &self.params;
            let chunks: Vec<&[Triple]> = batch.chunks(cfg.chunk_size).collect();
            let results: Vec<Result<ChunkResult, TrainError>> = chunks
                .par_iter()
                .enumerate()
                .map(|(c, chunk)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, self.epoch as u64, b as u64, c as u64]));
                    let qs: Vec<Query> = chunk.iter().map(|&t| Query::from(t)).collect();
                    let answers: Vec<u32> = chunk.iter().map(|t| t.tail).collect();
                    let fwd = forward_redgnn(params, &view, &qs, Some(&mut rng))?;
                    let mut tape = fwd.tape;
                    let loss = batch_loss(&mut tape, fwd.encoded.scores, &fwd.plan, &answers, num_entities)?;
                    let value = tape.value(loss).data()[0] as f64;
                    let grads = tape.backward(loss)?;
                    let grads = fwd
                        .vars
                        .leaves
                        .iter()
                        .map(|&v| grads.get(v).expect("leaf gradient").clone())
                        .collect();
                    Ok(ChunkResult {
                        loss: value,
                        grads,
                        plan: fwd.plan,
                    })
                })
                .collect();

            let mut loss = 0.0;
            let mut sum: Option<Vec<Array<f32>>> = None;
            for r in results {
                let r = r?;
                observe(batch, &r.plan);
                loss += r.loss;
                match &mut sum {
                    None => sum = Some(r.grads),
                    Some(acc) => acc.iter_mut().zip(&r.grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let grads = sum.expect("non-empty batch");
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                skipped += 1;
                eprintln!("epoch {} batch {b}: non-finite loss or gradient, batch skipped", self.epoch);
                continue;
            }
            let refs: Vec<&Array<f32>> = grads.iter().collect();
            self.adam.step(&mut self.params.arrays_mut(), &refs)?;
            total += loss;
            counted += batch.len();
        }
        Ok(EpochStats {
            epoch: self.epoch,
            loss: if counted == 0 { f64::NAN } else { total / counted as f64 },
            queries: counted,
            skipped_batches: skipped,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// What the trainer learns from and validates on.
#[derive(Clone, Copy, Debug)]
pub enum TrainData<'a> {
    Transductive(&'a TransductiveDataset),
    Inductive(&'a InductiveDataset),
}

impl<'a> TrainData<'a> {
    pub fn relation_space(&self) -> RelationSpace {
        match self {
            TrainData::Transductive(d) => d.relation_space(),
            TrainData::Inductive(d) => d.relation_space(),
        }
    }

    /// Fact graph and label triples for `epoch` (1-based).
    pub fn split(&self, cfg: &TrainConfig, epoch: usize) -> Result<(Cow<'a, KnowledgeGraph>, Vec<Triple>), TrainError> {
        match self {
            TrainData::Transductive(d) => {
                let seed = if cfg.resample_split { mix_seed(&[cfg.seed, epoch as u64]) } else { cfg.seed };
                let (g, labels) = d.training_split(cfg.fact_fraction, seed)?;
                Ok((Cow::Owned(g), labels.triples))
            }
            TrainData::Inductive(d) => Ok((Cow::Borrowed(&d.train_graph), d.train_facts.triples.clone())),
        }
    }

    /// Inference graph, query triples (both directions) and filter for
    /// validation.
    pub fn validation(&self) -> (&'a KnowledgeGraph, Vec<Triple>, FilterIndex) {
        match self {
            TrainData::Transductive(d) => {
                let rels = d.relation_space();
                (&d.graph, rels.with_reverses(&d.valid.triples), FilterIndex::new(rels, &d.known_triples()))
            }
            TrainData::Inductive(d) => {
                let rels = d.relation_space();
                (
                    &d.train_graph,
                    rels.with_reverses(&d.valid.triples),
                    FilterIndex::new(rels, &d.known_train_triples()),
                )
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_mrr: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub best_epoch: usize,
    pub best_val_mrr: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
    pub best_params: ParameterSet<f32>,
    pub best_report: Option<RankingReport>,
    /// Directory of the best checkpoint, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Trains for up to `max_epochs`, validating every `eval_every` epochs and
/// keeping the parameters with the best validation MRR. Stops after
/// `patience` evaluations without improvement. One JSON line per epoch goes
/// to `log`.
pub fn fit(
    config: &TrainConfig,
    data: TrainData<'_>,
    out_dir: Option<&Path>,
    log: &mut dyn Write,
) -> Result<FitReport, TrainError> {
    config.validate()?;
    let mut trainer = Trainer::new(config.clone(), data.relation_space())?;
    let (val_graph, val_queries, val_filter) = data.validation();
    let fixed = if config.resample_split { None } else { Some(data.split(config, 0)?) };

    let mut best: Option<(usize, f64, ParameterSet<f32>, RankingReport)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    let checkpoint_dir = out_dir.map(|d| d.join("best"));
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let resampled;
        let (graph, labels) = match &fixed {
            Some((g, l)) => (g.as_ref(), l.as_slice()),
            None => {
                resampled = data.split(config, epoch)?;
                (resampled.0.as_ref(), resampled.1.as_slice())
            }
        };
        let stats = trainer.train_epoch(graph, labels)?;
        let mut val_mrr = None;
        if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            let report = evaluate(&trainer.params, val_graph, &val_queries, &val_filter, config.eval_batch_size)?;
            val_mrr = Some(report.mrr);
            if best.as_ref().map_or(true, |b| report.mrr > b.1) {
                if let Some(dir) = &checkpoint_dir {
                    checkpoint::save(
                        dir,
                        &trainer.params,
                        config.seed,
                        epoch,
                        serde_json::json!({ "train_config": config, "val_mrr": report.mrr }),
                    )?;
                }
                best = Some((epoch, report.mrr, trainer.params.clone(), report));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let entry = EpochLog {
            epoch,
            loss: stats.loss,
            val_mrr,
            seconds: start.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", serde_json::to_string(&entry).expect("log entry serializes"))?;
        history.push(entry);
        if stale >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_mrr, best_params, best_report) = match best {
        Some((e, m, p, r)) => (e, m, p, Some(r)),
        None => (0, 0.0, trainer.params.clone(), None),
    };
    Ok(FitReport {
        best_epoch,
        best_val_mrr,
        epochs_run: history.len(),
        stopped_early,
        history,
        best_params,
        best_report,
        checkpoint: checkpoint_dir.filter(|_| best_epoch > 0),
    })
}
