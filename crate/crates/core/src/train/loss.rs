use crate::diffkernel::{Array, Scalar, Tape, Var};
use crate::kg::EntityId;
use crate::model::{EncodingPlan, ModelError};

/// Multi-class log loss of one query from its reached scores:
/// `-f(a) + ln(Σ_reached e^f + (|V| - n_reached))`. Unreached entities score
/// zero and contribute `e^0 = 1` each; an unreached answer has `f(a) = 0`.
pub fn log_loss(reached_scores: &[f64], answer_score: f64, num_entities: usize) -> f64 {
    assert!(
        reached_scores.len() <= num_entities,
        "{} reached entities out of {num_entities}",
        reached_scores.len()
    );
    let unreached = (num_entities - reached_scores.len()) as f64;
    let mut m = reached_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if unreached > 0.0 {
        m = m.max(0.0);
    }
    let mut acc: f64 = reached_scores.iter().map(|s| (s - m).exp()).sum();
    acc += unreached * (-m).exp();
    m + acc.ln() - answer_score
}

/// Summed log loss of every query of a forward pass, recorded on `tape`.
///
/// `answers[q]` is the answer entity of query `q`; `scores` is the
/// `(final nodes, 1)` score column of the pass.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    scores: Var,
    plan: &EncodingPlan,
    answers: &[EntityId],
    num_entities: usize,
) -> Result<Var, ModelError> {
    let nq = plan.num_queries();
    if answers.len() != nq {
        return Err(ModelError::Config(format!(
            "{} answers for {nq} queries",
            answers.len()
        )));
    }
    let last = plan.layers.last().expect("plan has layers");
    let mut segments: Vec<u32> = last.node_query.clone();
    let mut pad = Vec::new();
    for q in 0..nq {
        let reached = plan.final_offsets[q + 1] - plan.final_offsets[q];
        assert!(reached <= num_entities, "reached more entities than exist");
        if reached < num_entities {
            pad.push(T::from_f64(((num_entities - reached) as f64).ln()));
            segments.push(q as u32);
        }
    }
    let all = if pad.is_empty() {
        scores
    } else {
        let pad = tape.constant(Array::column(pad));
        tape.concat_rows(scores, pad)?
    };
    let lse = tape.logsumexp(all, segments, nq)?;
    let partition = tape.sum(lse);

    let rows: Vec<u32> = answers
        .iter()
        .enumerate()
        .filter_map(|(q, &a)| plan.final_row(q, a).map(|r| r as u32))
        .collect();
    if rows.is_empty() {
        return Ok(partition);
    }
    let picked = tape.gather_rows(scores, rows)?;
    let picked = tape.sum(picked);
    let neg = tape.scale(picked, -T::one());
    Ok(tape.add(partition, neg)?)
}
