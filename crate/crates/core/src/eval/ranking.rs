use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffkernel::Scalar;
use crate::kg::{EntityId, RelationId, RelationSpace, Triple};

use super::EvalError;

/// Average-tie rank: `better + (tied + 1) / 2`, where `tied` counts every
/// unfiltered candidate scoring equal to the answer, the answer included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieRank {
    pub better: u64,
    pub tied: u64,
}

impl TieRank {
    pub fn value(self) -> f64 {
        self.better as f64 + (self.tied as f64 + 1.0) / 2.0
    }

    /// Twice the rank, which is always an integer.
    pub fn doubled(self) -> u64 {
        2 * self.better + self.tied + 1
    }

    pub fn reciprocal(self) -> f64 {
        2.0 / self.doubled() as f64
    }

    /// Counts toward Hit@k iff the (possibly fractional) rank is at most `k`.
    pub fn hit(self, k: u64) -> bool {
        self.doubled() <= 2 * k
    }
}

/// Ranks `answer` among `scores` (indexed by entity offset), skipping every
/// index for which `filtered` returns true. The answer itself is never
/// filtered.
pub fn rank_with_ties<T: Scalar>(
    scores: &[T],
    answer: usize,
    filtered: impl Fn(usize) -> bool,
) -> Result<TieRank, EvalError> {
    let target = *scores.get(answer).ok_or(EvalError::MissingAnswer {
        answer,
        candidates: scores.len(),
    })?;
    let mut rank = TieRank { better: 0, tied: 0 };
    for (i, &s) in scores.iter().enumerate() {
        if i != answer && filtered(i) {
            continue;
        }
        if s > target {
            rank.better += 1;
        } else if s == target {
            rank.tied += 1;
        }
    }
    Ok(rank)
}

/// Known true answers of every `(e_q, r_q)` over the given triples and
/// their reverses.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    answers: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn new(rels: RelationSpace, triples: &[Triple]) -> Self {
        let mut answers: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for &t in triples {
            let r = rels.reverse(t);
            answers.entry((t.head, t.rel)).or_default().push(t.tail);
            answers.entry((r.head, r.rel)).or_default().push(r.tail);
        }
        for v in answers.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { answers }
    }

    pub fn known(&self, head: EntityId, rel: RelationId) -> &[EntityId] {
        self.answers.get(&(head, rel)).map_or(&[], Vec::as_slice)
    }

    pub fn is_known(&self, head: EntityId, rel: RelationId, tail: EntityId) -> bool {
        self.known(head, rel).binary_search(&tail).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedTriple {
    pub triple: Triple,
    pub rank: TieRank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBucket {
    /// `"1"` … `"5"` or `">5"`.
    pub label: String,
    pub count: usize,
    pub ratio: f64,
    pub mrr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub count: usize,
    pub mrr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
    pub ranks: Vec<RankedTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_distance: Option<Vec<DistanceBucket>>,
}

/// Mean reciprocal rank, summed over groups of equal rank so that a set of
/// identical ranks yields exactly their reciprocal.
pub fn mean_reciprocal_rank(ranks: &[TieRank]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let mut by_rank: std::collections::BTreeMap<u64, usize> = Default::default();
    for r in ranks {
        *by_rank.entry(r.doubled()).or_default() += 1;
    }
    let n = ranks.len() as f64;
    by_rank
        .into_iter()
        .map(|(doubled, count)| (count as f64 / n) * (2.0 / doubled as f64))
        .sum()
}

fn hit_ratio(ranks: &[TieRank], k: u64) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| r.hit(k)).count() as f64 / ranks.len() as f64
}

impl RankingReport {
    pub fn from_ranks(ranks: Vec<RankedTriple>) -> Self {
        let plain: Vec<TieRank> = ranks.iter().map(|r| r.rank).collect();
        Self {
            count: plain.len(),
            mrr: mean_reciprocal_rank(&plain),
            hit1: hit_ratio(&plain, 1),
            hit3: hit_ratio(&plain, 3),
            hit10: hit_ratio(&plain, 10),
            ranks,
            per_distance: None,
        }
    }

    /// Aligned-column summary; hit ratios in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}", "subset", "count", "MRR", "Hit@1", "Hit@3", "Hit@10");
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8.4} {:>8.2} {:>8.2} {:>8.2}",
            "all",
            self.count,
            self.mrr,
            100.0 * self.hit1,
            100.0 * self.hit3,
            100.0 * self.hit10
        );
        if let Some(buckets) = &self.per_distance {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8}", "distance", "count", "ratio%", "MRR");
            for b in buckets {
                let _ = writeln!(
                    out,
                    "{:<10} {:>8} {:>8.2} {:>8.4}",
                    b.label,
                    b.count,
                    100.0 * b.ratio,
                    b.mrr
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_rank_examples() {
        let scores = [0.9f32, 0.9, 0.1, 0.9];
        let r = rank_with_ties(&scores, 0, |_| false).unwrap();
        assert_eq!(r.value(), 2.0);
        assert_eq!(r.reciprocal(), 0.5);
        let r = rank_with_ties(&[0.2f32, 0.9, 0.1], 1, |_| false).unwrap();
        assert_eq!(r.value(), 1.0);
        let r = rank_with_ties(&vec![0.0f32; 135], 17, |_| false).unwrap();
        assert_eq!(r.value(), 68.0);
    }

    #[test]
    fn filtered_candidates_are_skipped_but_never_the_answer() {
        let scores = [0.5f64, 0.9, 0.7, 0.5];
        let r = rank_with_ties(&scores, 0, |i| i == 1 || i == 0).unwrap();
        assert_eq!(r, TieRank { better: 1, tied: 2 });
    }

    #[test]
    fn missing_answer_is_an_error() {
        assert!(rank_with_ties(&[0.1f32], 3, |_| false).is_err());
    }

    #[test]
    fn hit_uses_fractional_rank() {
        // rank 10.5 is not a hit at 10
        let r = TieRank { better: 9, tied: 2 };
        assert_eq!(r.value(), 10.5);
        assert!(!r.hit(10));
        assert!(TieRank { better: 9, tied: 1 }.hit(10));
    }

    #[test]
    fn full_tie_mrr_is_exact() {
        let ranks = vec![TieRank { better: 0, tied: 135 }; 633];
        assert_eq!(mean_reciprocal_rank(&ranks), 1.0 / 68.0);
    }

    #[test]
    fn filter_index_covers_reverses() {
        let rels = RelationSpace::new(2);
        let f = FilterIndex::new(rels, &[Triple::new(0, 1, 2), Triple::new(0, 1, 3)]);
        assert_eq!(f.known(0, 1), &[2, 3]);
        assert!(f.is_known(2, 3, 0));
        assert!(f.known(5, 0).is_empty());
    }
}
