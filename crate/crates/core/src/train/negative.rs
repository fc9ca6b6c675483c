use rand::Rng;

use super::TrainError;
use crate::kg::{KnowledgeGraph, Triple, TripleIndex};

/// Resampling attempts before a corruption that matches a known training
/// triple is accepted anyway.
pub const MAX_ATTEMPTS: usize = 100;

/// Uniform head-or-tail corruption among entities of the required type.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    by_type: Vec<Vec<usize>>,
    head_type: Vec<usize>,
    tail_type: Vec<usize>,
}

impl NegativeSampler {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let schema = kg.schema();
        Self {
            by_type: (0..schema.num_entity_types())
                .map(|s| kg.entities_of_type(s))
                .collect(),
            head_type: (0..schema.num_relations())
                .map(|r| schema.head_type(r))
                .collect(),
            tail_type: (0..schema.num_relations())
                .map(|r| schema.tail_type(r))
                .collect(),
        }
    }

    /// Draws `k` corrupted versions of `triple`. Each negative flips a fair
    /// coin for the slot to corrupt; when that slot's type has a single
    /// entity the other slot is used instead.
    pub fn sample(
        &self,
        index: &TripleIndex,
        triple: Triple,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Triple>, TrainError> {
        let heads = &self.by_type[self.head_type[triple.relation]];
        let tails = &self.by_type[self.tail_type[triple.relation]];
        let (can_head, can_tail) = (heads.len() > 1, tails.len() > 1);
        if !can_head && !can_tail {
            return Err(TrainError::Sampling(triple));
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let coin = rng.random_bool(0.5);
            let corrupt_head = match (can_head, can_tail) {
                (true, true) => coin,
                (h, _) => h,
            };
            let mut neg = triple;
            for _ in 0..MAX_ATTEMPTS {
                neg = triple;
                if corrupt_head {
                    neg.head = heads[rng.random_range(0..heads.len())];
                } else {
                    neg.tail = tails[rng.random_range(0..tails.len())];
                }
                if neg != triple && !index.contains(&neg) {
                    break;
                }
            }
            out.push(neg);
        }
        Ok(out)
    }
}

/// One-off convenience wrapper around [`NegativeSampler`].
pub fn sample_negatives(
    kg: &KnowledgeGraph,
    index: &TripleIndex,
    triple: Triple,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triple>, TrainError> {
    NegativeSampler::new(kg).sample(index, triple, k, rng)
}
