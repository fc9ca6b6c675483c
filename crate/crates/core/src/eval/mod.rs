//! Filtered ranking metrics, easy query construction and reports.

mod easy;
mod report;

pub use easy::{build_easy_queries, traverse_answers};
pub use report::{aggregate, AggregateReport, Stat, StructureAggregate};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::kg::{KnowledgeGraph, TripleIndex};
use crate::model::SheafModel;
use crate::query::{answer_query, Query, QueryError, QueryStructure, Ranking};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ranks to aggregate")]
    Empty,
    #[error("answer entity {0} is not among the ranked candidates")]
    AnswerAbsent(usize),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query has no answers to rank")]
    NoAnswers,
    #[error("seed reports disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Query(#[from] QueryError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `1 + #{c ranked before answer : c ∉ other_answers}`.
pub fn filtered_rank(
    ranking: &Ranking,
    answer: usize,
    other_answers: &BTreeSet<usize>,
) -> Result<usize> {
    let mut better = 0;
    for &(c, _) in ranking.entries() {
        if c == answer {
            return Ok(1 + better);
        }
        if !other_answers.contains(&c) {
            better += 1;
        }
    }
    Err(EvalError::AnswerAbsent(answer))
}

/// Filtered ranks of every entity in `answers`, each filtered against all
/// of `known` except itself, in one pass over the ranking.
pub fn filtered_ranks(
    ranking: &Ranking,
    answers: &BTreeSet<usize>,
    known: &BTreeSet<usize>,
) -> Result<Vec<usize>> {
    let mut ranks = BTreeMap::new();
    let mut better = 0;
    for &(c, _) in ranking.entries() {
        if answers.contains(&c) {
            ranks.insert(c, 1 + better);
        } else if !known.contains(&c) {
            better += 1;
        }
    }
    answers
        .iter()
        .map(|a| ranks.get(a).copied().ok_or(EvalError::AnswerAbsent(*a)))
        .collect()
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub queries: usize,
    /// Ranked answers; each query contributes one rank per answer.
    pub answers: usize,
}

impl StructureMetrics {
    pub fn from_ranks(ranks: &[usize], queries: usize) -> Result<Self> {
        Ok(Self {
            mrr: mrr(ranks)?,
            hits1: hits_at_k(ranks, 1)?,
            hits3: hits_at_k(ranks, 3)?,
            hits10: hits_at_k(ranks, 10)?,
            queries,
            answers: ranks.len(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub structures: BTreeMap<QueryStructure, StructureMetrics>,
}

/// Ranks of `q.answers`, filtered against every entity that answers the
/// query on the full graph.
pub fn query_ranks(model: &SheafModel, q: &Query, full: &TripleIndex) -> Result<Vec<usize>> {
    query_ranks_with(q, full, || answer_query(q, model))
}

pub(crate) fn query_ranks_with(
    q: &Query,
    full: &TripleIndex,
    rank: impl FnOnce() -> std::result::Result<Ranking, QueryError>,
) -> Result<Vec<usize>> {
    if q.answers.is_empty() {
        return Err(EvalError::NoAnswers);
    }
    let mut known = traverse_answers(q, full);
    known.extend(q.answers.iter().copied());
    filtered_ranks(&rank()?, &q.answers, &known)
}

/// Answers every query by harmonic extension and aggregates filtered
/// metrics per structure. Queries are processed in parallel; results are
/// combined in input order.
pub fn evaluate(
    model: &SheafModel,
    queries: &[Query],
    kg: &KnowledgeGraph,
) -> Result<MetricReport> {
    evaluate_with(queries, kg, |q| answer_query(q, model))
}

/// [`evaluate`] with a caller-supplied ranking function, used for the
/// baselines.
pub fn evaluate_with<F>(queries: &[Query], kg: &KnowledgeGraph, rank: F) -> Result<MetricReport>
where
    F: Fn(&Query) -> std::result::Result<Ranking, QueryError> + Sync,
{
    if queries.is_empty() {
        return Err(EvalError::Empty);
    }
    let full = TripleIndex::build(kg.triples());
    let per_query: Vec<Vec<usize>> = queries
        .par_iter()
        .map(|q| query_ranks_with(q, &full, || rank(q)))
        .collect::<Result<_>>()?;
    let mut grouped: BTreeMap<QueryStructure, (Vec<usize>, usize)> = BTreeMap::new();
    for (q, ranks) in queries.iter().zip(per_query) {
        let entry = grouped.entry(q.structure).or_default();
        entry.0.extend(ranks);
        entry.1 += 1;
    }
    let structures = grouped
        .into_iter()
        .map(|(s, (ranks, n))| Ok((s, StructureMetrics::from_ranks(&ranks, n)?)))
        .collect::<Result<_>>()?;
    Ok(MetricReport { structures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{default_schema, Split, Triple};
    use crate::model::{Constraint, ModelConfig};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(mrr(&[1, 2, 4]).unwrap(), 1.75 / 3.0);
        assert_eq!(hits_at_k(&[1, 11, 5], 10).unwrap(), 2.0 / 3.0);
        assert_eq!(hits_at_k(&[1, 1], 7).unwrap(), 1.0);
        assert!(matches!(mrr(&[]), Err(EvalError::Empty)));
        assert!(matches!(hits_at_k(&[], 1), Err(EvalError::Empty)));
        assert!(matches!(hits_at_k(&[1], 0), Err(EvalError::ZeroK)));
    }

    #[test]
    fn mrr_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ranks: Vec<usize> = (0..1000).map(|_| rng.random_range(1..=500)).collect();
        let mut acc = 0.0;
        for r in &ranks {
            acc += 1.0 / *r as f64;
        }
        assert!((mrr(&ranks).unwrap() - acc / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn filtered_rank_examples() {
        let r = Ranking::new(vec![(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)]);
        assert_eq!(filtered_rank(&r, 0, &BTreeSet::new()).unwrap(), 1);
        assert_eq!(filtered_rank(&r, 2, &[0, 1].into()).unwrap(), 1);
        assert_eq!(filtered_rank(&r, 2, &[1].into()).unwrap(), 2);
        assert!(matches!(
            filtered_rank(&r, 9, &BTreeSet::new()),
            Err(EvalError::AnswerAbsent(9))
        ));
    }

    /// Rank by direct counting over candidate values, with the index
    /// tie-break.
    fn counting_rank(values: &[f64], answer: usize, others: &BTreeSet<usize>) -> usize {
        1 + (0..values.len())
            .filter(|&c| c != answer && !others.contains(&c))
            .filter(|&c| values[c] < values[answer] || (values[c] == values[answer] && c < answer))
            .count()
    }

    #[test]
    fn filtered_rank_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            // coarse values so ties occur
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64).collect();
            let ranking = Ranking::new(values.iter().copied().enumerate().collect());
            let answer = rng.random_range(0..n);
            let others: BTreeSet<usize> = (0..n)
                .filter(|&c| c != answer && rng.random_bool(0.3))
                .collect();
            let rank = filtered_rank(&ranking, answer, &others).unwrap();
            assert_eq!(rank, counting_rank(&values, answer, &others));
            let unfiltered = filtered_rank(&ranking, answer, &BTreeSet::new()).unwrap();
            assert!(rank <= unfiltered);

            let answers: BTreeSet<usize> = others.iter().copied().chain([answer]).collect();
            let batch = filtered_ranks(&ranking, &answers, &answers).unwrap();
            for (a, r) in answers.iter().zip(batch) {
                let mut rest = answers.clone();
                rest.remove(a);
                assert_eq!(r, filtered_rank(&ranking, *a, &rest).unwrap());
            }
        }
    }

    proptest! {
        #[test]
        fn metric_bounds(ranks in proptest::collection::vec(1usize..200, 1..50)) {
            let m = mrr(&ranks).unwrap();
            let max = *ranks.iter().max().unwrap() as f64;
            prop_assert!(m <= 1.0 && m >= 1.0 / max - 1e-15);
            let mut prev = 0.0;
            for k in 1..20 {
                let h = hits_at_k(&ranks, k).unwrap();
                prop_assert!(h >= prev && (0.0..=1.0).contains(&h));
                prev = h;
            }
        }
    }

    /// Identity maps on a line: entity i sits at 10·i and relation 0
    /// maps i to i+1 exactly.
    fn line_model(n: usize) -> (SheafModel, KnowledgeGraph) {
        let mut kg = KnowledgeGraph::new(default_schema(1, 1, 1).unwrap());
        for i in 0..n {
            kg.add_entity(&format!("e{i}"), 0).unwrap();
        }
        for i in 0..n - 1 {
            kg.add_triple(Triple::new(i, 0, i + 1), Split::Train)
                .unwrap();
        }
        let config = ModelConfig {
            constraint: Constraint::Identity,
            variant: crate::model::Variant::ShvT,
            ..Default::default()
        };
        let mut model = SheafModel::for_graph(config, &kg, 0).unwrap();
        for (i, x) in model.sections.entities.iter_mut().enumerate() {
            x[(0, 0)] = 10.0 * i as f64;
        }
        model.sheaf.relations[0].translation = Some(nalgebra::DMatrix::from_element(1, 1, 10.0));
        (model, kg)
    }

    #[test]
    fn perfect_model_scores_one() {
        let (model, kg) = line_model(8);
        let mut queries = Vec::new();
        for i in 0..7 {
            queries.push(Query::new(QueryStructure::P1, vec![i], vec![0], [i + 1].into()).unwrap());
        }
        for i in 0..5 {
            queries.push(
                Query::new(QueryStructure::P3, vec![i], vec![0, 0, 0], [i + 3].into()).unwrap(),
            );
        }
        let report = evaluate(&model, &queries, &kg).unwrap();
        for m in report.structures.values() {
            assert_eq!((m.mrr, m.hits1, m.hits10), (1.0, 1.0, 1.0));
        }
        assert_eq!(report.structures[&QueryStructure::P1].queries, 7);
        assert_eq!(report, evaluate(&model, &queries, &kg).unwrap());
    }

    #[test]
    fn single_query_rank_four() {
        let kg = {
            let mut kg = KnowledgeGraph::new(default_schema(1, 1, 1).unwrap());
            for i in 0..10 {
                kg.add_entity(&format!("e{i}"), 0).unwrap();
            }
            kg
        };
        let q = Query::new(QueryStructure::P1, vec![0], vec![0], [3].into()).unwrap();
        let mut order: Vec<usize> = (0..10).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
        let pos = order.iter().position(|&c| c == 3).unwrap();
        order.swap(pos, 3);
        let ranking = Ranking::new(
            order
                .iter()
                .enumerate()
                .map(|(p, &c)| (c, p as f64))
                .collect(),
        );
        let report = evaluate_with(&[q], &kg, |_| Ok(ranking.clone())).unwrap();
        let m = &report.structures[&QueryStructure::P1];
        assert_eq!((m.mrr, m.hits1, m.hits10), (0.25, 0.0, 1.0));
    }

    #[test]
    fn empty_inputs_are_errors() {
        let (model, kg) = line_model(3);
        assert!(matches!(evaluate(&model, &[], &kg), Err(EvalError::Empty)));
        let q = Query::new(QueryStructure::P1, vec![0], vec![0], BTreeSet::new()).unwrap();
        assert!(matches!(
            evaluate(&model, &[q], &kg),
            Err(EvalError::NoAnswers)
        ));
    }
}
