use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::index::sample;
use rand::Rng;

use crate::kg::{KnowledgeGraph, Split, Triple, TripleIndex};
use crate::query::{Query, QueryStructure};

/// Entities satisfying `q` in `index`. Template vertices are visited in
/// order; each non-anchor vertex keeps the entities reachable along every
/// incoming edge.
pub fn traverse_answers(q: &Query, index: &TripleIndex) -> BTreeSet<usize> {
    let s = q.structure;
    let n = s.num_anchors() + s.num_interior() + 1;
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (v, &a) in q.anchors.iter().enumerate() {
        sets[v].insert(a);
    }
    for v in s.num_anchors()..n {
        let mut acc: Option<BTreeSet<usize>> = None;
        for &(h, slot, t) in s.template() {
            if t != v {
                continue;
            }
            let reach: BTreeSet<usize> = sets[h]
                .iter()
                .flat_map(|&x| index.tails(x, q.relations[slot]).iter().copied())
                .collect();
            acc = Some(match acc {
                None => reach,
                Some(prev) => prev.intersection(&reach).copied().collect(),
            });
        }
        sets[v] = acc.unwrap_or_default();
    }
    sets.pop().unwrap_or_default()
}

/// Triples whose head, relation and tail all occur in training.
fn seen_in_training(kg: &KnowledgeGraph) -> impl Fn(&Triple) -> bool {
    let entities = kg.training_entities();
    let relations: HashSet<usize> = kg.triples_in(Split::Train).map(|t| t.relation).collect();
    move |t| {
        entities.contains(&t.head) && entities.contains(&t.tail) && relations.contains(&t.relation)
    }
}

/// Queries whose constituent triples are all seen in training.
///
/// `1p` queries are the eligible test triples themselves, each ranking its
/// own tail. Other structures are sampled from eligible train and test
/// triples and take as answers every entity satisfying the query in
/// `index`, which should cover the full graph. Fewer than `count` queries
/// are returned (with a warning) when the graph does not support more.
pub fn build_easy_queries(
    kg: &KnowledgeGraph,
    index: &TripleIndex,
    structure: QueryStructure,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Query> {
    let seen = seen_in_training(kg);
    let out = if structure == QueryStructure::P1 {
        let eligible: Vec<Triple> = kg.triples_in(Split::Test).filter(|t| seen(t)).collect();
        let picked: Vec<usize> = if eligible.len() <= count {
            (0..eligible.len()).collect()
        } else {
            let mut idx = sample(rng, eligible.len(), count).into_vec();
            idx.sort_unstable();
            idx
        };
        picked
            .into_iter()
            .map(|i| {
                let t = eligible[i];
                Query {
                    structure,
                    anchors: vec![t.head],
                    relations: vec![t.relation],
                    answers: [t.tail].into(),
                }
            })
            .collect()
    } else {
        sample_complex(kg, index, structure, count, rng, &seen)
    };
    if out.len() < count {
        log::warn!(
            "only {} of {} requested {} queries could be built",
            out.len(),
            count,
            structure
        );
    }
    out
}

fn sample_complex(
    kg: &KnowledgeGraph,
    index: &TripleIndex,
    structure: QueryStructure,
    count: usize,
    rng: &mut impl Rng,
    seen: &impl Fn(&Triple) -> bool,
) -> Vec<Query> {
    let edges: Vec<Triple> = kg
        .triples()
        .iter()
        .enumerate()
        .filter(|&(i, t)| matches!(kg.split_of(i), Split::Train | Split::Test) && seen(t))
        .map(|(_, t)| *t)
        .collect();
    if edges.is_empty() {
        return Vec::new();
    }
    let mut incoming: HashMap<usize, Vec<Triple>> = HashMap::new();
    for t in &edges {
        incoming.entry(t.tail).or_default().push(*t);
    }
    let pick = |rng: &mut dyn rand::RngCore, into: usize| -> Option<Triple> {
        let list = incoming.get(&into)?;
        Some(list[rng.random_range(0..list.len())])
    };
    // `k` distinct edges into `v`
    let distinct = |rng: &mut dyn rand::RngCore, v: usize, k: usize| -> Option<Vec<Triple>> {
        let list = incoming.get(&v)?;
        if list.len() < k {
            return None;
        }
        let idx = sample(rng, list.len(), k);
        Some(idx.iter().map(|i| list[i]).collect())
    };

    let mut seen_queries: HashSet<(Vec<usize>, Vec<usize>)> = HashSet::new();
    let mut out = Vec::new();
    let max_attempts = 50 * count.max(1);
    for _ in 0..max_attempts {
        if out.len() >= count {
            break;
        }
        let last = edges[rng.random_range(0..edges.len())];
        let built: Option<(Vec<usize>, Vec<usize>)> = match structure {
            QueryStructure::P1 => Some((vec![last.head], vec![last.relation])),
            QueryStructure::P2 => {
                pick(rng, last.head).map(|e1| (vec![e1.head], vec![e1.relation, last.relation]))
            }
            QueryStructure::P3 => pick(rng, last.head).and_then(|e2| {
                pick(rng, e2.head)
                    .map(|e1| (vec![e1.head], vec![e1.relation, e2.relation, last.relation]))
            }),
            QueryStructure::I2 | QueryStructure::I3 => {
                let k = structure.num_anchors();
                distinct(rng, last.tail, k).map(|es| {
                    (
                        es.iter().map(|e| e.head).collect(),
                        es.iter().map(|e| e.relation).collect(),
                    )
                })
            }
            QueryStructure::Ip => distinct(rng, last.head, 2).map(|es| {
                (
                    vec![es[0].head, es[1].head],
                    vec![es[0].relation, es[1].relation, last.relation],
                )
            }),
            QueryStructure::Pi => {
                let branch = pick(rng, last.head);
                let other = incoming
                    .get(&last.tail)
                    .map(|l| {
                        l.iter()
                            .filter(|e| **e != last)
                            .copied()
                            .collect::<Vec<_>>()
                    })
                    .filter(|l| !l.is_empty())
                    .map(|l| l[rng.random_range(0..l.len())]);
                branch.zip(other).map(|(e1, e3)| {
                    (
                        vec![e1.head, e3.head],
                        vec![e1.relation, last.relation, e3.relation],
                    )
                })
            }
        };
        let Some((anchors, relations)) = built else {
            continue;
        };
        if !seen_queries.insert((anchors.clone(), relations.clone())) {
            continue;
        }
        let mut q = Query {
            structure,
            anchors,
            relations,
            answers: BTreeSet::new(),
        };
        q.answers = traverse_answers(&q, index);
        if !q.answers.is_empty() {
            out.push(q);
        }
    }
    out
}
