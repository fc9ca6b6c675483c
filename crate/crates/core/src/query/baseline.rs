use super::answer::{candidates, check_anchors};
use super::{build_query_graph, Query, QueryEdge, QueryError, QueryGraph, Ranking, Result};
use crate::model::{Constraint, SheafModel, Variant};

/// Largest number of interior entity assignments [`entity_chaining_exact`]
/// will enumerate.
pub const CHAINING_BUDGET: f64 = 1e6;

/// Path queries on a translational model with identity maps: the
/// candidate is compared with the anchor shifted by every translation
/// along the path, `V(c) = ‖X_a + Σ_i T_i − X_c‖²`.
pub fn naive_traversal_score(q: &Query, model: &SheafModel) -> Result<Ranking> {
    if !q.structure.is_path() {
        return Err(QueryError::Unsupported(format!(
            "naive traversal only answers path queries, not {}",
            q.structure
        )));
    }
    if model.config.variant != Variant::ShvT {
        return Err(QueryError::Unsupported(
            "naive traversal needs a translational model".into(),
        ));
    }
    let graph = build_query_graph(q, &model.schema)?;
    check_anchors(&graph, &q.anchors, model)?;
    let mut shifted = model.sections.entities[q.anchors[0]].clone();
    for &r in &q.relations {
        let maps = model.sheaf.relation(r)?;
        if maps.constraint != Constraint::Identity {
            return Err(QueryError::Unsupported(format!(
                "naive traversal needs identity maps, relation {} is {}",
                model.schema.relation_name(r),
                maps.constraint
            )));
        }
        shifted += maps
            .translation
            .as_ref()
            .ok_or(crate::model::ModelError::MissingTranslation(r))?;
    }
    let values = candidates(&graph, model)
        .into_iter()
        .map(|c| (c, (&shifted - &model.sections.entities[c]).norm_squared()))
        .collect();
    Ok(Ranking::new(values))
}

/// Exact discrete minimization: every interior vertex ranges over the
/// entities of its type and the candidate's value is the smallest total
/// triple score over all such assignments.
pub fn entity_chaining_exact(q: &Query, model: &SheafModel) -> Result<Ranking> {
    let graph = build_query_graph(q, &model.schema)?;
    chain_graph(&graph, &q.anchors, model)
}

fn chain_graph(graph: &QueryGraph, anchors: &[usize], model: &SheafModel) -> Result<Ranking> {
    check_anchors(graph, anchors, model)?;
    let interior = graph.interior();
    let pools: Vec<Vec<usize>> = interior
        .iter()
        .map(|&v| {
            let ty = graph.vertex_types()[v];
            (0..model.num_entities())
                .filter(|&e| model.entity_types[e] == ty)
                .collect()
        })
        .collect();
    let estimate: f64 = pools.iter().map(|p| p.len() as f64).product();
    if estimate > CHAINING_BUDGET {
        return Err(QueryError::Budget {
            estimate,
            budget: CHAINING_BUDGET,
        });
    }
    let target = graph.target();
    let (target_edges, inner_edges): (Vec<&QueryEdge>, Vec<_>) = graph
        .edges()
        .iter()
        .partition(|e| e.head == target || e.tail == target);
    let cands = candidates(graph, model);
    let mut best = vec![f64::INFINITY; cands.len()];
    if pools.iter().any(Vec::is_empty) {
        return Ok(Ranking::new(cands.into_iter().zip(best).collect()));
    }

    let mut assign: Vec<usize> = anchors.to_vec();
    assign.extend(pools.iter().map(|p| p[0]));
    assign.push(usize::MAX);
    let mut digits = vec![0usize; pools.len()];
    loop {
        for (k, &d) in digits.iter().enumerate() {
            assign[interior[k]] = pools[k][d];
        }
        let mut inner = 0.0;
        for e in &inner_edges {
            inner += model.score(assign[e.head], e.relation, assign[e.tail])?;
        }
        for (i, &c) in cands.iter().enumerate() {
            assign[target] = c;
            let mut total = inner;
            for e in &target_edges {
                total += model.score(assign[e.head], e.relation, assign[e.tail])?;
            }
            if total < best[i] {
                best[i] = total;
            }
        }
        // odometer over interior assignments
        let mut k = 0;
        while k < digits.len() {
            digits[k] += 1;
            if digits[k] < pools[k].len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
        if k == digits.len() {
            break;
        }
    }
    Ok(Ranking::new(cands.into_iter().zip(best).collect()))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::kg::default_schema;
    use crate::model::ModelConfig;
    use crate::query::answer::random_model;
    use crate::query::{answer_query, QueryStructure};
    use crate::sheaf::testutil::gaussian;
    use rand::SeedableRng;

    fn q(s: QueryStructure, anchors: Vec<usize>, relations: Vec<usize>) -> Query {
        Query::new(s, anchors, relations, BTreeSet::new()).unwrap()
    }

    fn transe(n: usize, d: usize, seed: u64, zero_translations: bool) -> SheafModel {
        let config = ModelConfig {
            variant: Variant::ShvT,
            constraint: Constraint::Identity,
            ..Default::default()
        };
        let names = (0..n).map(|i| format!("e{i}")).collect();
        let mut model = SheafModel::init(
            config,
            default_schema(3, d, d).unwrap(),
            names,
            vec![0; n],
            seed,
        )
        .unwrap();
        if !zero_translations {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for maps in &mut model.sheaf.relations {
                maps.translation = Some(gaussian(&mut rng, d, 1) * 0.3);
            }
        }
        model
    }

    #[test]
    fn naive_one_hop_matches_harmonic() {
        let model = transe(15, 4, 2, false);
        let query = q(QueryStructure::P1, vec![3], vec![1]);
        let naive = naive_traversal_score(&query, &model).unwrap();
        let harmonic = answer_query(&query, &model).unwrap();
        for (a, b) in naive.entries().iter().zip(harmonic.entries()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-10);
        }
    }

    #[test]
    fn naive_two_hop_with_zero_translations() {
        let model = transe(10, 3, 4, true);
        let query = q(QueryStructure::P2, vec![5], vec![0, 2]);
        let naive = naive_traversal_score(&query, &model).unwrap();
        let harmonic = answer_query(&query, &model).unwrap();
        let xa = &model.sections.entities[5];
        for &(c, v) in naive.entries() {
            let d = (xa - &model.sections.entities[c]).norm_squared();
            assert!((v - d).abs() < 1e-12);
            assert!((harmonic.value(c).unwrap() - d / 2.0).abs() < 1e-12);
        }
        let order = |r: &Ranking| r.entries().iter().map(|e| e.0).collect::<Vec<_>>();
        assert_eq!(order(&naive), order(&harmonic));
    }

    #[test]
    fn naive_rejects_unsupported_inputs() {
        let model = transe(5, 2, 0, false);
        let err = naive_traversal_score(&q(QueryStructure::I2, vec![0, 1], vec![0, 1]), &model);
        assert!(matches!(err, Err(QueryError::Unsupported(_))));
        let shv = random_model(
            default_schema(2, 2, 2).unwrap(),
            vec![0; 4],
            Variant::Shv,
            1,
            0,
        );
        let err = naive_traversal_score(&q(QueryStructure::P1, vec![0], vec![0]), &shv);
        assert!(matches!(err, Err(QueryError::Unsupported(_))));
        let free = random_model(
            default_schema(2, 2, 2).unwrap(),
            vec![0; 4],
            Variant::ShvT,
            1,
            0,
        );
        let err = naive_traversal_score(&q(QueryStructure::P1, vec![0], vec![0]), &free);
        assert!(matches!(err, Err(QueryError::Unsupported(_))));
    }

    #[test]
    fn chaining_without_interior_equals_harmonic() {
        for variant in [Variant::Shv, Variant::ShvT] {
            let model = random_model(default_schema(3, 3, 2).unwrap(), vec![0; 9], variant, 2, 8);
            for query in [
                q(QueryStructure::P1, vec![1], vec![2]),
                q(QueryStructure::I2, vec![1, 4], vec![2, 0]),
                q(QueryStructure::I3, vec![1, 4, 7], vec![2, 0, 1]),
            ] {
                let exact = entity_chaining_exact(&query, &model).unwrap();
                let harmonic = answer_query(&query, &model).unwrap();
                for &(c, v) in exact.entries() {
                    let h = harmonic.value(c).unwrap();
                    assert!((v - h).abs() <= 1e-10 * (1.0 + v.abs()));
                }
            }
        }
    }

    #[test]
    fn harmonic_relaxes_chaining() {
        for variant in [Variant::Shv, Variant::ShvT] {
            let model = random_model(default_schema(2, 3, 3).unwrap(), vec![0; 20], variant, 1, 9);
            for a in 0..20 {
                let query = q(QueryStructure::P2, vec![a], vec![0, 1]);
                let exact = entity_chaining_exact(&query, &model).unwrap();
                let harmonic = answer_query(&query, &model).unwrap();
                for &(c, v) in exact.entries() {
                    assert!(harmonic.value(c).unwrap() <= v + 1e-8);
                }
            }
        }
    }

    #[test]
    fn exact_section_gives_zero_for_both() {
        // identity maps, zero translations: entities 0 and 1 coincide with 2
        let mut model = transe(6, 2, 1, true);
        let x = model.sections.entities[2].clone();
        model.sections.entities[0] = x.clone();
        model.sections.entities[1] = x;
        let query = q(QueryStructure::P2, vec![0], vec![0, 1]);
        let exact = entity_chaining_exact(&query, &model).unwrap();
        let harmonic = answer_query(&query, &model).unwrap();
        assert_eq!(exact.value(2), Some(0.0));
        assert!(harmonic.value(2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let model = random_model(
            default_schema(3, 1, 1).unwrap(),
            vec![0; 1001],
            Variant::Shv,
            1,
            0,
        );
        let err = entity_chaining_exact(&q(QueryStructure::P3, vec![0], vec![0, 1, 2]), &model);
        match err {
            Err(QueryError::Budget { estimate, .. }) => assert_eq!(estimate, 1001.0 * 1001.0),
            other => panic!("{other:?}"),
        }
    }
}
