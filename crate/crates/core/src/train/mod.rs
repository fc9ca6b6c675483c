//! Margin-ranking training with corrupted negatives.

mod grad;
mod negative;
mod optim;

pub use grad::{
    grad_score, grad_shv, grad_shvt, margin_loss, pair_objective, penalty_grad, Gradients,
    RelationGrad, TripleGrad,
};
pub use negative::{sample_negatives, NegativeSampler, MAX_ATTEMPTS};
pub use optim::{Optimizer, OptimizerState, ADAGRAD_EPS};

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::kg::{KnowledgeGraph, Split, Triple, TripleIndex};
use crate::model::{
    self, entity_penalty, orthogonality_penalty, relation_discrepancy, ModelError, SheafModel,
};
use crate::rng::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("cannot corrupt {0:?}: both of its entity types have a single entity")]
    Sampling(Triple),
    #[error("non-finite loss in epoch {epoch}, batch {batch} (relation {relation}): {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        relation: usize,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub margin: f64,
    pub alpha: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 512,
            learning_rate: 0.1,
            negatives: 1,
            margin: 1.0,
            alpha: 0.0,
            seed: 0,
            optimizer: Optimizer::Adagrad,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean margin loss per (positive, negative) pair.
    pub mean_loss: f64,
    /// Orthogonality penalty over all entities at the end of the epoch.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_penalty: Vec<f64>,
    pub initial_penalty: f64,
    pub wall_time: Duration,
    /// Mean training score per relation after the last epoch.
    pub discrepancy: BTreeMap<usize, f64>,
}

/// Trains `model` in place. See [`train_with_hook`].
pub fn train(
    kg: &KnowledgeGraph,
    config: &TrainConfig,
    model: &mut SheafModel,
) -> Result<TrainReport, TrainError> {
    train_with_hook(kg, config, model, |_, _| ControlFlow::Continue(()))
}

/// Trains `model` in place, calling `hook` after every epoch; returning
/// `ControlFlow::Break` stops early.
///
/// Each epoch shuffles the training triples, and for every batch draws
/// negatives, accumulates the gradient of the summed margin loss plus
/// `α·‖XᵀX − I‖²` over the entities in the batch, takes one optimizer step
/// and re-projects the touched relations. Single-threaded and bitwise
/// deterministic for a fixed seed.
pub fn train_with_hook<H>(
    kg: &KnowledgeGraph,
    config: &TrainConfig,
    model: &mut SheafModel,
    mut hook: H,
) -> Result<TrainReport, TrainError>
where
    H: FnMut(&EpochStats, &SheafModel) -> ControlFlow<()>,
{
    config.validate()?;
    model.validate()?;
    let mut positives: Vec<Triple> = kg.triples_in(Split::Train).collect();
    if positives.is_empty() {
        return Err(TrainError::Config("no training triples".into()));
    }
    if model.num_entities() != kg.num_entities()
        || model.schema.num_relations() != kg.num_relations()
    {
        return Err(TrainError::Config(format!(
            "model has {} entities and {} relations, graph has {} and {}",
            model.num_entities(),
            model.schema.num_relations(),
            kg.num_entities(),
            kg.num_relations()
        )));
    }
    let start = Instant::now();
    let index = TripleIndex::from_triples(positives.iter().copied());
    let sampler = NegativeSampler::new(kg);
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut neg_rng = rng::stream(config.seed, Stream::Negatives);
    let mut optimizer = OptimizerState::new(config.optimizer, config.learning_rate);
    let initial_penalty = orthogonality_penalty(&model.sections);
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut epoch_penalty = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        positives.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (batch, chunk) in positives.chunks(config.batch_size).enumerate() {
            let mut grads = Gradients::default();
            let mut touched = BTreeSet::new();
            for &pos in chunk {
                let negs = sampler.sample(&index, pos, config.negatives, &mut neg_rng)?;
                let (loss, ps, ns) = pair_objective(model, pos, &negs, config.margin, &mut grads)?;
                if !loss.is_finite() || !ps.is_finite() || ns.iter().any(|s| !s.is_finite()) {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch,
                        relation: pos.relation,
                        detail: format!("positive {pos:?} scored {ps}, negatives {ns:?}"),
                    });
                }
                total += loss;
                pairs += negs.len();
                touched.insert(pos.head);
                touched.insert(pos.tail);
                for n in &negs {
                    touched.insert(n.head);
                    touched.insert(n.tail);
                }
            }
            if config.alpha > 0.0 {
                for &e in &touched {
                    grads.add_penalty(e, &model.sections.entities[e], config.alpha);
                }
            }
            for r in optimizer.step(model, &grads) {
                log::warn!("epoch {epoch}, batch {batch}: relation {r} had a rank-deficient map before orthogonal projection");
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / pairs as f64,
            penalty: orthogonality_penalty(&model.sections),
        };
        if !stats.penalty.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: 0,
                relation: 0,
                detail: "orthogonality penalty diverged".into(),
            });
        }
        log::debug!(
            "epoch {epoch}: loss {:.6}, penalty {:.6}",
            stats.mean_loss,
            stats.penalty
        );
        epoch_loss.push(stats.mean_loss);
        epoch_penalty.push(stats.penalty);
        if hook(&stats, model).is_break() {
            log::info!("stopped after epoch {epoch} by hook");
            break;
        }
    }
    let discrepancy = relation_discrepancy(model, kg.triples_in(Split::Train))?;
    Ok(TrainReport {
        epoch_loss,
        epoch_penalty,
        initial_penalty,
        wall_time: start.elapsed(),
        discrepancy,
    })
}

/// Mean score over a set of triples.
pub fn mean_score(
    model: &SheafModel,
    triples: impl IntoIterator<Item = Triple>,
) -> model::Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in triples {
        sum += model.score(t.head, t.relation, t.tail)?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Penalty of the entity matrices of a subset of entities.
pub fn subset_penalty(model: &SheafModel, entities: impl IntoIterator<Item = usize>) -> f64 {
    entities
        .into_iter()
        .map(|e| entity_penalty(&model.sections.entities[e]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::default_schema;
    use crate::model::{Constraint, ModelConfig, Variant};
    use nalgebra::DMatrix;

    fn ring(n: usize, relations: usize) -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new(default_schema(relations, 4, 4).unwrap());
        for i in 0..n {
            kg.add_entity(&format!("e{i}"), 0).unwrap();
        }
        for i in 0..n {
            for r in 0..relations {
                kg.add_triple(Triple::new(i, r, (i + r + 1) % n), Split::Train)
                    .unwrap();
            }
        }
        kg
    }

    fn model_for(kg: &KnowledgeGraph, config: ModelConfig, seed: u64) -> SheafModel {
        SheafModel::for_graph(config, kg, seed).unwrap()
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let mut kg = KnowledgeGraph::new(default_schema(1, 2, 2).unwrap());
        kg.add_entity("a", 0).unwrap();
        let mut m = model_for(&kg, ModelConfig::default(), 0);
        let err = train(&kg, &TrainConfig::default(), &mut m).unwrap_err();
        assert_eq!(err, TrainError::Config("no training triples".into()));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let kg = ring(4, 1);
        let mut m = model_for(&kg, ModelConfig::default(), 0);
        for bad in [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                negatives: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                train(&kg, &bad, &mut m),
                Err(TrainError::Config(_))
            ));
        }
    }

    #[test]
    fn loss_decreases_on_a_ring() {
        let kg = ring(20, 2);
        let mut m = model_for(&kg, ModelConfig::default(), 1);
        let before = mean_score(&m, kg.triples_in(Split::Train)).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let report = train(&kg, &cfg, &mut m).unwrap();
        assert_eq!(report.epoch_loss.len(), 30);
        assert_eq!(report.epoch_penalty.len(), 30);
        assert!(report.epoch_loss[29] < report.epoch_loss[0]);
        let after = mean_score(&m, kg.triples_in(Split::Train)).unwrap();
        assert!(report.discrepancy.len() == 2);
        // scores are relative to negatives; the margin must be attained
        let negatives = mean_score(&m, (0..20).map(|i| Triple::new(i, 0, (i + 10) % 20))).unwrap();
        assert!(
            negatives > after,
            "{before} -> {after}, negatives {negatives}"
        );
    }

    #[test]
    fn constraints_hold_after_every_step() {
        let kg = ring(12, 4);
        let mut config = ModelConfig {
            variant: Variant::ShvT,
            sections: 2,
            ..ModelConfig::default()
        };
        for (r, c) in ["r0", "r1", "r2", "r3"].iter().zip([
            Constraint::Shared,
            Constraint::Orthogonal,
            Constraint::Antisymmetric,
            Constraint::Identity,
        ]) {
            config.relation_constraints.insert(r.to_string(), c);
        }
        let mut m = model_for(&kg, config, 2);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 5,
            ..TrainConfig::default()
        };
        train_with_hook(&kg, &cfg, &mut m, |_, md| {
            md.validate().unwrap();
            for maps in &md.sheaf.relations {
                if maps.constraint == Constraint::Orthogonal {
                    let h = &maps.head;
                    assert!((h.tr_mul(h) - DMatrix::identity(4, 4)).norm() <= 1e-6);
                }
            }
            ControlFlow::Continue(())
        })
        .unwrap();
        assert_eq!(m.sheaf.relations[3].head, DMatrix::identity(4, 4));
    }

    #[test]
    fn margin_dominance_means_no_change() {
        // TransE on a line: x_i = 10 i, translation 10, so positives score 0
        // and every corruption scores at least 100.
        let mut kg = KnowledgeGraph::new(default_schema(1, 1, 1).unwrap());
        for i in 0..6 {
            kg.add_entity(&format!("e{i}"), 0).unwrap();
        }
        for i in 0..5 {
            kg.add_triple(Triple::new(i, 0, i + 1), Split::Train)
                .unwrap();
        }
        let mut m = model_for(
            &kg,
            ModelConfig {
                variant: Variant::ShvT,
                constraint: Constraint::Identity,
                ..ModelConfig::default()
            },
            3,
        );
        for (i, x) in m.sections.entities.iter_mut().enumerate() {
            x[(0, 0)] = 10.0 * i as f64;
        }
        m.sheaf.relations[0].translation = Some(DMatrix::from_element(1, 1, 10.0));
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            negatives: 3,
            ..TrainConfig::default()
        };
        let report = train(&kg, &cfg, &mut m).unwrap();
        assert_eq!(report.epoch_loss, vec![0.0]);
        assert_eq!(m, before);
    }

    #[test]
    fn all_zero_parameters_have_full_loss() {
        let kg = ring(5, 1);
        let mut m = model_for(&kg, ModelConfig::default(), 4);
        for x in &mut m.sections.entities {
            x.fill(0.0);
        }
        let mut grads = Gradients::default();
        let mut total = 0.0;
        let mut pairs = 0;
        for t in kg.triples_in(Split::Train) {
            let negs = [Triple::new(t.head, t.relation, (t.tail + 2) % 5)];
            total += pair_objective(&m, t, &negs, 1.0, &mut grads).unwrap().0;
            pairs += 1;
        }
        assert!(total >= 1.0 * pairs as f64);
    }

    #[test]
    fn same_seed_same_result() {
        let kg = ring(10, 2);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            alpha: 0.1,
            seed: 9,
            ..TrainConfig::default()
        };
        let mc = ModelConfig {
            sections: 3,
            alpha: 0.1,
            ..ModelConfig::default()
        };
        let mut a = model_for(&kg, mc.clone(), 9);
        let mut b = model_for(&kg, mc, 9);
        let ra = train(&kg, &cfg, &mut a).unwrap();
        let rb = train(&kg, &cfg, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epoch_loss, rb.epoch_loss);
    }

    #[test]
    fn nan_aborts_with_diagnostics() {
        let kg = ring(4, 1);
        let mut m = model_for(&kg, ModelConfig::default(), 5);
        m.sheaf.relations[0].head[(0, 0)] = f64::NAN;
        let err = train(&kg, &TrainConfig::default(), &mut m).unwrap_err();
        assert!(matches!(
            err,
            TrainError::NonFinite {
                epoch: 1,
                batch: 0,
                relation: 0,
                ..
            }
        ));
    }
}
