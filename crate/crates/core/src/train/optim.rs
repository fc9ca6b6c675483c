use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::grad::Gradients;
use crate::model::{project_relation, SheafModel};

pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adagrad,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adagrad => "adagrad",
        })
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adagrad" => Ok(Optimizer::Adagrad),
            _ => Err(format!("unknown optimizer `{s}` (expected sgd or adagrad)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct RelationState {
    head: Option<DMatrix<f64>>,
    tail: Option<DMatrix<f64>>,
    translation: Option<DMatrix<f64>>,
}

/// Optimizer state: squared-gradient accumulators for Adagrad, allocated on
/// first touch.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    learning_rate: f64,
    entities: BTreeMap<usize, DMatrix<f64>>,
    relations: BTreeMap<usize, RelationState>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            entities: BTreeMap::new(),
            relations: BTreeMap::new(),
        }
    }

    fn update(
        kind: Optimizer,
        lr: f64,
        param: &mut DMatrix<f64>,
        grad: &DMatrix<f64>,
        acc: &mut Option<DMatrix<f64>>,
    ) {
        match kind {
            Optimizer::Sgd => param.zip_apply(grad, |p, g| *p -= lr * g),
            Optimizer::Adagrad => {
                let acc = acc.get_or_insert_with(|| DMatrix::zeros(grad.nrows(), grad.ncols()));
                for ((p, a), &g) in param.iter_mut().zip(acc.iter_mut()).zip(grad.iter()) {
                    *a += g * g;
                    *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
                }
            }
        }
    }

    /// Applies one step and re-projects every touched relation onto its
    /// constraint set. Returns the relations whose orthogonal projection
    /// met a rank-deficient map.
    pub fn step(&mut self, model: &mut SheafModel, grads: &Gradients) -> Vec<usize> {
        let (kind, lr) = (self.kind, self.learning_rate);
        for (&e, g) in &grads.entities {
            let mut acc = self.entities.remove(&e);
            Self::update(kind, lr, &mut model.sections.entities[e], g, &mut acc);
            if let Some(acc) = acc {
                self.entities.insert(e, acc);
            }
        }
        let mut deficient = Vec::new();
        for (&r, g) in &grads.relations {
            let maps = &mut model.sheaf.relations[r];
            let state = self.relations.entry(r).or_default();
            let (gh, gt) = g.tied(maps.constraint);
            if let Some(gh) = gh {
                Self::update(kind, lr, &mut maps.head, &gh, &mut state.head);
            }
            if let Some(gt) = gt {
                Self::update(kind, lr, &mut maps.tail, &gt, &mut state.tail);
            }
            if let (Some(b), Some(gb)) = (&mut maps.translation, &g.translation) {
                Self::update(kind, lr, b, gb, &mut state.translation);
            }
            if project_relation(maps) {
                deficient.push(r);
            }
        }
        deficient
    }
}
