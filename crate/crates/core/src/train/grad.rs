use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::kg::Triple;
use crate::model::{
    self, residual, Constraint, KnowledgeSheaf, SectionMatrix, SheafModel, Variant,
};

/// `max(0, pos + γ − neg)`
pub fn margin_loss(pos_score: f64, neg_score: f64, margin: f64) -> f64 {
    (pos_score + margin - neg_score).max(0.0)
}

/// Score of one triple and its gradient with respect to every parameter it
/// touches. Map gradients treat head and tail as independent matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGrad {
    pub score: f64,
    pub head_entity: DMatrix<f64>,
    pub tail_entity: DMatrix<f64>,
    pub head_map: DMatrix<f64>,
    pub tail_map: DMatrix<f64>,
    pub translation: Option<DMatrix<f64>>,
}

/// With `D = R_h X_h (+T) − R_t X_t`: `∂X_h = 2R_hᵀD`, `∂X_t = −2R_tᵀD`,
/// `∂R_h = 2D X_hᵀ`, `∂R_t = −2D X_tᵀ`, `∂T = 2D`.
pub fn grad_score(
    variant: Variant,
    sheaf: &KnowledgeSheaf,
    x: &SectionMatrix,
    h: usize,
    r: usize,
    t: usize,
) -> model::Result<TripleGrad> {
    let maps = sheaf.relation(r)?;
    let (xh, xt) = (x.entity(h)?, x.entity(t)?);
    let translated = variant == Variant::ShvT;
    if translated && maps.translation.is_none() {
        return Err(model::ModelError::MissingTranslation(r));
    }
    let d = residual(maps, xh, xt, translated)?;
    let two_d = &d * 2.0;
    Ok(TripleGrad {
        score: d.norm_squared(),
        head_entity: maps.head.tr_mul(&two_d),
        tail_entity: -maps.tail.tr_mul(&two_d),
        head_map: &two_d * xh.transpose(),
        tail_map: -(&two_d * xt.transpose()),
        translation: translated.then_some(two_d),
    })
}

pub fn grad_shv(
    sheaf: &KnowledgeSheaf,
    x: &SectionMatrix,
    h: usize,
    r: usize,
    t: usize,
) -> model::Result<TripleGrad> {
    grad_score(Variant::Shv, sheaf, x, h, r, t)
}

pub fn grad_shvt(
    sheaf: &KnowledgeSheaf,
    x: &SectionMatrix,
    h: usize,
    r: usize,
    t: usize,
) -> model::Result<TripleGrad> {
    grad_score(Variant::ShvT, sheaf, x, h, r, t)
}

/// `∇_X ‖XᵀX − I‖²_F = 4X(XᵀX − I)`
pub fn penalty_grad(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    x * g * 4.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationGrad {
    pub head: DMatrix<f64>,
    pub tail: DMatrix<f64>,
    pub translation: Option<DMatrix<f64>>,
}

impl RelationGrad {
    /// Gradient with respect to the free parameters of a constrained pair:
    /// `(head, tail)`, where `None` means the matrix is not a free
    /// parameter. Shared maps fold the tail gradient into the head,
    /// antisymmetric maps fold it in negated, identity maps are fixed.
    pub fn tied(&self, constraint: Constraint) -> (Option<DMatrix<f64>>, Option<DMatrix<f64>>) {
        match constraint {
            Constraint::Free | Constraint::Orthogonal => {
                (Some(self.head.clone()), Some(self.tail.clone()))
            }
            Constraint::Shared => (Some(&self.head + &self.tail), None),
            Constraint::Antisymmetric => (Some(&self.head - &self.tail), None),
            Constraint::Identity => (None, None),
        }
    }
}

/// Sparse gradient accumulator keyed by entity and relation index. Keys are
/// ordered so that applying updates is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub entities: BTreeMap<usize, DMatrix<f64>>,
    pub relations: BTreeMap<usize, RelationGrad>,
}

fn add_into(map: &mut BTreeMap<usize, DMatrix<f64>>, key: usize, g: &DMatrix<f64>, coeff: f64) {
    match map.get_mut(&key) {
        Some(acc) => acc.zip_apply(g, |a, b| *a += coeff * b),
        None => {
            map.insert(key, g * coeff);
        }
    }
}

impl Gradients {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty()
    }

    /// Adds `coeff` times the gradient of one triple's score.
    pub fn add_triple(&mut self, t: Triple, g: &TripleGrad, coeff: f64) {
        add_into(&mut self.entities, t.head, &g.head_entity, coeff);
        add_into(&mut self.entities, t.tail, &g.tail_entity, coeff);
        match self.relations.get_mut(&t.relation) {
            Some(acc) => {
                acc.head.zip_apply(&g.head_map, |a, b| *a += coeff * b);
                acc.tail.zip_apply(&g.tail_map, |a, b| *a += coeff * b);
                if let (Some(a), Some(b)) = (&mut acc.translation, &g.translation) {
                    a.zip_apply(b, |x, y| *x += coeff * y);
                }
            }
            None => {
                self.relations.insert(
                    t.relation,
                    RelationGrad {
                        head: &g.head_map * coeff,
                        tail: &g.tail_map * coeff,
                        translation: g.translation.as_ref().map(|b| b * coeff),
                    },
                );
            }
        }
    }

    /// Adds `α ∇‖X_eᵀX_e − I‖²` for entity `e`.
    pub fn add_penalty(&mut self, e: usize, x: &DMatrix<f64>, alpha: f64) {
        add_into(&mut self.entities, e, &penalty_grad(x), alpha);
    }
}

/// Margin loss of one positive against its negatives, accumulating the
/// gradient into `grads`. Returns `(loss, positive score, negative scores)`.
pub fn pair_objective(
    model: &SheafModel,
    pos: Triple,
    negatives: &[Triple],
    margin: f64,
    grads: &mut Gradients,
) -> model::Result<(f64, f64, Vec<f64>)> {
    let v = model.config.variant;
    let (sheaf, x) = (&model.sheaf, &model.sections);
    let gp = grad_score(v, sheaf, x, pos.head, pos.relation, pos.tail)?;
    let mut loss = 0.0;
    let mut active = 0usize;
    let mut neg_scores = Vec::with_capacity(negatives.len());
    for &neg in negatives {
        let gn = grad_score(v, sheaf, x, neg.head, neg.relation, neg.tail)?;
        neg_scores.push(gn.score);
        let l = margin_loss(gp.score, gn.score, margin);
        if l > 0.0 {
            loss += l;
            active += 1;
            grads.add_triple(neg, &gn, -1.0);
        }
    }
    if active > 0 {
        grads.add_triple(pos, &gp, active as f64);
    }
    Ok((loss, gp.score, neg_scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::default_schema;
    use crate::model::{project_relation, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn margin_examples() {
        assert_eq!(margin_loss(0.0, 2.0, 1.0), 0.0);
        assert_eq!(margin_loss(1.0, 1.0, 1.0), 1.0);
        assert!((margin_loss(0.3, 0.5, 1.0) - 0.8).abs() < 1e-15);
    }

    fn model(variant: Variant, constraint: Constraint, m: usize, seed: u64) -> SheafModel {
        let mut model = SheafModel::init(
            ModelConfig {
                variant,
                sections: m,
                constraint,
                ..ModelConfig::default()
            },
            default_schema(2, 3, 3).unwrap(),
            (0..4).map(|i| format!("e{i}")).collect(),
            vec![0; 4],
            seed,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for maps in &mut model.sheaf.relations {
            if let Some(b) = &mut maps.translation {
                *b = DMatrix::from_fn(b.nrows(), b.ncols(), |_, _| rng.random_range(-1.0..1.0));
            }
        }
        model
    }

    #[test]
    fn consistent_triple_has_zero_gradient() {
        let mut m = model(Variant::Shv, Constraint::Identity, 2, 1);
        m.sections.entities[1] = m.sections.entities[0].clone();
        let g = grad_shv(&m.sheaf, &m.sections, 0, 0, 1).unwrap();
        assert_eq!(g.score, 0.0);
        for mat in [&g.head_entity, &g.tail_entity, &g.head_map, &g.tail_map] {
            assert!(mat.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_entity_gradient() {
        let m = model(Variant::Shv, Constraint::Identity, 1, 2);
        let g = grad_shv(&m.sheaf, &m.sections, 0, 0, 1).unwrap();
        let expected = (&m.sections.entities[0] - &m.sections.entities[1]) * 2.0;
        assert!((g.head_entity - expected).amax() < 1e-15);
    }

    /// Central differences of `f` with respect to every entry of the matrix
    /// selected by `param`.
    fn fd<F, P>(model: &SheafModel, mut param: P, f: F) -> DMatrix<f64>
    where
        F: Fn(&SheafModel) -> f64,
        P: FnMut(&mut SheafModel) -> &mut DMatrix<f64>,
    {
        let step = 1e-5;
        let mut probe = model.clone();
        let shape = param(&mut probe).shape();
        DMatrix::from_fn(shape.0, shape.1, |i, j| {
            let mut plus = model.clone();
            param(&mut plus)[(i, j)] += step;
            project_tied(&mut plus);
            let mut minus = model.clone();
            param(&mut minus)[(i, j)] -= step;
            project_tied(&mut minus);
            (f(&plus) - f(&minus)) / (2.0 * step)
        })
    }

    fn project_tied(m: &mut SheafModel) {
        for maps in &mut m.sheaf.relations {
            if matches!(
                maps.constraint,
                Constraint::Shared | Constraint::Antisymmetric
            ) {
                project_relation(maps);
            }
        }
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / (1.0 + b.norm())
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for variant in [Variant::Shv, Variant::ShvT] {
            for c in Constraint::ALL {
                for m in [1, 4] {
                    let model = model(variant, c, m, rng.random());
                    let pos = Triple::new(0, 0, 1);
                    let negs = [Triple::new(2, 0, 1), Triple::new(0, 0, 3)];
                    let margin = 10.0;
                    let objective = |md: &SheafModel| {
                        let mut g = Gradients::default();
                        pair_objective(md, pos, &negs, margin, &mut g).unwrap().0
                    };
                    let mut grads = Gradients::default();
                    pair_objective(&model, pos, &negs, margin, &mut grads).unwrap();
                    for e in 0..4 {
                        let num = fd(&model, |md| &mut md.sections.entities[e], objective);
                        let ana = grads
                            .entities
                            .get(&e)
                            .cloned()
                            .unwrap_or_else(|| DMatrix::zeros(3, m));
                        assert!(rel_err(&ana, &num) < 1e-4, "{variant} {c} m={m} entity {e}");
                    }
                    let rg = &grads.relations[&0];
                    let (gh, gt) = rg.tied(c);
                    if let Some(gh) = gh {
                        let num = fd(&model, |md| &mut md.sheaf.relations[0].head, objective);
                        assert!(rel_err(&gh, &num) < 1e-4, "{variant} {c} m={m} head");
                    }
                    if let Some(gt) = gt {
                        let num = fd(&model, |md| &mut md.sheaf.relations[0].tail, objective);
                        assert!(rel_err(&gt, &num) < 1e-4, "{variant} {c} m={m} tail");
                    }
                    if variant == Variant::ShvT {
                        let num = fd(
                            &model,
                            |md| md.sheaf.relations[0].translation.as_mut().unwrap(),
                            objective,
                        );
                        assert!(rel_err(rg.translation.as_ref().unwrap(), &num) < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = penalty_grad(&x);
        let step = 1e-5;
        for i in 0..5 {
            for j in 0..3 {
                let (mut p, mut q) = (x.clone(), x.clone());
                p[(i, j)] += step;
                q[(i, j)] -= step;
                let num = (model::entity_penalty(&p) - model::entity_penalty(&q)) / (2.0 * step);
                assert!((num - g[(i, j)]).abs() < 1e-6 * (1.0 + num.abs()));
            }
        }
    }

    #[test]
    fn inactive_pairs_contribute_nothing() {
        let mut m = model(Variant::Shv, Constraint::Identity, 1, 3);
        m.sections.entities[1] = m.sections.entities[0].clone();
        m.sections.entities[3] *= 100.0;
        let mut grads = Gradients::default();
        let (loss, pos, negs) = pair_objective(
            &m,
            Triple::new(0, 0, 1),
            &[Triple::new(0, 0, 3)],
            1.0,
            &mut grads,
        )
        .unwrap();
        assert_eq!(pos, 0.0);
        assert!(negs[0] > 1.0);
        assert_eq!(loss, 0.0);
        assert!(grads.is_empty());
    }
}
