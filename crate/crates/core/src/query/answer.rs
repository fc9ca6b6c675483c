use nalgebra::DVector;

use super::{build_query_graph, Query, QueryError, QueryGraph, Result};
use crate::model::{SheafModel, Variant};
use crate::sheaf::{assemble_laplacian, Cochain, HarmonicSolver, SheafOnGraph};

/// Candidate entities with their query values, ascending by value and then
/// by entity index.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    entries: Vec<(usize, f64)>,
}

impl Ranking {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Zero-based position of `entity`.
    pub fn position(&self, entity: usize) -> Option<usize> {
        self.entries.iter().position(|&(e, _)| e == entity)
    }

    pub fn value(&self, entity: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|&&(e, _)| e == entity)
            .map(|&(_, v)| v)
    }

    pub fn top(&self, k: usize) -> &[(usize, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }
}

/// The model's sheaf pulled back along the query graph's typing: every
/// query edge carries its relation's maps.
pub fn pulled_back_sheaf(graph: &QueryGraph, model: &SheafModel) -> Result<SheafOnGraph> {
    let dims = graph
        .vertex_types()
        .iter()
        .map(|&s| model.schema.vertex_dim(s))
        .collect();
    let mut sheaf = SheafOnGraph::new(dims);
    for e in graph.edges() {
        let maps = model.sheaf.relation(e.relation)?;
        sheaf.add_edge(e.head, e.tail, maps.head.clone(), maps.tail.clone())?;
    }
    Ok(sheaf)
}

pub(super) fn check_anchors(
    graph: &QueryGraph,
    anchors: &[usize],
    model: &SheafModel,
) -> Result<()> {
    if anchors.len() != graph.num_anchors() {
        return Err(QueryError::Template(format!(
            "template has {} anchors, {} given",
            graph.num_anchors(),
            anchors.len()
        )));
    }
    for (v, &a) in anchors.iter().enumerate() {
        let found = *model
            .entity_types
            .get(a)
            .ok_or(QueryError::EntityOutOfRange {
                entity: a,
                size: model.num_entities(),
            })?;
        let expected = graph.vertex_types()[v];
        if found != expected {
            return Err(QueryError::AnchorType {
                anchor: a,
                expected: model.schema.entity_type_name(expected).to_string(),
                found: model.schema.entity_type_name(found).to_string(),
            });
        }
    }
    Ok(())
}

pub(super) fn candidates(graph: &QueryGraph, model: &SheafModel) -> Vec<usize> {
    let ty = graph.vertex_types()[graph.target()];
    (0..model.num_entities())
        .filter(|&e| model.entity_types[e] == ty)
        .collect()
}

/// Per-section quadratic in the candidate: `V = c + lᵀx + xᵀ S x`.
struct SectionForm {
    constant: f64,
    linear: DVector<f64>,
}

/// Scores every entity of the target's type by the optimal harmonic
/// extension value with the anchors and candidate fixed on the boundary.
/// Translational models use the affine extension; its boundary-independent
/// terms are included so that single-edge queries reproduce the triple
/// score.
pub fn answer_graph(graph: &QueryGraph, anchors: &[usize], model: &SheafModel) -> Result<Ranking> {
    check_anchors(graph, anchors, model)?;
    let sheaf = pulled_back_sheaf(graph, model)?;
    let lap = assemble_laplacian(&sheaf);
    let boundary = graph.boundary();
    let interior = graph.interior();
    let solver = HarmonicSolver::new(&lap, &boundary)?;
    let dims = solver.boundary_dims();
    let na = graph.num_anchors();
    let la: usize = dims[..na].iter().sum();
    let dt = dims[na];
    let s = solver.schur();
    let s_aa = s.view((0, 0), (la, la));
    let s_ta = s.view((la, 0), (dt, la));
    let s_tt = s.view((la, la), (dt, dt)).into_owned();
    let translated = model.config.variant == Variant::ShvT;

    let m = model.sections.sections();
    let mut forms = Vec::with_capacity(m);
    for j in 0..m {
        let mut y_a = DVector::zeros(la);
        let mut off = 0;
        for &a in anchors {
            let col = model.sections.entities[a].column(j);
            y_a.rows_mut(off, col.len()).copy_from(&col);
            off += col.len();
        }
        let mut constant = y_a.dot(&(s_aa * &y_a));
        let mut linear: DVector<f64> = (s_ta * &y_a) * 2.0;
        if translated {
            let b = Cochain::new(
                graph
                    .edges()
                    .iter()
                    .map(|e| {
                        let maps = model.sheaf.relation(e.relation)?;
                        let t = maps
                            .translation
                            .as_ref()
                            .ok_or(crate::model::ModelError::MissingTranslation(e.relation))?;
                        Ok(t.column(j).into_owned())
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
            let dtb = sheaf.coboundary_transpose(&b)?;
            let gather = |vs: &[usize]| {
                Cochain::new(vs.iter().map(|&v| dtb.block(v).clone()).collect()).concat()
            };
            let dtb_u = gather(&interior);
            // g = (δᵀb)_B + Eᵀ (δᵀb)_U, so that bᵀδ y_F = gᵀ y_B
            let g = gather(&boundary) + solver.extension().tr_mul(&dtb_u);
            constant += -2.0 * g.rows(0, la).dot(&y_a) + b.norm_squared()
                - dtb_u.dot(&(solver.interior_pinv() * &dtb_u));
            linear -= g.rows(la, dt) * 2.0;
        }
        forms.push(SectionForm { constant, linear });
    }

    let values = candidates(graph, model)
        .into_iter()
        .map(|c| {
            let x = &model.sections.entities[c];
            let v: f64 = forms
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    let xc = x.column(j);
                    f.constant + f.linear.dot(&xc) + xc.dot(&(&s_tt * xc))
                })
                .sum();
            (c, v)
        })
        .collect();
    Ok(Ranking::new(values))
}

pub fn answer_query(q: &Query, model: &SheafModel) -> Result<Ranking> {
    let graph = build_query_graph(q, &model.schema)?;
    answer_graph(&graph, &q.anchors, model)
}

/// A model with Gaussian maps, translations and sections.
#[cfg(test)]
pub(crate) fn random_model(
    schema: crate::kg::Schema,
    entity_types: Vec<usize>,
    variant: Variant,
    sections: usize,
    seed: u64,
) -> SheafModel {
    use crate::model::ModelConfig;
    use crate::sheaf::testutil::gaussian;
    use rand::SeedableRng;
    let config = ModelConfig {
        variant,
        sections,
        ..ModelConfig::default()
    };
    let names = (0..entity_types.len()).map(|i| format!("e{i}")).collect();
    let mut model = SheafModel::init(config, schema, names, entity_types, seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for maps in &mut model.sheaf.relations {
        maps.head = gaussian(&mut rng, maps.head.nrows(), maps.head.ncols());
        maps.tail = gaussian(&mut rng, maps.tail.nrows(), maps.tail.ncols());
        if let Some(t) = maps.translation.as_mut() {
            *t = gaussian(&mut rng, t.nrows(), t.ncols());
        }
    }
    for x in &mut model.sections.entities {
        *x = gaussian(&mut rng, x.nrows(), x.ncols());
    }
    model
}
