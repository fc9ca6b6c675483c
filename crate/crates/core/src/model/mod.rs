//! The learnable sheaf embedding: restriction maps per relation, section
//! matrices per entity, and optional translations.

pub mod checkpoint;
mod constraints;
mod score;

pub use constraints::{
    entity_penalty, nearest_orthogonal, orthogonality_penalty, project_constraints,
    project_relation, resize_edge_stalk,
};
pub use score::{relation_discrepancy, residual, score, score_shv, score_shvt};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::kg::{KnowledgeGraph, Schema};
use crate::rng::{self, Stream};
use crate::sheaf::SheafOnGraph;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("relation {0} has no translation; the model is not translational")]
    MissingTranslation(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("relation {0} is identity-constrained and cannot be resized")]
    IdentityResize(usize),
    #[error("index {index} out of range for {what} (size {size})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Restriction maps only.
    Shv,
    /// Restriction maps plus a per-relation translation 1-cochain.
    ShvT,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Shv => "shv",
            Variant::ShvT => "shvt",
        })
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shv" => Ok(Variant::Shv),
            "shvt" => Ok(Variant::ShvT),
            _ => Err(ModelError::Config(format!(
                "unknown variant `{s}` (expected shv or shvt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    Free,
    /// Head and tail maps are the same matrix.
    Shared,
    /// Both maps are the identity.
    Identity,
    /// Each map is kept orthogonal by projection after every step.
    Orthogonal,
    /// The tail map is the negated head map.
    Antisymmetric,
}

impl Constraint {
    pub const ALL: [Constraint; 5] = [
        Constraint::Free,
        Constraint::Shared,
        Constraint::Identity,
        Constraint::Orthogonal,
        Constraint::Antisymmetric,
    ];
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Free => "free",
            Constraint::Shared => "shared",
            Constraint::Identity => "identity",
            Constraint::Orthogonal => "orthogonal",
            Constraint::Antisymmetric => "antisymmetric",
        })
    }
}

impl FromStr for Constraint {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Constraint::ALL
            .into_iter()
            .find(|c| c.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                ModelError::Config(format!(
                    "unknown constraint `{s}` (expected free, shared, identity, orthogonal or antisymmetric)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of sections `m` (columns of every entity matrix).
    pub sections: usize,
    /// Weight of the orthogonality penalty on section matrices.
    pub alpha: f64,
    /// Margin of the ranking loss.
    pub margin: f64,
    /// Constraint for relations without an explicit entry.
    pub constraint: Constraint,
    pub relation_constraints: BTreeMap<String, Constraint>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Shv,
            sections: 1,
            alpha: 0.0,
            margin: 1.0,
            constraint: Constraint::Free,
            relation_constraints: BTreeMap::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sections == 0 {
            return Err(ModelError::Config("sections must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(ModelError::Config(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        Ok(())
    }

    pub fn constraint_for(&self, relation: &str) -> Constraint {
        self.relation_constraints
            .get(relation)
            .copied()
            .unwrap_or(self.constraint)
    }
}

/// Restriction maps (and translation) of one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMaps {
    /// `dim F(r) × dim F(head type)`
    pub head: DMatrix<f64>,
    /// `dim F(r) × dim F(tail type)`
    pub tail: DMatrix<f64>,
    /// `dim F(r) × m`, one column per section.
    pub translation: Option<DMatrix<f64>>,
    pub constraint: Constraint,
}

impl RelationMaps {
    pub fn edge_dim(&self) -> usize {
        self.head.nrows()
    }
}

/// A cellular sheaf on the schema graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSheaf {
    pub relations: Vec<RelationMaps>,
}

impl KnowledgeSheaf {
    pub fn relation(&self, r: usize) -> Result<&RelationMaps> {
        self.relations.get(r).ok_or(ModelError::OutOfRange {
            what: "relations",
            index: r,
            size: self.relations.len(),
        })
    }

    /// The sheaf on the schema multigraph: one vertex per entity type, one
    /// edge per relation.
    pub fn schema_sheaf(&self, schema: &Schema) -> SheafOnGraph {
        let dims = (0..schema.num_entity_types())
            .map(|s| schema.vertex_dim(s))
            .collect();
        let mut sheaf = SheafOnGraph::new(dims);
        for (r, maps) in self.relations.iter().enumerate() {
            sheaf
                .add_edge(
                    schema.head_type(r),
                    schema.tail_type(r),
                    maps.head.clone(),
                    maps.tail.clone(),
                )
                .expect("relation maps conform to the schema");
        }
        sheaf
    }
}

/// Per-entity matrices whose columns are the learned sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionMatrix {
    pub entities: Vec<DMatrix<f64>>,
    sections: usize,
}

impl SectionMatrix {
    pub fn new(entities: Vec<DMatrix<f64>>, sections: usize) -> Result<Self> {
        if sections == 0 {
            return Err(ModelError::Config("sections must be at least 1".into()));
        }
        if let Some(bad) = entities.iter().position(|x| x.ncols() != sections) {
            return Err(ModelError::Shape(format!(
                "entity {bad} has {} columns, expected {sections}",
                entities[bad].ncols()
            )));
        }
        Ok(Self { entities, sections })
    }

    pub fn sections(&self) -> usize {
        self.sections
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, e: usize) -> Result<&DMatrix<f64>> {
        self.entities.get(e).ok_or(ModelError::OutOfRange {
            what: "entities",
            index: e,
            size: self.entities.len(),
        })
    }
}

pub(crate) fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

fn check_identity(schema: &Schema, r: usize) -> Result<()> {
    let (dh, dt) = (
        schema.vertex_dim(schema.head_type(r)),
        schema.vertex_dim(schema.tail_type(r)),
    );
    let de = schema.edge_dim(r);
    if dh != de || dt != de {
        return Err(ModelError::Config(format!(
            "relation `{}` is identity-constrained but its stalks are {de} (edge), {dh} (head), {dt} (tail)",
            schema.relation_name(r)
        )));
    }
    Ok(())
}

/// Draws initial restriction maps for one relation with the given edge
/// dimension.
pub(crate) fn init_relation_maps(
    rng: &mut impl Rng,
    constraint: Constraint,
    edge_dim: usize,
    head_dim: usize,
    tail_dim: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let free =
        |rng: &mut _, d: usize| gaussian(rng, edge_dim, d, 1.0 / ((d * edge_dim) as f64).sqrt());
    match constraint {
        Constraint::Identity => (
            DMatrix::identity(edge_dim, head_dim),
            DMatrix::identity(edge_dim, tail_dim),
        ),
        Constraint::Free => {
            let h = free(rng, head_dim);
            let t = free(rng, tail_dim);
            (h, t)
        }
        Constraint::Shared => {
            let h = free(rng, head_dim);
            (h.clone(), h)
        }
        Constraint::Antisymmetric => {
            let h = free(rng, head_dim);
            let t = -&h;
            (h, t)
        }
        Constraint::Orthogonal => {
            let h = nearest_orthogonal(&gaussian(rng, edge_dim, head_dim, 1.0)).0;
            let t = nearest_orthogonal(&gaussian(rng, edge_dim, tail_dim, 1.0)).0;
            (h, t)
        }
    }
}

/// Random initial parameters. Entity columns are unit vectors drawn from an
/// isotropic Gaussian; free maps have entries of variance `1/(d·d_e)`;
/// translations start at zero.
pub fn init_model(
    config: &ModelConfig,
    schema: &Schema,
    entity_types: &[usize],
    seed: u64,
) -> Result<(KnowledgeSheaf, SectionMatrix)> {
    config.validate()?;
    let mut rng = rng::stream(seed, Stream::Init);
    let m = config.sections;
    let mut entities = Vec::with_capacity(entity_types.len());
    for &s in entity_types {
        if s >= schema.num_entity_types() {
            return Err(ModelError::OutOfRange {
                what: "entity types",
                index: s,
                size: schema.num_entity_types(),
            });
        }
        let d = schema.vertex_dim(s);
        let mut x = gaussian(&mut rng, d, m, 1.0 / (d as f64).sqrt());
        for mut col in x.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
        entities.push(x);
    }
    let mut relations = Vec::with_capacity(schema.num_relations());
    for r in 0..schema.num_relations() {
        let constraint = config.constraint_for(schema.relation_name(r));
        if constraint == Constraint::Identity {
            check_identity(schema, r)?;
        }
        let de = schema.edge_dim(r);
        let (head, tail) = init_relation_maps(
            &mut rng,
            constraint,
            de,
            schema.vertex_dim(schema.head_type(r)),
            schema.vertex_dim(schema.tail_type(r)),
        );
        let translation = (config.variant == Variant::ShvT).then(|| DMatrix::zeros(de, m));
        relations.push(RelationMaps {
            head,
            tail,
            translation,
            constraint,
        });
    }
    Ok((
        KnowledgeSheaf { relations },
        SectionMatrix::new(entities, m)?,
    ))
}

/// A trained or initialized model together with the vocabulary it was
/// built over.
#[derive(Debug, Clone, PartialEq)]
pub struct SheafModel {
    pub config: ModelConfig,
    pub schema: Schema,
    pub entity_names: Vec<String>,
    pub entity_types: Vec<usize>,
    pub sheaf: KnowledgeSheaf,
    pub sections: SectionMatrix,
    pub seed: u64,
}

impl SheafModel {
    pub fn init(
        config: ModelConfig,
        schema: Schema,
        entity_names: Vec<String>,
        entity_types: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        if entity_names.len() != entity_types.len() {
            return Err(ModelError::Shape(format!(
                "{} entity names but {} entity types",
                entity_names.len(),
                entity_types.len()
            )));
        }
        let (sheaf, sections) = init_model(&config, &schema, &entity_types, seed)?;
        Ok(Self {
            config,
            schema,
            entity_names,
            entity_types,
            sheaf,
            sections,
            seed,
        })
    }

    /// Initializes over the vocabulary of a loaded graph.
    pub fn for_graph(config: ModelConfig, kg: &KnowledgeGraph, seed: u64) -> Result<Self> {
        Self::init(
            config,
            kg.schema().clone(),
            kg.entity_names().to_vec(),
            kg.entity_types().to_vec(),
            seed,
        )
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_names.iter().position(|n| n == name)
    }

    /// Score of `(h, r, t)` under the model's variant.
    pub fn score(&self, h: usize, r: usize, t: usize) -> Result<f64> {
        score(self.config.variant, &self.sheaf, &self.sections, h, r, t)
    }

    /// Checks every structural invariant: shapes against the schema, tied
    /// maps, identity maps and translation presence.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let m = self.sections.sections();
        if self.sections.len() != self.entity_types.len() {
            return Err(ModelError::Shape(format!(
                "{} entity matrices for {} entities",
                self.sections.len(),
                self.entity_types.len()
            )));
        }
        for (e, (x, &s)) in self
            .sections
            .entities
            .iter()
            .zip(&self.entity_types)
            .enumerate()
        {
            if x.shape() != (self.schema.vertex_dim(s), m) {
                return Err(ModelError::Shape(format!(
                    "entity {e} is {:?}, expected {:?}",
                    x.shape(),
                    (self.schema.vertex_dim(s), m)
                )));
            }
        }
        if self.sheaf.relations.len() != self.schema.num_relations() {
            return Err(ModelError::Shape(format!(
                "{} relation map pairs for {} relations",
                self.sheaf.relations.len(),
                self.schema.num_relations()
            )));
        }
        for (r, maps) in self.sheaf.relations.iter().enumerate() {
            let de = self.schema.edge_dim(r);
            let dh = self.schema.vertex_dim(self.schema.head_type(r));
            let dt = self.schema.vertex_dim(self.schema.tail_type(r));
            if maps.head.shape() != (de, dh) || maps.tail.shape() != (de, dt) {
                return Err(ModelError::Shape(format!(
                    "relation {r}: maps are {:?} and {:?}, expected {:?} and {:?}",
                    maps.head.shape(),
                    maps.tail.shape(),
                    (de, dh),
                    (de, dt)
                )));
            }
            match (&maps.translation, self.config.variant) {
                (Some(b), Variant::ShvT) if b.shape() != (de, m) => {
                    return Err(ModelError::Shape(format!(
                        "relation {r}: translation is {:?}, expected {:?}",
                        b.shape(),
                        (de, m)
                    )))
                }
                (None, Variant::ShvT) => return Err(ModelError::MissingTranslation(r)),
                (Some(_), Variant::Shv) => {
                    return Err(ModelError::Config(format!(
                        "relation {r} has a translation but the variant is shv"
                    )))
                }
                _ => {}
            }
            let tied = match maps.constraint {
                Constraint::Shared => maps.head == maps.tail,
                Constraint::Antisymmetric => maps.head == -&maps.tail,
                Constraint::Identity => {
                    check_identity(&self.schema, r)?;
                    maps.head == DMatrix::identity(de, dh) && maps.tail == DMatrix::identity(de, dt)
                }
                Constraint::Free | Constraint::Orthogonal => true,
            };
            if !tied {
                return Err(ModelError::Config(format!(
                    "relation {r} violates its {} constraint",
                    maps.constraint
                )));
            }
        }
        Ok(())
    }
}
