//! Planted-sheaf knowledge graphs: a random knowledge sheaf and a true
//! section, with every triple whose true score is within the noise level.
//!
//! Entities are grouped into clusters and each cluster has a random code
//! vector. Entity `e` in cluster `k` is embedded as `O [c_k; z_e]` with a
//! random rotation `O` and per-entity filler `z_e` that every restriction
//! map ignores. Each relation maps a random subset `D` of clusters to
//! clusters `π(k)`; its maps `R = [M, 0] Oᵀ` satisfy `M_h c_k = M_t c_π(k)`
//! on `D` and are generic elsewhere, so the zero-score triples are exactly
//! the cluster pairs `(k, π(k))` for `k ∈ D`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::kg::{default_schema, KgError, KnowledgeGraph, Split, Triple};
use crate::model::{
    nearest_orthogonal, Constraint, KnowledgeSheaf, ModelConfig, ModelError, RelationMaps,
    SectionMatrix, SheafModel, Variant,
};
use crate::rng::{self, Stream};
use crate::sheaf::pinv_symmetric;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator setting: {0}")]
    Config(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub entities: usize,
    pub relations: usize,
    /// Entity stalk dimension.
    pub dim: usize,
    /// Relation stalk dimension.
    pub edge_dim: usize,
    pub clusters: usize,
    /// Length of the cluster codes; at most `dim`.
    pub code_dim: usize,
    /// Clusters in each relation's domain; at most `code_dim`.
    pub domain: usize,
    /// Triples with true score at or below this are emitted.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            entities: 200,
            relations: 5,
            dim: 16,
            edge_dim: 10,
            clusters: 10,
            code_dim: 10,
            domain: 5,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// Floor on the emission threshold so that exact zeros survive rounding.
pub const SCORE_FLOOR: f64 = 1e-9;

impl SynthConfig {
    /// Defaults for the given sizes, with the cluster parameters shrunk to
    /// fit small dimensions.
    pub fn sized(entities: usize, relations: usize, dim: usize, noise: f64, seed: u64) -> Self {
        let base = Self::default();
        let clusters = base.clusters.min(entities.max(1));
        let code_dim = base.code_dim.min(dim);
        Self {
            entities,
            relations,
            dim,
            edge_dim: base.edge_dim.min(dim),
            clusters,
            code_dim,
            domain: base.domain.min(clusters).min(code_dim),
            noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("entities", self.entities),
            ("relations", self.relations),
            ("dim", self.dim),
            ("edge_dim", self.edge_dim),
            ("clusters", self.clusters),
            ("code_dim", self.code_dim),
            ("domain", self.domain),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SynthError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.code_dim > self.dim {
            return Err(SynthError::Config("code_dim exceeds dim".into()));
        }
        if self.domain > self.clusters.min(self.code_dim) {
            return Err(SynthError::Config(
                "domain exceeds clusters or code_dim".into(),
            ));
        }
        if self.clusters > self.entities {
            return Err(SynthError::Config("more clusters than entities".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(SynthError::Config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub kg: KnowledgeGraph,
    /// The generating sheaf and section.
    pub truth: SheafModel,
    pub clusters: Vec<usize>,
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn entity_name(e: usize) -> String {
    format!("e{e:04}")
}

pub fn generate(config: &SynthConfig) -> Result<Planted, SynthError> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, Stream::Synth);
    let (n, d, p, de, k) = (
        config.entities,
        config.dim,
        config.code_dim,
        config.edge_dim,
        config.clusters,
    );

    let rotation = nearest_orthogonal(&gaussian(&mut rng, d, d)).0;
    let codes = gaussian(&mut rng, p, k);
    let mut clusters: Vec<usize> = (0..n).map(|e| e % k).collect();
    clusters.shuffle(&mut rng);
    let entities: Vec<DMatrix<f64>> = clusters
        .iter()
        .map(|&c| {
            let mut local = DMatrix::zeros(d, 1);
            local.view_mut((0, 0), (p, 1)).copy_from(&codes.column(c));
            if d > p {
                local
                    .view_mut((p, 0), (d - p, 1))
                    .copy_from(&gaussian(&mut rng, d - p, 1));
            }
            &rotation * local
        })
        .collect();

    let embed = |m: &DMatrix<f64>| {
        let mut full = DMatrix::zeros(de, d);
        full.view_mut((0, 0), (de, p)).copy_from(m);
        full * rotation.transpose()
    };
    let mut relations = Vec::with_capacity(config.relations);
    for _ in 0..config.relations {
        let mut all: Vec<usize> = (0..k).collect();
        all.shuffle(&mut rng);
        let domain = &all[..config.domain];
        let image: Vec<usize> = domain.iter().map(|_| rng.random_range(0..k)).collect();
        let c_dom = DMatrix::from_fn(p, domain.len(), |i, j| codes[(i, domain[j])]);
        let c_img = DMatrix::from_fn(p, domain.len(), |i, j| codes[(i, image[j])]);
        // C_D⁺ = (C_Dᵀ C_D)⁻¹ C_Dᵀ for full column rank
        let c_dom_pinv = pinv_symmetric(&c_dom.tr_mul(&c_dom)) * c_dom.transpose();
        let projector = &c_dom * &c_dom_pinv;
        let m_tail = gaussian(&mut rng, de, p) / (p as f64).sqrt();
        let z = gaussian(&mut rng, de, p) / (p as f64).sqrt();
        let m_head = &m_tail * &c_img * &c_dom_pinv + z * (DMatrix::identity(p, p) - projector);
        relations.push(RelationMaps {
            head: embed(&m_head),
            tail: embed(&m_tail),
            translation: None,
            constraint: Constraint::Free,
        });
    }

    let schema = default_schema(config.relations, d, de)?;
    let truth = SheafModel {
        config: ModelConfig {
            variant: Variant::Shv,
            ..ModelConfig::default()
        },
        schema: schema.clone(),
        entity_names: (0..n).map(entity_name).collect(),
        entity_types: vec![0; n],
        sheaf: KnowledgeSheaf { relations },
        sections: SectionMatrix::new(entities, 1)?,
        seed: config.seed,
    };

    let threshold = config.noise.max(SCORE_FLOOR);
    let mut triples = Vec::new();
    for r in 0..config.relations {
        for h in 0..n {
            for t in 0..n {
                if truth.score(h, r, t)? <= threshold {
                    triples.push(Triple::new(h, r, t));
                }
            }
        }
    }
    triples.shuffle(&mut rng);
    let total = triples.len();
    let n_train = (total as f64 * 0.8).round() as usize;
    let n_valid = (total as f64 * 0.1).round() as usize;

    let mut kg = KnowledgeGraph::new(schema);
    for name in &truth.entity_names {
        kg.add_entity(name, 0)?;
    }
    for (i, t) in triples.into_iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        kg.add_triple(t, split)?;
    }
    Ok(Planted {
        kg,
        truth,
        clusters,
    })
}
