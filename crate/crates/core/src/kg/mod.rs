//! Typed knowledge graphs: schemas, triple files and vocabularies.
//!
//! Entities and relations are interned into dense 0-based indices in order of
//! first appearance, so loading the same files in the same order always gives
//! the same indexing.

mod index;

pub use index::TripleIndex;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("{path}:{line}: empty field")]
    EmptyField { path: PathBuf, line: usize },
    #[error("relation `{0}` is not declared in the schema")]
    UnknownRelation(String),
    #[error("entity type `{0}` is not declared in the schema")]
    UnknownType(String),
    #[error("entity `{0}` has no type label and the schema has more than one entity type")]
    MissingTypeLabel(String),
    #[error("type-inconsistent triple {triple}: expected {expected}, found {found}")]
    TypeMismatch {
        triple: String,
        expected: String,
        found: String,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, KgError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> KgError + '_ {
    move |source| KgError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Entity types, relation types and their stalk dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    entity_types: Vec<String>,
    relation_types: Vec<String>,
    head_type: Vec<usize>,
    tail_type: Vec<usize>,
    vertex_dim: Vec<usize>,
    edge_dim: Vec<usize>,
    type_lookup: HashMap<String, usize>,
    relation_lookup: HashMap<String, usize>,
}

impl Schema {
    /// Builds a schema. `relations` holds `(name, head_type, tail_type, edge_dim)`.
    pub fn new(
        entity_types: Vec<(String, usize)>,
        relations: Vec<(String, usize, usize, usize)>,
    ) -> Result<Self> {
        if entity_types.is_empty() {
            return Err(KgError::Schema(
                "at least one entity type is required".into(),
            ));
        }
        let mut type_lookup = HashMap::new();
        let mut names = Vec::with_capacity(entity_types.len());
        let mut vertex_dim = Vec::with_capacity(entity_types.len());
        for (i, (name, dim)) in entity_types.into_iter().enumerate() {
            if dim == 0 {
                return Err(KgError::Schema(format!(
                    "entity type `{name}` has dimension 0"
                )));
            }
            if type_lookup.insert(name.clone(), i).is_some() {
                return Err(KgError::Schema(format!("duplicate entity type `{name}`")));
            }
            names.push(name);
            vertex_dim.push(dim);
        }
        let mut relation_lookup = HashMap::new();
        let mut relation_types = Vec::with_capacity(relations.len());
        let mut head_type = Vec::with_capacity(relations.len());
        let mut tail_type = Vec::with_capacity(relations.len());
        let mut edge_dim = Vec::with_capacity(relations.len());
        for (i, (name, h, t, dim)) in relations.into_iter().enumerate() {
            if h >= names.len() || t >= names.len() {
                return Err(KgError::Schema(format!(
                    "relation `{name}` refers to an undeclared entity type"
                )));
            }
            if dim == 0 {
                return Err(KgError::Schema(format!(
                    "relation `{name}` has dimension 0"
                )));
            }
            if relation_lookup.insert(name.clone(), i).is_some() {
                return Err(KgError::Schema(format!("duplicate relation `{name}`")));
            }
            relation_types.push(name);
            head_type.push(h);
            tail_type.push(t);
            edge_dim.push(dim);
        }
        Ok(Self {
            entity_types: names,
            relation_types,
            head_type,
            tail_type,
            vertex_dim,
            edge_dim,
            type_lookup,
            relation_lookup,
        })
    }

    /// Single entity type; every relation maps that type to itself.
    pub fn single_type<S: Into<String>>(
        relations: impl IntoIterator<Item = S>,
        entity_dim: usize,
        relation_dim: usize,
    ) -> Result<Self> {
        let relations = relations
            .into_iter()
            .map(|r| (r.into(), 0, 0, relation_dim))
            .collect();
        Self::new(vec![("entity".to_string(), entity_dim)], relations)
    }

    pub fn num_entity_types(&self) -> usize {
        self.entity_types.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_types.len()
    }

    pub fn entity_type_name(&self, s: usize) -> &str {
        &self.entity_types[s]
    }

    pub fn relation_name(&self, r: usize) -> &str {
        &self.relation_types[r]
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_types
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.type_lookup.get(name).copied()
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_lookup.get(name).copied()
    }

    pub fn head_type(&self, r: usize) -> usize {
        self.head_type[r]
    }

    pub fn tail_type(&self, r: usize) -> usize {
        self.tail_type[r]
    }

    pub fn vertex_dim(&self, s: usize) -> usize {
        self.vertex_dim[s]
    }

    pub fn edge_dim(&self, r: usize) -> usize {
        self.edge_dim[r]
    }

    pub fn set_edge_dim(&mut self, r: usize, dim: usize) {
        assert!(dim >= 1, "edge stalk dimension must be positive");
        self.edge_dim[r] = dim;
    }
}

/// Schema with one entity type and `n_relations` relations named `r0, r1, ...`.
pub fn default_schema(
    n_relations: usize,
    entity_dim: usize,
    relation_dim: usize,
) -> Result<Schema> {
    Schema::single_type(
        (0..n_relations).map(|r| format!("r{r}")),
        entity_dim,
        relation_dim,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Sidecar `entity<TAB>type` labels for multi-typed schemas.
#[derive(Debug, Clone, Default)]
pub struct TypeLabels(HashMap<String, String>);

impl TypeLabels {
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut labels = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(KgError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    found: fields.len(),
                });
            }
            labels.insert(fields[0].to_string(), fields[1].to_string());
        }
        Ok(Self(labels))
    }

    pub fn get(&self, entity: &str) -> Option<&str> {
        self.0.get(entity).map(String::as_str)
    }

    pub fn insert(&mut self, entity: impl Into<String>, ty: impl Into<String>) {
        self.0.insert(entity.into(), ty.into());
    }

    /// Distinct type names, sorted.
    pub fn types(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.0.values().collect();
        set.into_iter().cloned().collect()
    }
}

/// Typed entities plus a deduplicated, split-tagged triple list.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    schema: Schema,
    entities: Vec<String>,
    entity_type: Vec<usize>,
    entity_lookup: HashMap<String, usize>,
    triples: Vec<Triple>,
    splits: Vec<Split>,
    seen: HashSet<Triple>,
    labels: Option<TypeLabels>,
}

impl KnowledgeGraph {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            entities: Vec::new(),
            entity_type: Vec::new(),
            entity_lookup: HashMap::new(),
            triples: Vec::new(),
            splits: Vec::new(),
            seen: HashSet::new(),
            labels: None,
        }
    }

    pub fn with_type_labels(schema: Schema, labels: TypeLabels) -> Self {
        let mut kg = Self::new(schema);
        kg.labels = Some(labels);
        kg
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.schema.num_relations()
    }

    pub fn entity_name(&self, e: usize) -> &str {
        &self.entities[e]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_lookup.get(name).copied()
    }

    pub fn entity_type(&self, e: usize) -> usize {
        self.entity_type[e]
    }

    pub fn entity_types(&self) -> &[usize] {
        &self.entity_type
    }

    /// Entities of type `s`, in index order.
    pub fn entities_of_type(&self, s: usize) -> Vec<usize> {
        (0..self.entities.len())
            .filter(|&e| self.entity_type[e] == s)
            .collect()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn split_of(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn triples_in(&self, split: Split) -> impl Iterator<Item = Triple> + '_ {
        self.triples
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(t, _)| *t)
    }

    pub fn count_in(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    /// Interns an entity, resolving its type from the labels (or the sole
    /// schema type).
    pub fn intern_entity(&mut self, name: &str) -> Result<usize> {
        if let Some(&e) = self.entity_lookup.get(name) {
            return Ok(e);
        }
        let ty = match &self.labels {
            Some(labels) => match labels.get(name) {
                Some(t) => self
                    .schema
                    .type_index(t)
                    .ok_or_else(|| KgError::UnknownType(t.to_string()))?,
                None if self.schema.num_entity_types() == 1 => 0,
                None => return Err(KgError::MissingTypeLabel(name.to_string())),
            },
            None if self.schema.num_entity_types() == 1 => 0,
            None => return Err(KgError::MissingTypeLabel(name.to_string())),
        };
        Ok(self.push_entity(name.to_string(), ty))
    }

    /// Adds an entity with an explicit type; returns the existing index if
    /// the name is already interned.
    pub fn add_entity(&mut self, name: &str, ty: usize) -> Result<usize> {
        if ty >= self.schema.num_entity_types() {
            return Err(KgError::UnknownType(ty.to_string()));
        }
        if let Some(&e) = self.entity_lookup.get(name) {
            return Ok(e);
        }
        Ok(self.push_entity(name.to_string(), ty))
    }

    fn push_entity(&mut self, name: String, ty: usize) -> usize {
        let e = self.entities.len();
        self.entity_lookup.insert(name.clone(), e);
        self.entities.push(name);
        self.entity_type.push(ty);
        e
    }

    /// Adds a triple after checking type consistency. Returns `false` when
    /// the triple was already present (it is then dropped).
    pub fn add_triple(&mut self, triple: Triple, split: Split) -> Result<bool> {
        let r = triple.relation;
        if r >= self.schema.num_relations() {
            return Err(KgError::UnknownRelation(r.to_string()));
        }
        let (sh, st) = (self.entity_type[triple.head], self.entity_type[triple.tail]);
        let (eh, et) = (self.schema.head_type(r), self.schema.tail_type(r));
        if sh != eh || st != et {
            let name = |s: usize| self.schema.entity_type_name(s).to_string();
            return Err(KgError::TypeMismatch {
                triple: format!(
                    "({}, {}, {})",
                    self.entities[triple.head],
                    self.schema.relation_name(r),
                    self.entities[triple.tail]
                ),
                expected: format!("{} -> {}", name(eh), name(et)),
                found: format!("{} -> {}", name(sh), name(st)),
            });
        }
        if !self.seen.insert(triple) {
            return Ok(false);
        }
        self.triples.push(triple);
        self.splits.push(split);
        Ok(true)
    }

    /// Parses a tab-separated triple file into this graph.
    pub fn load_split(&mut self, path: &Path, split: Split) -> Result<usize> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let known_before = self.entities.len();
        let mut added = 0;
        let mut duplicates = 0;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    found: fields.len(),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(KgError::EmptyField {
                    path: path.to_path_buf(),
                    line: i + 1,
                });
            }
            let r = self
                .schema
                .relation_index(fields[1])
                .ok_or_else(|| KgError::UnknownRelation(fields[1].to_string()))?;
            let h = self.intern_entity(fields[0])?;
            let t = self.intern_entity(fields[2])?;
            if self.add_triple(Triple::new(h, r, t), split)? {
                added += 1;
            } else {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::warn!("{}: dropped {duplicates} duplicate triples", path.display());
        }
        let unseen = self.entities.len() - known_before;
        if split != Split::Train && unseen > 0 {
            log::warn!(
                "{}: {unseen} entities do not occur in earlier splits; they keep their initial embeddings",
                path.display()
            );
        }
        Ok(added)
    }

    /// Writes the triples of one split in the tab-separated format.
    pub fn write_split(&self, path: &Path, split: Split) -> Result<()> {
        let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
        for t in self.triples_in(split) {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entities[t.head],
                self.schema.relation_name(t.relation),
                self.entities[t.tail]
            )
            .map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }

    /// Entities that occur in at least one training triple.
    pub fn training_entities(&self) -> BTreeSet<usize> {
        self.triples_in(Split::Train)
            .flat_map(|t| [t.head, t.tail])
            .collect()
    }
}

/// Loads a single triple file into a fresh graph over `schema`.
pub fn load_triples(path: &Path, schema: Schema, split: Split) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::new(schema);
    kg.load_split(path, split)?;
    Ok(kg)
}

/// Collects relation names in order of first appearance across files.
pub fn scan_relations(paths: &[&Path]) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for path in paths {
        let file = fs::File::open(path).map_err(io_err(path))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    found: fields.len(),
                });
            }
            if seen.insert(fields[1].to_string()) {
                names.push(fields[1].to_string());
            }
        }
    }
    Ok(names)
}
