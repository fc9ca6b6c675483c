//! Complex queries: templates for the seven structures, answering by
//! harmonic extension over the template graph, and two baselines.

mod answer;
mod baseline;
pub mod io;

pub use answer::{answer_graph, answer_query, pulled_back_sheaf, Ranking};
pub use baseline::{entity_chaining_exact, naive_traversal_score, CHAINING_BUDGET};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kg::Schema;
use crate::model::ModelError;
use crate::sheaf::SheafError;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown query structure `{0}` (expected one of 1p, 2p, 3p, 2i, 3i, ip, pi)")]
    UnknownStructure(String),
    #[error("{structure} query needs {expected_anchors} anchors and {expected_relations} relations, got {anchors} and {relations}")]
    Arity {
        structure: QueryStructure,
        expected_anchors: usize,
        expected_relations: usize,
        anchors: usize,
        relations: usize,
    },
    #[error("relation {relation} out of range ({size} relations)")]
    RelationOutOfRange { relation: usize, size: usize },
    #[error("entity {entity} out of range ({size} entities)")]
    EntityOutOfRange { entity: usize, size: usize },
    #[error("query vertex {vertex} is used as type `{first}` and as type `{second}`")]
    TypeMismatch {
        vertex: usize,
        first: String,
        second: String,
    },
    #[error("anchor {anchor} has type `{found}` but the template expects `{expected}`")]
    AnchorType {
        anchor: usize,
        expected: String,
        found: String,
    },
    #[error("unknown {kind} `{name}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownName {
        kind: &'static str,
        name: String,
        suggestion: Option<String>,
    },
    #[error("invalid template: {0}")]
    Template(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("exhaustive search over {estimate:.3e} interior assignments exceeds the budget of {budget:.0e}")]
    Budget { estimate: f64, budget: f64 },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sheaf(#[from] SheafError),
}

pub type Result<T> = std::result::Result<T, QueryError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueryStructure {
    P1,
    P2,
    P3,
    I2,
    I3,
    Ip,
    Pi,
}

impl QueryStructure {
    pub const ALL: [QueryStructure; 7] = [
        QueryStructure::P1,
        QueryStructure::P2,
        QueryStructure::P3,
        QueryStructure::I2,
        QueryStructure::I3,
        QueryStructure::Ip,
        QueryStructure::Pi,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QueryStructure::P1 => "1p",
            QueryStructure::P2 => "2p",
            QueryStructure::P3 => "3p",
            QueryStructure::I2 => "2i",
            QueryStructure::I3 => "3i",
            QueryStructure::Ip => "ip",
            QueryStructure::Pi => "pi",
        }
    }

    pub fn num_anchors(self) -> usize {
        match self {
            QueryStructure::P1 | QueryStructure::P2 | QueryStructure::P3 => 1,
            QueryStructure::I2 | QueryStructure::Ip | QueryStructure::Pi => 2,
            QueryStructure::I3 => 3,
        }
    }

    pub fn num_relations(self) -> usize {
        match self {
            QueryStructure::P1 => 1,
            QueryStructure::P2 | QueryStructure::I2 => 2,
            QueryStructure::P3 | QueryStructure::I3 | QueryStructure::Ip | QueryStructure::Pi => 3,
        }
    }

    pub fn num_interior(self) -> usize {
        match self {
            QueryStructure::P1 | QueryStructure::I2 | QueryStructure::I3 => 0,
            QueryStructure::P2 | QueryStructure::Ip | QueryStructure::Pi => 1,
            QueryStructure::P3 => 2,
        }
    }

    pub fn is_path(self) -> bool {
        matches!(
            self,
            QueryStructure::P1 | QueryStructure::P2 | QueryStructure::P3
        )
    }

    /// Template edges as `(head vertex, relation slot, tail vertex)`.
    /// Vertices are numbered anchors first, then interior, target last.
    pub fn template(self) -> &'static [(usize, usize, usize)] {
        match self {
            QueryStructure::P1 => &[(0, 0, 1)],
            QueryStructure::P2 => &[(0, 0, 1), (1, 1, 2)],
            QueryStructure::P3 => &[(0, 0, 1), (1, 1, 2), (2, 2, 3)],
            QueryStructure::I2 => &[(0, 0, 2), (1, 1, 2)],
            QueryStructure::I3 => &[(0, 0, 3), (1, 1, 3), (2, 2, 3)],
            QueryStructure::Ip => &[(0, 0, 2), (1, 1, 2), (2, 2, 3)],
            QueryStructure::Pi => &[(0, 0, 2), (2, 1, 3), (1, 2, 3)],
        }
    }
}

impl fmt::Display for QueryStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for QueryStructure {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self> {
        QueryStructure::ALL
            .into_iter()
            .find(|q| q.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| QueryError::UnknownStructure(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub structure: QueryStructure,
    pub anchors: Vec<usize>,
    pub relations: Vec<usize>,
    /// Ground-truth answers; only read by evaluation.
    pub answers: BTreeSet<usize>,
}

impl Query {
    pub fn new(
        structure: QueryStructure,
        anchors: Vec<usize>,
        relations: Vec<usize>,
        answers: BTreeSet<usize>,
    ) -> Result<Self> {
        let q = Self {
            structure,
            anchors,
            relations,
            answers,
        };
        q.check_arity()?;
        Ok(q)
    }

    pub fn check_arity(&self) -> Result<()> {
        let s = self.structure;
        if self.anchors.len() != s.num_anchors() || self.relations.len() != s.num_relations() {
            return Err(QueryError::Arity {
                structure: s,
                expected_anchors: s.num_anchors(),
                expected_relations: s.num_relations(),
                anchors: self.anchors.len(),
                relations: self.relations.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Anchor,
    Interior,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryEdge {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// A typed template graph. Vertices `0..num_anchors` are anchors, the next
/// `num_interior` are interior and the last vertex is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGraph {
    num_anchors: usize,
    num_interior: usize,
    edges: Vec<QueryEdge>,
    vertex_types: Vec<usize>,
}

impl QueryGraph {
    /// Types every vertex from the head/tail types of its incident
    /// relations and rejects inconsistent chains.
    pub fn new(
        num_anchors: usize,
        num_interior: usize,
        edges: Vec<QueryEdge>,
        schema: &Schema,
    ) -> Result<Self> {
        let n = num_anchors + num_interior + 1;
        let mut types: Vec<Option<usize>> = vec![None; n];
        for e in &edges {
            if e.relation >= schema.num_relations() {
                return Err(QueryError::RelationOutOfRange {
                    relation: e.relation,
                    size: schema.num_relations(),
                });
            }
            for (v, ty) in [
                (e.head, schema.head_type(e.relation)),
                (e.tail, schema.tail_type(e.relation)),
            ] {
                if v >= n {
                    return Err(QueryError::Template(format!("vertex {v} out of range")));
                }
                match types[v] {
                    None => types[v] = Some(ty),
                    Some(prev) if prev != ty => {
                        return Err(QueryError::TypeMismatch {
                            vertex: v,
                            first: schema.entity_type_name(prev).to_string(),
                            second: schema.entity_type_name(ty).to_string(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        let vertex_types = types
            .into_iter()
            .enumerate()
            .map(|(v, t)| t.ok_or_else(|| QueryError::Template(format!("vertex {v} has no edges"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_anchors,
            num_interior,
            edges,
            vertex_types,
        })
    }

    /// Parses a custom template such as
    /// `a0>child_of>u1;u1>child_of>t;u1>has_gender>a1;t>has_gender>a2`.
    ///
    /// `a<k>` names anchor `k` (anchors must be numbered `a0..`), `t` is the
    /// target and every other name is an interior vertex, numbered in order
    /// of first appearance.
    pub fn from_template(text: &str, schema: &Schema) -> Result<Self> {
        let mut anchors: BTreeSet<usize> = BTreeSet::new();
        let mut interior: BTreeMap<String, usize> = BTreeMap::new();
        let mut interior_order: Vec<String> = Vec::new();
        let mut raw = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let fields: Vec<&str> = part.split('>').map(str::trim).collect();
            let [h, r, t] = fields[..] else {
                return Err(QueryError::Template(format!(
                    "`{part}` is not of the form head>relation>tail"
                )));
            };
            let relation = schema
                .relation_index(r)
                .ok_or_else(|| QueryError::UnknownName {
                    kind: "relation",
                    name: r.to_string(),
                    suggestion: suggest(r, schema.relation_names().iter().map(String::as_str)),
                })?;
            for v in [h, t] {
                if let Some(k) = anchor_slot(v) {
                    anchors.insert(k);
                } else if v != "t" && !interior.contains_key(v) {
                    interior.insert(v.to_string(), interior_order.len());
                    interior_order.push(v.to_string());
                }
            }
            raw.push((h.to_string(), relation, t.to_string()));
        }
        if raw.is_empty() {
            return Err(QueryError::Template("template has no edges".into()));
        }
        let num_anchors = anchors.len();
        if anchors.iter().copied().ne(0..num_anchors) {
            return Err(QueryError::Template(format!(
                "anchors must be numbered a0..a{}",
                num_anchors.saturating_sub(1)
            )));
        }
        if num_anchors == 0 {
            return Err(QueryError::Template("template has no anchors".into()));
        }
        if !raw.iter().any(|(h, _, t)| h == "t" || t == "t") {
            return Err(QueryError::Template("template has no target `t`".into()));
        }
        let num_interior = interior_order.len();
        let index = |v: &str| match anchor_slot(v) {
            Some(k) => k,
            None if v == "t" => num_anchors + num_interior,
            None => num_anchors + interior[v],
        };
        let edges = raw
            .iter()
            .map(|(h, r, t)| QueryEdge {
                head: index(h),
                relation: *r,
                tail: index(t),
            })
            .collect();
        Self::new(num_anchors, num_interior, edges, schema)
    }

    pub fn num_anchors(&self) -> usize {
        self.num_anchors
    }

    pub fn num_interior(&self) -> usize {
        self.num_interior
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_types.len()
    }

    pub fn target(&self) -> usize {
        self.num_vertices() - 1
    }

    pub fn edges(&self) -> &[QueryEdge] {
        &self.edges
    }

    pub fn vertex_types(&self) -> &[usize] {
        &self.vertex_types
    }

    pub fn role(&self, v: usize) -> Role {
        if v < self.num_anchors {
            Role::Anchor
        } else if v == self.target() {
            Role::Target
        } else {
            Role::Interior
        }
    }

    /// Anchors followed by the target.
    pub fn boundary(&self) -> Vec<usize> {
        (0..self.num_anchors).chain([self.target()]).collect()
    }

    pub fn interior(&self) -> Vec<usize> {
        (self.num_anchors..self.target()).collect()
    }
}

fn anchor_slot(name: &str) -> Option<usize> {
    name.strip_prefix('a').and_then(|k| k.parse().ok())
}

/// Closest candidate by normalized Levenshtein similarity, if any is
/// reasonably close.
pub(crate) fn suggest<'a>(
    name: &str,
    candidates: impl IntoIterator<Item = &'a str>,
) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::normalized_levenshtein(name, c), c))
        .filter(|(s, _)| *s >= 0.5)
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)))
        .map(|(_, c)| c.to_string())
}

/// Instantiates the template of `q.structure` with the query's relations.
pub fn build_query_graph(q: &Query, schema: &Schema) -> Result<QueryGraph> {
    q.check_arity()?;
    let s = q.structure;
    let edges = s
        .template()
        .iter()
        .map(|&(h, slot, t)| QueryEdge {
            head: h,
            relation: q.relations[slot],
            tail: t,
        })
        .collect();
    QueryGraph::new(s.num_anchors(), s.num_interior(), edges, schema)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::kg::default_schema;

    fn query(s: QueryStructure) -> Query {
        Query::new(
            s,
            (0..s.num_anchors()).collect(),
            (0..s.num_relations()).map(|i| i % 3).collect(),
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn tags_round_trip() {
        for s in QueryStructure::ALL {
            assert_eq!(s.tag().parse::<QueryStructure>().unwrap(), s);
            assert_eq!(s.template().len(), s.num_relations());
        }
        assert!("2u".parse::<QueryStructure>().is_err());
    }

    #[test]
    fn arity_is_checked() {
        let err = Query::new(QueryStructure::Pi, vec![0], vec![0, 1, 2], BTreeSet::new());
        assert!(matches!(err, Err(QueryError::Arity { .. })));
    }

    #[test]
    fn template_sizes() {
        let schema = default_schema(3, 2, 2).unwrap();
        let g = build_query_graph(&query(QueryStructure::P1), &schema).unwrap();
        assert_eq!((g.num_vertices(), g.edges().len()), (2, 1));
        assert!(g.interior().is_empty());

        let g = build_query_graph(&query(QueryStructure::P2), &schema).unwrap();
        assert_eq!(g.num_vertices(), 3);
        assert_eq!(g.interior(), vec![1]);
        assert_eq!(g.boundary(), vec![0, 2]);

        for s in QueryStructure::ALL {
            let g = build_query_graph(&query(s), &schema).unwrap();
            assert_eq!(g.num_vertices(), s.num_anchors() + s.num_interior() + 1);
            assert_eq!(g.boundary().len() + g.interior().len(), g.num_vertices());
            assert_eq!(g.role(g.target()), Role::Target);
            assert!(g.boundary().iter().all(|v| !g.interior().contains(v)));
        }
    }

    #[test]
    fn grandfather_template() {
        let schema = family_schema(2);
        let g = QueryGraph::from_template(GRANDFATHER, &schema).unwrap();
        assert_eq!(g.num_vertices(), 5);
        assert_eq!(g.num_anchors(), 3);
        assert_eq!(g.interior(), vec![3]);
        assert_eq!(g.boundary(), vec![0, 1, 2, 4]);
        assert_eq!(g.vertex_types(), &[0, 1, 1, 0, 0]);
    }

    #[test]
    fn template_errors() {
        let schema = family_schema(2);
        assert!(matches!(
            QueryGraph::from_template("a0>child_of>t;a0>has_gender>t", &schema),
            Err(QueryError::TypeMismatch { .. })
        ));
        match QueryGraph::from_template("a0>chld_of>t", &schema) {
            Err(QueryError::UnknownName { suggestion, .. }) => {
                assert_eq!(suggestion.as_deref(), Some("child_of"))
            }
            other => panic!("{other:?}"),
        }
        assert!(QueryGraph::from_template("a1>child_of>t", &schema).is_err());
        assert!(QueryGraph::from_template("a0>child_of>u", &schema).is_err());
        assert!(QueryGraph::from_template("a0>child_of", &schema).is_err());
    }

    #[test]
    fn inconsistent_chain_is_rejected() {
        let schema = family_schema(2);
        // has_gender ends at a gender, which cannot be a child
        let q = Query::new(QueryStructure::P2, vec![0], vec![1, 0], BTreeSet::new()).unwrap();
        assert!(matches!(
            build_query_graph(&q, &schema),
            Err(QueryError::TypeMismatch { .. })
        ));
    }
}
