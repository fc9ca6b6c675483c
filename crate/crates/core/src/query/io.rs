//! Query files: one query per line, TAB-separated fields
//! `structure  anchors  relations  answers`, where the last three are
//! comma-separated names. The answer field may be empty.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::{suggest, Query, QueryError, QueryStructure, Result};
use crate::kg::Schema;
use crate::model::SheafModel;

/// Name lookup for entities and relations.
#[derive(Debug, Clone)]
pub struct Vocabulary<'a> {
    names: &'a [String],
    lookup: HashMap<&'a str, usize>,
    schema: &'a Schema,
}

impl<'a> Vocabulary<'a> {
    pub fn new(names: &'a [String], schema: &'a Schema) -> Self {
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        Self {
            names,
            lookup,
            schema,
        }
    }

    pub fn of_model(model: &'a SheafModel) -> Self {
        Self::new(&model.entity_names, &model.schema)
    }

    pub fn entity(&self, name: &str) -> Result<usize> {
        self.lookup
            .get(name)
            .copied()
            .ok_or_else(|| QueryError::UnknownName {
                kind: "entity",
                name: name.to_string(),
                suggestion: suggest(name, self.names.iter().map(String::as_str)),
            })
    }

    pub fn relation(&self, name: &str) -> Result<usize> {
        self.schema
            .relation_index(name)
            .ok_or_else(|| QueryError::UnknownName {
                kind: "relation",
                name: name.to_string(),
                suggestion: suggest(
                    name,
                    self.schema.relation_names().iter().map(String::as_str),
                ),
            })
    }

    pub fn entity_name(&self, e: usize) -> &str {
        &self.names[e]
    }
}

fn list(field: &str) -> impl Iterator<Item = &str> {
    field.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub fn parse_query(line: &str, vocab: &Vocabulary) -> Result<Query> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(QueryError::Template(format!(
            "expected 3 or 4 TAB-separated fields, found {}",
            fields.len()
        )));
    }
    let structure: QueryStructure = fields[0].trim().parse()?;
    let anchors = list(fields[1])
        .map(|n| vocab.entity(n))
        .collect::<Result<Vec<_>>>()?;
    let relations = list(fields[2])
        .map(|n| vocab.relation(n))
        .collect::<Result<Vec<_>>>()?;
    let answers = match fields.get(3) {
        Some(f) => list(f)
            .map(|n| vocab.entity(n))
            .collect::<Result<BTreeSet<_>>>()?,
        None => BTreeSet::new(),
    };
    Query::new(structure, anchors, relations, answers)
}

pub fn format_query(q: &Query, vocab: &Vocabulary) -> String {
    let join = |it: &mut dyn Iterator<Item = &str>| it.collect::<Vec<_>>().join(",");
    format!(
        "{}\t{}\t{}\t{}",
        q.structure,
        join(&mut q.anchors.iter().map(|&a| vocab.entity_name(a))),
        join(&mut q.relations.iter().map(|&r| vocab.schema.relation_name(r))),
        join(&mut q.answers.iter().map(|&a| vocab.entity_name(a))),
    )
}

pub fn read_queries(path: &Path, vocab: &Vocabulary) -> Result<Vec<Query>> {
    let text = fs::read_to_string(path).map_err(|source| QueryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_query(l, vocab).map_err(|e| QueryError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_queries(path: &Path, queries: &[Query], vocab: &Vocabulary) -> Result<()> {
    let mut text = String::new();
    for q in queries {
        text.push_str(&format_query(q, vocab));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| QueryError::Io {
        path: path.display().to_string(),
        source,
    })
}
