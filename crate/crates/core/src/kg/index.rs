use std::collections::{BTreeSet, HashMap};

use super::Triple;

static EMPTY: BTreeSet<usize> = BTreeSet::new();

/// Neighbor lookup by `(head, relation)` and `(tail, relation)`.
#[derive(Debug, Clone, Default)]
pub struct TripleIndex {
    by_head_relation: HashMap<(usize, usize), BTreeSet<usize>>,
    by_tail_relation: HashMap<(usize, usize), BTreeSet<usize>>,
    len: usize,
}

impl TripleIndex {
    pub fn build<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        Self::from_triples(triples.into_iter().copied())
    }

    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut index = Self::default();
        for t in triples {
            index.insert(t);
        }
        index
    }

    pub fn insert(&mut self, t: Triple) -> bool {
        let fresh = self
            .by_head_relation
            .entry((t.head, t.relation))
            .or_default()
            .insert(t.tail);
        self.by_tail_relation
            .entry((t.tail, t.relation))
            .or_default()
            .insert(t.head);
        if fresh {
            self.len += 1;
        }
        fresh
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.by_head_relation
            .get(&(t.head, t.relation))
            .is_some_and(|s| s.contains(&t.tail))
    }

    pub fn tails(&self, head: usize, relation: usize) -> &BTreeSet<usize> {
        self.by_head_relation
            .get(&(head, relation))
            .unwrap_or(&EMPTY)
    }

    pub fn heads(&self, tail: usize, relation: usize) -> &BTreeSet<usize> {
        self.by_tail_relation
            .get(&(tail, relation))
            .unwrap_or(&EMPTY)
    }

    /// Distinct triples indexed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
