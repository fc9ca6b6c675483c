use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{EvalError, MetricReport, Result, StructureMetrics};
use crate::query::QueryStructure;

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureAggregate {
    pub mrr: Stat,
    pub hits1: Stat,
    pub hits3: Stat,
    pub hits10: Stat,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricReport>,
    pub structures: BTreeMap<QueryStructure, StructureAggregate>,
}

/// Combines per-seed reports. Every report must cover the same structures.
pub fn aggregate(runs: Vec<(u64, MetricReport)>) -> Result<AggregateReport> {
    let Some((_, first)) = runs.first() else {
        return Err(EvalError::Empty);
    };
    let keys: Vec<QueryStructure> = first.structures.keys().copied().collect();
    for (seed, r) in &runs {
        if !r.structures.keys().copied().eq(keys.iter().copied()) {
            return Err(EvalError::Mismatch(format!(
                "seed {seed} covers different query structures"
            )));
        }
    }
    let mut structures = BTreeMap::new();
    for s in keys {
        let pick = |f: fn(&StructureMetrics) -> f64| {
            Stat::of(
                &runs
                    .iter()
                    .map(|(_, r)| f(&r.structures[&s]))
                    .collect::<Vec<_>>(),
            )
        };
        structures.insert(
            s,
            StructureAggregate {
                mrr: pick(|m| m.mrr),
                hits1: pick(|m| m.hits1),
                hits3: pick(|m| m.hits3),
                hits10: pick(|m| m.hits10),
                queries: first.structures[&s].queries,
            },
        );
    }
    let (seeds, per_seed) = runs.into_iter().unzip();
    Ok(AggregateReport {
        seeds,
        per_seed,
        structures,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl MetricReport {
    /// One `structure<TAB>metric<TAB>value` line per metric, values as
    /// fractions.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        for (s, m) in &self.structures {
            for (name, v) in [
                ("mrr", m.mrr),
                ("hits@1", m.hits1),
                ("hits@3", m.hits3),
                ("hits@10", m.hits10),
            ] {
                let _ = writeln!(out, "{s}\t{name}\t{v:.6}");
            }
            let _ = writeln!(out, "{s}\tqueries\t{}", m.queries);
            let _ = writeln!(out, "{s}\tanswers\t{}", m.answers);
        }
        out
    }

    /// Aligned table in percent.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<6}{:>9}{:>9}{:>9}{:>9}\n",
            "query", "MRR%", "H@1%", "H@10%", "n"
        );
        for (s, m) in &self.structures {
            let _ = writeln!(
                out,
                "{:<6}{:>9}{:>9}{:>9}{:>9}",
                s.tag(),
                pct(m.mrr),
                pct(m.hits1),
                pct(m.hits10),
                m.queries
            );
        }
        out
    }
}

impl AggregateReport {
    /// Flat lines with `.mean`, `.std` and `.seed<S>` metric suffixes.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        for (s, a) in &self.structures {
            for (name, stat, get) in [
                (
                    "mrr",
                    a.mrr,
                    (|m: &StructureMetrics| m.mrr) as fn(&StructureMetrics) -> f64,
                ),
                ("hits@1", a.hits1, |m| m.hits1),
                ("hits@3", a.hits3, |m| m.hits3),
                ("hits@10", a.hits10, |m| m.hits10),
            ] {
                let _ = writeln!(out, "{s}\t{name}.mean\t{:.6}", stat.mean);
                let _ = writeln!(out, "{s}\t{name}.std\t{:.6}", stat.std);
                for (seed, r) in self.seeds.iter().zip(&self.per_seed) {
                    let _ = writeln!(out, "{s}\t{name}.seed{seed}\t{:.6}", get(&r.structures[s]));
                }
            }
            let _ = writeln!(out, "{s}\tqueries\t{}", a.queries);
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<6}{:>9}{:>8}{:>9}{:>8}{:>9}{:>8}{:>9}\n",
            "query", "MRR%", "±", "H@1%", "±", "H@10%", "±", "n"
        );
        for (s, a) in &self.structures {
            let _ = writeln!(
                out,
                "{:<6}{:>9}{:>8}{:>9}{:>8}{:>9}{:>8}{:>9}",
                s.tag(),
                pct(a.mrr.mean),
                pct(a.mrr.std),
                pct(a.hits1.mean),
                pct(a.hits1.std),
                pct(a.hits10.mean),
                pct(a.hits10.std),
                a.queries
            );
        }
        out
    }
}
