use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{KnowledgeSheaf, ModelError, RelationMaps, Result, SectionMatrix, SheafModel, Variant};
use crate::kg::Triple;

fn check(maps: &RelationMaps, xh: &DMatrix<f64>, xt: &DMatrix<f64>) -> Result<()> {
    if maps.head.ncols() != xh.nrows()
        || maps.tail.ncols() != xt.nrows()
        || xh.ncols() != xt.ncols()
    {
        return Err(ModelError::Shape(format!(
            "maps {:?}/{:?} do not conform to entities {:?}/{:?}",
            maps.head.shape(),
            maps.tail.shape(),
            xh.shape(),
            xt.shape()
        )));
    }
    Ok(())
}

/// `R_h X_h (+ T) − R_t X_t`, one column per section. The translation is
/// included when `translated` is set.
pub fn residual(
    maps: &RelationMaps,
    xh: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    translated: bool,
) -> Result<DMatrix<f64>> {
    check(maps, xh, xt)?;
    let mut d = &maps.head * xh - &maps.tail * xt;
    if translated {
        let b = maps.translation.as_ref().ok_or_else(|| {
            ModelError::Shape(
                "translated residual requested for a relation without translation".into(),
            )
        })?;
        if b.shape() != d.shape() {
            return Err(ModelError::Shape(format!(
                "translation is {:?}, residual is {:?}",
                b.shape(),
                d.shape()
            )));
        }
        d += b;
    }
    Ok(d)
}

fn lookup<'a>(
    sheaf: &'a KnowledgeSheaf,
    x: &'a SectionMatrix,
    h: usize,
    r: usize,
    t: usize,
) -> Result<(&'a RelationMaps, &'a DMatrix<f64>, &'a DMatrix<f64>)> {
    Ok((sheaf.relation(r)?, x.entity(h)?, x.entity(t)?))
}

/// `Σ_j ‖R_h X_h[:,j] − R_t X_t[:,j]‖²`
pub fn score_shv(
    sheaf: &KnowledgeSheaf,
    x: &SectionMatrix,
    h: usize,
    r: usize,
    t: usize,
) -> Result<f64> {
    let (maps, xh, xt) = lookup(sheaf, x, h, r, t)?;
    Ok(residual(maps, xh, xt, false)?.norm_squared())
}

/// `Σ_j ‖R_h X_h[:,j] + T[:,j] − R_t X_t[:,j]‖²`
pub fn score_shvt(
    sheaf: &KnowledgeSheaf,
    x: &SectionMatrix,
    h: usize,
    r: usize,
    t: usize,
) -> Result<f64> {
    let (maps, xh, xt) = lookup(sheaf, x, h, r, t)?;
    if maps.translation.is_none() {
        return Err(ModelError::MissingTranslation(r));
    }
    Ok(residual(maps, xh, xt, true)?.norm_squared())
}

pub fn score(
    variant: Variant,
    sheaf: &KnowledgeSheaf,
    x: &SectionMatrix,
    h: usize,
    r: usize,
    t: usize,
) -> Result<f64> {
    match variant {
        Variant::Shv => score_shv(sheaf, x, h, r, t),
        Variant::ShvT => score_shvt(sheaf, x, h, r, t),
    }
}

/// Mean score per relation over `triples`. Relations without triples are
/// absent from the map.
pub fn relation_discrepancy(
    model: &SheafModel,
    triples: impl IntoIterator<Item = Triple>,
) -> Result<BTreeMap<usize, f64>> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for t in triples {
        let s = model.score(t.head, t.relation, t.tail)?;
        let entry = sums.entry(t.relation).or_insert((0.0, 0));
        entry.0 += s;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(r, (sum, n))| (r, sum / n as f64))
        .collect())
}
