use nalgebra::{DMatrix, DVector};

use super::{
    gaussian, Constraint, KnowledgeSheaf, ModelError, RelationMaps, Result, SectionMatrix,
    SheafModel,
};
use crate::rng::{self, Stream};

/// Singular values at or below this fraction of the largest are treated as
/// zero when projecting onto the orthogonal matrices.
const RANK_TOLERANCE: f64 = 1e-12;

/// Extends the orthonormal columns of `basis` to `want` orthonormal
/// columns, trying standard basis vectors in order.
fn complete_basis(basis: &[DVector<f64>], n: usize, want: usize) -> Vec<DVector<f64>> {
    let mut out = basis.to_vec();
    for i in 0..n {
        if out.len() == want {
            break;
        }
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for u in &out {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            out.push(v / norm);
        }
    }
    out
}

/// Nearest matrix with orthonormal rows or columns (whichever the shape
/// allows) in Frobenius norm: the polar factor `U Vᵀ` of the SVD.
///
/// Returns the projection and whether the input was rank-deficient, in
/// which case the null directions are completed deterministically.
pub fn nearest_orthogonal(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (m.clone(), false);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..k)
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > RANK_TOLERANCE * smax)
        .collect();
    if keep.len() == k {
        return (&u * &v_t, false);
    }
    let us: Vec<DVector<f64>> = keep.iter().map(|&i| u.column(i).into_owned()).collect();
    let vs: Vec<DVector<f64>> = keep.iter().map(|&i| v_t.row(i).transpose()).collect();
    let us = complete_basis(&us, rows, k);
    let vs = complete_basis(&vs, cols, k);
    let mut q = DMatrix::zeros(rows, cols);
    for (a, b) in us.iter().zip(&vs) {
        q += a * b.transpose();
    }
    (q, true)
}

/// Re-establishes the constraint of one relation. Returns `true` if an
/// orthogonal projection met a rank-deficient map.
pub fn project_relation(maps: &mut RelationMaps) -> bool {
    match maps.constraint {
        Constraint::Free | Constraint::Identity => false,
        Constraint::Shared => {
            maps.tail.copy_from(&maps.head);
            false
        }
        Constraint::Antisymmetric => {
            maps.tail.copy_from(&maps.head);
            maps.tail.neg_mut();
            false
        }
        Constraint::Orthogonal => {
            let (h, dh) = nearest_orthogonal(&maps.head);
            let (t, dt) = nearest_orthogonal(&maps.tail);
            maps.head = h;
            maps.tail = t;
            dh || dt
        }
    }
}

/// Projects every relation onto its constraint set.
pub fn project_constraints(sheaf: &mut KnowledgeSheaf) {
    for (r, maps) in sheaf.relations.iter_mut().enumerate() {
        if project_relation(maps) {
            log::warn!("relation {r}: orthogonal projection of a rank-deficient map, completed deterministically");
        }
    }
}

/// `‖XᵀX − I‖²_F` for one entity.
pub fn entity_penalty(x: &DMatrix<f64>) -> f64 {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm_squared()
}

/// `Σ_v ‖X_vᵀX_v − I‖²_F`
pub fn orthogonality_penalty(x: &SectionMatrix) -> f64 {
    x.entities.iter().map(entity_penalty).sum()
}

/// Changes the edge stalk dimension of relation `r`. Shrinking keeps the
/// leading rows; growing appends freshly drawn rows (zero rows for the
/// translation). The result is not reprojected.
pub fn resize_edge_stalk(
    model: &SheafModel,
    r: usize,
    new_dim: usize,
    seed: u64,
) -> Result<SheafModel> {
    if new_dim == 0 {
        return Err(ModelError::Config(
            "edge stalk dimension must be at least 1".into(),
        ));
    }
    let maps = model.sheaf.relation(r)?;
    let old = maps.edge_dim();
    if new_dim == old {
        return Ok(model.clone());
    }
    if maps.constraint == Constraint::Identity {
        return Err(ModelError::IdentityResize(r));
    }
    let mut out = model.clone();
    let maps = &mut out.sheaf.relations[r];
    if new_dim < old {
        maps.head = maps.head.rows(0, new_dim).into_owned();
        maps.tail = maps.tail.rows(0, new_dim).into_owned();
        if let Some(b) = &mut maps.translation {
            *b = b.rows(0, new_dim).into_owned();
        }
    } else {
        let extra = new_dim - old;
        let mut rng = rng::stream(seed, Stream::Resize);
        let (dh, dt) = (maps.head.ncols(), maps.tail.ncols());
        let scale = |d: usize| 1.0 / ((d * new_dim) as f64).sqrt();
        let (new_head, new_tail) = match maps.constraint {
            Constraint::Free => {
                let h = gaussian(&mut rng, extra, dh, scale(dh));
                (h, gaussian(&mut rng, extra, dt, scale(dt)))
            }
            Constraint::Shared => {
                let h = gaussian(&mut rng, extra, dh, scale(dh));
                (h.clone(), h)
            }
            Constraint::Antisymmetric => {
                let h = gaussian(&mut rng, extra, dh, scale(dh));
                let t = -&h;
                (h, t)
            }
            Constraint::Orthogonal => {
                let h = gaussian(&mut rng, extra, dh, 1.0 / (dh as f64).sqrt());
                (h, gaussian(&mut rng, extra, dt, 1.0 / (dt as f64).sqrt()))
            }
            Constraint::Identity => unreachable!("rejected above"),
        };
        let grow = |m: &DMatrix<f64>, new: &DMatrix<f64>| {
            let mut g = m.clone().resize_vertically(new_dim, 0.0);
            g.rows_mut(old, extra).copy_from(new);
            g
        };
        maps.head = grow(&maps.head, &new_head);
        maps.tail = grow(&maps.tail, &new_tail);
        if let Some(b) = &mut maps.translation {
            *b = b.clone().resize_vertically(new_dim, 0.0);
        }
    }
    out.schema.set_edge_dim(r, new_dim);
    Ok(out)
}
