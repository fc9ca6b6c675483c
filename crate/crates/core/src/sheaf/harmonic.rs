use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::laplacian::symmetrize;
use super::{
    assemble_laplacian, offsets, BlockLaplacian, Cochain, Result, SheafError, SheafOnGraph,
};

/// Eigenvalues at or below this fraction of the largest one are treated as
/// zero by [`pinv_symmetric`].
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Moore–Penrose pseudoinverse of a symmetric matrix via its
/// eigendecomposition.
pub fn pinv_symmetric(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let scale = eig.eigenvalues.amax();
    if scale == 0.0 {
        return DMatrix::zeros(n, n);
    }
    let cutoff = PINV_RELATIVE_CUTOFF * scale;
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > cutoff { 1.0 / l } else { 0.0 });
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |i, j| q[(i, j)] * inv[j]);
    symmetrize(&(scaled * q.transpose()))
}

fn check_boundary(num_vertices: usize, boundary: &[usize]) -> Result<Vec<usize>> {
    if boundary.is_empty() {
        return Err(SheafError::EmptyBoundary);
    }
    let mut in_boundary = vec![false; num_vertices];
    for &v in boundary {
        if v >= num_vertices {
            return Err(SheafError::VertexOutOfRange(v));
        }
        if in_boundary[v] {
            return Err(SheafError::DuplicateBoundary(v));
        }
        in_boundary[v] = true;
    }
    Ok((0..num_vertices).filter(|&v| !in_boundary[v]).collect())
}

/// Precomputed Schur complement and harmonic extension operator for a fixed
/// boundary set `B` (in the caller's order) and interior `U` (the remaining
/// vertices in index order).
#[derive(Debug, Clone)]
pub struct HarmonicSolver {
    boundary: Vec<usize>,
    interior: Vec<usize>,
    boundary_dims: Vec<usize>,
    interior_dims: Vec<usize>,
    schur: DMatrix<f64>,
    interior_pinv: DMatrix<f64>,
    /// `-L[U,U]⁺ L[U,B]`
    extension: DMatrix<f64>,
}

impl HarmonicSolver {
    pub fn new(lap: &BlockLaplacian, boundary: &[usize]) -> Result<Self> {
        let interior = check_boundary(lap.num_vertices(), boundary)?;
        let boundary_dims: Vec<usize> = boundary.iter().map(|&v| lap.dims()[v]).collect();
        let interior_dims: Vec<usize> = interior.iter().map(|&v| lap.dims()[v]).collect();
        let l_bb = lap.gather(boundary, boundary);
        let (schur, interior_pinv, extension) = if interior.is_empty() {
            (
                l_bb,
                DMatrix::zeros(0, 0),
                DMatrix::zeros(0, boundary_dims.iter().sum()),
            )
        } else {
            let l_uu = lap.gather(&interior, &interior);
            let l_ub = lap.gather(&interior, boundary);
            let pinv = pinv_symmetric(&l_uu);
            let extension = -(&pinv * &l_ub);
            // L[B,B] + L[B,U]·(-L[U,U]⁺ L[U,B])
            let schur = symmetrize(&(l_bb + l_ub.tr_mul(&extension)));
            (schur, pinv, extension)
        };
        Ok(Self {
            boundary: boundary.to_vec(),
            interior,
            boundary_dims,
            interior_dims,
            schur,
            interior_pinv,
            extension,
        })
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_dims(&self) -> &[usize] {
        &self.boundary_dims
    }

    pub fn interior_dims(&self) -> &[usize] {
        &self.interior_dims
    }

    /// `L / L[U,U]`, indexed by the boundary blocks in order.
    pub fn schur(&self) -> &DMatrix<f64> {
        &self.schur
    }

    pub fn interior_pinv(&self) -> &DMatrix<f64> {
        &self.interior_pinv
    }

    /// The linear map `y_B ↦ y_U` of the minimum-norm harmonic extension.
    pub fn extension(&self) -> &DMatrix<f64> {
        &self.extension
    }

    pub fn extend(&self, y_b: &DVector<f64>) -> DVector<f64> {
        &self.extension * y_b
    }

    pub fn value(&self, y_b: &DVector<f64>) -> f64 {
        y_b.dot(&(&self.schur * y_b))
    }

    fn check(&self, y_b: &Cochain) -> Result<()> {
        if y_b.dims() != self.boundary_dims {
            return Err(SheafError::Cochain(format!(
                "boundary cochain block sizes {:?} do not match boundary stalks {:?}",
                y_b.dims(),
                self.boundary_dims
            )));
        }
        Ok(())
    }

    /// Assembles a full 0-cochain from boundary and interior parts.
    pub fn assemble(&self, y_b: &DVector<f64>, y_u: &DVector<f64>) -> Cochain {
        let n = self.boundary.len() + self.interior.len();
        let mut blocks: Vec<Option<DVector<f64>>> = vec![None; n];
        let bo = offsets(&self.boundary_dims);
        for (i, &v) in self.boundary.iter().enumerate() {
            blocks[v] = Some(y_b.rows(bo[i], self.boundary_dims[i]).into_owned());
        }
        let uo = offsets(&self.interior_dims);
        for (i, &v) in self.interior.iter().enumerate() {
            blocks[v] = Some(y_u.rows(uo[i], self.interior_dims[i]).into_owned());
        }
        Cochain::new(
            blocks
                .into_iter()
                .map(|b| b.expect("vertex covered"))
                .collect(),
        )
    }
}

/// `L[B,B] − L[B,U] L[U,U]⁺ L[U,B]`.
pub fn schur_complement(lap: &BlockLaplacian, boundary: &[usize]) -> Result<DMatrix<f64>> {
    Ok(HarmonicSolver::new(lap, boundary)?.schur)
}

/// Minimum-norm harmonic extension of `y_b` to the interior, together with
/// the optimal value `y_Bᵀ (L / L[U,U]) y_B`.
pub fn harmonic_extension(
    lap: &BlockLaplacian,
    boundary: &[usize],
    y_b: &Cochain,
) -> Result<(Cochain, f64)> {
    let solver = HarmonicSolver::new(lap, boundary)?;
    solver.check(y_b)?;
    let yb = y_b.concat();
    let y_u = solver.extend(&yb);
    let value = solver.value(&yb);
    Ok((Cochain::from_concat(&solver.interior_dims, &y_u), value))
}

/// Result of harmonic extension with a translational 1-cochain.
#[derive(Debug, Clone)]
pub struct AffineExtension {
    /// Interior values minimizing `‖δy − b‖²` subject to `y_B` fixed.
    pub interior: Cochain,
    /// `y_Fᵀ L y_F − 2 bᵀ δ y_F`, where `y_F` is the linear harmonic
    /// extension of the boundary data. Terms independent of `y_B` are
    /// excluded.
    pub value: f64,
    /// The excluded boundary-independent terms:
    /// `bᵀb − (δᵀb)_Uᵀ L[U,U]⁺ (δᵀb)_U`. `value + offset` is the minimum of
    /// `‖δy − b‖²`.
    pub offset: f64,
}

impl AffineExtension {
    pub fn minimum(&self) -> f64 {
        self.value + self.offset
    }
}

/// Harmonic extension for `min ‖δy − b‖²` with `y_B` fixed.
pub fn affine_harmonic_extension(
    lap: &BlockLaplacian,
    sheaf: &SheafOnGraph,
    b: &Cochain,
    boundary: &[usize],
    y_b: &Cochain,
) -> Result<AffineExtension> {
    let solver = HarmonicSolver::new(lap, boundary)?;
    solver.check(y_b)?;
    let delta_t_b = sheaf.coboundary_transpose(b)?;
    let yb = y_b.concat();
    let y_u_linear = solver.extend(&yb);
    let value_linear = solver.value(&yb);

    let dtb_u = Cochain::new(
        solver
            .interior
            .iter()
            .map(|&v| delta_t_b.block(v).clone())
            .collect(),
    )
    .concat();
    let correction = &solver.interior_pinv * &dtb_u;
    let y_u = &y_u_linear + &correction;

    let y_linear = solver.assemble(&yb, &y_u_linear);
    let cross = b.dot(&sheaf.coboundary(&y_linear)?);
    let value = value_linear - 2.0 * cross;
    let offset = b.norm_squared() - dtb_u.dot(&correction);
    Ok(AffineExtension {
        interior: Cochain::from_concat(&solver.interior_dims, &y_u),
        value,
        offset,
    })
}

/// Kron reduction of the sheaf Laplacian onto `boundary`.
pub fn kron_reduce(sheaf: &SheafOnGraph, boundary: &[usize]) -> Result<BlockLaplacian> {
    let lap = assemble_laplacian(sheaf);
    let solver = HarmonicSolver::new(&lap, boundary)?;
    Ok(BlockLaplacian::from_dense(
        &solver.schur,
        solver.boundary_dims.clone(),
    ))
}

/// Factors a two-vertex Laplacian as the Laplacian of a single edge,
/// returning its `(head, tail)` restriction maps. The edge stalk dimension
/// is the numerical rank of the Laplacian; the maps are unique up to a
/// common orthogonal transformation of the edge stalk.
pub fn composite_relation_maps(lap: &BlockLaplacian) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if lap.num_vertices() != 2 {
        return Err(SheafError::NotAnEdge(lap.num_vertices()));
    }
    let (d0, d1) = (lap.dims()[0], lap.dims()[1]);
    let eig = SymmetricEigen::new(lap.to_dense());
    let scale = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| scale > 0.0 && eig.eigenvalues[i] > PINV_RELATIVE_CUTOFF * scale)
        .collect();
    // rows sqrt(λ) vᵀ give MᵀM = L with M = [head, -tail]
    let m = DMatrix::from_fn(keep.len(), d0 + d1, |r, c| {
        let i = keep[r];
        eig.eigenvalues[i].sqrt() * eig.eigenvectors[(c, i)]
    });
    let head = m.columns(0, d0).into_owned();
    let tail = -m.columns(d0, d1).into_owned();
    Ok((head, tail))
}
