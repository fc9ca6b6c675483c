use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{offsets, Cochain, Result, SheafError, SheafOnGraph};

/// Sheaf Laplacian stored as dense blocks.
///
/// Off-diagonal blocks are kept for both orientations; `offdiag[(v, u)]` is
/// always the exact transpose of `offdiag[(u, v)]`. Diagonal blocks are
/// exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLaplacian {
    dims: Vec<usize>,
    diag: Vec<DMatrix<f64>>,
    offdiag: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockLaplacian {
    pub fn num_vertices(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn diag(&self, v: usize) -> &DMatrix<f64> {
        &self.diag[v]
    }

    pub fn offdiag(&self, u: usize, v: usize) -> Option<&DMatrix<f64>> {
        self.offdiag.get(&(u, v))
    }

    /// Block `(u, v)`, zero when the vertices are not adjacent.
    pub fn block(&self, u: usize, v: usize) -> DMatrix<f64> {
        if u == v {
            self.diag[u].clone()
        } else {
            self.offdiag
                .get(&(u, v))
                .cloned()
                .unwrap_or_else(|| DMatrix::zeros(self.dims[u], self.dims[v]))
        }
    }

    /// Dense submatrix with block rows `rows` and block columns `cols`, in
    /// the order given.
    pub fn gather(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let row_dims: Vec<usize> = rows.iter().map(|&v| self.dims[v]).collect();
        let col_dims: Vec<usize> = cols.iter().map(|&v| self.dims[v]).collect();
        let (ro, co) = (offsets(&row_dims), offsets(&col_dims));
        let mut out = DMatrix::zeros(row_dims.iter().sum(), col_dims.iter().sum());
        for (i, &u) in rows.iter().enumerate() {
            for (j, &v) in cols.iter().enumerate() {
                let src = if u == v {
                    Some(&self.diag[u])
                } else {
                    self.offdiag.get(&(u, v))
                };
                if let Some(src) = src {
                    out.view_mut((ro[i], co[j]), (row_dims[i], col_dims[j]))
                        .copy_from(src);
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.dims.len()).collect();
        self.gather(&all, &all)
    }

    /// Rebuilds a block Laplacian from a dense symmetric matrix. Zero
    /// off-diagonal blocks are not stored.
    pub fn from_dense(dense: &DMatrix<f64>, dims: Vec<usize>) -> Self {
        let sym = symmetrize(dense);
        let off = offsets(&dims);
        let diag = dims
            .iter()
            .zip(&off)
            .map(|(&d, &o)| sym.view((o, o), (d, d)).into_owned())
            .collect();
        let mut offdiag = BTreeMap::new();
        for u in 0..dims.len() {
            for v in (u + 1)..dims.len() {
                let block = sym.view((off[u], off[v]), (dims[u], dims[v])).into_owned();
                if block.iter().any(|&x| x != 0.0) {
                    offdiag.insert((v, u), block.transpose());
                    offdiag.insert((u, v), block);
                }
            }
        }
        Self {
            dims,
            diag,
            offdiag,
        }
    }

    /// xᵀLx from the blocks.
    pub fn quadratic_form(&self, x: &Cochain) -> Result<f64> {
        if x.dims() != self.dims {
            return Err(SheafError::Cochain(format!(
                "0-cochain block sizes {:?} do not match Laplacian blocks {:?}",
                x.dims(),
                self.dims
            )));
        }
        let mut total = 0.0;
        for (v, d) in self.diag.iter().enumerate() {
            total += x.block(v).dot(&(d * x.block(v)));
        }
        for (&(u, v), block) in &self.offdiag {
            total += x.block(u).dot(&(block * x.block(v)));
        }
        Ok(total)
    }

    /// Smallest eigenvalue of the dense matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let dense = self.to_dense();
        if dense.nrows() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(dense).eigenvalues.min()
    }

    /// Largest absolute eigenvalue, i.e. the spectral norm of a symmetric
    /// matrix.
    pub fn spectral_norm(&self) -> f64 {
        let dense = self.to_dense();
        if dense.nrows() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(dense).eigenvalues.amax()
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Assembles L = δᵀδ blockwise.
///
/// For an edge `u -> v` with maps `A` (head) and `B` (tail): `AᵀA` is added
/// to block `(u, u)`, `BᵀB` to `(v, v)` and `-AᵀB` to `(u, v)`. A self-loop
/// folds its cross terms into the diagonal block.
pub fn assemble_laplacian(sheaf: &SheafOnGraph) -> BlockLaplacian {
    let dims = sheaf.vertex_dims().to_vec();
    let mut diag: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    let mut offdiag: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
    for e in sheaf.edges() {
        let (u, v) = (e.head, e.tail);
        diag[u] += e.head_map.tr_mul(&e.head_map);
        diag[v] += e.tail_map.tr_mul(&e.tail_map);
        let cross = e.head_map.tr_mul(&e.tail_map);
        if u == v {
            diag[u] -= &cross + cross.transpose();
        } else {
            let t = cross.transpose();
            *offdiag
                .entry((u, v))
                .or_insert_with(|| DMatrix::zeros(dims[u], dims[v])) -= cross;
            *offdiag
                .entry((v, u))
                .or_insert_with(|| DMatrix::zeros(dims[v], dims[u])) -= t;
        }
    }
    let diag = diag.iter().map(symmetrize).collect();
    BlockLaplacian {
        dims,
        diag,
        offdiag,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_edge_graph_laplacian() {
        let mut sheaf = SheafOnGraph::new(vec![1, 1]);
        sheaf
            .add_edge(0, 1, DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .unwrap();
        let l = assemble_laplacian(&sheaf).to_dense();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn path_middle_block() {
        let mut sheaf = SheafOnGraph::new(vec![3; 3]);
        for (u, v) in [(0, 1), (1, 2)] {
            sheaf
                .add_edge(u, v, DMatrix::identity(3, 3), DMatrix::identity(3, 3))
                .unwrap();
        }
        let l = assemble_laplacian(&sheaf);
        assert_eq!(l.diag(1), &(DMatrix::identity(3, 3) * 2.0));
        assert_eq!(l.diag(0), &DMatrix::identity(3, 3));
    }

    #[test]
    fn blocks_match_dense_coboundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let sheaf = random_sheaf(&mut rng, 6, 4, 3);
            let delta = sheaf.coboundary_matrix();
            let oracle = delta.tr_mul(&delta);
            let l = assemble_laplacian(&sheaf);
            let dense = l.to_dense();
            assert!((&dense - &oracle).amax() <= 1e-12 * (1.0 + oracle.amax()));
            assert_eq!(dense, dense.transpose());
            let x = random_cochain(&mut rng, sheaf.vertex_dims());
            let q = sheaf.quadratic_form(&x).unwrap();
            let lq = l.quadratic_form(&x).unwrap();
            assert!((q - lq).abs() <= 1e-10 * (1.0 + q));
        }
    }

    #[test]
    fn self_loop_cross_terms_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sheaf = SheafOnGraph::new(vec![2]);
        sheaf
            .add_edge(0, 0, gaussian(&mut rng, 2, 2), gaussian(&mut rng, 2, 2))
            .unwrap();
        let l = assemble_laplacian(&sheaf);
        let delta = sheaf.coboundary_matrix();
        assert!((l.to_dense() - delta.tr_mul(&delta)).amax() < 1e-12);
        let x = random_cochain(&mut rng, &[2]);
        let q = sheaf.quadratic_form(&x).unwrap();
        assert!((l.quadratic_form(&x).unwrap() - q).abs() < 1e-12 * (1.0 + q));
    }

    #[test]
    fn psd_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let sheaf = random_sheaf(&mut rng, 8, 5, 4);
            let l = assemble_laplacian(&sheaf);
            assert!(l.min_eigenvalue() >= -1e-9 * l.spectral_norm());
        }
    }

    #[test]
    fn dense_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sheaf = random_sheaf(&mut rng, 5, 3, 2);
        let l = assemble_laplacian(&sheaf);
        let back = BlockLaplacian::from_dense(&l.to_dense(), l.dims().to_vec());
        assert_eq!(back.to_dense(), l.to_dense());
    }
}
