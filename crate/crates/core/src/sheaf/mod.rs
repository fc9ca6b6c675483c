//! Cellular sheaves on graphs and the dense linear algebra around them:
//! coboundary, Laplacian assembly, Schur complements and harmonic extension.
//!
//! Orientation convention: an edge `e = u -> v` has a head-role map acting on
//! `x_u` and a tail-role map acting on `x_v`, and
//!
//! ```text
//! (δx)_e = F_tail x_v - F_head x_u
//! ```
//!
//! The quadratic form `Σ_e ‖F_head x_u - F_tail x_v‖²` does not depend on
//! that sign. Self-loops carry two independent maps, one per role.

mod harmonic;
mod laplacian;

pub use harmonic::{
    affine_harmonic_extension, composite_relation_maps, harmonic_extension, kron_reduce,
    pinv_symmetric, schur_complement, AffineExtension, HarmonicSolver, PINV_RELATIVE_CUTOFF,
};
pub use laplacian::{assemble_laplacian, BlockLaplacian};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SheafError {
    #[error("edge {edge}: {detail}")]
    Shape { edge: usize, detail: String },
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
    #[error("cochain does not conform: {0}")]
    Cochain(String),
    #[error("boundary vertex set is empty")]
    EmptyBoundary,
    #[error("vertex {0} appears twice in the boundary")]
    DuplicateBoundary(usize),
    #[error("expected a two-vertex Laplacian, found {0} vertices")]
    NotAnEdge(usize),
}

pub type Result<T> = std::result::Result<T, SheafError>;

/// A cochain stored blockwise, one vector per vertex (0-cochain) or per
/// edge (1-cochain).
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain {
    blocks: Vec<DVector<f64>>,
}

pub type Cochain0 = Cochain;
pub type Cochain1 = Cochain;

impl Cochain {
    pub fn new(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::new(dims.iter().map(|&d| DVector::zeros(d)).collect())
    }

    /// Splits a concatenated vector into blocks of the given sizes.
    pub fn from_concat(dims: &[usize], data: &DVector<f64>) -> Self {
        assert_eq!(dims.iter().sum::<usize>(), data.len(), "length mismatch");
        let mut offset = 0;
        let blocks = dims
            .iter()
            .map(|&d| {
                let b = data.rows(offset, d).into_owned();
                offset += d;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn concat(&self) -> DVector<f64> {
        let n = self.blocks.iter().map(|b| b.len()).sum();
        let mut out = DVector::zeros(n);
        let mut offset = 0;
        for b in &self.blocks {
            out.rows_mut(offset, b.len()).copy_from(b);
            offset += b.len();
        }
        out
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn dot(&self, other: &Cochain) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.dot(b))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SheafEdge {
    pub head: usize,
    pub tail: usize,
    pub head_map: DMatrix<f64>,
    pub tail_map: DMatrix<f64>,
}

impl SheafEdge {
    pub fn dim(&self) -> usize {
        self.head_map.nrows()
    }
}

/// A cellular sheaf on an oriented multigraph with dense restriction maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SheafOnGraph {
    vertex_dims: Vec<usize>,
    edges: Vec<SheafEdge>,
}

impl SheafOnGraph {
    pub fn new(vertex_dims: Vec<usize>) -> Self {
        Self {
            vertex_dims,
            edges: Vec::new(),
        }
    }

    pub fn add_edge(
        &mut self,
        head: usize,
        tail: usize,
        head_map: DMatrix<f64>,
        tail_map: DMatrix<f64>,
    ) -> Result<usize> {
        let edge = self.edges.len();
        for v in [head, tail] {
            if v >= self.vertex_dims.len() {
                return Err(SheafError::VertexOutOfRange(v));
            }
        }
        if head_map.nrows() != tail_map.nrows() {
            return Err(SheafError::Shape {
                edge,
                detail: format!(
                    "head map has {} rows but tail map has {}",
                    head_map.nrows(),
                    tail_map.nrows()
                ),
            });
        }
        if head_map.ncols() != self.vertex_dims[head] {
            return Err(SheafError::Shape {
                edge,
                detail: format!(
                    "head map has {} columns, vertex {head} has stalk dimension {}",
                    head_map.ncols(),
                    self.vertex_dims[head]
                ),
            });
        }
        if tail_map.ncols() != self.vertex_dims[tail] {
            return Err(SheafError::Shape {
                edge,
                detail: format!(
                    "tail map has {} columns, vertex {tail} has stalk dimension {}",
                    tail_map.ncols(),
                    self.vertex_dims[tail]
                ),
            });
        }
        self.edges.push(SheafEdge {
            head,
            tail,
            head_map,
            tail_map,
        });
        Ok(edge)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_dims.len()
    }

    pub fn vertex_dims(&self) -> &[usize] {
        &self.vertex_dims
    }

    pub fn edges(&self) -> &[SheafEdge] {
        &self.edges
    }

    pub fn edge_dims(&self) -> Vec<usize> {
        self.edges.iter().map(SheafEdge::dim).collect()
    }

    fn check_cochain0(&self, x: &Cochain) -> Result<()> {
        if x.dims() != self.vertex_dims {
            return Err(SheafError::Cochain(format!(
                "0-cochain block sizes {:?} do not match vertex stalks {:?}",
                x.dims(),
                self.vertex_dims
            )));
        }
        Ok(())
    }

    fn check_cochain1(&self, b: &Cochain) -> Result<()> {
        if b.dims() != self.edge_dims() {
            return Err(SheafError::Cochain(format!(
                "1-cochain block sizes {:?} do not match edge stalks {:?}",
                b.dims(),
                self.edge_dims()
            )));
        }
        Ok(())
    }

    pub fn coboundary(&self, x: &Cochain0) -> Result<Cochain1> {
        self.check_cochain0(x)?;
        Ok(Cochain::new(
            self.edges
                .iter()
                .map(|e| &e.tail_map * x.block(e.tail) - &e.head_map * x.block(e.head))
                .collect(),
        ))
    }

    /// δᵀ applied to a 1-cochain.
    pub fn coboundary_transpose(&self, b: &Cochain1) -> Result<Cochain0> {
        self.check_cochain1(b)?;
        let mut out = Cochain::zeros(&self.vertex_dims);
        for (e, be) in self.edges.iter().zip(b.blocks()) {
            out.blocks[e.tail] += e.tail_map.tr_mul(be);
            out.blocks[e.head] -= e.head_map.tr_mul(be);
        }
        Ok(out)
    }

    /// Σ_e ‖F_head x_u − F_tail x_v‖², evaluated edge by edge.
    pub fn quadratic_form(&self, x: &Cochain0) -> Result<f64> {
        self.check_cochain0(x)?;
        Ok(self
            .edges
            .iter()
            .map(|e| (&e.head_map * x.block(e.head) - &e.tail_map * x.block(e.tail)).norm_squared())
            .sum())
    }

    /// Dense coboundary matrix, rows grouped by edge and columns by vertex.
    pub fn coboundary_matrix(&self) -> DMatrix<f64> {
        let col_offsets = offsets(&self.vertex_dims);
        let rows: usize = self.edges.iter().map(SheafEdge::dim).sum();
        let cols: usize = self.vertex_dims.iter().sum();
        let mut delta = DMatrix::zeros(rows, cols);
        let mut row = 0;
        for e in &self.edges {
            let de = e.dim();
            let (hc, tc) = (col_offsets[e.head], col_offsets[e.tail]);
            let mut head_block = delta.view_mut((row, hc), (de, self.vertex_dims[e.head]));
            head_block -= &e.head_map;
            let mut tail_block = delta.view_mut((row, tc), (de, self.vertex_dims[e.tail]));
            tail_block += &e.tail_map;
            row += de;
        }
        delta
    }

    /// Pullback along a graph morphism into this sheaf's graph.
    ///
    /// `vertex_map[i]` is the image of vertex `i` of the new graph and each
    /// entry of `edges` is `(head, tail, image_edge)`; the image edge must
    /// join the images of `head` and `tail` in the same orientation.
    pub fn pullback(&self, vertex_map: &[usize], edges: &[(usize, usize, usize)]) -> Result<Self> {
        let dims = vertex_map
            .iter()
            .map(|&q| {
                self.vertex_dims
                    .get(q)
                    .copied()
                    .ok_or(SheafError::VertexOutOfRange(q))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = SheafOnGraph::new(dims);
        for (i, &(u, v, image)) in edges.iter().enumerate() {
            let src = self.edges.get(image).ok_or_else(|| SheafError::Shape {
                edge: i,
                detail: format!("image edge {image} does not exist"),
            })?;
            let (ku, kv) = (
                *vertex_map.get(u).ok_or(SheafError::VertexOutOfRange(u))?,
                *vertex_map.get(v).ok_or(SheafError::VertexOutOfRange(v))?,
            );
            if ku != src.head || kv != src.tail {
                return Err(SheafError::Shape {
                    edge: i,
                    detail: "edge is not mapped onto an incident edge with matching orientation"
                        .into(),
                });
            }
            out.add_edge(u, v, src.head_map.clone(), src.tail_map.clone())?;
        }
        Ok(out)
    }
}

/// Pulls a 0-cochain back along a vertex map.
pub fn pullback_cochain(x: &Cochain0, vertex_map: &[usize]) -> Cochain0 {
    Cochain::new(vertex_map.iter().map(|&q| x.block(q).clone()).collect())
}

pub(crate) fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    dims.iter()
        .map(|&d| {
            let o = acc;
            acc += d;
            o
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn constant_sheaf_has_constant_sections() {
        let mut sheaf = SheafOnGraph::new(vec![2; 4]);
        for (u, w) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
            sheaf
                .add_edge(u, w, DMatrix::identity(2, 2), DMatrix::identity(2, 2))
                .unwrap();
        }
        let x = Cochain::new(vec![v(&[1.5, -2.0]); 4]);
        let dx = sheaf.coboundary(&x).unwrap();
        assert!(dx.blocks().iter().all(|b| b.iter().all(|&c| c == 0.0)));
        assert_eq!(sheaf.quadratic_form(&x).unwrap(), 0.0);
    }

    #[test]
    fn single_edge_arithmetic() {
        let mut sheaf = SheafOnGraph::new(vec![1, 1]);
        sheaf
            .add_edge(
                0,
                1,
                DMatrix::from_element(1, 1, 2.0),
                DMatrix::identity(1, 1),
            )
            .unwrap();
        let x = Cochain::new(vec![v(&[1.0]), v(&[1.0])]);
        assert_eq!(sheaf.coboundary(&x).unwrap().block(0)[0], -1.0);
    }

    #[test]
    fn single_edge_identity_form() {
        let mut sheaf = SheafOnGraph::new(vec![2, 2]);
        sheaf
            .add_edge(0, 1, DMatrix::identity(2, 2), DMatrix::identity(2, 2))
            .unwrap();
        let x = Cochain::new(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]);
        assert_eq!(sheaf.quadratic_form(&x).unwrap(), 2.0);
    }

    #[test]
    fn shape_errors_name_the_edge() {
        let mut sheaf = SheafOnGraph::new(vec![2, 3]);
        sheaf
            .add_edge(0, 1, DMatrix::zeros(1, 2), DMatrix::zeros(1, 3))
            .unwrap();
        let err = sheaf
            .add_edge(0, 1, DMatrix::zeros(1, 2), DMatrix::zeros(1, 2))
            .unwrap_err();
        assert!(matches!(err, SheafError::Shape { edge: 1, .. }));
        let bad = Cochain::new(vec![v(&[1.0]), v(&[1.0, 2.0, 3.0])]);
        assert!(matches!(
            sheaf.coboundary(&bad),
            Err(SheafError::Cochain(_))
        ));
    }

    #[test]
    fn coboundary_norm_matches_edgewise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let sheaf = random_sheaf(&mut rng, 4, 4, 3);
            let x = random_cochain(&mut rng, sheaf.vertex_dims());
            // scalar loop over edges and matrix entries
            let mut brute = 0.0;
            for e in sheaf.edges() {
                for i in 0..e.dim() {
                    let mut acc = 0.0;
                    for j in 0..e.head_map.ncols() {
                        acc += e.head_map[(i, j)] * x.block(e.head)[j];
                    }
                    for j in 0..e.tail_map.ncols() {
                        acc -= e.tail_map[(i, j)] * x.block(e.tail)[j];
                    }
                    brute += acc * acc;
                }
            }
            let dx = sheaf.coboundary(&x).unwrap().norm_squared();
            assert!((dx - brute).abs() <= 1e-12 * (1.0 + brute));
            let q = sheaf.quadratic_form(&x).unwrap();
            assert!((q - dx).abs() <= 1e-12 * (1.0 + q));
        }
    }

    #[test]
    fn coboundary_transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let sheaf = random_sheaf(&mut rng, 5, 3, 3);
            let x = random_cochain(&mut rng, sheaf.vertex_dims());
            let b = random_cochain(&mut rng, &sheaf.edge_dims());
            let lhs = sheaf.coboundary(&x).unwrap().dot(&b);
            let rhs = x.dot(&sheaf.coboundary_transpose(&b).unwrap());
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            let dense = sheaf.coboundary_matrix() * x.concat();
            let direct = sheaf.coboundary(&x).unwrap().concat();
            assert!((dense - direct).amax() < 1e-12);
        }
    }

    #[test]
    fn pullback_of_section_is_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // Schema: two types, relations 0 -> 1 and a self-loop on 0.
        let mut schema = SheafOnGraph::new(vec![3, 2]);
        let a = gaussian(&mut rng, 2, 3);
        let b = gaussian(&mut rng, 2, 2);
        schema.add_edge(0, 1, a.clone(), b.clone()).unwrap();
        let q = gaussian(&mut rng, 3, 3);
        schema.add_edge(0, 0, q.clone(), q.clone()).unwrap();
        // Section: pick x1, then x0 with a x0 = b x1.
        let x1 = gaussian_vec(&mut rng, 2);
        let x0 = a.clone().pseudo_inverse(1e-12).unwrap() * (&b * &x1);
        assert!((&a * &x0 - &b * &x1).norm() < 1e-10);
        let section = Cochain::new(vec![x0, x1]);
        assert!(schema.quadratic_form(&section).unwrap() < 1e-20);
        // Graph: 4 vertices of type 0, 2 of type 1.
        let vertex_map = [0, 0, 0, 0, 1, 1];
        let edges = [
            (0, 4, 0),
            (1, 4, 0),
            (2, 5, 0),
            (0, 1, 1),
            (3, 3, 1),
            (2, 0, 1),
        ];
        let pulled = schema.pullback(&vertex_map, &edges).unwrap();
        let x = pullback_cochain(&section, &vertex_map);
        assert!(pulled.quadratic_form(&x).unwrap() <= 1e-10);
        // Orientation must be respected.
        assert!(schema.pullback(&vertex_map, &[(4, 0, 0)]).is_err());
    }
}
