use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::par;

/// Per-node value shape `rows x cols`.
///
/// Scalars are `1 x 1`, vectors in `R^k` are `k x 1`, and 2x2 matrices are
/// `2 x 2` stored as `[m11, m12, m21, m22]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };
    pub const MATRIX2: Shape = Shape { rows: 2, cols: 2 };

    pub fn vector(k: usize) -> Self {
        Shape { rows: k, cols: 1 }
    }

    pub fn comps(&self) -> usize {
        self.rows * self.cols
    }
}

/// Values of shape `shape` at every node of `grid`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid2,
    shape: Shape,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid2, shape: Shape) -> Self {
        Self {
            grid: grid.clone(),
            shape,
            data: vec![0.0; grid.len() * shape.comps()],
        }
    }

    pub fn from_vec(grid: &Grid2, shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * shape.comps() {
            return Err(Error::InvalidParameter(format!(
                "buffer of {} values for {} nodes of {} components",
                data.len(),
                grid.len(),
                shape.comps()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            shape,
            data,
        })
    }

    /// Fills each node with `f(x, y, out)`.
    pub fn from_fn<F>(grid: &Grid2, shape: Shape, f: F) -> Self
    where
        F: Fn(f64, f64, &mut [f64]) + Sync + Send,
    {
        let mut field = Self::zeros(grid, shape);
        let nc = shape.comps();
        let g = grid.clone();
        par::for_each_row(&mut field.data, grid.nx() * nc, |j, row| {
            let y = g.y(j);
            for (i, out) in row.chunks_mut(nc).enumerate() {
                f(g.x(i), y, out);
            }
        });
        field
    }

    pub fn scalar_fn<F>(grid: &Grid2, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        Self::from_fn(grid, Shape::SCALAR, |x, y, o| o[0] = f(x, y))
    }

    /// Symmetric matrix field from `(m11, m12, m22)`.
    pub fn sym_fn<F>(grid: &Grid2, f: F) -> Self
    where
        F: Fn(f64, f64) -> [f64; 3] + Sync + Send,
    {
        Self::from_fn(grid, Shape::MATRIX2, |x, y, o| {
            let [a, b, c] = f(x, y);
            o.copy_from_slice(&[a, b, b, c]);
        })
    }

    pub fn constant(grid: &Grid2, shape: Shape, value: &[f64]) -> Self {
        assert_eq!(value.len(), shape.comps());
        let mut field = Self::zeros(grid, shape);
        for node in field.data.chunks_mut(shape.comps()) {
            node.copy_from_slice(value);
        }
        field
    }

    /// `s * Id` as a matrix field.
    pub fn identity(grid: &Grid2, s: f64) -> Self {
        Self::constant(grid, Shape::MATRIX2, &[s, 0.0, 0.0, s])
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn comps(&self) -> usize {
        self.shape.comps()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let nc = self.comps();
        let k = self.grid.index(i, j) * nc;
        &self.data[k..k + nc]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let nc = self.comps();
        let k = self.grid.index(i, j) * nc;
        &mut self.data[k..k + nc]
    }

    /// Values of component `c` at every node, row-major.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        let nc = self.comps();
        self.data.iter().skip(c).step_by(nc).copied().collect()
    }

    pub fn set_plane(&mut self, c: usize, plane: &[f64]) {
        let nc = self.comps();
        for (dst, &src) in self.data.iter_mut().skip(c).step_by(nc).zip(plane) {
            *dst = src;
        }
    }

    /// Builds a field from component planes.
    pub fn from_planes(grid: &Grid2, shape: Shape, planes: &[Vec<f64>]) -> Self {
        assert_eq!(planes.len(), shape.comps());
        let mut field = Self::zeros(grid, shape);
        for (c, p) in planes.iter().enumerate() {
            field.set_plane(c, p);
        }
        field
    }

    /// Scalar field holding component `c`.
    pub fn component(&self, c: usize) -> Field {
        Field {
            grid: self.grid.clone(),
            shape: Shape::SCALAR,
            data: self.plane(c),
        }
    }

    /// Same values reinterpreted with a new shape of equal component count.
    pub fn reshaped(mut self, shape: Shape) -> Result<Field> {
        if shape.comps() != self.comps() {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Values at the nodes of a sub-lattice.
    pub fn restrict(&self, sub: &Grid2) -> Result<Field> {
        let (di, dj) = self.grid.offset_of(sub).ok_or(Error::GridMismatch)?;
        let nc = self.comps();
        let mut out = Field::zeros(sub, self.shape);
        let src_nx = self.grid.nx();
        let row_len = sub.nx() * nc;
        let data = &self.data;
        par::for_each_row(&mut out.data, row_len, |j, row| {
            let start = ((j + dj) * src_nx + di) * nc;
            row.copy_from_slice(&data[start..start + row_len]);
        });
        Ok(out)
    }

    fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got: other.shape,
            });
        }
        if !self.grid.same_nodes(&other.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `self + s * other`, in place.
    pub fn axpy(&mut self, s: f64, other: &Field) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field {
            grid: self.grid.clone(),
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds `s * Id` to a matrix field.
    pub fn add_identity(&mut self, s: f64) -> Result<()> {
        if self.shape != Shape::MATRIX2 {
            return Err(Error::ShapeMismatch {
                expected: Shape::MATRIX2,
                got: self.shape,
            });
        }
        for node in self.data.chunks_mut(4) {
            node[0] += s;
            node[3] += s;
        }
        Ok(())
    }

    /// Multiplies every node value by the scalar field `s`.
    pub fn mul_scalar(&self, s: &Field) -> Result<Field> {
        if s.shape != Shape::SCALAR {
            return Err(Error::ShapeMismatch {
                expected: Shape::SCALAR,
                got: s.shape,
            });
        }
        if !self.grid.same_nodes(&s.grid) {
            return Err(Error::GridMismatch);
        }
        let nc = self.comps();
        let mut out = self.clone();
        for (node, &f) in out.data.chunks_mut(nc).zip(&s.data) {
            node.iter_mut().for_each(|v| *v *= f);
        }
        Ok(out)
    }

    /// Euclidean norm of the value at node `n` (flat index).
    pub fn node_norm(&self, n: usize) -> f64 {
        let nc = self.comps();
        self.data[n * nc..(n + 1) * nc]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Smallest value among all components and nodes.
    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
