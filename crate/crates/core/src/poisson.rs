//! Dirichlet Poisson solvers.
//!
//! [`solve_dirichlet`] inverts the 5-point Laplacian by a sine transform.
//! [`ConsistentLaplacian`] inverts `L = D1 D1 + D2 D2`, the Laplacian composed
//! from the first-derivative operators of [`crate::calculus`] including their
//! one-sided boundary rows, by a Bartels–Stewart Sylvester solve on the real
//! Schur forms of the two one-dimensional factors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::calculus::Plane;
use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::grid::Grid2;

/// Solves `Delta_5 psi = rhs` at interior nodes with `psi = 0` on the boundary.
pub fn solve_dirichlet(rhs: &Field) -> Result<Field> {
    if rhs.shape() != Shape::SCALAR {
        return Err(Error::ShapeMismatch {
            expected: Shape::SCALAR,
            got: rhs.shape(),
        });
    }
    let g = rhs.grid();
    let (nx, ny, h) = (g.nx(), g.ny(), g.h());
    if nx < 3 || ny < 3 {
        return Err(Error::GridTooSmall {
            need: 3,
            got: nx.min(ny),
        });
    }
    let (mx, my) = (nx - 2, ny - 2);
    let src = rhs.data();
    let mut x = vec![0.0; mx * my];
    for j in 0..my {
        for i in 0..mx {
            x[j * mx + i] = src[(j + 1) * nx + i + 1];
        }
    }
    let dst_x = Dst1::new(mx);
    let dst_y = Dst1::new(my);
    dst_2d(&mut x, mx, my, &dst_x, &dst_y);
    let ex: Vec<f64> = (1..=mx).map(|k| eig_5pt(k, mx, h)).collect();
    let ey: Vec<f64> = (1..=my).map(|k| eig_5pt(k, my, h)).collect();
    let norm = 4.0 / ((mx + 1) * (my + 1)) as f64;
    for j in 0..my {
        for i in 0..mx {
            x[j * mx + i] *= norm / (ex[i] + ey[j]);
        }
    }
    dst_2d(&mut x, mx, my, &dst_x, &dst_y);
    let mut out = vec![0.0; nx * ny];
    for j in 0..my {
        for i in 0..mx {
            out[(j + 1) * nx + i + 1] = x[j * mx + i];
        }
    }
    Field::from_vec(g, Shape::SCALAR, out)
}

/// Eigenvalue of the 3-point Dirichlet second difference for mode `k`.
pub fn eig_5pt(k: usize, m: usize, h: f64) -> f64 {
    let t = std::f64::consts::PI * k as f64 / (m + 1) as f64;
    (2.0 * t.cos() - 2.0) / (h * h)
}

/// Type-I discrete sine transform through an odd extension of length `2(m+1)`.
struct Dst1 {
    m: usize,
    fft: Arc<dyn rustfft::Fft<f64>>,
}

impl Dst1 {
    fn new(m: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(2 * (m + 1));
        Self { m, fft }
    }

    fn apply(&self, x: &mut [f64]) {
        let m = self.m;
        let mut y = vec![Complex64::new(0.0, 0.0); 2 * (m + 1)];
        for (n, &v) in x.iter().enumerate() {
            y[n + 1] = Complex64::new(v, 0.0);
            y[2 * m + 1 - n] = Complex64::new(-v, 0.0);
        }
        self.fft.process(&mut y);
        for (k, v) in x.iter_mut().enumerate() {
            *v = -0.5 * y[k + 1].im;
        }
    }
}

fn dst_2d(x: &mut [f64], mx: usize, my: usize, dx: &Dst1, dy: &Dst1) {
    for row in x.chunks_mut(mx) {
        dx.apply(row);
    }
    let mut col = vec![0.0; my];
    for i in 0..mx {
        for j in 0..my {
            col[j] = x[j * mx + i];
        }
        dy.apply(&mut col);
        for j in 0..my {
            x[j * mx + i] = col[j];
        }
    }
}

/// Restriction to interior nodes of `D D`, with `D` the 1-D first-derivative
/// matrix (central inside, one-sided second order at both ends).
pub fn composed_second_difference(n: usize, h: f64) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(n, n);
    let c = 0.5 / h;
    for i in 1..n - 1 {
        d[(i, i - 1)] = -c;
        d[(i, i + 1)] = c;
    }
    d[(0, 0)] = -3.0 * c;
    d[(0, 1)] = 4.0 * c;
    d[(0, 2)] = -c;
    d[(n - 1, n - 1)] = 3.0 * c;
    d[(n - 1, n - 2)] = -4.0 * c;
    d[(n - 1, n - 3)] = c;
    let dd = &d * &d;
    dd.view((1, 1), (n - 2, n - 2)).into_owned()
}

/// Real Schur factorisation `T = Q U Q^T` with upper-triangular `U`.
#[derive(Debug)]
struct SchurAxis {
    q: DMatrix<f64>,
    u: DMatrix<f64>,
}

impl SchurAxis {
    fn new(n: usize, h: f64) -> Result<Self> {
        let t = composed_second_difference(n, h);
        let scale = t.abs().max();
        let (q, u) = t.schur().unpack();
        let m = u.nrows();
        for i in 0..m.saturating_sub(1) {
            if u[(i + 1, i)].abs() > 1e-10 * scale {
                return Err(Error::Solver(format!(
                    "complex eigenvalue pair in composed operator of size {n}"
                )));
            }
        }
        Ok(Self { q, u })
    }

    /// Solves `(U + mu I) y = r` in place.
    fn back_substitute(&self, mu: f64, r: &mut [f64]) {
        let u = &self.u;
        for k in (0..r.len()).rev() {
            let yk = r[k] / (u[(k, k)] + mu);
            r[k] = yk;
            let col = u.column(k);
            for (ri, &uik) in r[..k].iter_mut().zip(col.iter()) {
                *ri -= uik * yk;
            }
        }
    }
}

/// Dirichlet inverse of the composed Laplacian on one grid shape.
#[derive(Clone, Debug)]
pub struct ConsistentLaplacian {
    plane: Plane,
    ax: Arc<SchurAxis>,
    ay: Arc<SchurAxis>,
}

impl ConsistentLaplacian {
    pub fn new(grid: &Grid2) -> Result<Self> {
        let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
        if nx.min(ny) < 5 {
            return Err(Error::GridTooSmall {
                need: 5,
                got: nx.min(ny),
            });
        }
        let ax = Arc::new(SchurAxis::new(nx, h)?);
        let ay = if ny == nx {
            Arc::clone(&ax)
        } else {
            Arc::new(SchurAxis::new(ny, h)?)
        };
        Ok(Self {
            plane: Plane::of(grid),
            ax,
            ay,
        })
    }

    pub fn matches(&self, grid: &Grid2) -> bool {
        self.plane.nx == grid.nx()
            && self.plane.ny == grid.ny()
            && (self.plane.h - grid.h()).abs() <= 1e-12 * grid.h()
    }

    /// `D1 D1 p + D2 D2 p` on every node.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let pl = self.plane;
        let xx = pl.dx(&pl.dx(p));
        let yy = pl.dy(&pl.dy(p));
        xx.iter().zip(&yy).map(|(a, b)| a + b).collect()
    }

    /// Plane vanishing on the boundary with `L psi = rhs` at interior nodes.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (nx, ny) = (self.plane.nx, self.plane.ny);
        let (mx, my) = (nx - 2, ny - 2);
        let r = DMatrix::from_fn(mx, my, |i, j| rhs[(j + 1) * nx + i + 1]);
        let mut c = self.ax.q.transpose() * r * &self.ay.q;
        let uy = &self.ay.u;
        let mut y = DMatrix::<f64>::zeros(mx, my);
        for j in (0..my).rev() {
            let mut col: Vec<f64> = c.column(j).iter().copied().collect();
            self.ax.back_substitute(uy[(j, j)], &mut col);
            let yj = DVector::from_vec(col);
            if j > 0 {
                let coeffs = uy.view((0, j), (j, 1)).into_owned();
                let mut head = c.columns_mut(0, j);
                head.ger(-1.0, &yj, &coeffs.column(0), 1.0);
            }
            y.set_column(j, &yj);
        }
        let x = &self.ax.q * y * self.ay.q.transpose();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("composed Poisson solve".into()));
        }
        let mut out = vec![0.0; nx * ny];
        for j in 0..my {
            for i in 0..mx {
                out[(j + 1) * nx + i + 1] = x[(i, j)];
            }
        }
        Ok(out)
    }
}
