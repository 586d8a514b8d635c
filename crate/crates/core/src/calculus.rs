//! Second-order finite differences on [`Grid2`] fields.
//!
//! First derivatives are central in the interior and use the one-sided
//! stencil `(-3, 4, -1) / 2h` on boundary nodes. Pure second derivatives use
//! `(1, -2, 1) / h^2` inside and `(2, -5, 4, -1) / h^2` on the boundary. Mixed
//! derivatives compose the two first-derivative operators, which commute.

use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::grid::Grid2;
use crate::par;

/// Row-major scalar plane on `nx x ny` nodes with spacing `h`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Plane {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Plane {
    pub fn of(grid: &Grid2) -> Self {
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            h: grid.h(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.nx.min(self.ny);
        if n < 4 {
            return Err(Error::GridTooSmall { need: 4, got: n });
        }
        Ok(())
    }

    /// `d/dx` along rows.
    pub fn dx(&self, p: &[f64]) -> Vec<f64> {
        let (nx, c) = (self.nx, 0.5 / self.h);
        let mut out = vec![0.0; p.len()];
        par::for_each_row(&mut out, nx, |j, row| {
            let src = &p[j * nx..(j + 1) * nx];
            row[0] = c * (-3.0 * src[0] + 4.0 * src[1] - src[2]);
            for i in 1..nx - 1 {
                row[i] = c * (src[i + 1] - src[i - 1]);
            }
            row[nx - 1] = c * (3.0 * src[nx - 1] - 4.0 * src[nx - 2] + src[nx - 3]);
        });
        out
    }

    /// `d/dy` across rows.
    pub fn dy(&self, p: &[f64]) -> Vec<f64> {
        let (nx, ny, c) = (self.nx, self.ny, 0.5 / self.h);
        let mut out = vec![0.0; p.len()];
        let row = |j: usize| &p[j * nx..(j + 1) * nx];
        par::for_each_row(&mut out, nx, |j, dst| {
            let (w, a, b) = if j == 0 {
                ([-3.0, 4.0, -1.0], 0, 1)
            } else if j == ny - 1 {
                ([1.0, -4.0, 3.0], ny - 3, 1)
            } else {
                ([-1.0, 0.0, 1.0], j - 1, 1)
            };
            let (r0, r1, r2) = (row(a), row(a + b), row(a + 2 * b));
            for i in 0..nx {
                dst[i] = c * (w[0] * r0[i] + w[1] * r1[i] + w[2] * r2[i]);
            }
        });
        out
    }

    /// `d^2/dx^2` along rows.
    pub fn dxx(&self, p: &[f64]) -> Vec<f64> {
        let (nx, c) = (self.nx, 1.0 / (self.h * self.h));
        let mut out = vec![0.0; p.len()];
        par::for_each_row(&mut out, nx, |j, row| {
            let s = &p[j * nx..(j + 1) * nx];
            row[0] = c * (2.0 * s[0] - 5.0 * s[1] + 4.0 * s[2] - s[3]);
            for i in 1..nx - 1 {
                row[i] = c * (s[i + 1] - 2.0 * s[i] + s[i - 1]);
            }
            let m = nx - 1;
            row[m] = c * (2.0 * s[m] - 5.0 * s[m - 1] + 4.0 * s[m - 2] - s[m - 3]);
        });
        out
    }

    /// `d^2/dy^2` across rows.
    pub fn dyy(&self, p: &[f64]) -> Vec<f64> {
        let (nx, ny, c) = (self.nx, self.ny, 1.0 / (self.h * self.h));
        let mut out = vec![0.0; p.len()];
        let row = |j: usize| &p[j * nx..(j + 1) * nx];
        par::for_each_row(&mut out, nx, |j, dst| {
            if j == 0 || j == ny - 1 {
                let s: isize = if j == 0 { 1 } else { -1 };
                let r = |k: isize| row((j as isize + s * k) as usize);
                let (r0, r1, r2, r3) = (r(0), r(1), r(2), r(3));
                for i in 0..nx {
                    dst[i] = c * (2.0 * r0[i] - 5.0 * r1[i] + 4.0 * r2[i] - r3[i]);
                }
            } else {
                let (a, b, d) = (row(j - 1), row(j), row(j + 1));
                for i in 0..nx {
                    dst[i] = c * (a[i] - 2.0 * b[i] + d[i]);
                }
            }
        });
        out
    }
}

/// Gradient; a field of shape `(m, n)` maps to shape `(m n, 2)`, entry
/// `[c * 2 + d]` holding `d_d f_c`.
pub fn fd_gradient(f: &Field) -> Result<Field> {
    let p = Plane::of(f.grid());
    p.check()?;
    let nc = f.comps();
    let mut planes = Vec::with_capacity(2 * nc);
    for c in 0..nc {
        let fc = f.plane(c);
        planes.push(p.dx(&fc));
        planes.push(p.dy(&fc));
    }
    Ok(Field::from_planes(
        f.grid(),
        Shape {
            rows: nc,
            cols: 2,
        },
        &planes,
    ))
}

/// Hessian; shape `(m n, 4)` with entries `[d11, d12, d21, d22]` per component.
pub fn fd_hessian(f: &Field) -> Result<Field> {
    let p = Plane::of(f.grid());
    p.check()?;
    let nc = f.comps();
    let mut planes = Vec::with_capacity(4 * nc);
    for c in 0..nc {
        let fc = f.plane(c);
        let mixed = p.dx(&p.dy(&fc));
        planes.push(p.dxx(&fc));
        planes.push(mixed.clone());
        planes.push(mixed);
        planes.push(p.dyy(&fc));
    }
    Ok(Field::from_planes(
        f.grid(),
        Shape {
            rows: nc,
            cols: 4,
        },
        &planes,
    ))
}

fn expect_shape(f: &Field, shape: Shape) -> Result<()> {
    if f.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape,
            got: f.shape(),
        });
    }
    Ok(())
}

fn expect_vector(f: &Field) -> Result<usize> {
    if f.shape().cols != 1 {
        return Err(Error::ShapeMismatch {
            expected: Shape::vector(f.shape().rows),
            got: f.shape(),
        });
    }
    Ok(f.shape().rows)
}

/// Symmetric gradient of a planar vector field.
pub fn sym_grad(w: &Field) -> Result<Field> {
    expect_shape(w, Shape::vector(2))?;
    let g = fd_gradient(w)?;
    let mut out = Field::zeros(w.grid(), Shape::MATRIX2);
    for (o, d) in out.data_mut().chunks_mut(4).zip(g.data().chunks(4)) {
        let off = 0.5 * (d[1] + d[2]);
        o.copy_from_slice(&[d[0], off, off, d[3]]);
    }
    Ok(out)
}

/// Half the pull-back metric, `(grad v)^T grad v / 2`, for `v` in `R^k`.
pub fn half_gram(v: &Field) -> Result<Field> {
    let k = expect_vector(v)?;
    let g = fd_gradient(v)?;
    let mut out = Field::zeros(v.grid(), Shape::MATRIX2);
    for (o, d) in out.data_mut().chunks_mut(4).zip(g.data().chunks(2 * k)) {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for comp in d.chunks(2) {
            a += comp[0] * comp[0];
            b += comp[0] * comp[1];
            c += comp[1] * comp[1];
        }
        o.copy_from_slice(&[0.5 * a, 0.5 * b, 0.5 * b, 0.5 * c]);
    }
    Ok(out)
}

/// `(grad v)^T grad v / 2 + sym grad w`.
pub fn metric(v: &Field, w: &Field) -> Result<Field> {
    if !v.grid().same_nodes(w.grid()) {
        return Err(Error::GridMismatch);
    }
    let mut m = half_gram(v)?;
    m.axpy(1.0, &sym_grad(w)?)?;
    Ok(m)
}

/// `A - metric(v, w)`.
pub fn deficit(v: &Field, w: &Field, a: &Field) -> Result<Field> {
    expect_shape(a, Shape::MATRIX2)?;
    a.sub(&metric(v, w)?)
}

/// Sum over components of `det grad^2 v_c`.
pub fn det_hessian(v: &Field) -> Result<Field> {
    let k = expect_vector(v)?;
    let hess = fd_hessian(v)?;
    let mut out = Field::zeros(v.grid(), Shape::SCALAR);
    for (o, d) in out.data_mut().iter_mut().zip(hess.data().chunks(4 * k)) {
        *o = d.chunks(4).map(|m| m[0] * m[3] - m[1] * m[2]).sum();
    }
    Ok(out)
}

/// `d22 A11 - 2 d12 A12 + d11 A22` for a symmetric matrix field.
pub fn curl_curl(a: &Field) -> Result<Field> {
    expect_shape(a, Shape::MATRIX2)?;
    let p = Plane::of(a.grid());
    p.check()?;
    let a11 = a.plane(0);
    let a12: Vec<f64> = a
        .plane(1)
        .iter()
        .zip(a.plane(2))
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    let a22 = a.plane(3);
    let t1 = p.dyy(&a11);
    let t2 = p.dx(&p.dy(&a12));
    let t3 = p.dxx(&a22);
    let out: Vec<f64> = (0..t1.len())
        .map(|n| t1[n] - 2.0 * t2[n] + t3[n])
        .collect();
    Field::from_vec(a.grid(), Shape::SCALAR, out)
}
