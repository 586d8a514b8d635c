//! Convolution with the compactly supported bump `exp(-1 / (1 - |x|^2 / l^2))`.
//!
//! The kernel is sampled on the grid and renormalised to unit discrete mass.
//! Outputs live on the input grid shrunk by `ceil(l / h)` node layers, so every
//! output value uses only genuine input samples.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::grid::{nodes_for, Grid2};
use crate::par;

/// Kernels with at most this stencil radius are summed directly.
const DIRECT_RADIUS: usize = 4;

#[derive(Clone, Debug)]
pub struct Mollifier {
    l: f64,
    h: f64,
    radius: usize,
    shrink: usize,
    weights: Vec<f64>,
}

impl Mollifier {
    pub fn new(l: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !l.is_finite() {
            return Err(Error::InvalidParameter(format!("scale {l}, spacing {h}")));
        }
        if l < 2.0 * h * (1.0 - 1e-12) {
            return Err(Error::KernelUnresolved { l, h });
        }
        let radius = (l / h + 1e-12).floor() as usize;
        let side = 2 * radius + 1;
        let mut weights = vec![0.0; side * side];
        let r = radius as isize;
        for b in -r..=r {
            for a in -r..=r {
                let rho2 = ((a * a + b * b) as f64) * h * h / (l * l);
                if rho2 < 1.0 {
                    weights[((b + r) as usize) * side + (a + r) as usize] =
                        (-1.0 / (1.0 - rho2)).exp();
                }
            }
        }
        let mass: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= mass);
        Ok(Self {
            l,
            h,
            radius,
            shrink: nodes_for(l, h),
            weights,
        })
    }

    pub fn scale(&self) -> f64 {
        self.l
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Node layers removed from each side of the input grid.
    pub fn shrink_nodes(&self) -> usize {
        self.shrink
    }

    /// Normalised weights on the `(2r + 1)^2` stencil, row-major in `y`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_x phi(x) x_1^2`, equal to the same moment in `x_2`.
    pub fn second_moment(&self) -> f64 {
        let side = 2 * self.radius + 1;
        let r = self.radius as isize;
        self.weights
            .iter()
            .enumerate()
            .map(|(n, w)| {
                let a = (n % side) as isize - r;
                w * (a as f64 * self.h).powi(2)
            })
            .sum()
    }

    pub fn output_grid(&self, grid: &Grid2) -> Result<Grid2> {
        if (grid.h() - self.h).abs() > 1e-12 * self.h {
            return Err(Error::GridMismatch);
        }
        let out = grid.shrink(self.shrink)?;
        if out.margin() < -1e-9 * grid.h() {
            return Err(Error::InsufficientMargin {
                needed: self.shrink as f64 * grid.h(),
                available: grid.margin(),
            });
        }
        Ok(out)
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        let out_grid = self.output_grid(f.grid())?;
        let planes: Vec<Vec<f64>> = if self.radius <= DIRECT_RADIUS {
            (0..f.comps())
                .map(|c| self.direct(f.grid(), &f.plane(c), &out_grid))
                .collect()
        } else {
            self.spectral(f, &out_grid)
        };
        Ok(Field::from_planes(&out_grid, f.shape(), &planes))
    }

    fn direct(&self, grid: &Grid2, src: &[f64], out_grid: &Grid2) -> Vec<f64> {
        let (nx, r, d) = (grid.nx(), self.radius, self.shrink);
        let side = 2 * r + 1;
        let mut out = vec![0.0; out_grid.len()];
        let onx = out_grid.nx();
        par::for_each_row(&mut out, onx, |j, row| {
            for (i, o) in row.iter_mut().enumerate() {
                let (ci, cj) = (i + d, j + d);
                let mut acc = 0.0;
                for b in 0..side {
                    let base = (cj + b - r) * nx + ci - r;
                    let wrow = &self.weights[b * side..(b + 1) * side];
                    for (a, w) in wrow.iter().enumerate() {
                        acc += w * src[base + a];
                    }
                }
                *o = acc;
            }
        });
        out
    }

    /// Cyclic correlation of full size; the retained window never wraps.
    fn spectral(&self, f: &Field, out_grid: &Grid2) -> Vec<Vec<f64>> {
        let grid = f.grid();
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut planner = FftPlanner::new();
        let fx = planner.plan_fft_forward(nx);
        let fy = planner.plan_fft_forward(ny);
        let ix = planner.plan_fft_inverse(nx);
        let iy = planner.plan_fft_inverse(ny);

        let side = 2 * self.radius + 1;
        let r = self.radius as isize;
        let mut kernel = vec![Complex64::new(0.0, 0.0); nx * ny];
        for (n, &w) in self.weights.iter().enumerate() {
            let a = (n % side) as isize - r;
            let b = (n / side) as isize - r;
            let ki = (-a).rem_euclid(nx as isize) as usize;
            let kj = (-b).rem_euclid(ny as isize) as usize;
            kernel[kj * nx + ki] = Complex64::new(w, 0.0);
        }
        fft2(&mut kernel, nx, ny, &fx, &fy);

        let nc = f.comps();
        let scale = 1.0 / (nx * ny) as f64;
        let d = self.shrink;
        let (onx, ony) = (out_grid.nx(), out_grid.ny());
        let mut planes = vec![Vec::new(); nc];
        for c in (0..nc).step_by(2) {
            let re = f.plane(c);
            let im = if c + 1 < nc {
                f.plane(c + 1)
            } else {
                vec![0.0; nx * ny]
            };
            let mut z: Vec<Complex64> = re
                .iter()
                .zip(&im)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect();
            fft2(&mut z, nx, ny, &fx, &fy);
            z.iter_mut().zip(&kernel).for_each(|(a, k)| *a *= k);
            fft2(&mut z, nx, ny, &ix, &iy);
            let mut p_re = vec![0.0; onx * ony];
            let mut p_im = vec![0.0; onx * ony];
            for j in 0..ony {
                for i in 0..onx {
                    let v = z[(j + d) * nx + i + d] * scale;
                    p_re[j * onx + i] = v.re;
                    p_im[j * onx + i] = v.im;
                }
            }
            planes[c] = p_re;
            if c + 1 < nc {
                planes[c + 1] = p_im;
            }
        }
        planes
    }
}

fn fft2(z: &mut [Complex64], nx: usize, ny: usize, fx: &Arc<dyn Fft<f64>>, fy: &Arc<dyn Fft<f64>>) {
    fft_rows(z, nx, fx);
    let mut t = transpose(z, nx, ny);
    fft_rows(&mut t, ny, fy);
    let back = transpose(&t, ny, nx);
    z.copy_from_slice(&back);
}

fn fft_rows(z: &mut [Complex64], n: usize, plan: &Arc<dyn Fft<f64>>) {
    debug_assert_eq!(z.len() % n, 0);
    #[cfg(feature = "parallel")]
    if par::is_parallel() {
        use rayon::prelude::*;
        z.par_chunks_mut(n).for_each(|row| plan.process(row));
        return;
    }
    plan.process(z);
}

fn transpose(z: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            t[i * ny + j] = z[j * nx + i];
        }
    }
    t
}

/// `phi_l * f` on the shrunk grid.
pub fn mollify(f: &Field, l: f64) -> Result<Field> {
    Mollifier::new(l, f.grid().h())?.apply(f)
}

/// `phi_l * (f g) - (phi_l * f)(phi_l * g)` for scalar fields.
pub fn commutator(f: &Field, g: &Field, l: f64) -> Result<Field> {
    for x in [f, g] {
        if x.shape() != Shape::SCALAR {
            return Err(Error::ShapeMismatch {
                expected: Shape::SCALAR,
                got: x.shape(),
            });
        }
    }
    let m = Mollifier::new(l, f.grid().h())?;
    let fg = f.mul_scalar(g)?;
    let lhs = m.apply(&fg)?;
    let rhs = m.apply(f)?.mul_scalar(&m.apply(g)?)?;
    lhs.sub(&rhs)
}
