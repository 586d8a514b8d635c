//! Splitting a matrix field into a symmetric gradient and a conformal part.
//!
//! For a symmetric `D` the decomposition returns `psi_bar` and `a_bar` with
//! `D + sym grad psi_bar - a_bar Id = 0` at every interior node, using the
//! finite-difference operators of [`crate::calculus`]. Writing
//! `psi_bar = (-D1 p1 - D2 p2, D2 p1 - D1 p2)` reduces the identity to the two
//! Poisson problems `L p1 = D11 - D22` and `L p2 = 2 D12` for the composed
//! Laplacian `L`. Each potential is a cubic lift matching its right-hand side
//! at the four corners plus a Dirichlet correction; the lift removes the
//! corner incompatibility that would otherwise make `a_bar` singular.
//! The map is linear, sends `Id` to `(0, 1)` and a constant diagonal
//! `diag(p, q)` to `(-(p - q) x, 0)` and `q`.

use serde::{Deserialize, Serialize};

use crate::calculus::{sym_grad, Plane};
use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::grid::Grid2;
use crate::norms::holder_norm;
use crate::poisson::ConsistentLaplacian;

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub psi_bar: Field,
    pub a_bar: Field,
}

/// Cached solver for one grid.
#[derive(Clone, Debug)]
pub struct ConformalSolver {
    grid: Grid2,
    lap: ConsistentLaplacian,
}

impl ConformalSolver {
    pub fn new(grid: &Grid2) -> Result<Self> {
        Ok(Self {
            grid: grid.clone(),
            lap: ConsistentLaplacian::new(grid)?,
        })
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn decompose(&self, d: &Field) -> Result<Decomposition> {
        if d.shape() != Shape::MATRIX2 {
            return Err(Error::ShapeMismatch {
                expected: Shape::MATRIX2,
                got: d.shape(),
            });
        }
        if !d.grid().same_nodes(&self.grid) {
            return Err(Error::GridMismatch);
        }
        let (d11, d12, d21, d22) = (d.plane(0), d.plane(1), d.plane(2), d.plane(3));
        let r1: Vec<f64> = d11.iter().zip(&d22).map(|(a, b)| a - b).collect();
        let r2: Vec<f64> = d12.iter().zip(&d21).map(|(a, b)| a + b).collect();
        let p1 = self.potential(&r1)?;
        let p2 = self.potential(&r2)?;

        let pl = Plane::of(&self.grid);
        let (p1x, p1y) = (pl.dx(&p1), pl.dy(&p1));
        let (p2x, p2y) = (pl.dx(&p2), pl.dy(&p2));
        let s1: Vec<f64> = (0..p1.len()).map(|n| -p1x[n] - p2y[n]).collect();
        let s2: Vec<f64> = (0..p1.len()).map(|n| p1y[n] - p2x[n]).collect();
        let s1x = pl.dx(&s1);
        let a_bar: Vec<f64> = d11.iter().zip(&s1x).map(|(a, b)| a + b).collect();

        let psi_bar = Field::from_planes(&self.grid, Shape::vector(2), &[s1, s2]);
        let a_bar = Field::from_vec(&self.grid, Shape::SCALAR, a_bar)?;
        if !psi_bar.is_finite() || !a_bar.is_finite() {
            return Err(Error::NonFinite("conformal decomposition".into()));
        }
        Ok(Decomposition { psi_bar, a_bar })
    }

    /// `psi` with `L psi = r` at interior nodes.
    fn potential(&self, r: &[f64]) -> Result<Vec<f64>> {
        let lift = self.corner_lift(r);
        let l_lift = self.lap.apply(&lift);
        let rest: Vec<f64> = r.iter().zip(&l_lift).map(|(a, b)| a - b).collect();
        let corr = self.lap.solve(&rest)?;
        Ok(lift.iter().zip(&corr).map(|(a, b)| a + b).collect())
    }

    /// Cubic whose continuum Laplacian is the bilinear interpolant of the
    /// corner values of `r`.
    fn corner_lift(&self, r: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let (nx, ny, h) = (g.nx(), g.ny(), g.h());
        let (lx, ly) = ((nx - 1) as f64 * h, (ny - 1) as f64 * h);
        let r00 = r[0];
        let r10 = r[nx - 1];
        let r01 = r[(ny - 1) * nx];
        let r11 = r[ny * nx - 1];
        let c0 = r00;
        let c1 = (r10 - r00) / lx;
        let c2 = (r01 - r00) / ly;
        let c3 = (r11 - r10 - r01 + r00) / (lx * ly);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            let y = j as f64 * h;
            for i in 0..nx {
                let x = i as f64 * h;
                out[j * nx + i] = c0 * x * x / 2.0
                    + c1 * x * x * x / 6.0
                    + c2 * y * y * y / 6.0
                    + c3 * x * x * x * y / 6.0;
            }
        }
        out
    }
}

/// One-shot decomposition on `d`'s grid.
pub fn decompose(d: &Field) -> Result<Decomposition> {
    ConformalSolver::new(d.grid())?.decompose(d)
}

/// `max |D + sym grad psi_bar - a_bar Id|` over nodes at least `skip` layers
/// inside the grid.
pub fn identity_residual(d: &Field, dec: &Decomposition, skip: usize) -> Result<f64> {
    let mut r = d.add(&sym_grad(&dec.psi_bar)?)?;
    let a = &dec.a_bar;
    for (node, &s) in r.data_mut().chunks_mut(4).zip(a.data()) {
        node[0] -= s;
        node[3] -= s;
    }
    let inner = d.grid().shrink(skip)?;
    Ok(crate::norms::sup(&r.restrict(&inner)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct R0Estimate {
    pub r0: f64,
    /// Index of the probe that binds at `r0`.
    pub binding_probe: usize,
    /// `min a_bar(Id + 2 r0 P)` over probes; at most 1/2 when `r0` is sharp.
    pub min_a_bar_at_double: f64,
}

/// Largest `r` keeping `min a_bar(Id + r P) > 1/2` over a fixed probe family of
/// bump-modulated matrices with `||P||_{0,gamma} = 1`, found by bisection.
pub fn estimate_r0(grid: &Grid2, gamma: f64) -> Result<R0Estimate> {
    let solver = ConformalSolver::new(grid)?;
    let probes = probe_family(grid, gamma)?;
    let min_abar = |r: f64, p: &Field| -> Result<f64> {
        let mut d = p.scaled(r);
        d.add_identity(1.0)?;
        Ok(solver.decompose(&d)?.a_bar.min_value())
    };
    let ok = |r: f64| -> Result<bool> {
        for p in &probes {
            if min_abar(r, p)? <= 0.5 {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let mut hi = 1.0;
    while ok(hi)? {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Solver("probe family never binds".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut binding_probe = 0;
    let mut min_double = f64::INFINITY;
    for (n, p) in probes.iter().enumerate() {
        let m = min_abar(2.0 * lo, p)?;
        if m < min_double {
            min_double = m;
            binding_probe = n;
        }
    }
    Ok(R0Estimate {
        r0: lo,
        binding_probe,
        min_a_bar_at_double: min_double,
    })
}

fn probe_family(grid: &Grid2, gamma: f64) -> Result<Vec<Field>> {
    let om = grid.omega();
    let c = om.center();
    let rad = 0.45 * om.width().min(om.height());
    let bump = move |x: f64, y: f64| -> f64 {
        let t = ((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (rad * rad);
        if t < 1.0 {
            (1.0 - 1.0 / (1.0 - t)).exp()
        } else {
            0.0
        }
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let patterns: [[f64; 3]; 6] = [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.0, s, 0.0],
        [0.0, -s, 0.0],
    ];
    patterns
        .iter()
        .map(|m| {
            let m = *m;
            let p = Field::sym_fn(grid, move |x, y| {
                let b = bump(x, y);
                [b * m[0], b * m[1], b * m[2]]
            });
            let n = holder_norm(&p, gamma)?;
            Ok(p.scaled(1.0 / n))
        })
        .collect()
}
