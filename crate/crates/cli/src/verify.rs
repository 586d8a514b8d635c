//! Residuals of the von Kármán and the weak Monge-Ampère forms.
//!
//! The weak form pairs `Det grad^2 v - f` with test functions `psi` after
//! moving both derivatives onto `psi`:
//! `int (Det grad^2 v) psi = -int H : cof grad^2 psi` with
//! `H = (grad v)^T grad v / 2`, since `sym grad w` pairs to zero.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use vkflex::calculus::{deficit, half_gram};
use vkflex::norms::sup;
use vkflex::{Field, Grid2, Rect};

/// Version tag of [`battery`]; bump whenever a bump changes.
pub const BATTERY_VERSION: u32 = 1;

/// Tensor-product bump `b((x - cx) / r) b((y - cy) / r)` with
/// `b(t) = (1 - t^2)^4` on `|t| < 1`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
}

fn profile(t: f64) -> [f64; 3] {
    if t.abs() >= 1.0 {
        return [0.0; 3];
    }
    let s = 1.0 - t * t;
    [s.powi(4), -8.0 * t * s.powi(3), -8.0 * s.powi(3) + 48.0 * t * t * s * s]
}

impl Bump {
    /// `(psi, psi_11, psi_12, psi_22)`.
    pub fn eval(&self, x: f64, y: f64) -> [f64; 4] {
        let r = self.radius;
        let [bx, dbx, ddbx] = profile((x - self.center[0]) / r);
        let [by, dby, ddby] = profile((y - self.center[1]) / r);
        [bx * by, ddbx * by / (r * r), dbx * dby / (r * r), bx * ddby / (r * r)]
    }
}

/// Five bumps inside `omega`: one centred and four in the quadrants.
pub fn battery(omega: Rect) -> Vec<Bump> {
    let (w, h) = (omega.width(), omega.height());
    let r = 0.2 * w.min(h);
    let at = |u: f64, v: f64| [omega.x_min + u * w, omega.y_min + v * h];
    vec![
        Bump { center: at(0.5, 0.5), radius: r },
        Bump { center: at(0.28, 0.28), radius: r },
        Bump { center: at(0.72, 0.28), radius: r },
        Bump { center: at(0.28, 0.72), radius: r },
        Bump { center: at(0.72, 0.72), radius: r },
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaResiduals {
    /// `|A - metric(v, w)|_0`.
    pub vk: f64,
    /// Largest normalised weak residual over the battery.
    pub weak: f64,
    /// Per-bump `|int (Det grad^2 v - f) psi| / int |cof grad^2 psi|`.
    pub per_bump: Vec<f64>,
    pub battery_version: u32,
}

fn covers(grid: &Grid2, b: &Bump) -> bool {
    let [x0, y0] = grid.origin();
    let x1 = grid.x(grid.nx() - 1);
    let y1 = grid.y(grid.ny() - 1);
    b.center[0] - b.radius >= x0
        && b.center[0] + b.radius <= x1
        && b.center[1] - b.radius >= y0
        && b.center[1] + b.radius <= y1
}

/// VK and weak Monge-Ampère residuals of `(v, w)` against `A` and `f`.
pub fn verify_ma(v: &Field, w: &Field, a: &Field, f: &Field) -> Result<MaResiduals> {
    let grid = v.grid();
    if !grid.same_nodes(f.grid()) {
        bail!("f lives on a different grid from v");
    }
    let vk = sup(&deficit(v, w, a)?);
    let hg = half_gram(v)?;
    let h2 = grid.h() * grid.h();
    let mut per_bump = Vec::new();
    for b in battery(grid.omega()) {
        if !covers(grid, &b) {
            bail!("test function at {:?} leaves the grid", b.center);
        }
        let (mut pairing, mut mass) = (0.0, 0.0);
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let [x, y] = grid.point(i, j);
                let [psi, p11, p12, p22] = b.eval(x, y);
                if psi == 0.0 && p11 == 0.0 && p22 == 0.0 {
                    continue;
                }
                let m = hg.at(i, j);
                let cof = m[0] * p22 - (m[1] + m[2]) * p12 + m[3] * p11;
                pairing += (-cof - f.at(i, j)[0] * psi) * h2;
                mass += (p22 * p22 + 2.0 * p12 * p12 + p11 * p11).sqrt() * h2;
            }
        }
        per_bump.push(pairing.abs() / mass);
    }
    let weak = per_bump.iter().cloned().fold(0.0, f64::max);
    Ok(MaResiduals {
        vk,
        weak,
        per_bump,
        battery_version: BATTERY_VERSION,
    })
}
