//! Discrete sup norms and Hölder seminorms.
//!
//! Pointwise values are measured with the Euclidean (Frobenius) norm over
//! components. `c1` and `c2` are cumulative: `c1 = c0 + sup|grad f|` and
//! `c2 = c1 + sup|grad^2 f|`, so `c0 <= c1 <= c2`.

use serde::{Deserialize, Serialize};

use crate::calculus::{fd_gradient, fd_hessian};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

/// `max_x |f(x)|`.
pub fn sup(f: &Field) -> f64 {
    par::max_over(f.grid().len(), |n| f.node_norm(n))
}

/// `max_x |grad f(x)|`.
pub fn grad_sup(f: &Field) -> Result<f64> {
    Ok(sup(&fd_gradient(f)?))
}

/// `max_x |grad^2 f(x)|`.
pub fn hess_sup(f: &Field) -> Result<f64> {
    Ok(sup(&fd_hessian(f)?))
}

pub fn norms(f: &Field) -> Result<NormReport> {
    let c0 = sup(f);
    let c1 = c0 + grad_sup(f)?;
    let c2 = c1 + hess_sup(f)?;
    Ok(NormReport { c0, c1, c2 })
}

/// `c0 + sup|grad f|`.
pub fn c1_norm(f: &Field) -> Result<f64> {
    Ok(sup(f) + grad_sup(f)?)
}

/// Dyadic Hölder quotient `max |f(x) - f(y)| / |x - y|^gamma`.
///
/// Pairs are taken along the offsets `(s, 0)`, `(0, s)`, `(s, s)` and
/// `(s, -s)` for `s = 1, 2, 4, ...` nodes up to the grid extent.
pub fn holder(f: &Field, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Hölder exponent {gamma} outside (0, 1]"
        )));
    }
    let g = f.grid();
    let (nx, ny, h) = (g.nx(), g.ny(), g.h());
    let nc = f.comps();
    let data = f.data();
    let diff = |a: usize, b: usize| -> f64 {
        let (pa, pb) = (&data[a * nc..(a + 1) * nc], &data[b * nc..(b + 1) * nc]);
        pa.iter()
            .zip(pb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut steps = Vec::new();
    let mut s = 1usize;
    while s < nx.max(ny) {
        steps.push(s);
        s *= 2;
    }
    let best = par::max_over(ny, |j| {
        let mut m: f64 = 0.0;
        for &s in &steps {
            let axis = (s as f64 * h).powf(gamma);
            let diag = (s as f64 * h * std::f64::consts::SQRT_2).powf(gamma);
            for i in 0..nx {
                let here = j * nx + i;
                if i + s < nx {
                    m = m.max(diff(here, here + s) / axis);
                }
                if j + s < ny {
                    m = m.max(diff(here, here + s * nx) / axis);
                    if i + s < nx {
                        m = m.max(diff(here, here + s * nx + s) / diag);
                    }
                    if i >= s {
                        m = m.max(diff(here, here + s * nx - s) / diag);
                    }
                }
            }
        }
        m
    });
    Ok(best)
}

/// `c0 + [f]_gamma`.
pub fn holder_norm(f: &Field, gamma: f64) -> Result<f64> {
    Ok(sup(f) + holder(f, gamma)?)
}
