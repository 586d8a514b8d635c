//! Canonical initial data `(v, w, A)` for the experiment pipelines.

use std::f64::consts::{PI, TAU};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vkflex::calculus::half_gram;
use vkflex::poisson::solve_dirichlet;
use vkflex::{Field, Grid2, Shape};

use crate::config::{ProblemSection, ScalarF, Source};

#[derive(Clone, Debug)]
pub struct Problem {
    pub v: Field,
    pub w: Field,
    pub a: Field,
    /// Monge-Ampère right-hand side `-curl curl A`, when the problem has one.
    pub f: Option<Field>,
}

/// `A = (phi + c_pad) Id` with `Delta phi = -f` and `phi = 0` on the grid
/// boundary, so that `-curl curl A = f` at interior nodes.
pub fn f_to_a(f: &Field, c_pad: f64) -> Result<Field> {
    if !(c_pad > 0.0) {
        bail!("c_pad must be positive, got {c_pad}");
    }
    let phi = solve_dirichlet(&f.scaled(-1.0)).context("solving for the conformal factor")?;
    let mut a = Field::zeros(f.grid(), Shape::MATRIX2);
    for (m, &p) in a.data_mut().chunks_mut(4).zip(phi.data()) {
        m[0] = p + c_pad;
        m[3] = p + c_pad;
    }
    Ok(a)
}

pub fn scalar_f(grid: &Grid2, kind: ScalarF) -> Field {
    let [x0, y0] = grid.origin();
    let wx = (grid.nx() - 1) as f64 * grid.h();
    let wy = (grid.ny() - 1) as f64 * grid.h();
    Field::scalar_fn(grid, move |x, y| match kind {
        ScalarF::Zero => 0.0,
        ScalarF::One => 1.0,
        ScalarF::Sine => (PI * (x - x0) / wx).sin() * (PI * (y - y0) / wy).sin(),
    })
}

/// Phase offsets of the wavy problem; zero for seed 0.
fn phases(seed: u64) -> [f64; 2] {
    if seed == 0 {
        return [0.0, 0.0];
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    [r.random_range(0.0..TAU), r.random_range(0.0..TAU)]
}

pub fn build(p: &ProblemSection, grid: &Grid2, seed: u64) -> Result<Problem> {
    let k = p.k;
    let zero_v = Field::zeros(grid, Shape::vector(k));
    let w = Field::zeros(grid, Shape::vector(2));
    match p.source {
        Source::Constant => {
            let [a11, a12, a22] = p.constant;
            let a = Field::constant(grid, Shape::MATRIX2, &[a11, a12, a12, a22]);
            let f = scalar_f(grid, ScalarF::Zero);
            Ok(Problem {
                v: zero_v,
                w,
                a,
                f: Some(f),
            })
        }
        Source::Wavy => {
            let [p1, p2] = phases(seed);
            let v = Field::from_fn(grid, Shape::vector(k), move |x, y, o| {
                o[0] = 0.3 * (3.0 * x + 1.0 + p1).sin() * (2.0 * y).cos();
                if k > 1 {
                    o[1] = 0.3 * (x - 2.0 * y + p2).cos();
                }
            });
            let s = p.deficit_scale;
            let d = Field::sym_fn(grid, move |x, y| {
                let d = s * (1.0 + 0.2 * (x + y).sin());
                [d, 0.1 * s * (x - y).cos(), d]
            });
            let a = half_gram(&v)?.add(&d)?;
            Ok(Problem { v, w, a, f: None })
        }
        Source::Scalar => {
            let f = scalar_f(grid, p.f);
            let a = f_to_a(&f, p.c_pad)?;
            Ok(Problem {
                v: zero_v,
                w,
                a,
                f: Some(f),
            })
        }
        Source::Preset => bail!("preset problem sources must be resolved before building"),
    }
}
