#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vkflex::{Field, Grid2, Rect, Shape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_grid(n: usize, margin: f64) -> Grid2 {
    Grid2::new(Rect::unit(), margin, n).unwrap()
}

/// Random trigonometric mode `c sin(p x + q y + r)` with its analytic
/// gradient and Hessian.
#[derive(Clone, Copy, Debug)]
pub struct Mode {
    pub c: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl Mode {
    pub fn random(rng: &mut impl Rng, amp: f64, freq: f64) -> Self {
        Self {
            c: amp * rng.random_range(-1.0..1.0),
            p: freq * rng.random_range(-1.0..1.0),
            q: freq * rng.random_range(-1.0..1.0),
            r: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.c * (self.p * x + self.q * y + self.r).sin()
    }

    pub fn grad(&self, x: f64, y: f64) -> [f64; 2] {
        let c = self.c * (self.p * x + self.q * y + self.r).cos();
        [c * self.p, c * self.q]
    }

    pub fn hess(&self, x: f64, y: f64) -> [f64; 4] {
        let s = -self.value(x, y);
        [s * self.p * self.p, s * self.p * self.q, s * self.p * self.q, s * self.q * self.q]
    }
}

/// Sum of random modes per component.
#[derive(Clone, Debug)]
pub struct Smooth {
    pub comps: Vec<Vec<Mode>>,
}

impl Smooth {
    pub fn random(rng: &mut impl Rng, comps: usize, modes: usize, amp: f64, freq: f64) -> Self {
        Self {
            comps: (0..comps)
                .map(|_| (0..modes).map(|_| Mode::random(rng, amp, freq)).collect())
                .collect(),
        }
    }

    pub fn value(&self, c: usize, x: f64, y: f64) -> f64 {
        self.comps[c].iter().map(|m| m.value(x, y)).sum()
    }

    pub fn grad(&self, c: usize, x: f64, y: f64) -> [f64; 2] {
        self.comps[c].iter().fold([0.0; 2], |acc, m| {
            let g = m.grad(x, y);
            [acc[0] + g[0], acc[1] + g[1]]
        })
    }

    pub fn hess(&self, c: usize, x: f64, y: f64) -> [f64; 4] {
        self.comps[c].iter().fold([0.0; 4], |acc, m| {
            let h = m.hess(x, y);
            [acc[0] + h[0], acc[1] + h[1], acc[2] + h[2], acc[3] + h[3]]
        })
    }

    pub fn field(&self, g: &Grid2) -> Field {
        let s = self.clone();
        let n = self.comps.len();
        Field::from_fn(g, Shape::vector(n), move |x, y, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = s.value(c, x, y);
            }
        })
    }

    /// Symmetric matrix field from three components `(m11, m12, m22)`.
    pub fn sym_field(&self, g: &Grid2) -> Field {
        assert_eq!(self.comps.len(), 3);
        let s = self.clone();
        Field::sym_fn(g, move |x, y| [s.value(0, x, y), s.value(1, x, y), s.value(2, x, y)])
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
