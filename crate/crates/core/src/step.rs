//! A single oscillatory correction.
//!
//! Given a non-negative amplitude `a`, unit directions `eta` in `R^2` and `E`
//! in `R^k`, and a frequency `lambda`, with `t = <x, eta>`:
//!
//! ```text
//! v' = v + a Gamma(lambda t) E / lambda
//! w' = w - a Gamma(lambda t) grad<v, E> / lambda
//!        - a Gamma_bar(lambda t) grad a / lambda^2
//!        + a^2 Gamma_bar_dot(lambda t) eta / lambda
//! ```
//!
//! with `Gamma(t) = 2 sin t`, `Gamma_bar(t) = -cos(2t) / 2` and
//! `Gamma_bar_dot(t) = -sin(2t) / 2`. Then
//! `metric(v', w') - metric(v, w) - a^2 eta (x) eta` equals the closed-form
//! error returned by [`step_error`] up to discretisation.

use serde::{Deserialize, Serialize};

use crate::calculus::{fd_gradient, fd_hessian, metric};
use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::norms::sup;

/// Largest admissible `lambda * h`.
pub const MAX_LAMBDA_H: f64 = 0.25;

/// How the `1 / lambda` prefactors are chosen.
///
/// `Exact` uses `lambda` itself. `GridConsistent` replaces it by the effective
/// wave numbers of the central difference, `sin(lambda eta_j h) / h`, so the
/// measured metric gain equals `a^2 eta (x) eta` exactly for constant `a` and
/// axis-aligned or diagonal `eta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Exact,
    GridConsistent,
}

pub fn gamma(t: f64) -> f64 {
    2.0 * t.sin()
}

pub fn gamma_bar(t: f64) -> f64 {
    -0.5 * (2.0 * t).cos()
}

pub fn gamma_bar_dot(t: f64) -> f64 {
    -0.5 * (2.0 * t).sin()
}

/// `e_c` in `R^k`.
pub fn unit_axis(k: usize, c: usize) -> Vec<f64> {
    let mut e = vec![0.0; k];
    e[c] = 1.0;
    e
}

#[derive(Clone, Debug)]
pub struct StepSpec {
    pub amplitude: Field,
    pub direction: [f64; 2],
    pub axis: Vec<f64>,
    pub lambda: f64,
    pub profile: Profile,
}

impl StepSpec {
    pub fn new(amplitude: Field, direction: [f64; 2], axis: Vec<f64>, lambda: f64) -> Self {
        Self {
            amplitude,
            direction,
            axis,
            lambda,
            profile: Profile::Exact,
        }
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self
    }

    fn validate(&self, v: &Field) -> Result<()> {
        let h = v.grid().h();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("frequency {}", self.lambda)));
        }
        if self.lambda * h > MAX_LAMBDA_H * (1.0 + 1e-12) {
            return Err(Error::Nyquist {
                lambda: self.lambda,
                h,
                product: self.lambda * h,
                max: MAX_LAMBDA_H,
            });
        }
        let k = v.shape().rows;
        if v.shape().cols != 1 {
            return Err(Error::ShapeMismatch {
                expected: Shape::vector(k),
                got: v.shape(),
            });
        }
        if self.axis.len() != k {
            return Err(Error::InvalidParameter(format!(
                "codimension axis has {} entries for k = {k}",
                self.axis.len()
            )));
        }
        let ne = self.axis.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nd = self.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (ne - 1.0).abs() > 1e-9 || (nd - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "directions must be unit vectors (|E| = {ne}, |eta| = {nd})"
            )));
        }
        if self.amplitude.shape() != Shape::SCALAR {
            return Err(Error::ShapeMismatch {
                expected: Shape::SCALAR,
                got: self.amplitude.shape(),
            });
        }
        if !self.amplitude.grid().same_nodes(v.grid()) {
            return Err(Error::GridMismatch);
        }
        let amin = self.amplitude.min_value();
        if amin < 0.0 || !self.amplitude.is_finite() {
            return Err(Error::Precondition(format!(
                "amplitude must be finite and non-negative (min {amin})"
            )));
        }
        Ok(())
    }

    /// Reciprocal prefactors `(1/lambda_1, 1/lambda_2, 1/lambda_1^2)` for the
    /// `Gamma`, `Gamma_bar_dot` and `Gamma_bar` terms.
    fn prefactors(&self, h: f64) -> (f64, f64, f64) {
        let l = self.lambda;
        match self.profile {
            Profile::Exact => (1.0 / l, 1.0 / l, 1.0 / (l * l)),
            Profile::GridConsistent => {
                let eta = self.direction;
                let k1: f64 = eta.iter().map(|&e| e * (l * e * h).sin() / h).sum();
                let k2: f64 = eta
                    .iter()
                    .map(|&e| e * (2.0 * l * e * h).sin() / (2.0 * h))
                    .sum();
                (1.0 / k1, 1.0 / k2, 1.0 / (k1 * k1))
            }
        }
    }

    fn phase(&self, x: f64, y: f64) -> f64 {
        self.lambda * (x * self.direction[0] + y * self.direction[1])
    }
}

/// `<v, E>` as a scalar field.
fn project(v: &Field, axis: &[f64]) -> Field {
    let k = axis.len();
    let data: Vec<f64> = v
        .data()
        .chunks(k)
        .map(|node| node.iter().zip(axis).map(|(a, b)| a * b).sum())
        .collect();
    Field::from_vec(v.grid(), Shape::SCALAR, data).expect("projection buffer")
}

/// Applies one step and returns `(v', w')`.
pub fn apply_step(v: &Field, w: &Field, spec: &StepSpec) -> Result<(Field, Field)> {
    spec.validate(v)?;
    if w.shape() != Shape::vector(2) {
        return Err(Error::ShapeMismatch {
            expected: Shape::vector(2),
            got: w.shape(),
        });
    }
    if !w.grid().same_nodes(v.grid()) {
        return Err(Error::GridMismatch);
    }
    let g = v.grid();
    let (inv1, inv2, inv_bar) = spec.prefactors(g.h());
    let k = spec.axis.len();
    let a = spec.amplitude.data();
    let grad_p = fd_gradient(&project(v, &spec.axis))?;
    let grad_a = fd_gradient(&spec.amplitude)?;
    let eta = spec.direction;

    let mut v_new = v.clone();
    let mut w_new = w.clone();
    let (vd, wd) = (v_new.data_mut(), w_new.data_mut());
    let (gp, ga) = (grad_p.data(), grad_a.data());
    for j in 0..g.ny() {
        let y = g.y(j);
        for i in 0..g.nx() {
            let n = g.index(i, j);
            let t = spec.phase(g.x(i), y);
            let an = a[n];
            let osc = an * gamma(t) * inv1;
            for (c, e) in spec.axis.iter().enumerate() {
                vd[n * k + c] += osc * e;
            }
            let bar = an * gamma_bar(t) * inv_bar;
            let dot = an * an * gamma_bar_dot(t) * inv2;
            for d in 0..2 {
                wd[n * 2 + d] += -osc * gp[n * 2 + d] - bar * ga[n * 2 + d] + dot * eta[d];
            }
        }
    }
    Ok((v_new, w_new))
}

/// Measured `metric(v1, w1) - metric(v0, w0) - a^2 eta (x) eta`.
pub fn step_residual(
    v0: &Field,
    w0: &Field,
    v1: &Field,
    w1: &Field,
    spec: &StepSpec,
) -> Result<Field> {
    let mut r = metric(v1, w1)?.sub(&metric(v0, w0)?)?;
    subtract_gain(&mut r, spec);
    Ok(r)
}

fn subtract_gain(r: &mut Field, spec: &StepSpec) {
    let eta = spec.direction;
    let a = spec.amplitude.data();
    for (node, &an) in r.data_mut().chunks_mut(4).zip(a) {
        let a2 = an * an;
        node[0] -= a2 * eta[0] * eta[0];
        node[1] -= a2 * eta[0] * eta[1];
        node[2] -= a2 * eta[1] * eta[0];
        node[3] -= a2 * eta[1] * eta[1];
    }
}

/// Closed-form error of a step, with derivatives of `<v, E>` and `a` taken by
/// finite differences:
///
/// ```text
/// -a Gamma grad^2<v, E> / lambda
///   + (Gamma^2 / 2 - Gamma_bar) grad a (x) grad a / lambda^2
///   - a Gamma_bar grad^2 a / lambda^2
/// ```
pub fn step_error(v: &Field, spec: &StepSpec) -> Result<Field> {
    spec.validate(v)?;
    let g = v.grid();
    let (inv1, _, inv_bar) = spec.prefactors(g.h());
    let hp = fd_hessian(&project(v, &spec.axis))?;
    let ga = fd_gradient(&spec.amplitude)?;
    let ha = fd_hessian(&spec.amplitude)?;
    let a = spec.amplitude.data();
    let mut out = Field::zeros(g, Shape::MATRIX2);
    let od = out.data_mut();
    for j in 0..g.ny() {
        let y = g.y(j);
        for i in 0..g.nx() {
            let n = g.index(i, j);
            let t = spec.phase(g.x(i), y);
            let (gm, gb) = (gamma(t), gamma_bar(t));
            let da = [ga.data()[2 * n], ga.data()[2 * n + 1]];
            for e in 0..4 {
                let (r, c) = (e / 2, e % 2);
                od[4 * n + e] = -a[n] * gm * inv1 * hp.data()[4 * n + e]
                    + (0.5 * gm * gm - gb) * inv_bar * da[r] * da[c]
                    - a[n] * gb * inv_bar * ha.data()[4 * n + e];
            }
        }
    }
    Ok(out)
}

/// `sup |step_residual - step_error|`.
pub fn step_defect(v0: &Field, w0: &Field, spec: &StepSpec) -> Result<f64> {
    let (v1, w1) = apply_step(v0, w0, spec)?;
    let r = step_residual(v0, w0, &v1, &w1, spec)?;
    Ok(sup(&r.sub(&step_error(v0, spec)?)?))
}
