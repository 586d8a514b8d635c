//! Positive matrix fields as sums of rank-one primitive metrics, and the
//! initial step that absorbs most of a positive deficit.
//!
//! With `eta3 = (e1 + e2) / sqrt 2` and `eta3' = (e1 - e2) / sqrt 2`,
//! `D = c1 e1 (x) e1 + c2 e2 (x) e2 + c3 eta3 (x) eta3 + c3' eta3' (x) eta3'`
//! where `c1 = D11 - |D12|`, `c2 = D22 - |D12|` and exactly one of `c3`, `c3'`
//! equals `2 |D12|` at each node.

use serde::{Deserialize, Serialize};

use crate::calculus::metric;
use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::norms::sup;
use crate::step::{apply_step, unit_axis, Profile, StepSpec, MAX_LAMBDA_H};

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
pub const E1: [f64; 2] = [1.0, 0.0];
pub const E2: [f64; 2] = [0.0, 1.0];
pub const ETA3: [f64; 2] = [S, S];
pub const ETA3_REFLECTED: [f64; 2] = [S, -S];

#[derive(Clone, Debug)]
pub struct PrimitiveDecomp {
    pub c1sq: Field,
    pub c2sq: Field,
    pub c3sq: Field,
    pub c3sq_reflected: Field,
}

fn expect_matrix(d: &Field) -> Result<()> {
    if d.shape() != Shape::MATRIX2 {
        return Err(Error::ShapeMismatch {
            expected: Shape::MATRIX2,
            got: d.shape(),
        });
    }
    Ok(())
}

/// Pointwise coefficients; requires `D11 >= |D12|` and `D22 >= |D12|`.
pub fn primitive_coeffs(d: &Field) -> Result<PrimitiveDecomp> {
    expect_matrix(d)?;
    let g = d.grid();
    let n = g.len();
    let mut c = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let tol = 1e-12 * (1.0 + sup(d));
    for (idx, m) in d.data().chunks(4).enumerate() {
        let off = 0.5 * (m[1] + m[2]);
        let (c1, c2) = (m[0] - off.abs(), m[3] - off.abs());
        if c1 < -tol || c2 < -tol {
            return Err(Error::Precondition(format!(
                "matrix [[{}, {off}], [{off}, {}]] is not diagonally dominant",
                m[0], m[3]
            )));
        }
        c[0][idx] = c1.max(0.0);
        c[1][idx] = c2.max(0.0);
        if off >= 0.0 {
            c[2][idx] = 2.0 * off;
        } else {
            c[3][idx] = -2.0 * off;
        }
    }
    let [c1, c2, c3, c4] = c;
    let mk = |v: Vec<f64>| Field::from_vec(g, Shape::SCALAR, v);
    Ok(PrimitiveDecomp {
        c1sq: mk(c1)?,
        c2sq: mk(c2)?,
        c3sq: mk(c3)?,
        c3sq_reflected: mk(c4)?,
    })
}

impl PrimitiveDecomp {
    /// `sum_m c_m eta_m (x) eta_m`.
    pub fn reconstruct(&self) -> Field {
        let mut out = Field::zeros(self.c1sq.grid(), Shape::MATRIX2);
        let terms = [
            (&self.c1sq, E1),
            (&self.c2sq, E2),
            (&self.c3sq, ETA3),
            (&self.c3sq_reflected, ETA3_REFLECTED),
        ];
        for (coef, eta) in terms {
            for (node, &c) in out.data_mut().chunks_mut(4).zip(coef.data()) {
                node[0] += c * eta[0] * eta[0];
                node[1] += c * eta[0] * eta[1];
                node[2] += c * eta[1] * eta[0];
                node[3] += c * eta[1] * eta[1];
            }
        }
        out
    }
}

/// Coefficients that stay smooth where `D12` changes sign: the off-diagonal
/// part is split as `p - n` with `p = (D12 + sqrt(D12^2 + tau^2)) / 2`.
fn smooth_split(d: &Field, tau: f64) -> Result<Vec<([f64; 2], Field)>> {
    let g = d.grid();
    let n = g.len();
    let (mut c1, mut c2, mut c3, mut c4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let tol = 1e-12 * (1.0 + sup(d));
    for (idx, m) in d.data().chunks(4).enumerate() {
        let off = 0.5 * (m[1] + m[2]);
        let root = (off * off + tau * tau).sqrt();
        let (p, q) = (0.5 * (off + root), 0.5 * (root - off));
        let (a, b) = (m[0] - p - q, m[3] - p - q);
        if a < -tol || b < -tol {
            return Err(Error::Precondition(format!(
                "deficit [[{}, {off}], [{off}, {}]] is not diagonally dominant",
                m[0], m[3]
            )));
        }
        c1[idx] = a.max(0.0);
        c2[idx] = b.max(0.0);
        c3[idx] = 2.0 * p;
        c4[idx] = 2.0 * q;
    }
    let mk = |v: Vec<f64>| Field::from_vec(g, Shape::SCALAR, v);
    Ok(vec![
        (E1, mk(c1)?),
        (E2, mk(c2)?),
        (ETA3, mk(c3)?),
        (ETA3_REFLECTED, mk(c4)?),
    ])
}

fn primitive_terms(d: &Field, tau_rel: f64) -> Result<Vec<([f64; 2], Field)>> {
    let off_max = d
        .data()
        .chunks(4)
        .map(|m| 0.5 * (m[1] + m[2]))
        .fold((0.0f64, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let scale = 1e-14 * (1.0 + sup(d));
    let terms = if off_max.0 >= -scale || off_max.1 <= scale {
        let p = primitive_coeffs(d)?;
        vec![
            (E1, p.c1sq),
            (E2, p.c2sq),
            (ETA3, p.c3sq),
            (ETA3_REFLECTED, p.c3sq_reflected),
        ]
    } else {
        let tau = tau_rel * off_max.0.abs().max(off_max.1);
        smooth_split(d, tau)?
    };
    Ok(terms
        .into_iter()
        .filter(|(_, c)| c.max_value() > 1e-15)
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirstStepOptions {
    /// Fraction of the deficit deliberately left over.
    pub rho: f64,
    /// Bound on `|v' - v|_0` and `|w' - w|_0`.
    pub closeness: f64,
    /// Desired sup of the remaining deficit.
    pub target: f64,
    /// Starting base frequency; raised if closeness demands it.
    pub lambda: Option<f64>,
    /// Frequency ratio between successive steps sharing a codimension axis.
    pub axis_ratio: f64,
    /// Relative width of the smooth sign split of `D12`.
    pub split_width: f64,
    pub profile: Profile,
    /// Boundary layers excluded when measuring the remaining deficit.
    pub boundary_skip: usize,
}

impl Default for FirstStepOptions {
    fn default() -> Self {
        Self {
            rho: 0.1,
            closeness: 0.01,
            target: 0.01,
            lambda: None,
            axis_ratio: 4.0,
            split_width: 0.05,
            profile: Profile::GridConsistent,
            boundary_skip: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirstStepReport {
    pub lambda: f64,
    pub attempts: usize,
    pub steps: usize,
    pub remaining: f64,
    pub v_change: f64,
    pub w_change: f64,
    pub reached: bool,
}

#[derive(Clone, Debug)]
pub struct FirstStepOutput {
    pub v: Field,
    pub w: Field,
    /// Remaining deficit `D - (metric(v', w') - metric(v, w))`.
    pub deficit: Field,
    pub report: FirstStepReport,
}

/// Absorbs `(1 - rho) D` with one step per non-zero primitive direction,
/// doubling the base frequency until the remaining deficit meets the target
/// or the resolution bound is hit. The output with the smallest remaining
/// deficit among closeness-respecting attempts is returned.
pub fn first_step(v: &Field, w: &Field, d: &Field, opts: &FirstStepOptions) -> Result<FirstStepOutput> {
    expect_matrix(d)?;
    if !(0.0..1.0).contains(&opts.rho) || !(opts.closeness > 0.0) || !(opts.axis_ratio >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho {} closeness {} axis ratio {}",
            opts.rho, opts.closeness, opts.axis_ratio
        )));
    }
    let k = v.shape().rows;
    let g = v.grid();
    let terms = primitive_terms(&d.scaled(1.0 - opts.rho), opts.split_width)?;
    let inner = g.shrink(opts.boundary_skip)?;
    let base_metric = metric(v, w)?;
    let measure = |vv: &Field, ww: &Field| -> Result<(Field, f64)> {
        let gain = metric(vv, ww)?.sub(&base_metric)?;
        let rem = d.sub(&gain)?;
        let s = sup(&rem.restrict(&inner)?);
        Ok((rem, s))
    };
    if terms.is_empty() {
        let (rem, s) = measure(v, w)?;
        return Ok(FirstStepOutput {
            v: v.clone(),
            w: w.clone(),
            deficit: rem,
            report: FirstStepReport {
                lambda: 0.0,
                attempts: 0,
                steps: 0,
                remaining: s,
                v_change: 0.0,
                w_change: 0.0,
                reached: s <= opts.target,
            },
        });
    }
    let amps: Vec<([f64; 2], Field)> = terms
        .into_iter()
        .map(|(eta, c)| (eta, c.map(|x| x.max(0.0).sqrt())))
        .collect();
    let growth = |m: usize| opts.axis_ratio.powi((m / k) as i32);
    let closeness_lambda: f64 = amps
        .iter()
        .enumerate()
        .map(|(m, (_, a))| 2.0 * sup(a) / growth(m))
        .sum::<f64>()
        / opts.closeness;
    let top = growth(amps.len() - 1);
    let cap = MAX_LAMBDA_H / g.h() / top;
    let mut lambda = opts.lambda.unwrap_or(0.0).max(closeness_lambda);
    if lambda > cap {
        return Err(Error::Nyquist {
            lambda: lambda * top,
            h: g.h(),
            product: lambda * top * g.h(),
            max: MAX_LAMBDA_H,
        });
    }
    let mut best: Option<FirstStepOutput> = None;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let (mut vv, mut ww) = (v.clone(), w.clone());
        for (m, (eta, a)) in amps.iter().enumerate() {
            let spec = StepSpec::new(a.clone(), *eta, unit_axis(k, m % k), lambda * growth(m))
                .with_profile(opts.profile);
            let (nv, nw) = apply_step(&vv, &ww, &spec)?;
            vv = nv;
            ww = nw;
        }
        let (rem, s) = measure(&vv, &ww)?;
        let v_change = sup(&vv.sub(v)?);
        let w_change = sup(&ww.sub(w)?);
        let ok = v_change <= opts.closeness && w_change <= opts.closeness;
        let better = best.as_ref().is_none_or(|b| {
            (ok && !(b.report.v_change <= opts.closeness && b.report.w_change <= opts.closeness))
                || (ok == (b.report.v_change <= opts.closeness && b.report.w_change <= opts.closeness)
                    && s < b.report.remaining)
        });
        if better {
            best = Some(FirstStepOutput {
                v: vv,
                w: ww,
                deficit: rem,
                report: FirstStepReport {
                    lambda,
                    attempts,
                    steps: amps.len(),
                    remaining: s,
                    v_change,
                    w_change,
                    reached: ok && s <= opts.target,
                },
            });
        }
        let done = best.as_ref().is_some_and(|b| b.report.reached);
        if done || 2.0 * lambda > cap {
            break;
        }
        lambda *= 2.0;
    }
    let mut out = best.expect("at least one attempt");
    out.report.attempts = attempts;
    Ok(out)
}
