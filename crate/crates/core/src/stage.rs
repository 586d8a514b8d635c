//! One stage: a deficit `A - metric(v, w)` is reduced by `N = lcm(2, k)`
//! oscillatory steps grouped into `S = N / 2` decompositions.
//!
//! Inputs are mollified at scale `l`. Each decomposition of the running
//! deficit `D_s` yields an amplitude `a_s` and a gradient correction `Psi_s`;
//! two steps along `e1`, `e2` follow, each on codimension axis `gamma(i)` and
//! with frequency `lambda_i` from the ladder
//! `lambda_i l = (lambda l)^(1 + j(i) + s(i) / 2)`. All intermediate metric
//! differences are measured on the grid so the deficit bookkeeping telescopes
//! exactly at interior nodes.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::calculus::{deficit, fd_hessian, metric};
use crate::conformal::{identity_residual, ConformalSolver};
use crate::error::{Error, Result};
use crate::field::{Field, Shape};
use crate::mollify::Mollifier;
use crate::norms::{c1_norm, grad_sup, holder_norm, norms, sup};
use crate::step::{apply_step, unit_axis, Profile, StepSpec, MAX_LAMBDA_H};

/// Step and decomposition counts for codimension `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exponents {
    pub k: usize,
    /// Steps per stage, `lcm(2, k)`.
    pub n: usize,
    /// Decompositions per stage, `N / 2`.
    pub s: usize,
    /// Passes over the codimension axes, `N / k`.
    pub j: usize,
}

impl Exponents {
    /// `S / (S + 2J)`, the Hölder threshold of the iteration.
    pub fn threshold(&self) -> Ratio<i64> {
        Ratio::new(self.s as i64, (self.s + 2 * self.j) as i64)
    }

    pub fn threshold_f64(&self) -> f64 {
        self.s as f64 / (self.s + 2 * self.j) as f64
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn exponents(k: usize) -> Result<Exponents> {
    if k == 0 {
        return Err(Error::InvalidParameter("codimension k must be >= 1".into()));
    }
    let n = 2 * k / gcd(2, k);
    Ok(Exponents {
        k,
        n,
        s: n / 2,
        j: n / k,
    })
}

/// Position of step `i` (1-based) within a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSplit {
    /// Pass over the codimension axes; `i = k j + axis`.
    pub j: usize,
    /// Codimension axis in `1..=k`.
    pub axis: usize,
    /// Decomposition index; `i = 2 s + direction`.
    pub s: usize,
    /// Planar direction in `{1, 2}`.
    pub direction: usize,
}

pub fn index_split(i: usize, k: usize) -> Result<IndexSplit> {
    if i == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!("step index {i}, k {k}")));
    }
    let j = (i - 1) / k;
    let s = (i - 1) / 2;
    Ok(IndexSplit {
        j,
        axis: i - k * j,
        s,
        direction: i - 2 * s,
    })
}

/// `[lambda_0, ..., lambda_N]` with `lambda_0 = 1 / l`.
pub fn frequency_ladder(k: usize, lambda: f64, l: f64) -> Result<Vec<f64>> {
    let e = exponents(k)?;
    if !(l > 0.0 && lambda * l > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need l > 0 and lambda l > 1 (lambda {lambda}, l {l})"
        )));
    }
    let mut out = vec![1.0 / l];
    for i in 1..=e.n {
        let sp = index_split(i, k)?;
        let p = 1.0 + sp.j as f64 + sp.s as f64 / 2.0;
        out.push((lambda * l).powf(p) / l);
    }
    Ok(out)
}

/// Hölder exponent used inside a stage for a requested `gamma`.
pub fn internal_gamma(gamma: f64, k: usize) -> f64 {
    let k = k as f64;
    4.0 * gamma / (k * k + 5.0 * k + 2.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageParams {
    /// Mollification scale.
    pub l: f64,
    /// Base frequency, `lambda l > 1`.
    pub lambda: f64,
    /// Regularity budget; measured from the inputs when absent.
    pub m: Option<f64>,
    pub gamma: f64,
    pub beta: f64,
    /// Conformal stability radius entering the amplitude constant.
    pub r0: f64,
    /// Node layers discarded after the last step.
    pub trim: usize,
    pub profile: Profile,
    /// Maximum doublings of the amplitude constant when the guard trips.
    pub guard_retries: usize,
}

impl StageParams {
    pub fn new(l: f64, lambda: f64) -> Self {
        Self {
            l,
            lambda,
            m: None,
            gamma: 0.1,
            beta: 1.0,
            r0: 0.1,
            trim: 4,
            profile: Profile::GridConsistent,
            guard_retries: 8,
        }
    }

    /// Input margin required for the stage.
    pub fn required_margin(&self, h: f64) -> f64 {
        2.0 * self.l + self.trim as f64 * h
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub s: usize,
    pub deficit_sup: f64,
    pub deficit_holder_norm: f64,
    pub c_tilde: f64,
    pub guard_doublings: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Interior residual of `D_s - (sym grad Psi_s - a_s^2 Id)`.
    pub identity_residual: f64,
    /// Measured `|D_s|_0` over its inductive bound without constant.
    pub deficit_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub split: IndexSplit,
    pub lambda: f64,
    pub dv_c0: f64,
    pub dv_c1: f64,
    pub dw_c0: f64,
    pub dw_c1: f64,
    /// Measured `|grad(v_i - v_(i-1))|_0` over its inductive bound without constant.
    pub dv_ratio: f64,
    /// Same for `w`.
    pub dw_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageReport {
    pub exponents: Exponents,
    pub l: f64,
    pub lambda: f64,
    pub ladder: Vec<f64>,
    pub gamma_internal: f64,
    pub m_budget: f64,
    pub input_deficit: f64,
    /// `|A - A_0|_0` on the output grid.
    pub mollification_floor: f64,
    pub decompositions: Vec<DecompositionRecord>,
    pub steps: Vec<StepRecord>,
    /// `|D_S|_0` on the output grid.
    pub internal_deficit: f64,
    /// `|A - metric(v~, w~)|_0` on the output grid.
    pub deficit: f64,
    pub hessian_v: f64,
    pub hessian_w: f64,
    pub dv_c0: f64,
    pub dv_c1: f64,
    pub dw_c0: f64,
    pub dw_c1: f64,
    /// `|D~ - ((A - A_0) - D_S)|_0` on the output grid.
    pub telescoping_residual: f64,
    pub output_margin: f64,
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    pub v: Field,
    pub w: Field,
    /// `A - metric(v~, w~)` on the output grid.
    pub deficit: Field,
    pub report: StageReport,
}

fn check_inputs(v: &Field, w: &Field, a: &Field) -> Result<usize> {
    if v.shape().cols != 1 {
        return Err(Error::ShapeMismatch {
            expected: Shape::vector(v.shape().rows),
            got: v.shape(),
        });
    }
    if w.shape() != Shape::vector(2) {
        return Err(Error::ShapeMismatch {
            expected: Shape::vector(2),
            got: w.shape(),
        });
    }
    if a.shape() != Shape::MATRIX2 {
        return Err(Error::ShapeMismatch {
            expected: Shape::MATRIX2,
            got: a.shape(),
        });
    }
    if !v.grid().same_nodes(w.grid()) || !v.grid().same_nodes(a.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(v.shape().rows)
}

/// Runs one stage on `(v, w)` towards `A`.
pub fn run_stage(v: &Field, w: &Field, a: &Field, p: &StageParams) -> Result<StageOutput> {
    let k = check_inputs(v, w, a)?;
    let grid = v.grid().clone();
    let h = grid.h();
    if !(p.gamma > 0.0 && p.gamma < 1.0) || !(p.beta > 0.0 && p.beta <= 2.0) || !(p.r0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma {} beta {} r0 {}",
            p.gamma, p.beta, p.r0
        )));
    }
    let ex = exponents(k)?;
    let ladder = frequency_ladder(k, p.lambda, p.l)?;
    let top = ladder[ex.n];
    if top * h > MAX_LAMBDA_H * (1.0 + 1e-12) {
        return Err(Error::Nyquist {
            lambda: top,
            h,
            product: top * h,
            max: MAX_LAMBDA_H,
        });
    }
    let moll = Mollifier::new(p.l, h)?;
    let g1 = moll.output_grid(&grid)?;
    let out_grid = g1.shrink(p.trim)?;
    if out_grid.margin() < p.l - h * (1.0 + 1e-9) {
        return Err(Error::InsufficientMargin {
            needed: p.required_margin(h),
            available: grid.margin(),
        });
    }
    let measured_m = norms(v)?.c2.max(norms(w)?.c2).max(1.0);
    let m_budget = match p.m {
        Some(m) if m < measured_m * (1.0 - 1e-9) => {
            return Err(Error::Precondition(format!(
                "regularity budget {m} below measured {measured_m}"
            )))
        }
        Some(m) => m,
        None => measured_m,
    };
    let gi = internal_gamma(p.gamma, k);
    let lam_l = p.lambda * p.l;
    let input_deficit = sup(&deficit(v, w, a)?);
    let floor_term = input_deficit + (p.l * m_budget).powi(2);

    let v0 = moll.apply(v)?;
    let w0 = moll.apply(w)?;
    let a0 = moll.apply(a)?;
    let a1 = a.restrict(&g1)?;
    let solver = ConformalSolver::new(&g1)?;
    let center = g1.omega().center();
    let identity_map = Field::from_fn(&g1, Shape::vector(2), move |x, y, o| {
        o[0] = x - center[0];
        o[1] = y - center[1];
    });
    let grad_v_sup = grad_sup(v)?;

    let mut d_s = metric(&v0, &w0)?.sub(&a0)?;
    let (mut cur_v, mut cur_w) = (v0.clone(), w0.clone());
    let mut cur_metric = metric(&cur_v, &cur_w)?;
    let mut psi_sum = Field::zeros(&g1, Shape::vector(2));
    let mut prod = ladder[0];
    let mut decompositions = Vec::with_capacity(ex.s);
    let mut steps = Vec::with_capacity(ex.n);
    let mut c_total = 0.0;
    let fd_scale = floor_term.sqrt();

    for s in 0..ex.s {
        let prev_prod = prod;
        if s > 0 {
            prod *= ladder[2 * s];
        }
        let dh = holder_norm(&d_s, gi)?;
        let deficit_sup = sup(&d_s.restrict(&out_grid)?);
        let deficit_bound = if s == 0 {
            floor_term
        } else {
            prev_prod.powf(gi) / lam_l.powi(s as i32) * floor_term
        };
        let mut c_tilde =
            2.0 / p.r0 * (dh + prod.powf(gi) / lam_l.powi(s as i32) * floor_term);
        let dec = solver.decompose(&d_s)?;
        let a_bar_max = dec.a_bar.max_value();
        let mut doublings = 0;
        while a_bar_max > 0.5 * c_tilde {
            if doublings == p.guard_retries {
                return Err(Error::GuardTripped {
                    retries: p.guard_retries,
                });
            }
            c_tilde *= 2.0;
            doublings += 1;
        }
        c_total += c_tilde;
        let amp = dec.a_bar.map(|ab| (c_tilde - ab).max(0.0).sqrt());
        let mut psi = identity_map.scaled(c_tilde);
        psi.axpy(-1.0, &dec.psi_bar)?;
        psi_sum.axpy(1.0, &psi)?;
        let id_res = identity_residual(&d_s, &dec, p.trim)?;
        decompositions.push(DecompositionRecord {
            s,
            deficit_sup,
            deficit_holder_norm: dh,
            c_tilde,
            guard_doublings: doublings,
            amplitude_min: amp.min_value(),
            amplitude_max: amp.max_value(),
            identity_residual: id_res,
            deficit_ratio: deficit_sup / deficit_bound,
        });

        let metric_before = cur_metric.clone();
        let v_bound = prod.powf(gi / 2.0) / lam_l.powf(s as f64 / 2.0)
            * (input_deficit.sqrt() + p.l * m_budget);
        let w_bound = prod.powf(gi) / lam_l.powf(s as f64 / 2.0)
            * (input_deficit.sqrt() + p.l * m_budget)
            * (input_deficit.sqrt() + p.l * m_budget + grad_v_sup);
        for delta in 1..=2 {
            let i = 2 * s + delta;
            let sp = index_split(i, k)?;
            let dir = if delta == 1 { [1.0, 0.0] } else { [0.0, 1.0] };
            let spec = StepSpec::new(amp.clone(), dir, unit_axis(k, sp.axis - 1), ladder[i])
                .with_profile(p.profile);
            let (nv, nw) = apply_step(&cur_v, &cur_w, &spec)?;
            let dv = nv.sub(&cur_v)?.restrict(&out_grid)?;
            let dw = nw.sub(&cur_w)?.restrict(&out_grid)?;
            let dv_grad = grad_sup(&dv)?;
            let dw_grad = grad_sup(&dw)?;
            steps.push(StepRecord {
                index: i,
                split: sp,
                lambda: ladder[i],
                dv_c0: sup(&dv),
                dv_c1: c1_norm(&dv)?,
                dw_c0: sup(&dw),
                dw_c1: c1_norm(&dw)?,
                dv_ratio: dv_grad / v_bound,
                dw_ratio: dw_grad / w_bound,
            });
            cur_v = nv;
            cur_w = nw;
        }
        cur_metric = metric(&cur_v, &cur_w)?;
        d_s = cur_metric.sub(&metric_before)?;
        for (node, &an) in d_s.data_mut().chunks_mut(4).zip(amp.data()) {
            node[0] -= an * an;
            node[3] -= an * an;
        }
    }

    let v_out = cur_v;
    let mut w_out = cur_w;
    w_out.axpy(-1.0, &psi_sum)?;
    let final_deficit = a1.sub(&metric(&v_out, &w_out)?)?;
    let mut predicted = a1.sub(&a0)?;
    predicted.axpy(-1.0, &d_s)?;
    let tele = sup(&final_deficit.sub(&predicted)?.restrict(&out_grid)?);
    let a_sup = sup(a);
    let tol = 1e-4 * a_sup + 1e-8 * (1.0 + c_total + fd_scale);
    if !(tele <= tol) {
        return Err(Error::IdentityViolated {
            what: "stage telescoping".into(),
            residual: tele,
            tolerance: tol,
        });
    }
    let hv = sup(&fd_hessian(&v_out)?.restrict(&out_grid)?);
    let hw = sup(&fd_hessian(&w_out)?.restrict(&out_grid)?);
    let v_o = v_out.restrict(&out_grid)?;
    let w_o = w_out.restrict(&out_grid)?;
    let dv = v_o.sub(&v.restrict(&out_grid)?)?;
    let dw = w_o.sub(&w.restrict(&out_grid)?)?;
    let deficit_out = final_deficit.restrict(&out_grid)?;
    let report = StageReport {
        exponents: ex,
        l: p.l,
        lambda: p.lambda,
        ladder,
        gamma_internal: gi,
        m_budget,
        input_deficit,
        mollification_floor: sup(&a1.sub(&a0)?.restrict(&out_grid)?),
        decompositions,
        steps,
        internal_deficit: sup(&d_s.restrict(&out_grid)?),
        deficit: sup(&deficit_out),
        hessian_v: hv,
        hessian_w: hw,
        dv_c0: sup(&dv),
        dv_c1: c1_norm(&dv)?,
        dw_c0: sup(&dw),
        dw_c1: c1_norm(&dw)?,
        telescoping_residual: tele,
        output_margin: out_grid.margin(),
    };
    Ok(StageOutput {
        v: v_o,
        w: w_o,
        deficit: deficit_out,
        report,
    })
}
