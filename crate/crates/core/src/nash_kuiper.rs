//! Iterated stages with shrinking mollification scales and growing
//! frequencies, the schedules that drive them, and the end-to-end
//! flexibility driver.
//!
//! Two schedule families exist. [`build_schedule`] produces the
//! double-exponential sequence `l_i = B^((q^i - 1)/(q - 1)) l_0^(q^i)`,
//! `lambda_i = b / l_i^a` together with the regularity budgets `M_i`, and
//! checks its requirement inequalities; it is evaluated in log space because
//! its entries leave the `f64` range after a few indices. [`Practical`] is a
//! geometric surrogate that fits on a finite grid.

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::calculus::{deficit, fd_gradient};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid2;
use crate::mollify::Mollifier;
use crate::norms::{c1_norm, grad_sup, holder, holder_norm, sup};
use crate::primitive::{first_step, FirstStepOptions, FirstStepReport};
use crate::stage::{exponents, frequency_ladder, run_stage, Exponents, StageParams};
use crate::step::{Profile, MAX_LAMBDA_H};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// `beta / 2 > S / (S + 2J)`: budgets grow through the ratio recursion.
    A,
    /// `beta / 2 <= S / (S + 2J)`: budgets are set by the Hölder floor of `A`.
    B,
}

/// Norms of the initial data that enter the schedule.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScheduleInputs {
    pub exponents: Exponents,
    pub beta: f64,
    /// Target Hölder exponent of the limit.
    pub alpha: f64,
    /// `|D_0|_0`.
    pub deficit: f64,
    /// `|grad v_0|_0`.
    pub grad_v: f64,
    /// `|A|_{0, beta}`.
    pub a_holder: f64,
    /// Constant standing in for every unspecified `C`.
    pub c: f64,
    pub iterations: usize,
}

impl ScheduleInputs {
    pub fn new(exponents: Exponents, beta: f64, alpha: f64, iterations: usize) -> Self {
        Self {
            exponents,
            beta,
            alpha,
            deficit: 0.0,
            grad_v: 0.0,
            a_holder: 0.0,
            c: 2.0,
            iterations,
        }
    }

    /// Fills the norm slots from fields: `v`, the deficit `d` and the target `a`.
    pub fn with_norms(mut self, v: &Field, d: &Field, a: &Field) -> Result<Self> {
        self.deficit = sup(d);
        self.grad_v = grad_sup(v)?;
        self.a_holder = beta_norm(a, self.beta)?;
        Ok(self)
    }
}

/// `|f|_{0, beta}` for `beta in (0, 2]`.
pub fn beta_norm(f: &Field, beta: f64) -> Result<f64> {
    if beta <= 1.0 {
        holder_norm(f, beta)
    } else {
        let g = fd_gradient(f)?;
        Ok(c1_norm(f)? + holder(&g, beta - 1.0)?)
    }
}

/// Symbolic sign condition on the exponents, evaluated over the rationals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignCondition {
    pub name: String,
    pub holds: bool,
}

/// Log margins of the three requirement inequalities at index `i`;
/// non-negative means satisfied.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RequirementCheck {
    pub index: usize,
    /// Partial sum of `b^gamma l_i^(1 - a gamma) M_i` against its bound.
    pub sum: f64,
    /// `(M_{i+1} / M_i)^2` against its lower bound.
    pub ratio: f64,
    /// `M_{i+1}^2` against the Hölder floor of `A`.
    pub floor: f64,
}

impl RequirementCheck {
    pub fn holds(&self) -> bool {
        self.sum >= 0.0 && self.ratio >= 0.0 && self.floor >= 0.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NkSchedule {
    pub case_tag: Case,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub q: f64,
    pub b_const: f64,
    pub c: f64,
    pub inputs: ScheduleInputs,
    pub l0_halvings: usize,
    pub gamma_halvings: usize,
    pub ln_l: Vec<f64>,
    pub ln_lambda: Vec<f64>,
    pub ln_m: Vec<f64>,
    /// Entries may underflow or overflow; see `representable`.
    pub l: Vec<f64>,
    pub lambda: Vec<f64>,
    pub m: Vec<f64>,
    /// Leading indices whose `l`, `lambda`, `M` are finite and non-zero in `f64`.
    pub representable: usize,
    pub sign_conditions: Vec<SignCondition>,
    pub requirements: Vec<RequirementCheck>,
}

impl NkSchedule {
    pub fn len(&self) -> usize {
        self.ln_l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_l.is_empty()
    }

    /// Violated invariants of the generated prefix; empty when consistent.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.len();
        let tol = 1e-9;
        for i in 0..n {
            if self.ln_lambda[i] + self.ln_l[i] <= 0.0 {
                out.push(format!("lambda_{i} l_{i} <= 1"));
            }
            let lam = self.b.ln() - self.a * self.ln_l[i];
            if (lam - self.ln_lambda[i]).abs() > tol * (1.0 + lam.abs()) {
                out.push(format!("lambda_{i} != b / l_{i}^a"));
            }
            if self.ln_m[i] < -tol {
                out.push(format!("M_{i} < 1"));
            }
            if i + 1 < n {
                if self.ln_l[i + 1] > self.ln_l[i] - std::f64::consts::LN_2 + tol {
                    out.push(format!("l_{} > l_{i} / 2", i + 1));
                }
                if self.ln_m[i + 1] <= self.ln_m[i] {
                    out.push(format!("M_{} <= M_{i}", i + 1));
                }
            }
        }
        let norm = 2.0 * (self.ln_l[0] + self.ln_m[0]) - self.inputs.deficit.ln();
        if norm.abs() > tol {
            out.push("|D_0| != (l_0 M_0)^2".into());
        }
        let lm: Vec<f64> = (0..n).map(|i| self.ln_l[i] + self.ln_m[i]).collect();
        if n >= 3 && !(lm[n - 1] < lm[n - 2] && lm[n - 2] < lm[n - 3]) {
            out.push("l_i M_i not decreasing over the tail".into());
        }
        out
    }
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite schedule exponent")
}

/// Exact sign conditions for the case, with `a`, `gamma`, `beta` as the
/// rationals closest to their `f64` values.
fn sign_conditions(case: Case, s: usize, j: usize, a: f64, gamma: f64, beta: f64) -> Vec<SignCondition> {
    let one = rat(1.0);
    let two = rat(2.0);
    let (s_, j_) = (rat(s as f64), rat(j as f64));
    let (a, g, be) = (rat(a), rat(gamma), rat(beta));
    let am1 = &a - &one;
    let q = &one + &am1 * (&s_ / &two + &j_) + rat(2.5) * &a * &g;
    let qm1 = &q - &one;
    let two_q_beta = &two * &q - &be;
    let dominance = &two * &q / &qm1 * (&j_ * &am1 + rat(3.0) * &a * &g);
    match case {
        Case::A => {
            let eb = &s_ / &two + &j_ + (&s_ + &two * &j_ + rat(0.5)) * &g;
            let base = eb * (&be - &two * &qm1) - &s_ + &g;
            vec![
                SignCondition {
                    name: "ratio budget dominates floor budget".into(),
                    holds: two_q_beta < dominance,
                },
                SignCondition {
                    name: "geometric base exponent positive".into(),
                    holds: base > rat(0.0),
                },
                SignCondition {
                    name: "gamma <= beta / 32".into(),
                    holds: g <= &be / rat(32.0),
                },
            ]
        }
        Case::B => {
            let e = &two * &j_ * &am1 + rat(6.0) * &a * &g - &qm1 * &two_q_beta;
            let small = (rat(6.0) * (&s_ + &two * &j_) / (&s_ * &be * &be) + &two * &a / &be) * &g;
            vec![
                SignCondition {
                    name: "floor budget dominates ratio budget".into(),
                    holds: two_q_beta > dominance,
                },
                SignCondition {
                    name: "ratio exponent negative".into(),
                    holds: e < rat(0.0),
                },
                SignCondition {
                    name: "gamma smallness".into(),
                    holds: small <= rat(0.125),
                },
            ]
        }
    }
}

struct Logs {
    lb: f64,
    l_b: f64,
    ll: Vec<f64>,
    lm: Vec<f64>,
}

fn generate(inp: &ScheduleInputs, case: Case, a: f64, gamma: f64, halvings: usize) -> Logs {
    let (s, j) = (inp.exponents.s as f64, inp.exponents.j as f64);
    let (c, beta, g) = (inp.c, inp.beta, inp.grad_v);
    let ld = inp.deficit.ln();
    let q = 1.0 + (a - 1.0) * (s / 2.0 + j) + 2.5 * a * gamma;
    let shift = halvings as f64 * std::f64::consts::LN_2;
    let (lb, ll0) = match case {
        Case::A => {
            let lb = 4.0 / s * (c * (1.0 + g)).ln();
            let ll0 = (ld - (c * inp.a_holder.max(f64::MIN_POSITIVE)).ln() - (s + 4.0 * j) * lb) / beta;
            (lb, ll0 - shift)
        }
        Case::B => {
            let ll0 = (ld - (c * (1.0 + inp.a_holder)).ln()) / beta - shift;
            let lb = 6.0 / (s * beta) * ((2.0 * (1.0 + g)).ln() - ll0);
            (lb, ll0)
        }
    };
    let l_b = -(c.ln() + (s / 2.0 + j + (s + 2.0 * j + 0.5) * gamma) * lb);
    let lx = l_b / (q - 1.0) + ll0;
    let n = inp.iterations + 1;
    let ll: Vec<f64> = (0..n)
        .map(|i| {
            let qi = q.powi(i as i32);
            (qi - 1.0) / (q - 1.0) * l_b + qi * ll0
        })
        .collect();
    let e = 2.0 * j * (a - 1.0) + 6.0 * a * gamma;
    let mut lm = vec![ld / 2.0 - ll0];
    for i in 0..n - 1 {
        let qi = q.powi(i as i32);
        let m2 = match case {
            Case::A => {
                let base = (2.0 * c).ln() - (s - gamma) * lb + 2.0 * (1.0 + g).ln()
                    - (s * (a - 1.0) - a * gamma) / (q - 1.0) * l_b;
                2.0 * lm[0] + (i + 1) as f64 * base + e / (q - 1.0) * lx * (1.0 - qi * q)
            }
            Case::B => {
                2.0 * (i + 1) as f64 * (lm[0] + (1.0 + g).ln()) + (2.0 - beta) * ll0
                    + (2.0 - beta) / (q - 1.0) * l_b
                    - qi * (2.0 * q - beta) * lx
            }
        };
        lm.push(m2 / 2.0);
    }
    Logs { lb, l_b, ll, lm }
}

fn requirements(inp: &ScheduleInputs, a: f64, gamma: f64, lg: &Logs, upto: usize) -> Vec<RequirementCheck> {
    let (s, j) = (inp.exponents.s as f64, inp.exponents.j as f64);
    let (c, beta, g) = (inp.c, inp.beta, inp.grad_v);
    let q = 1.0 + (a - 1.0) * (s / 2.0 + j) + 2.5 * a * gamma;
    let lx = lg.l_b / (q - 1.0) + lg.ll[0];
    let e = 2.0 * j * (a - 1.0) + 6.0 * a * gamma;
    let rhs_sum = c.ln() + (s + 2.0 * j) * gamma * lg.lb - 2.0 * a * gamma * lg.ll[0]
        + (1.0 + g).ln()
        + inp.deficit.ln() / 2.0;
    let mut acc = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for i in 0..upto.min(lg.lm.len() - 1) {
        let term = (1.0 - a * gamma) * lg.ll[i] + lg.lm[i];
        acc = log_add(acc, term);
        let qi = q.powi(i as i32);
        let ratio_lb = (2.0 * c).ln() - (s - gamma) * lg.lb
            - (s * (a - 1.0) - a * gamma) / (q - 1.0) * lg.l_b
            - qi * e * lx
            + (1.0 + g).ln();
        let floor_lb = (2.0 * c * inp.a_holder.max(f64::MIN_POSITIVE)).ln()
            + (2.0 - beta) / (q - 1.0) * lg.l_b
            - qi * (2.0 * q - beta) * lx;
        out.push(RequirementCheck {
            index: i,
            sum: rhs_sum - (gamma * lg.lb + acc),
            ratio: 2.0 * (lg.lm[i + 1] - lg.lm[i]) - ratio_lb,
            floor: 2.0 * lg.lm[i + 1] - floor_lb,
        });
    }
    out
}

fn log_add(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

const CHECKED_INDICES: usize = 3;
const MAX_L0_HALVINGS: usize = 8;
const MAX_GAMMA_HALVINGS: usize = 60;

/// Builds the double-exponential schedule and verifies its requirement
/// inequalities at `i = 0, 1, 2`.
pub fn build_schedule(inp: &ScheduleInputs) -> Result<NkSchedule> {
    let ex = inp.exponents;
    let (s, j) = (ex.s, ex.j);
    let thr = ex.threshold_f64();
    if !(inp.deficit > 0.0 && inp.deficit <= 1.0) {
        return Err(Error::Precondition(format!(
            "initial deficit {} outside (0, 1]",
            inp.deficit
        )));
    }
    if !(inp.beta > 0.0 && inp.beta <= 2.0) || !(inp.c >= 1.0) || inp.iterations < CHECKED_INDICES {
        return Err(Error::InvalidParameter(format!(
            "beta {} C {} iterations {}",
            inp.beta, inp.c, inp.iterations
        )));
    }
    let cap = (inp.beta / 2.0).min(thr);
    if !(inp.alpha > 0.0 && inp.alpha < cap) {
        return Err(Error::InvalidParameter(format!(
            "alpha {} outside (0, min(beta/2, S/(S+2J)) = {cap})",
            inp.alpha
        )));
    }
    let case = if rat(inp.beta) / rat(2.0) > BigRational::new((s as i64).into(), ((s + 2 * j) as i64).into()) {
        Case::A
    } else {
        Case::B
    };
    let slack = cap - inp.alpha;
    let a = 1.0 + 0.05 * slack.min(1.0);
    let (sf, jf) = (s as f64, j as f64);
    let mut gamma = match case {
        Case::A => inp.beta / 32.0,
        Case::B => 0.125 / (6.0 * (sf + 2.0 * jf) / (sf * inp.beta * inp.beta) + 2.0 * a / inp.beta),
    };
    let mut gamma_halvings = 0;
    let signs = loop {
        let sc = sign_conditions(case, s, j, a, gamma, inp.beta);
        if sc.iter().all(|c| c.holds) {
            break sc;
        }
        if gamma_halvings == MAX_GAMMA_HALVINGS {
            return Err(Error::Schedule(format!(
                "no gamma satisfies the case {case:?} sign conditions"
            )));
        }
        gamma /= 2.0;
        gamma_halvings += 1;
    };
    let q = 1.0 + (a - 1.0) * (sf / 2.0 + jf) + 2.5 * a * gamma;
    for halvings in 0..=MAX_L0_HALVINGS {
        let lg = generate(inp, case, a, gamma, halvings);
        let req = requirements(inp, a, gamma, &lg, CHECKED_INDICES);
        let halving_ok = lg
            .ll
            .windows(2)
            .all(|w| w[1] <= w[0] - std::f64::consts::LN_2);
        let base_ok = lg.ll[0] < 0.0 && lg.l_b < 0.0 && lg.lb > 0.0;
        if !(base_ok && halving_ok && req.iter().all(RequirementCheck::holds)) {
            continue;
        }
        let ln_lambda: Vec<f64> = lg.ll.iter().map(|x| lg.lb - a * x).collect();
        let l: Vec<f64> = lg.ll.iter().map(|x| x.exp()).collect();
        let lambda: Vec<f64> = ln_lambda.iter().map(|x| x.exp()).collect();
        let m: Vec<f64> = lg.lm.iter().map(|x| x.exp()).collect();
        let representable = (0..l.len())
            .take_while(|&i| {
                l[i] > 0.0 && lambda[i].is_finite() && m[i].is_finite() && l[i].is_normal()
            })
            .count();
        let sched = NkSchedule {
            case_tag: case,
            a,
            b: lg.lb.exp(),
            gamma,
            q,
            b_const: lg.l_b.exp(),
            c: inp.c,
            inputs: *inp,
            l0_halvings: halvings,
            gamma_halvings,
            ln_l: lg.ll,
            ln_lambda,
            ln_m: lg.lm,
            l,
            lambda,
            m,
            representable,
            sign_conditions: signs.clone(),
            requirements: req,
        };
        let bad = sched.invariant_violations();
        if bad.is_empty() {
            return Ok(sched);
        }
        if halvings == MAX_L0_HALVINGS {
            return Err(Error::Schedule(bad.join("; ")));
        }
    }
    Err(Error::Schedule(format!(
        "requirement inequalities fail after {MAX_L0_HALVINGS} halvings of l_0"
    )))
}

/// Geometric surrogate: `l_i = l_0 r_l^i`, `lambda_i = lambda_0 r_lambda^i`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Practical {
    pub l0: f64,
    pub lambda0: f64,
    pub l_ratio: f64,
    pub lambda_ratio: f64,
}

impl Practical {
    pub fn new(l0: f64, lambda0: f64) -> Self {
        Self {
            l0,
            lambda0,
            l_ratio: 0.5,
            lambda_ratio: 4.0,
        }
    }

    pub fn l(&self, i: usize) -> f64 {
        self.l0 * self.l_ratio.powi(i as i32)
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.lambda0 * self.lambda_ratio.powi(i as i32)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Schedule {
    Analytic(NkSchedule),
    Practical(Practical),
}

impl Schedule {
    fn params(&self, i: usize) -> Option<(f64, f64)> {
        match self {
            Schedule::Analytic(s) => (i < s.representable).then(|| (s.l[i], s.lambda[i])),
            Schedule::Practical(p) => Some((p.l(i), p.lambda(i))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NkOptions {
    pub iterations: usize,
    /// Stop once the measured deficit sup is at or below this value.
    pub target: f64,
    /// Exponents of the tracked quotients `[grad v_i]_alpha`.
    pub alphas: Vec<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub r0: f64,
    pub trim: usize,
    pub profile: Profile,
    pub guard_retries: usize,
}

impl Default for NkOptions {
    fn default() -> Self {
        Self {
            iterations: 4,
            target: 0.0,
            alphas: vec![0.2, 0.5],
            gamma: 0.1,
            beta: 1.0,
            r0: 0.1,
            trim: 4,
            profile: Profile::GridConsistent,
            guard_retries: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Budget,
    Target,
    Nyquist,
    Margin,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub l: f64,
    pub lambda: f64,
    pub deficit_in: f64,
    pub deficit: f64,
    pub dv_c0: f64,
    pub dv_c1: f64,
    pub dw_c0: f64,
    pub dw_c1: f64,
    pub hessian_v: f64,
    pub c_tilde: f64,
    pub telescoping_residual: f64,
    /// `[grad v_{i+1}]_alpha` on the core, aligned with `NkRunReport::alphas`.
    pub holder: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NkRunReport {
    pub alphas: Vec<f64>,
    pub initial_deficit: f64,
    /// `[grad v_0]_alpha` on the core.
    pub initial_holder: Vec<f64>,
    pub planned: usize,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub schedule: Schedule,
}

impl NkRunReport {
    /// `[initial, after iteration 0, ...]`.
    pub fn deficit_track(&self) -> Vec<f64> {
        std::iter::once(self.initial_deficit)
            .chain(self.iterations.iter().map(|r| r.deficit))
            .collect()
    }

    /// `[grad v_i]_alpha` for the `n`-th tracked exponent, initial value first.
    pub fn holder_track(&self, n: usize) -> Vec<f64> {
        std::iter::once(self.initial_holder[n])
            .chain(self.iterations.iter().map(|r| r.holder[n]))
            .collect()
    }

    pub fn total_dv_c1(&self) -> f64 {
        self.iterations.iter().map(|r| r.dv_c1).sum()
    }

    pub fn total_dw_c1(&self) -> f64 {
        self.iterations.iter().map(|r| r.dw_c1).sum()
    }

    /// One CSV row per iteration.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        write!(out, "iteration,l,lambda,deficit_in,deficit,dv_c0,dv_c1,dw_c0,dw_c1,hessian_v,c_tilde,telescoping")?;
        for a in &self.alphas {
            write!(out, ",holder_{a}")?;
        }
        writeln!(out)?;
        for r in &self.iterations {
            write!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.index,
                r.l,
                r.lambda,
                r.deficit_in,
                r.deficit,
                r.dv_c0,
                r.dv_c1,
                r.dw_c0,
                r.dw_c1,
                r.hessian_v,
                r.c_tilde,
                r.telescoping_residual
            )?;
            for hq in &r.holder {
                write!(out, ",{hq:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NkOutput {
    pub v: Field,
    pub w: Field,
    pub deficit: Field,
    pub report: NkRunReport,
}

fn holder_on_core(v: &Field, core: &Grid2, alphas: &[f64]) -> Result<Vec<f64>> {
    let g = fd_gradient(v)?.restrict(core)?;
    alphas.iter().map(|&al| holder(&g, al)).collect()
}

fn stage_params(opts: &NkOptions, l: f64, lambda: f64) -> StageParams {
    let mut p = StageParams::new(l, lambda);
    p.gamma = opts.gamma;
    p.beta = opts.beta;
    p.r0 = opts.r0;
    p.trim = opts.trim;
    p.profile = opts.profile;
    p.guard_retries = opts.guard_retries;
    p
}

/// Margin a stage at scale `l` consumes, and the margin it needs to be left with.
fn stage_cost(l: f64, h: f64, trim: usize) -> (f64, f64) {
    let consumed = (crate::grid::nodes_for(l, h) + trim) as f64 * h;
    (consumed, (l - h).max(0.0))
}

/// Iterates stages along `schedule` until the budget, the target, the
/// resolution or the margin runs out.
pub fn run(v: &Field, w: &Field, a: &Field, schedule: Schedule, opts: &NkOptions) -> Result<NkOutput> {
    let k = v.shape().rows;
    let ex = exponents(k)?;
    let d0 = deficit(v, w, a)?;
    let initial_deficit = sup(&d0);
    if !(initial_deficit > 0.0) {
        return Err(Error::Precondition("deficit vanishes; nothing to iterate".into()));
    }
    if initial_deficit > 1.0 {
        return Err(Error::Precondition(format!(
            "deficit {initial_deficit} exceeds 1"
        )));
    }
    if opts.alphas.iter().any(|&al| !(al > 0.0 && al < 1.0)) {
        return Err(Error::InvalidParameter("tracked exponents must lie in (0, 1)".into()));
    }
    let h = v.grid().h();
    let core = v.grid().core()?;
    let mut planned = 0;
    let mut budget = v.grid().margin();
    while planned < opts.iterations {
        let Some((l, _)) = schedule.params(planned) else { break };
        let (cost, residual) = stage_cost(l, h, opts.trim);
        if budget - cost < residual - 1e-9 * h {
            break;
        }
        budget -= cost;
        planned += 1;
    }
    let initial_holder = holder_on_core(v, &core, &opts.alphas)?;
    let (mut cv, mut cw, mut ca) = (v.clone(), w.clone(), a.clone());
    let mut cd = d0;
    let mut records = Vec::new();
    let mut termination = Termination::Budget;
    for i in 0..opts.iterations {
        let Some((l, lambda)) = schedule.params(i) else {
            termination = Termination::Nyquist;
            break;
        };
        if i >= planned || l < 2.0 * h {
            termination = Termination::Margin;
            break;
        }
        let top = frequency_ladder(k, lambda, l).map(|lad| lad[ex.n]);
        match top {
            Ok(t) if t * h <= MAX_LAMBDA_H * (1.0 + 1e-12) => {}
            _ => {
                termination = Termination::Nyquist;
                break;
            }
        }
        let deficit_in = sup(&cd);
        let p = stage_params(opts, l, lambda);
        let out = run_stage(&cv, &cw, &ca, &p).map_err(|e| Error::Stage {
            iteration: i,
            source: Box::new(e),
        })?;
        let r = &out.report;
        records.push(IterationRecord {
            index: i,
            l,
            lambda,
            deficit_in,
            deficit: r.deficit,
            dv_c0: r.dv_c0,
            dv_c1: r.dv_c1,
            dw_c0: r.dw_c0,
            dw_c1: r.dw_c1,
            hessian_v: r.hessian_v,
            c_tilde: r.decompositions.iter().map(|d| d.c_tilde).sum(),
            telescoping_residual: r.telescoping_residual,
            holder: holder_on_core(&out.v, &core, &opts.alphas)?,
        });
        ca = ca.restrict(out.v.grid())?;
        cv = out.v;
        cw = out.w;
        cd = out.deficit;
        if sup(&cd) <= opts.target {
            termination = Termination::Target;
            break;
        }
    }
    let report = NkRunReport {
        alphas: opts.alphas.clone(),
        initial_deficit,
        initial_holder,
        planned,
        iterations: records,
        termination,
        schedule,
    };
    if report.iterations.iter().any(|r| !r.deficit.is_finite() || r.deficit < 0.0) {
        return Err(Error::NonFinite("iteration deficit track".into()));
    }
    Ok(NkOutput {
        v: cv,
        w: cw,
        deficit: cd,
        report,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum FlexSchedule {
    /// Build the double-exponential schedule from the smoothed data with this `C`.
    Analytic { c: f64 },
    Practical(Practical),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlexOptions {
    pub epsilon: f64,
    pub alpha: f64,
    /// Smoothing scale in grid spacings.
    pub smoothing_spacings: f64,
    pub first_step: FirstStepOptions,
    pub schedule: FlexSchedule,
    pub nk: NkOptions,
    /// Remaining deficits at or below this sup skip the iteration.
    pub zero_tolerance: f64,
}

impl FlexOptions {
    pub fn new(epsilon: f64, alpha: f64, schedule: FlexSchedule) -> Self {
        let first_step = FirstStepOptions {
            closeness: epsilon / 2.0,
            target: epsilon.powi(5),
            ..FirstStepOptions::default()
        };
        Self {
            epsilon,
            alpha,
            smoothing_spacings: 2.0,
            first_step,
            schedule,
            nk: NkOptions::default(),
            zero_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub scale: f64,
    pub v_c1: f64,
    pub w_c1: f64,
    pub a_c0: f64,
    /// All three closeness bounds hold at `epsilon^5`.
    pub reached: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlexReport {
    pub epsilon: f64,
    pub initial_deficit: f64,
    pub min_deficit_eigenvalue: f64,
    pub smoothing: SmoothingReport,
    pub first_step: FirstStepReport,
    pub short_circuit: bool,
    pub nk: Option<NkRunReport>,
    pub final_deficit: f64,
    pub v_distance: f64,
    pub w_distance: f64,
    pub close: bool,
}

#[derive(Clone, Debug)]
pub struct FlexOutput {
    pub v: Field,
    pub w: Field,
    pub deficit: Field,
    pub report: FlexReport,
}

/// Smallest eigenvalue of a symmetric matrix field, minimised over nodes.
pub fn min_eigenvalue(d: &Field) -> f64 {
    d.data()
        .chunks(4)
        .map(|m| {
            let (p, r) = ((m[0] + m[3]) / 2.0, (m[0] - m[3]) / 2.0);
            let off = (m[1] + m[2]) / 2.0;
            p - r.hypot(off)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smoothing, one corrective step over the primitive directions and the
/// stage iteration, from a strictly short `(v, w)` towards `A`.
pub fn full_flexibility(v: &Field, w: &Field, a: &Field, opts: &FlexOptions) -> Result<FlexOutput> {
    let k = v.shape().rows;
    let ex = exponents(k)?;
    let eps = opts.epsilon;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon {eps} outside (0, 1)")));
    }
    let cap = (opts.nk.beta / 2.0).min(ex.threshold_f64());
    if !(opts.alpha > 0.0 && opts.alpha < cap) {
        return Err(Error::InvalidParameter(format!(
            "alpha {} outside (0, {cap})",
            opts.alpha
        )));
    }
    let d = deficit(v, w, a)?;
    let initial_deficit = sup(&d);
    let min_eig = min_eigenvalue(&d);
    if !(min_eig > 0.0) {
        return Err(Error::Precondition(format!(
            "deficit is not positive definite (min eigenvalue {min_eig:e})"
        )));
    }
    let h = v.grid().h();
    let moll = Mollifier::new(opts.smoothing_spacings * h, h)?;
    let v1 = moll.apply(v)?;
    let w1 = moll.apply(w)?;
    let a1 = moll.apply(a)?;
    let g1 = v1.grid().clone();
    let target = eps.powi(5);
    let v_c1 = c1_norm(&v1.sub(&v.restrict(&g1)?)?)?;
    let w_c1 = c1_norm(&w1.sub(&w.restrict(&g1)?)?)?;
    let a_c0 = sup(&a1.sub(&a.restrict(&g1)?)?);
    let smoothing = SmoothingReport {
        scale: moll.scale(),
        v_c1,
        w_c1,
        a_c0,
        reached: v_c1 <= target && w_c1 <= target && a_c0 <= target,
    };
    let d1 = deficit(&v1, &w1, &a1)?;
    let fs = first_step(&v1, &w1, &d1, &opts.first_step)?;
    let (v2, w2) = (fs.v, fs.w);
    let d2 = deficit(&v2, &w2, &a1)?;
    let remaining = fs.report.remaining;
    let short_circuit = remaining <= opts.zero_tolerance;
    let (vf, wf, df, nk) = if short_circuit {
        (v2, w2, d2, None)
    } else {
        let schedule = match &opts.schedule {
            FlexSchedule::Practical(p) => Schedule::Practical(*p),
            FlexSchedule::Analytic { c } => {
                let mut inp = ScheduleInputs::new(ex, opts.nk.beta, opts.alpha, opts.nk.iterations.max(CHECKED_INDICES))
                    .with_norms(&v2, &d2, &a1)?;
                inp.c = *c;
                Schedule::Analytic(build_schedule(&inp)?)
            }
        };
        let out = run(&v2, &w2, &a1, schedule, &opts.nk)?;
        (out.v, out.w, out.deficit, Some(out.report))
    };
    let fg = vf.grid().clone();
    let vd = sup(&vf.sub(&v.restrict(&fg)?)?);
    let wd = sup(&wf.sub(&w.restrict(&fg)?)?);
    let report = FlexReport {
        epsilon: eps,
        initial_deficit,
        min_deficit_eigenvalue: min_eig,
        smoothing,
        first_step: fs.report,
        short_circuit,
        nk,
        final_deficit: sup(&df),
        v_distance: vd,
        w_distance: wd,
        close: vd <= eps && wd <= eps,
    };
    Ok(FlexOutput {
        v: vf,
        w: wf,
        deficit: df,
        report,
    })
}
