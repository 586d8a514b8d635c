mod common;

use vkflex::calculus::half_gram;
use vkflex::nash_kuiper::{
    build_schedule, full_flexibility, min_eigenvalue, run, Case, FlexOptions, FlexSchedule,
    NkOptions, Practical, Schedule, ScheduleInputs, Termination,
};
use vkflex::stage::exponents;
use vkflex::step::Profile;
use vkflex::{Field, Grid2, Rect, Shape};

fn inputs(beta: f64, alpha: f64) -> ScheduleInputs {
    let mut inp = ScheduleInputs::new(exponents(2).unwrap(), beta, alpha, 4);
    inp.deficit = 0.1;
    inp.grad_v = 0.5;
    inp.a_holder = 1.0;
    inp
}

fn close(x: f64, y: f64, rel: f64) -> bool {
    (x - y).abs() <= rel * (1.0 + x.abs().max(y.abs()))
}

#[test]
fn case_a_schedule_closed_form() {
    let s = build_schedule(&inputs(1.0, 0.2)).unwrap();
    assert_eq!(s.case_tag, Case::A);
    assert!(s.invariant_violations().is_empty(), "{:?}", s.invariant_violations());
    assert!(s.sign_conditions.iter().all(|c| c.holds));
    assert_eq!(s.requirements.len(), 3);
    assert!(s.requirements.iter().all(|r| r.holds()), "{:?}", s.requirements);
    // k = 2: S = 1, J = 1; b = (C (1 + |grad v|))^(4 / S).
    assert!(close(s.b, 81.0, 1e-12), "{}", s.b);
    let q = 1.0 + (s.a - 1.0) * 1.5 + 2.5 * s.a * s.gamma;
    assert!(close(s.q, q, 1e-14));
    let l0 = (0.1 / (2.0 * 81f64.powi(5))).powf(1.0) / 2f64.powi(s.l0_halvings as i32);
    assert!(close(s.l[0], l0, 1e-9), "{} {}", s.l[0], l0);
    for i in 0..s.len() - 1 {
        let next = s.b_const.ln() + s.q * s.ln_l[i];
        assert!(close(s.ln_l[i + 1], next, 1e-10));
    }
    assert!(close(s.m[0], 0.1f64.sqrt() / s.l[0], 1e-9));
    assert!(s.representable >= 3);
}

#[test]
fn case_b_schedule_closed_form() {
    let s = build_schedule(&inputs(0.5, 0.1)).unwrap();
    assert_eq!(s.case_tag, Case::B);
    assert!(s.invariant_violations().is_empty(), "{:?}", s.invariant_violations());
    assert!(s.sign_conditions.iter().all(|c| c.holds));
    assert!(s.requirements.iter().all(|r| r.holds()), "{:?}", s.requirements);
    let l0 = (0.1f64 / 4.0).powf(2.0) / 2f64.powi(s.l0_halvings as i32);
    assert!(close(s.l[0], l0, 1e-9), "{} {}", s.l[0], l0);
    // b^(S beta / 6) = 2 (1 + |grad v|) / l_0.
    let lb = 6.0 / 0.5 * (3.0f64 / s.l[0]).ln();
    assert!(close(s.b.ln(), lb, 1e-10));
    let small = (6.0 * 3.0 / 0.25 + 2.0 * s.a / 0.5) * s.gamma;
    assert!(small <= 0.125 + 1e-15);
}

#[test]
fn schedule_rejects_bad_inputs() {
    assert!(build_schedule(&inputs(1.0, 0.5)).is_err());
    assert!(build_schedule(&inputs(1.0, 0.0)).is_err());
    let mut inp = inputs(1.0, 0.2);
    inp.iterations = 2;
    assert!(build_schedule(&inp).is_err());
    let mut inp = inputs(1.0, 0.2);
    inp.deficit = 0.0;
    assert!(build_schedule(&inp).is_err());
    inp.deficit = 1.5;
    assert!(build_schedule(&inp).is_err());
}

#[test]
fn min_eigenvalue_of_constant_matrix() {
    let g = Grid2::new(Rect::unit(), 0.0, 17).unwrap();
    let d = Field::constant(&g, Shape::MATRIX2, &[2.0, 1.0, 1.0, 2.0]);
    assert!(close(min_eigenvalue(&d), 1.0, 1e-15));
}

fn small_problem() -> (Field, Field, Field) {
    let g = Grid2::with_spacing(Rect::new(0.0, 0.2, 0.0, 0.2), 0.12, 0.0025).unwrap();
    let v = Field::from_fn(&g, Shape::vector(2), |x, y, o| {
        o[0] = 0.3 * (3.0 * x + 1.0).sin() * (2.0 * y).cos();
        o[1] = 0.3 * (x - 2.0 * y).cos();
    });
    let w = Field::zeros(&g, Shape::vector(2));
    let d = Field::sym_fn(&g, |x, y| {
        let p = 0.05 * (1.0 + 0.2 * (x + y).sin());
        [p, 0.005 * (x - y).cos(), p]
    });
    let a = half_gram(&v).unwrap().add(&d).unwrap();
    (v, w, a)
}

#[test]
fn run_rejects_vanishing_deficit() {
    let (v, w, _) = small_problem();
    let a = half_gram(&v).unwrap();
    let sched = Schedule::Practical(Practical::new(0.02, 100.0));
    assert!(run(&v, &w, &a, sched, &NkOptions::default()).is_err());
}

#[test]
fn practical_run_terminates_cleanly() {
    let (v, w, a) = small_problem();
    let opts = NkOptions {
        r0: 2.0,
        ..NkOptions::default()
    };
    let sched = Schedule::Practical(Practical::new(0.02, 100.0));
    let out = run(&v, &w, &a, sched, &opts).unwrap();
    let r = &out.report;
    assert!(!r.iterations.is_empty());
    assert!(matches!(
        r.termination,
        Termination::Budget | Termination::Nyquist | Termination::Margin
    ));
    assert_eq!(r.deficit_track().len(), r.iterations.len() + 1);
    for it in &r.iterations {
        assert!(it.deficit.is_finite());
        assert!(it.telescoping_residual < 1e-8);
        assert_eq!(it.holder.len(), 2);
    }
    assert!(out.v.is_finite() && out.w.is_finite());
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), r.iterations.len() + 1);
}

#[test]
fn flexibility_short_circuits_on_exact_first_step() {
    let g = Grid2::new(Rect::new(0.0, 0.1, 0.0, 0.1), 0.01, 128).unwrap();
    let v = Field::zeros(&g, Shape::vector(3));
    let w = Field::zeros(&g, Shape::vector(2));
    let a = Field::constant(&g, Shape::MATRIX2, &[0.3, 0.1, 0.1, 0.2]);
    let mut opts = FlexOptions::new(0.5, 0.2, FlexSchedule::Practical(Practical::new(0.01, 100.0)));
    opts.first_step.rho = 0.0;
    opts.first_step.profile = Profile::GridConsistent;
    opts.zero_tolerance = 1e-10;
    let out = full_flexibility(&v, &w, &a, &opts).unwrap();
    let r = &out.report;
    assert!(r.short_circuit, "{:?}", r.first_step);
    assert!(r.nk.is_none());
    assert!(r.close);
    assert!(r.v_distance <= 0.25 && r.w_distance <= 0.25);
}

#[test]
fn flexibility_rejects_non_short_data() {
    let g = Grid2::new(Rect::new(0.0, 0.1, 0.0, 0.1), 0.01, 64).unwrap();
    let v = Field::zeros(&g, Shape::vector(2));
    let w = Field::zeros(&g, Shape::vector(2));
    let a = Field::constant(&g, Shape::MATRIX2, &[0.3, 0.0, 0.0, -0.1]);
    let opts = FlexOptions::new(0.5, 0.2, FlexSchedule::Analytic { c: 2.0 });
    assert!(full_flexibility(&v, &w, &a, &opts).is_err());
    let a = Field::identity(&g, 0.1);
    let bad = FlexOptions::new(0.5, 0.45, FlexSchedule::Analytic { c: 2.0 });
    assert!(full_flexibility(&v, &w, &a, &bad).is_err());
}
