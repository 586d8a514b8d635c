mod common;

use common::{max_abs_diff, rng, unit_grid, Smooth};
use vkflex::conformal::{decompose, estimate_r0, identity_residual, ConformalSolver};
use vkflex::norms::sup;
use vkflex::{Field, Grid2, Rect, Shape};

#[test]
fn identity_decomposes_trivially() {
    let g = unit_grid(64, 0.0);
    let dec = decompose(&Field::identity(&g, 1.0)).unwrap();
    assert!(sup(&dec.psi_bar) < 1e-10);
    assert!(dec.a_bar.data().iter().all(|&a| (a - 1.0).abs() < 1e-10));
}

#[test]
fn constant_diagonal_matrix_satisfies_identity() {
    let g = unit_grid(48, 0.0);
    let d = Field::constant(&g, Shape::MATRIX2, &[0.3, 0.0, 0.0, -0.2]);
    let dec = decompose(&d).unwrap();
    assert!(identity_residual(&d, &dec, 1).unwrap() < 1e-10);
}

#[test]
fn decomposition_is_linear() {
    let g = unit_grid(40, 0.05);
    let solver = ConformalSolver::new(&g).unwrap();
    let mut r = rng(11);
    let d1 = Smooth::random(&mut r, 3, 3, 1.0, 5.0).sym_field(&g);
    let d2 = Smooth::random(&mut r, 3, 3, 1.0, 5.0).sym_field(&g);
    let (s, t) = (0.7, -1.3);
    let mut comb = d1.scaled(s);
    comb.axpy(t, &d2).unwrap();
    let (a, b, c) = (
        solver.decompose(&d1).unwrap(),
        solver.decompose(&d2).unwrap(),
        solver.decompose(&comb).unwrap(),
    );
    let mut psi = a.psi_bar.scaled(s);
    psi.axpy(t, &b.psi_bar).unwrap();
    let mut ab = a.a_bar.scaled(s);
    ab.axpy(t, &b.a_bar).unwrap();
    assert!(max_abs_diff(psi.data(), c.psi_bar.data()) < 1e-9);
    assert!(max_abs_diff(ab.data(), c.a_bar.data()) < 1e-9);
}

#[test]
fn random_smooth_fields_satisfy_identity() {
    let g = unit_grid(96, 0.0);
    let solver = ConformalSolver::new(&g).unwrap();
    let mut r = rng(5);
    for _ in 0..5 {
        let d = Smooth::random(&mut r, 3, 4, 1.0, 6.0).sym_field(&g);
        let dec = solver.decompose(&d).unwrap();
        let res = identity_residual(&d, &dec, 1).unwrap();
        assert!(res <= 1e-6 * (1.0 + sup(&d)), "residual {res}");
    }
}

#[test]
fn solver_rejects_foreign_grids() {
    let solver = ConformalSolver::new(&unit_grid(32, 0.0)).unwrap();
    let d = Field::identity(&unit_grid(33, 0.0), 1.0);
    assert!(solver.decompose(&d).is_err());
}

#[test]
fn stability_radius_is_positive_and_sharp() {
    let g = Grid2::new(Rect::unit(), 0.0, 65).unwrap();
    let est = estimate_r0(&g, 0.1).unwrap();
    assert!(est.r0 > 0.1 && est.r0 < 100.0, "r0 {}", est.r0);
    assert!(est.min_a_bar_at_double <= 0.5);
}
