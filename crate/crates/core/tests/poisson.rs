mod common;

use common::{max_abs_diff, rng, unit_grid, Smooth};
use std::f64::consts::PI;
use vkflex::poisson::{composed_second_difference, eig_5pt, solve_dirichlet, ConsistentLaplacian};
use vkflex::{Field, Shape};

/// Series value of the continuum solution of `Delta psi = 1` on the unit
/// square with zero boundary data, at the centre.
fn series_center() -> f64 {
    let mut s = 0.0;
    for m in (1..800).step_by(2) {
        for n in (1..800).step_by(2) {
            let sign = if ((m - 1) / 2 + (n - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let (mf, nf) = (m as f64, n as f64);
            s += sign / (mf * nf * (mf * mf + nf * nf));
        }
    }
    -16.0 / PI.powi(4) * s
}

#[test]
fn unit_load_center_value() {
    let oracle = series_center();
    assert!((oracle + 0.07367).abs() < 2e-5, "oracle {oracle}");
    let g = unit_grid(129, 0.0);
    let psi = solve_dirichlet(&Field::constant(&g, Shape::SCALAR, &[1.0])).unwrap();
    let c = psi.at(64, 64)[0];
    assert!((c + 0.07367).abs() < 1e-4, "centre {c}");
    assert!((c - oracle).abs() < 1e-4);
}

#[test]
fn eigenfunction_is_solved_with_the_discrete_eigenvalue() {
    let g = unit_grid(65, 0.0);
    let h = g.h();
    let f = Field::scalar_fn(&g, |x, y| (PI * x).sin() * (PI * y).sin());
    let psi = solve_dirichlet(&f).unwrap();
    let mu = 4.0 * ((PI * h).cos() - 1.0) / (h * h);
    assert!((eig_5pt(1, 63, h) * 2.0 - mu).abs() < 1e-9 * mu.abs());
    let want = f.scaled(1.0 / mu);
    assert!(max_abs_diff(psi.data(), want.data()) < 1e-12);
    let continuum = f.scaled(-1.0 / (2.0 * PI * PI));
    assert!(max_abs_diff(psi.data(), continuum.data()) < 1e-4);
}

#[test]
fn five_point_residual_vanishes() {
    let g = unit_grid(40, 0.0);
    let rhs = Smooth::random(&mut rng(3), 1, 3, 1.0, 6.0).field(&g).reshaped(Shape::SCALAR).unwrap();
    let psi = solve_dirichlet(&rhs).unwrap();
    let (nx, ny, h) = (g.nx(), g.ny(), g.h());
    let p = psi.data();
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let n = j * nx + i;
            let lap = (p[n - 1] + p[n + 1] + p[n - nx] + p[n + nx] - 4.0 * p[n]) / (h * h);
            assert!((lap - rhs.data()[n]).abs() < 1e-9);
        }
    }
    for i in 0..nx {
        assert_eq!(p[i], 0.0);
        assert_eq!(p[(ny - 1) * nx + i], 0.0);
    }
}

#[test]
fn composed_operator_matches_squared_first_difference() {
    let h = 0.1;
    let t = composed_second_difference(8, h);
    assert_eq!(t.nrows(), 6);
    // Interior row of D D away from the ends is (1, 0, -2, 0, 1) / (4 h^2).
    let c = 1.0 / (4.0 * h * h);
    assert!((t[(3, 1)] - c).abs() < 1e-12);
    assert!((t[(3, 3)] + 2.0 * c).abs() < 1e-12);
    assert!((t[(3, 5)] - c).abs() < 1e-12);
    assert!(t[(3, 2)].abs() < 1e-12 && t[(3, 4)].abs() < 1e-12);
}

#[test]
fn consistent_laplacian_inverts_its_interior_equations() {
    for n in [33, 48] {
        let g = unit_grid(n, 0.0);
        let lap = ConsistentLaplacian::new(&g).unwrap();
        assert!(lap.matches(&g));
        let rhs = Smooth::random(&mut rng(n as u64), 1, 4, 1.0, 8.0).field(&g);
        let psi = lap.solve(rhs.data()).unwrap();
        let back = lap.apply(&psi);
        let (nx, ny) = (g.nx(), g.ny());
        let scale = rhs.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                assert!((back[k] - rhs.data()[k]).abs() < 1e-8 * (1.0 + scale));
            }
        }
    }
}
