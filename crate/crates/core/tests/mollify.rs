mod common;

use common::{max_abs_diff, rng, unit_grid, Smooth};
use vkflex::mollify::{commutator, mollify, Mollifier};
use vkflex::norms::sup;
use vkflex::{Error, Field, Shape};

#[test]
fn kernel_has_unit_mass_and_symmetry() {
    let m = Mollifier::new(0.1, 0.01).unwrap();
    assert_eq!(m.radius(), 10);
    assert_eq!(m.shrink_nodes(), 10);
    let w = m.weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    let side = 2 * m.radius() + 1;
    for b in 0..side {
        for a in 0..side {
            assert!((w[b * side + a] - w[a * side + b]).abs() < 1e-17);
            assert!((w[b * side + a] - w[(side - 1 - b) * side + a]).abs() < 1e-17);
        }
    }
}

#[test]
fn unresolved_kernel_is_rejected() {
    assert!(matches!(Mollifier::new(0.015, 0.01), Err(Error::KernelUnresolved { .. })));
}

#[test]
fn output_grid_shrinks_by_the_scale() {
    let g = unit_grid(65, 0.2);
    let m = Mollifier::new(0.05, g.h()).unwrap();
    let out = m.output_grid(&g).unwrap();
    assert_eq!(g.offset_of(&out), Some((m.shrink_nodes(), m.shrink_nodes())));
    assert!(out.margin() >= 0.2 - 0.05 - g.h() - 1e-12 && out.margin() <= 0.2 - 0.05 + 1e-12);
}

#[test]
fn constants_and_affine_fields_are_preserved() {
    let g = unit_grid(129, 0.2);
    for l in [3.0 * g.h(), 0.1] {
        let c = Field::constant(&g, Shape::vector(2), &[1.5, -2.0]);
        let mc = mollify(&c, l).unwrap();
        assert!(mc.data().chunks(2).all(|n| (n[0] - 1.5).abs() < 1e-12 && (n[1] + 2.0).abs() < 1e-12));
        let f = Field::scalar_fn(&g, |x, y| 2.0 * x - 3.0 * y + 1.0);
        let mf = mollify(&f, l).unwrap();
        let want = f.restrict(mf.grid()).unwrap();
        assert!(max_abs_diff(mf.data(), want.data()) < 1e-11, "l = {l}");
    }
}

#[test]
fn commutator_of_coordinate_is_second_moment() {
    // (x^2)_l - (x_l)^2 = sum_y y_1^2 phi(y), the per-axis second moment.
    let g = unit_grid(129, 0.2);
    for l in [3.0 * g.h(), 0.08] {
        let m = Mollifier::new(l, g.h()).unwrap();
        let r = m.radius() as isize;
        let side = 2 * m.radius() + 1;
        let mut m2 = 0.0;
        for b in -r..=r {
            for a in -r..=r {
                let wt = m.weights()[((b + r) as usize) * side + (a + r) as usize];
                m2 += wt * (a as f64 * g.h()).powi(2);
            }
        }
        assert!((m.second_moment() - m2).abs() < 1e-15);
        let x = Field::scalar_fn(&g, |x, _| x);
        let c = commutator(&x, &x, l).unwrap();
        assert!(c.data().iter().all(|&v| (v - m2).abs() < 1e-12 * (1.0 + m2)), "l = {l}");
        assert!(m2 > 0.0);
    }
}

#[test]
fn spectral_path_matches_direct_summation() {
    let g = unit_grid(97, 0.15);
    let f = Smooth::random(&mut rng(7), 3, 4, 1.0, 12.0).field(&g);
    let m = Mollifier::new(0.07, g.h()).unwrap();
    assert!(m.radius() > 4);
    let out = m.apply(&f).unwrap();
    let og = out.grid();
    let (di, dj) = g.offset_of(og).unwrap();
    let r = m.radius() as isize;
    let side = 2 * m.radius() + 1;
    let mut direct = vec![0.0; out.data().len()];
    for j in 0..og.ny() {
        for i in 0..og.nx() {
            for b in -r..=r {
                for a in -r..=r {
                    let wt = m.weights()[((b + r) as usize) * side + (a + r) as usize];
                    let (si, sj) = ((i + di) as isize + a, (j + dj) as isize + b);
                    let node = f.at(si as usize, sj as usize);
                    for c in 0..3 {
                        direct[(j * og.nx() + i) * 3 + c] += wt * node[c];
                    }
                }
            }
        }
    }
    assert!(max_abs_diff(out.data(), &direct) < 1e-12);
}

#[test]
fn mollification_error_is_second_order_in_scale() {
    let g = unit_grid(257, 0.2);
    let f = Field::scalar_fn(&g, |x, y| (3.0 * x + y).sin());
    let err = |l: f64| {
        let m = mollify(&f, l).unwrap();
        sup(&m.sub(&f.restrict(m.grid()).unwrap()).unwrap())
    };
    let ratio = err(0.1) / err(0.05);
    assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
}
