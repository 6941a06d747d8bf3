use std::sync::Arc;

use lrperc::diagrams::{jhat_vec, shifted_j_moment, triangle_proxy, DhatModel, QuadratureSpec};
use lrperc::{KernelSpec, KernelTable, Profile};

#[test]
fn jhat_is_even_in_the_shift() {
    let m = DhatModel::surrogate(0.8, 2);
    let spec = QuadratureSpec::new(2, 1 << 16, 4, 1);
    let a = jhat_vec(&[0.01, 0.0], &m, &spec).unwrap();
    let b = jhat_vec(&[-0.01, 0.0], &m, &spec).unwrap();
    assert!((a.value - b.value).abs() <= a.half_width + b.half_width, "{a:?} {b:?}");
}

#[test]
fn shifted_moment_grows_no_faster_than_the_bound() {
    let m = DhatModel::surrogate(0.8, 2);
    let spec = QuadratureSpec::new(2, 1 << 14, 4, 3);
    let us = [1e-3, 1e-2, 1e-1];
    let v: Vec<f64> = us.iter().map(|u| shifted_j_moment(*u, 0.6, &m, &spec).unwrap().value).collect();
    // the bound allows u^{-0.2}; the integrand gives growth like ln(1/u)
    let slope = (v[2] / v[0]).ln() / 100f64.ln();
    assert!((-0.3..=0.0).contains(&slope), "slope {slope}, values {v:?}");
    let (d1, d2) = (v[0] - v[1], v[1] - v[2]);
    assert!((d1 / d2 - 1.0).abs() < 0.15, "per-decade increments {d1} {d2}");
}

#[test]
fn shifted_moment_at_u_one_is_well_resolved() {
    let m = DhatModel::surrogate(0.8, 2);
    let v = shifted_j_moment(1.0, 0.6, &m, &QuadratureSpec::new(2, 1 << 14, 4, 3)).unwrap();
    assert!(v.half_width <= 0.1 * v.value, "{v:?}");
}

#[test]
fn exact_and_surrogate_classify_alike() {
    let spec = |d| QuadratureSpec::new(d, 1 << 10, 3, 2);
    for (d, alpha, diverging) in [(1usize, 1.0, true), (2, 0.5, false)] {
        let s = triangle_proxy(&DhatModel::surrogate(alpha, d), &spec(d)).unwrap();
        let t = KernelTable::build(&KernelSpec::new(d, alpha, 1.0, Profile::Linfty)).unwrap();
        let e = triangle_proxy(&DhatModel::Exact(Arc::new(t)), &spec(d)).unwrap();
        assert_eq!(s.diverging, diverging, "surrogate d={d} alpha={alpha}: {s:?}");
        assert_eq!(e.diverging, diverging, "exact d={d} alpha={alpha}: {e:?}");
    }
}
