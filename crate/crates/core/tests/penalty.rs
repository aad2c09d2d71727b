use std::sync::Arc;

use pqobstacle::penalty::{
    compute_kappa0, h_delta, h_delta_prime, smoothed_penalty, smoothed_penalty_gradient,
};
use pqobstacle::{Expr, Field, Grid, Integrand, ObstacleProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn softplus_is_close_to_the_positive_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for delta in [1.0, 0.1, 1e-3] {
        let mut xs: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-100.0..100.0)).collect();
        xs.sort_by(f64::total_cmp);
        let h: Vec<f64> = xs.iter().map(|x| h_delta(*x, delta).unwrap()).collect();
        for (x, hx) in xs.iter().zip(&h) {
            assert!(*hx >= 0.0);
            assert!((hx - x.max(0.0)).abs() <= delta * std::f64::consts::LN_2 * (1.0 + 1e-12));
            let d = h_delta_prime(*x, delta).unwrap();
            assert!((0.0..=1.0).contains(&d));
        }
        assert!(h.windows(2).all(|w| w[1] >= w[0]));
    }
}

proptest! {
    #[test]
    fn softplus_is_midpoint_convex(a in -50.0f64..50.0, b in -50.0f64..50.0, delta in 1e-3f64..1.0) {
        let mid = h_delta(0.5 * (a + b), delta).unwrap();
        let avg = 0.5 * (h_delta(a, delta).unwrap() + h_delta(b, delta).unwrap());
        prop_assert!(mid <= avg * (1.0 + 1e-12) + 1e-300);
    }
}

fn rough_pair(seed: u64) -> (Field, Field) {
    let grid = Arc::new(Grid::unit_square(9).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Field::from_fn(grid.clone(), 2, |_, out| {
        out.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0))
    })
    .unwrap();
    let psi = Field::from_fn(grid, 2, |_, out| {
        out.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0))
    })
    .unwrap();
    (u, psi)
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let (u, psi) = rough_pair(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for delta in [0.5, 0.05] {
        let grad = smoothed_penalty_gradient(&u, &psi, delta).unwrap();
        for _ in 0..20 {
            let k = rng.gen_range(0..u.values().len());
            let h = 1e-6;
            let mut plus = u.clone();
            plus.values_mut()[k] += h;
            let mut minus = u.clone();
            minus.values_mut()[k] -= h;
            let fd = (smoothed_penalty(&plus, &psi, delta).unwrap()
                - smoothed_penalty(&minus, &psi, delta).unwrap())
                / (2.0 * h);
            let exact = grad.values()[k];
            assert!(
                (fd - exact).abs() <= 1e-6 * exact.abs().max(1e-4),
                "{fd} vs {exact}"
            );
        }
    }
}

#[test]
fn penalty_tends_to_positive_part_linearly_in_delta() {
    let (u, psi) = rough_pair(4);
    let w = u.grid().lumped_weights();
    let limit: f64 = u
        .values()
        .iter()
        .zip(psi.values())
        .enumerate()
        .map(|(k, (a, b))| w[k / 2] * (b - a).max(0.0))
        .sum();
    let mut fitted: f64 = 0.0;
    for delta in [1e-1, 1e-2, 1e-3, 1e-4] {
        let err = (smoothed_penalty(&u, &psi, delta).unwrap() - limit).abs();
        fitted = fitted.max(err / delta);
    }
    // nested softplus: each layer is off by at most delta ln 2, per component
    assert!(fitted <= 2.0 * 2.0 * std::f64::consts::LN_2, "{fitted}");
}

fn problem(integrand: Integrand, psi: Expr) -> ObstacleProblem {
    let grid = Arc::new(Grid::unit_square(33).unwrap());
    let psi = Field::sample(grid.clone(), &[psi]).unwrap();
    let g = Field::constant(grid, 1, 10.0);
    ObstacleProblem::new(integrand, psi, g).unwrap()
}

#[test]
fn kappa0_of_quadratic_cap_is_eight() {
    let cap = Expr::ParabolicCap {
        height: 1.0,
        curvature: 1.0,
        center: vec![0.0, 0.0],
    };
    let k0 = compute_kappa0(&problem(Integrand::p_power(2.0).unwrap(), cap), 0.0).unwrap();
    assert!((k0.value - 8.0).abs() < 1e-9, "{}", k0.value);
}

#[test]
fn kappa0_vanishes_for_affine_obstacles() {
    let plane = Expr::Affine {
        offset: -1.0,
        slope: vec![0.5, -0.25],
    };
    for f in [
        Integrand::p_power(2.0).unwrap(),
        Integrand::p_power(4.0).unwrap(),
    ] {
        let k0 = compute_kappa0(&problem(f, plane.clone()), 0.0).unwrap();
        assert!(k0.value < 1e-9, "{}", k0.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kappa0_ignores_added_affine_functions(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
        let cap = Expr::ParabolicCap { height: 0.25, curvature: 1.0, center: vec![0.5, 0.5] };
        let base = problem(Integrand::p_power(2.0).unwrap(), cap);
        let shifted = Field::from_fn(base.grid().clone(), 1, |x, out| {
            let v = base.psi().interpolate(x)[0];
            out[0] = v + a * x[0] + b * x[1] + c;
        })
        .unwrap();
        let other = ObstacleProblem::new(base.integrand().clone(), shifted, base.g().clone()).unwrap();
        let k_base = compute_kappa0(&base, 0.0).unwrap().value;
        let k_other = compute_kappa0(&other, 0.0).unwrap().value;
        prop_assert!((k_base - k_other).abs() <= 1e-9 * k_base);
    }
}
