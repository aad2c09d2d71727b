use std::sync::Arc;

use pqobstacle::energy::{integrate_energy, EnergyParams};
use pqobstacle::{Expr, Field, Grid, Integrand, ObstacleProblem};
use proptest::prelude::*;

/// `∫ |D u|^2` of the P1 interpolant of `sin(pi x) sin(pi y)` on `m x m` nodes.
fn dirichlet_energy(m: usize) -> f64 {
    let grid = Arc::new(Grid::unit_square(m).unwrap());
    let u = Field::sample(
        grid.clone(),
        &[Expr::SineProduct {
            amplitude: 1.0,
            frequency: 1.0,
        }],
    )
    .unwrap();
    let psi = Field::constant(grid.clone(), 1, -1.0);
    let problem = ObstacleProblem::new(Integrand::p_power(2.0).unwrap(), psi, u.clone()).unwrap();
    integrate_energy(&problem, &u, EnergyParams::plain()).unwrap()
}

#[test]
fn dirichlet_energy_converges_at_second_order() {
    let exact = std::f64::consts::PI.powi(2) / 2.0;
    let errors: Vec<f64> = [9, 17, 33, 65]
        .iter()
        .map(|&m| (dirichlet_energy(m) - exact).abs())
        .collect();
    for w in errors.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate >= 1.8, "rate {rate} from {errors:?}");
    }
}

proptest! {
    #[test]
    fn affine_fields_have_exact_gradients(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, m in 3usize..12) {
        let grid = Arc::new(Grid::unit_square(m).unwrap());
        let u = Field::sample(grid, &[Expr::Affine { offset: c, slope: vec![a, b] }]).unwrap();
        let du = u.gradient();
        for e in 0..du.grid().elements().len() {
            let z = du.element(e);
            prop_assert!((z[0] - a).abs() <= 1e-11 * (1.0 + a.abs() + c.abs()));
            prop_assert!((z[1] - b).abs() <= 1e-11 * (1.0 + b.abs() + c.abs()));
        }
    }

    #[test]
    fn restrict_undoes_prolong(values in prop::collection::vec(-10.0f64..10.0, 25)) {
        let coarse = Arc::new(Grid::unit_square(5).unwrap());
        let fine = Arc::new(Grid::unit_square(17).unwrap());
        let u = Field::new(coarse.clone(), 1, values).unwrap();
        let back = u.prolong(fine).unwrap().restrict(coarse).unwrap();
        prop_assert_eq!(back.values(), u.values());
    }
}
