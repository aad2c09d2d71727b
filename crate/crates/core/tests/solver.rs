use std::sync::Arc;

use pqobstacle::solver::{minimize, projected_gradient_oracle, solve_ladder, solve_ladder_from};
use pqobstacle::{
    Expr, Field, Grid, Integrand, KappaChoice, LadderRung, ObstacleProblem, PenaltyParams,
    SolveConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cap_problem(m: usize) -> ObstacleProblem {
    let grid = Arc::new(Grid::unit_square(m).unwrap());
    let psi = Expr::ParabolicCap {
        height: 0.25,
        curvature: 1.0,
        center: vec![0.5, 0.5],
    };
    let psi = Field::sample(grid.clone(), &[psi]).unwrap();
    ObstacleProblem::new(Integrand::p_power(2.0).unwrap(), psi, Field::zeros(grid, 1)).unwrap()
}

fn fixed_kappa(kappa: f64) -> SolveConfig {
    let base = SolveConfig::default();
    SolveConfig {
        penalty: PenaltyParams {
            kappa: KappaChoice::Fixed(kappa),
            ..base.penalty
        },
        ..base
    }
}

fn l2_distance(a: &Field, b: &Field) -> f64 {
    let diff: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x - y)
        .collect();
    Field::new(a.grid().clone(), a.components(), diff)
        .unwrap()
        .lp_norm(2.0)
        .unwrap()
}

#[test]
fn affine_data_with_inactive_obstacle_has_unit_energy() {
    let grid = Arc::new(Grid::unit_square(9).unwrap());
    let g = Field::sample(
        grid.clone(),
        &[Expr::Affine {
            offset: 0.0,
            slope: vec![1.0, 0.0],
        }],
    )
    .unwrap();
    let psi = Field::constant(grid, 1, -10.0);
    let p = ObstacleProblem::new(Integrand::p_power(2.0).unwrap(), psi, g.clone()).unwrap();
    let r = minimize(&p, &fixed_kappa(0.0), &g).unwrap();
    assert!((r.energy - 1.0).abs() < 1e-12, "{}", r.energy);
    assert!(l2_distance(&r.u, &g) < 1e-12);
}

#[test]
fn feasible_starts_reach_the_same_minimizer() {
    let p = cap_problem(17);
    let cfg = SolveConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut start = || {
        let mut u = p.g().clone();
        for v in 0..p.grid().node_count() {
            if !p.grid().is_boundary(v) {
                u.values_mut()[v] = p.psi().values()[v].max(0.0) + rng.gen_range(0.0..0.5);
            }
        }
        solve_ladder_from(&p, &cfg, &u).unwrap().u
    };
    let (a, b) = (start(), start());
    assert!(
        l2_distance(&a, &b) <= 10.0 * cfg.grad_tol,
        "{}",
        l2_distance(&a, &b)
    );
}

#[test]
fn energy_decreases_every_iteration() {
    let p = cap_problem(17);
    let cfg = SolveConfig {
        epsilon: 1e-2,
        penalty: PenaltyParams {
            delta: 1e-2,
            ..fixed_kappa(4.0).penalty
        },
        ..fixed_kappa(4.0)
    };
    let r = minimize(&p, &cfg, p.g()).unwrap();
    assert!(r.converged);
    assert!(r.history.len() > 2);
    // below the rounding level the line search certifies descent from gradients
    for w in r.history.windows(2) {
        let noise = 1e3 * f64::EPSILON * w[0].energy.abs();
        assert!(
            w[1].energy < w[0].energy || (w[1].energy - w[0].energy).abs() <= noise,
            "{} -> {}",
            w[0].energy,
            w[1].energy
        );
    }
    let resolved = r
        .history
        .windows(2)
        .filter(|w| w[0].energy - w[1].energy > 1e3 * f64::EPSILON * w[0].energy.abs());
    assert!(resolved.count() > 2);
}

#[test]
fn ladder_tightens_violation_and_settles_energy() {
    // the penalty carries an offset near kappa delta ln 2 |domain|, so the
    // energy settles only once delta is small against 1e-3 / kappa
    let p = cap_problem(33);
    let mut ladder = pqobstacle::solver::default_ladder();
    ladder.extend([LadderRung::new(1e-5, 1e-5), LadderRung::new(1e-6, 1e-6)]);
    let r = solve_ladder(
        &p,
        &SolveConfig {
            ladder,
            ..SolveConfig::default()
        },
    )
    .unwrap();
    assert!(r.converged);
    let trace = &r.ladder_trace;
    for w in trace.windows(2) {
        assert!(
            w[1].violation <= w[0].violation,
            "{} -> {}",
            w[0].violation,
            w[1].violation
        );
    }
    let (a, b) = (trace[trace.len() - 2].energy, trace[trace.len() - 1].energy);
    assert!((a - b).abs() / b.abs() <= 1e-3, "{a} vs {b}");
}

#[test]
fn zero_kappa_ignores_the_obstacle() {
    let p = cap_problem(17);
    let r = solve_ladder(&p, &fixed_kappa(0.0)).unwrap();
    let norm = r.u.lp_norm(2.0).unwrap();
    assert!(norm < 1e-8, "{norm}");
    assert!(r.violation(&p) > 0.2);
}

#[test]
fn projected_gradient_output_is_feasible() {
    let p = cap_problem(17);
    let r = projected_gradient_oracle(&p, &SolveConfig::default()).unwrap();
    let gap =
        r.u.values()
            .iter()
            .zip(p.psi().values())
            .map(|(u, s)| u - s)
            .fold(f64::INFINITY, f64::min);
    assert!(gap >= 0.0, "{gap}");
}

#[test]
fn low_obstacle_ladder_matches_plain_minimization() {
    let grid = Arc::new(Grid::unit_square(17).unwrap());
    let g = Expr::ParabolicCap {
        height: 0.0,
        curvature: 1.0,
        center: vec![0.3, 0.6],
    };
    let g = Field::sample(grid.clone(), &[g]).unwrap();
    let psi = Field::constant(grid, 1, -10.0);
    let p = ObstacleProblem::new(Integrand::p_power(3.0).unwrap(), psi, g).unwrap();
    let ladder = SolveConfig {
        ladder: vec![LadderRung::new(1e-2, 1e-2), LadderRung::new(1e-3, 1e-3)],
        ..fixed_kappa(1.0)
    };
    let laddered = solve_ladder(&p, &ladder).unwrap();
    let single = SolveConfig {
        epsilon: 1e-3,
        penalty: PenaltyParams {
            delta: 1e-3,
            ..ladder.penalty
        },
        ..ladder.clone()
    };
    let plain = minimize(&p, &single, p.g()).unwrap();
    let rel = l2_distance(&laddered.u, &plain.u) / plain.u.lp_norm(2.0).unwrap();
    assert!(rel < 1e-6, "{rel}");
}
