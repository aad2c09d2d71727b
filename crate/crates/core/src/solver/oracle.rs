//! Reference solvers for the constrained problem itself, without penalty.

use super::{
    line_search, norm, EnergyStall, IterRecord, Point, SolveConfig, SolveResult, StopReason,
    MAX_SHRINKS,
};
use crate::energy::{Assembler, EnergyParams};
use crate::grid::{Field, Grid};
use crate::integrand::IntegrandKind;
use crate::problem::ObstacleProblem;
use crate::{Error, Result};

/// Regularization weight used by the reference solvers: the ladder's last.
fn final_epsilon(config: &SolveConfig) -> f64 {
    config.ladder.last().map_or(config.epsilon, |r| r.epsilon)
}

/// Projected-gradient component: zero where the constraint is active and the
/// gradient pushes into it.
fn projected_gradient(x: &[f64], psi: &[f64], grad: &[f64], out: &mut [f64]) {
    for (((o, x), p), g) in out.iter_mut().zip(x).zip(psi).zip(grad) {
        *o = if *x <= *p && *g > 0.0 { 0.0 } else { *g };
    }
}

/// Projected gradient descent on `∫ F + eps |Du|^q` (final-rung `eps`, no
/// penalty) with iterates clamped nodally to `u >= psi` on free nodes.
///
/// Steps start from the Barzilai–Borwein length and backtrack along the
/// projection arc until `E(P(u - a g)) - E(u) <= slope * g . (P(u - a g) - u)`.
pub fn projected_gradient_oracle(
    problem: &ObstacleProblem,
    config: &SolveConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let params = EnergyParams {
        epsilon: final_epsilon(config),
        kappa: 0.0,
        delta: 1.0,
    };
    let asm = Assembler::new(problem, params)?.parallel(!config.deterministic);
    let grid = problem.grid();
    let nc = problem.components();
    let psi = problem.psi().values();
    let free: Vec<bool> = (0..grid.node_count() * nc)
        .map(|k| !grid.is_boundary(k / nc))
        .collect();
    let project = |x: &mut [f64]| {
        for ((v, p), f) in x.iter_mut().zip(psi).zip(&free) {
            if *f && *v < *p {
                *v = *p;
            }
        }
    };

    let mut x0 = problem.g().values().to_vec();
    project(&mut x0);
    let mut cur = Point::new(&asm, x0);
    let mut pg = vec![0.0; cur.x.len()];
    projected_gradient(&cur.x, psi, &cur.grad, &mut pg);
    let mut pnorm = norm(&pg);
    let mut history = vec![IterRecord {
        energy: cur.energy,
        grad_norm: pnorm,
        step: 0.0,
    }];
    let mut alpha0 = 1.0 / pnorm.max(1e-300);
    let mut stall = EnergyStall::new();
    let mut stop = StopReason::MaxIters;
    let mut stalled_at = None;

    for iteration in 1..=config.max_iters {
        if pnorm <= config.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
        let trial = |a: f64| {
            let mut x: Vec<f64> = cur
                .x
                .iter()
                .zip(&cur.grad)
                .map(|(x, g)| x - a * g)
                .collect();
            project(&mut x);
            x
        };
        let Some((next, alpha, change)) = line_search(&asm, config, &cur, alpha0, trial) else {
            stalled_at = Some(iteration);
            break;
        };
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next
            .grad
            .iter()
            .zip(&cur.grad)
            .map(|(a, b)| a - b)
            .collect();
        let sy = super::dot(&s, &y);
        alpha0 = if sy > 0.0 {
            super::dot(&s, &s) / sy
        } else {
            2.0 * alpha
        };
        let stalled = stall.update(cur.energy, change, config.energy_tol);
        cur = next;
        projected_gradient(&cur.x, psi, &cur.grad, &mut pg);
        pnorm = norm(&pg);
        history.push(IterRecord {
            energy: cur.energy,
            grad_norm: pnorm,
            step: alpha,
        });
        if pnorm <= config.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
        if stalled {
            stop = StopReason::EnergyTol;
            break;
        }
    }

    let result = SolveResult {
        u: Field::new(grid.clone(), nc, cur.x)?,
        iterations: history.len() - 1,
        history,
        ladder_trace: Vec::new(),
        converged: stop != StopReason::MaxIters && stalled_at.is_none(),
        stop,
        grad_norm: pnorm,
        energy: cur.energy,
        kappa: 0.0,
        kappa0: None,
    };
    match stalled_at {
        Some(iteration) => Err(Error::Stagnation {
            iteration,
            shrinks: MAX_SHRINKS,
            best: Box::new(result),
        }),
        None => Ok(result),
    }
}

/// Exact solver for quadratic energies `(1 + eps) ∫ |Du|^2` (the
/// `p = q = 2` power density with the final-rung `eps`).
///
/// Uses its own finite-difference stencil (3-point in 1D, 5-point in 2D),
/// which coincides with the P1 stiffness on the fixed-diagonal mesh. In 1D
/// the discrete solution is the least concave majorant of the obstacle
/// and boundary values, read off an upper convex hull. In 2D a primal–dual
/// active-set iteration fixes `u = psi` on the active set, solves the
/// discrete Laplace equation elsewhere by conjugate gradients, and stops
/// when the active set repeats.
pub fn active_set_oracle(problem: &ObstacleProblem, config: &SolveConfig) -> Result<SolveResult> {
    config.validate()?;
    let params = problem.integrand().params();
    if !matches!(problem.integrand().kind(), IntegrandKind::PPower)
        || params.p != 2.0
        || params.q != 2.0
    {
        return Err(Error::InvalidParameter(format!(
            "active-set solver needs the quadratic p-power density, got {} with p = {}, q = {}",
            problem.integrand().kind().name(),
            params.p,
            params.q
        )));
    }
    let eps = final_epsilon(config);
    let grid = problem.grid().clone();
    let nc = problem.components();
    let count = grid.node_count();
    let stencil = Stencil::new(&grid);

    let mut values = problem.g().values().to_vec();
    let mut sweeps = 0;
    let mut stable = true;
    for i in 0..nc {
        let g: Vec<f64> = (0..count)
            .map(|v| problem.g().values()[v * nc + i])
            .collect();
        let psi: Vec<f64> = (0..count)
            .map(|v| problem.psi().values()[v * nc + i])
            .collect();
        let (u, iters, done) = if grid.dim() == 1 {
            (concave_majorant(&grid, &g, &psi), 1, true)
        } else {
            pdas(&grid, &stencil, &g, &psi, config)
        };
        sweeps = sweeps.max(iters);
        stable &= done;
        for v in 0..count {
            values[v * nc + i] = u[v];
        }
    }

    let u = Field::new(grid.clone(), nc, values)?;
    let asm = Assembler::new(
        problem,
        EnergyParams {
            epsilon: eps,
            kappa: 0.0,
            delta: 1.0,
        },
    )?;
    let point = Point::new(&asm, u.values().to_vec());
    let mut pg = vec![0.0; point.x.len()];
    projected_gradient(&point.x, problem.psi().values(), &point.grad, &mut pg);
    let pnorm = norm(&pg);
    let stop = if stable {
        StopReason::GradTol
    } else {
        StopReason::MaxIters
    };
    Ok(SolveResult {
        u,
        history: vec![IterRecord {
            energy: point.energy,
            grad_norm: pnorm,
            step: 0.0,
        }],
        ladder_trace: Vec::new(),
        converged: stable,
        stop,
        iterations: sweeps,
        grad_norm: pnorm,
        energy: point.energy,
        kappa: 0.0,
        kappa0: None,
    })
}

const MAX_ACTIVE_SET_SWEEPS: usize = 500;

/// Axis couplings of the finite-difference Laplacian.
struct Stencil {
    weights: Vec<f64>,
    strides: Vec<usize>,
}

impl Stencil {
    fn new(grid: &Grid) -> Self {
        let h = grid.spacing();
        let cell: f64 = h.iter().product();
        let weights = h.iter().map(|hk| cell / (hk * hk)).collect();
        let m = grid.resolution();
        let strides = if m.len() == 1 { vec![1] } else { vec![1, m[0]] };
        Stencil { weights, strides }
    }

    /// `(A u)_v` at an interior node.
    fn apply_at(&self, u: &[f64], v: usize) -> f64 {
        let mut acc = 0.0;
        for (w, s) in self.weights.iter().zip(&self.strides) {
            acc += w * (2.0 * u[v] - u[v - s] - u[v + s]);
        }
        acc
    }
}

/// Returns the solution, the number of active-set sweeps and whether the
/// active set settled.
fn pdas(
    grid: &Grid,
    stencil: &Stencil,
    g: &[f64],
    psi: &[f64],
    config: &SolveConfig,
) -> (Vec<f64>, usize, bool) {
    let count = g.len();
    let interior: Vec<bool> = (0..count).map(|v| !grid.is_boundary(v)).collect();
    let mut active = vec![false; count];
    let mut u = g.to_vec();
    for sweep in 1..=MAX_ACTIVE_SET_SWEEPS {
        for v in 0..count {
            u[v] = if !interior[v] {
                g[v]
            } else if active[v] {
                psi[v]
            } else {
                0.0
            };
        }
        solve_cg(stencil, &interior, &active, &mut u, config.grad_tol);
        let mut next = vec![false; count];
        for v in (0..count).filter(|v| interior[*v]) {
            let multiplier = if active[v] {
                stencil.apply_at(&u, v)
            } else {
                0.0
            };
            next[v] = multiplier + (psi[v] - u[v]) > 0.0;
        }
        if next == active {
            return (u, sweep, true);
        }
        active = next;
    }
    (u, MAX_ACTIVE_SET_SWEEPS, false)
}

/// Smallest discretely concave `u >= psi` with the boundary values of `g`.
fn concave_majorant(grid: &Grid, g: &[f64], psi: &[f64]) -> Vec<f64> {
    let m = g.len();
    let x: Vec<f64> = (0..m).map(|v| grid.coord(v)[0]).collect();
    let y: Vec<f64> = (0..m)
        .map(|v| if v == 0 || v == m - 1 { g[v] } else { psi[v] })
        .collect();
    let mut hull: Vec<usize> = Vec::with_capacity(m);
    for v in 0..m {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b unless it lies strictly above the chord from a to v
            let cross = (x[b] - x[a]) * (y[v] - y[a]) - (y[b] - y[a]) * (x[v] - x[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(v);
    }
    let mut u = vec![0.0; m];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for v in a..=b {
            let s = (x[v] - x[a]) / (x[b] - x[a]);
            u[v] = if v == a {
                y[a]
            } else if v == b {
                y[b]
            } else {
                (1.0 - s) * y[a] + s * y[b]
            };
        }
    }
    u
}

/// Conjugate gradients on the free nodes (2D).
fn solve_cg(stencil: &Stencil, interior: &[bool], active: &[bool], u: &mut [f64], grad_tol: f64) {
    let n = u.len();
    let free: Vec<usize> = (0..n).filter(|v| interior[*v] && !active[*v]).collect();
    if free.is_empty() {
        return;
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for &v in &free {
            out[v] = stencil.apply_at(x, v);
        }
    };
    // b = -A u_fixed on free nodes, with u zero on free nodes
    let mut r = vec![0.0; n];
    apply(u, &mut r);
    for &v in &free {
        r[v] = -r[v];
    }
    let mut x = vec![0.0; n];
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let dotf = |a: &[f64], b: &[f64]| free.iter().map(|&v| a[v] * b[v]).sum::<f64>();
    let mut rr = dotf(&r, &r);
    let b_norm = rr.sqrt();
    let tol = (1e-14 * b_norm).max(1e-3 * grad_tol);
    for _ in 0..50 * free.len() {
        if rr.sqrt() <= tol {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dotf(&p, &ap);
        for &v in &free {
            x[v] += alpha * p[v];
            r[v] -= alpha * ap[v];
        }
        let rr_new = dotf(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for &v in &free {
            p[v] = r[v] + beta * p[v];
        }
    }
    for &v in &free {
        u[v] = x[v];
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::expr::Expr;
    use crate::integrand::Integrand;
    use crate::penalty::{KappaChoice, PenaltyParams};
    use crate::solver::{minimize, LadderRung};

    fn problem(grid: Grid, psi: Expr) -> ObstacleProblem {
        let grid = Arc::new(grid);
        let g = Field::zeros(grid.clone(), 1);
        let psi = Field::sample(grid, &[psi]).unwrap();
        ObstacleProblem::new(Integrand::p_power(2.0).unwrap(), psi, g).unwrap()
    }

    fn exact_config() -> SolveConfig {
        SolveConfig {
            ladder: vec![LadderRung::new(0.0, 1e-3)],
            ..SolveConfig::default()
        }
    }

    #[test]
    fn oracles_agree_in_one_dimension() {
        let psi = Expr::ParabolicCap {
            height: 0.5,
            curvature: 2.0,
            center: vec![0.0],
        };
        let p = problem(Grid::interval(-1.0, 1.0, 65).unwrap(), psi);
        let cfg = exact_config();
        let a = active_set_oracle(&p, &cfg).unwrap();
        let b = projected_gradient_oracle(&p, &cfg).unwrap();
        assert!(a.converged && b.converged);
        let gap =
            a.u.values()
                .iter()
                .zip(b.u.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
        assert!(gap < 1e-7, "{gap}");
        assert!(a.u.max_violation(p.psi()).unwrap() == 0.0);
        assert!(b.u.max_violation(p.psi()).unwrap() == 0.0);
    }

    #[test]
    fn oracles_agree_in_two_dimensions() {
        let psi = Expr::ParabolicCap {
            height: 0.25,
            curvature: 1.0,
            center: vec![0.5, 0.5],
        };
        let p = problem(Grid::unit_square(17).unwrap(), psi);
        let cfg = exact_config();
        let a = active_set_oracle(&p, &cfg).unwrap();
        let b = projected_gradient_oracle(&p, &cfg).unwrap();
        let gap =
            a.u.values()
                .iter()
                .zip(b.u.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
        assert!(gap < 1e-7, "{gap}");
        assert!(a.grad_norm < 1e-8, "{}", a.grad_norm);
    }

    #[test]
    fn inactive_obstacle_reproduces_unconstrained_minimizer() {
        let grid = Arc::new(Grid::unit_square(9).unwrap());
        let g = Field::sample(
            grid.clone(),
            &[Expr::SineProduct {
                amplitude: 1.0,
                frequency: 0.5,
            }],
        )
        .unwrap();
        let psi = Field::constant(grid, 1, -100.0);
        let p = ObstacleProblem::new(Integrand::p_power(2.0).unwrap(), psi, g).unwrap();
        let cfg = SolveConfig {
            penalty: PenaltyParams {
                kappa: KappaChoice::Fixed(0.0),
                ..Default::default()
            },
            ..exact_config()
        };
        let free = minimize(&p, &cfg, p.g()).unwrap();
        let pg = projected_gradient_oracle(&p, &cfg).unwrap();
        let gap = free
            .u
            .values()
            .iter()
            .zip(pg.u.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-7, "{gap}");
    }

    #[test]
    fn rejects_non_quadratic_density() {
        let grid = Arc::new(Grid::unit_square(5).unwrap());
        let g = Field::zeros(grid.clone(), 1);
        let p = ObstacleProblem::new(
            Integrand::p_power(3.0).unwrap(),
            Field::constant(grid, 1, -1.0),
            g,
        )
        .unwrap();
        assert!(active_set_oracle(&p, &SolveConfig::default()).is_err());
    }
}
