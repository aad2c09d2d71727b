//! Descent solvers for the discrete penalized energy and the `(eps, delta)`
//! continuation ladder.
//!
//! Iterates keep the full nodal vector; the assembled gradient vanishes on
//! boundary nodes, so every search direction leaves the Dirichlet data fixed.
//!
//! Backtracking compares energies through the sum of per-term differences.
//! When that difference is within the rounding level of the energy itself,
//! the trapezoid estimate `(g_old + g_new) . s / 2` replaces it; the estimate
//! is exact for quadratic energies and third-order accurate otherwise, and
//! lets the gradient tolerance go well below `sqrt(machine epsilon)`.

mod oracle;

use serde::{Deserialize, Serialize};

pub use oracle::{active_set_oracle, projected_gradient_oracle};

use crate::energy::{Assembler, EnergyParams};
use crate::grid::{w1q_norm, Field};
use crate::penalty::{compute_kappa0, Kappa0, KappaChoice, PenaltyParams};
use crate::problem::ObstacleProblem;
use crate::sum::compensated_sum;
use crate::{Error, Result};

/// Maximum number of step halvings before a line search gives up.
pub const MAX_SHRINKS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "gd")]
    GradientDescent,
    Lbfgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderRung {
    pub epsilon: f64,
    pub delta: f64,
}

impl LadderRung {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        LadderRung { epsilon, delta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Regularization weight for single [`minimize`] calls.
    pub epsilon: f64,
    pub penalty: PenaltyParams,
    pub ladder: Vec<LadderRung>,
    /// Stop once the Euclidean norm of the free-node gradient is this small.
    pub grad_tol: f64,
    /// Stop once the relative energy change stays below this for
    /// [`ENERGY_STALL_WINDOW`] consecutive steps.
    pub energy_tol: f64,
    pub max_iters: usize,
    pub ls_shrink: f64,
    pub ls_slope: f64,
    pub method: Method,
    pub lbfgs_memory: usize,
    /// Sequential compensated reductions; otherwise element loops and sums
    /// run on the rayon pool.
    pub deterministic: bool,
}

/// Consecutive small energy changes needed to stop on `energy_tol`.
pub const ENERGY_STALL_WINDOW: usize = 10;

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            epsilon: 0.0,
            penalty: PenaltyParams::default(),
            ladder: default_ladder(),
            grad_tol: 1e-8,
            energy_tol: 1e-20,
            max_iters: 50_000,
            ls_shrink: 0.5,
            ls_slope: 1e-4,
            method: Method::Lbfgs,
            lbfgs_memory: 10,
            deterministic: true,
        }
    }
}

/// `(eps, delta)` in `{1e-1, 1e-2, 1e-3, 1e-4}`.
pub fn default_ladder() -> Vec<LadderRung> {
    [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&v| LadderRung::new(v, v))
        .collect()
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        self.penalty.validate()?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.grad_tol > 0.0 && self.energy_tol > 0.0) {
            return bad(format!(
                "tolerances must be positive, got {} and {}",
                self.grad_tol, self.energy_tol
            ));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return bad(format!(
                "ls_shrink must lie in (0, 1), got {}",
                self.ls_shrink
            ));
        }
        if !(self.ls_slope > 0.0 && self.ls_slope < 0.5) {
            return bad(format!(
                "ls_slope must lie in (0, 0.5), got {}",
                self.ls_slope
            ));
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be positive".into());
        }
        if self.ladder.is_empty() {
            return bad("ladder is empty".into());
        }
        for (k, r) in self.ladder.iter().enumerate() {
            if !(r.epsilon >= 0.0 && r.epsilon.is_finite() && r.delta > 0.0 && r.delta <= 1.0) {
                return bad(format!(
                    "rung {k}: need eps >= 0 and delta in (0, 1], got {r:?}"
                ));
            }
            if k > 0 {
                let prev = self.ladder[k - 1];
                if r.epsilon > prev.epsilon || r.delta > prev.delta || *r == prev {
                    return bad(format!(
                        "ladder must decrease: rung {} {prev:?} then rung {k} {r:?}",
                        k - 1
                    ));
                }
            }
        }
        Ok(())
    }

    /// The weight `kappa` used on every rung, with the threshold it came from.
    pub fn ladder_kappa(&self, problem: &ObstacleProblem) -> Result<(f64, Option<Kappa0>)> {
        self.kappa_for(problem, self.ladder.iter().map(|r| r.epsilon))
    }

    fn kappa_for(
        &self,
        problem: &ObstacleProblem,
        epsilons: impl Iterator<Item = f64>,
    ) -> Result<(f64, Option<Kappa0>)> {
        if let KappaChoice::Fixed(k) = self.penalty.kappa {
            return Ok((k, None));
        }
        let mut worst: Option<Kappa0> = None;
        for eps in epsilons {
            let k0 = compute_kappa0(problem, eps)?;
            if worst.is_none_or(|w| k0.value > w.value) {
                worst = Some(k0);
            }
        }
        let k0 = worst.expect("at least one epsilon");
        Ok((self.penalty.resolve(k0.value), Some(k0)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub energy: f64,
    pub grad_norm: f64,
    /// Accepted step length; zero for the initial record of a solve.
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    EnergyTol,
    MaxIters,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RungRecord {
    pub rung: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub kappa: f64,
    /// Penalized, regularized energy at the rung's final iterate.
    pub energy: f64,
    /// `max (psi - u)_+` over nodes and rows.
    pub violation: f64,
    /// `||u||_{L^q} + ||Du||_{L^q}`.
    pub w1q_norm: f64,
    /// `||Du||_{L^q}`.
    pub grad_lq_norm: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub stop: StopReason,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub u: Field,
    pub history: Vec<IterRecord>,
    pub ladder_trace: Vec<RungRecord>,
    pub converged: bool,
    pub stop: StopReason,
    pub iterations: usize,
    pub grad_norm: f64,
    pub energy: f64,
    pub kappa: f64,
    pub kappa0: Option<Kappa0>,
}

impl SolveResult {
    pub fn violation(&self, problem: &ObstacleProblem) -> f64 {
        self.u
            .max_violation(problem.psi())
            .expect("solution has the problem's shape")
    }
}

/// Outcome of one descent run at fixed energy weights.
#[derive(Clone, Debug)]
pub(crate) struct Run {
    pub x: Vec<f64>,
    pub history: Vec<IterRecord>,
    pub stop: StopReason,
    pub grad_norm: f64,
    pub energy: f64,
}

pub(crate) struct Stalled {
    pub run: Run,
    pub iteration: usize,
}

/// Minimizes the energy with weights `config.epsilon`, `config.penalty`
/// starting from `initial`.
pub fn minimize(
    problem: &ObstacleProblem,
    config: &SolveConfig,
    initial: &Field,
) -> Result<SolveResult> {
    config.validate()?;
    problem.check_dirichlet(initial)?;
    let (kappa, kappa0) = config.kappa_for(problem, std::iter::once(config.epsilon))?;
    let params = EnergyParams {
        epsilon: config.epsilon,
        kappa,
        delta: config.penalty.delta,
    };
    let asm = Assembler::new(problem, params)?.parallel(!config.deterministic);
    let wrap = |run: Run| -> Result<SolveResult> {
        let u = Field::new(problem.grid().clone(), problem.components(), run.x)?;
        Ok(SolveResult {
            u,
            converged: run.stop != StopReason::MaxIters,
            stop: run.stop,
            iterations: run.history.len().saturating_sub(1),
            grad_norm: run.grad_norm,
            energy: run.energy,
            history: run.history,
            ladder_trace: Vec::new(),
            kappa,
            kappa0,
        })
    };
    match descend(&asm, config, initial.values().to_vec()) {
        Ok(run) => wrap(run),
        Err(Stalled { run, iteration }) => Err(Error::Stagnation {
            iteration,
            shrinks: MAX_SHRINKS,
            best: Box::new(wrap(run)?),
        }),
    }
}

/// Runs the warm-started ladder from `g`, with `kappa` fixed across rungs.
pub fn solve_ladder(problem: &ObstacleProblem, config: &SolveConfig) -> Result<SolveResult> {
    solve_ladder_from(problem, config, problem.g())
}

/// [`solve_ladder`] from a given initial iterate carrying the Dirichlet data.
pub fn solve_ladder_from(
    problem: &ObstacleProblem,
    config: &SolveConfig,
    initial: &Field,
) -> Result<SolveResult> {
    solve_ladder_observed(problem, config, initial, |_, _| {})
}

/// [`solve_ladder_from`], handing each finished rung's record and iterate to
/// `observe`.
pub fn solve_ladder_observed(
    problem: &ObstacleProblem,
    config: &SolveConfig,
    initial: &Field,
    mut observe: impl FnMut(&RungRecord, &Field),
) -> Result<SolveResult> {
    config.validate()?;
    problem.check_dirichlet(initial)?;
    let (kappa, kappa0) = config.ladder_kappa(problem)?;
    let q = problem.integrand().params().q;
    let mut state = SolveResult {
        u: initial.clone(),
        history: Vec::new(),
        ladder_trace: Vec::new(),
        converged: true,
        stop: StopReason::GradTol,
        iterations: 0,
        grad_norm: f64::INFINITY,
        energy: f64::NAN,
        kappa,
        kappa0,
    };
    for (k, rung) in config.ladder.iter().enumerate() {
        let params = EnergyParams {
            epsilon: rung.epsilon,
            kappa,
            delta: rung.delta,
        };
        let asm = Assembler::new(problem, params)?.parallel(!config.deterministic);
        let (run, stalled_at) = match descend(&asm, config, state.u.values().to_vec()) {
            Ok(run) => (run, None),
            Err(Stalled { run, iteration }) => (run, Some(iteration)),
        };
        let u = Field::new(problem.grid().clone(), problem.components(), run.x)?;
        let record = RungRecord {
            rung: k,
            epsilon: rung.epsilon,
            delta: rung.delta,
            kappa,
            energy: run.energy,
            violation: u.max_violation(problem.psi())?,
            w1q_norm: w1q_norm(&u, q)?,
            grad_lq_norm: u.gradient().lp_norm(q)?,
            iterations: run.history.len().saturating_sub(1),
            grad_norm: run.grad_norm,
            stop: run.stop,
        };
        observe(&record, &u);
        state.u = u;
        state.iterations += record.iterations;
        state.history.extend(run.history);
        state.ladder_trace.push(record);
        state.converged &= run.stop != StopReason::MaxIters;
        state.stop = run.stop;
        state.grad_norm = run.grad_norm;
        state.energy = run.energy;
        if let Some(iteration) = stalled_at {
            state.converged = false;
            let source = Error::Stagnation {
                iteration,
                shrinks: MAX_SHRINKS,
                best: Box::new(state),
            };
            return Err(Error::Rung {
                rung: k,
                source: Box::new(source),
            });
        }
    }
    Ok(state)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Energy, its individual terms and the gradient at one iterate.
pub(crate) struct Point {
    pub x: Vec<f64>,
    pub terms: Vec<f64>,
    pub energy: f64,
    pub grad: Vec<f64>,
}

impl Point {
    pub fn new(asm: &Assembler, x: Vec<f64>) -> Point {
        let mut terms = Vec::new();
        asm.contributions(&x, &mut terms);
        let energy = asm.reduce(&terms);
        let mut grad = vec![0.0; x.len()];
        asm.gradient(&x, &mut grad);
        Point {
            x,
            terms,
            energy,
            grad,
        }
    }
}

/// Backtracking along `trial(alpha)` from `cur`, accepting the first step with
/// `E(new) - E(cur) <= slope * g . (new - cur)`. Returns the new point and
/// step and the energy change, or `None` after [`MAX_SHRINKS`] reductions.
pub(crate) fn line_search(
    asm: &Assembler,
    config: &SolveConfig,
    cur: &Point,
    alpha0: f64,
    mut trial: impl FnMut(f64) -> Vec<f64>,
) -> Option<(Point, f64, f64)> {
    let scale: f64 = cur.terms.iter().map(|t| t.abs()).sum();
    let noise = 1e3 * f64::EPSILON * scale;
    let mut alpha = alpha0;
    let mut terms = Vec::with_capacity(cur.terms.len());
    for _ in 0..=MAX_SHRINKS {
        let x = trial(alpha);
        let s: Vec<f64> = x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let linear = dot(&cur.grad, &s);
        if linear < 0.0 && x.iter().all(|v| v.is_finite()) {
            asm.contributions(&x, &mut terms);
            let change = compensated_sum(terms.iter().zip(&cur.terms).map(|(a, b)| a - b));
            let bound = config.ls_slope * linear;
            let mut grad = None;
            let mut estimate = change;
            if change.abs() <= noise {
                let mut gn = vec![0.0; x.len()];
                asm.gradient(&x, &mut gn);
                estimate = 0.5 * (linear + dot(&gn, &s));
                grad = Some(gn);
            }
            if estimate <= bound {
                let grad = grad.unwrap_or_else(|| {
                    let mut gn = vec![0.0; x.len()];
                    asm.gradient(&x, &mut gn);
                    gn
                });
                let energy = asm.reduce(&terms);
                return Some((
                    Point {
                        x,
                        terms,
                        energy,
                        grad,
                    },
                    alpha,
                    estimate,
                ));
            }
        }
        alpha *= config.ls_shrink;
    }
    None
}

/// Tracks consecutive small relative energy changes.
pub(crate) struct EnergyStall {
    count: usize,
}

impl EnergyStall {
    pub fn new() -> Self {
        EnergyStall { count: 0 }
    }

    pub fn update(&mut self, energy: f64, change: f64, tol: f64) -> bool {
        if change.abs() <= tol * energy.abs().max(1.0) {
            self.count += 1;
        } else {
            self.count = 0;
        }
        self.count >= ENERGY_STALL_WINDOW
    }
}

fn descend(
    asm: &Assembler,
    config: &SolveConfig,
    x0: Vec<f64>,
) -> std::result::Result<Run, Stalled> {
    let mut cur = Point::new(asm, x0);
    let mut gnorm = norm(&cur.grad);
    let mut history = vec![IterRecord {
        energy: cur.energy,
        grad_norm: gnorm,
        step: 0.0,
    }];
    let mut memory: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut stall = EnergyStall::new();
    let mut alpha_gd = 1.0 / gnorm.max(1.0);
    let finish = |cur: Point, history, stop, gnorm| Run {
        x: cur.x,
        history,
        stop,
        grad_norm: gnorm,
        energy: cur.energy,
    };

    for iteration in 1..=config.max_iters {
        if gnorm <= config.grad_tol {
            return Ok(finish(cur, history, StopReason::GradTol, gnorm));
        }
        let mut found = None;
        for attempt in 0..2 {
            let (dir, alpha0) = match config.method {
                Method::Lbfgs if attempt == 0 && !memory.is_empty() => {
                    let d = two_loop(&cur.grad, &memory);
                    if dot(&d, &cur.grad) < 0.0 {
                        (d, 1.0)
                    } else {
                        memory.clear();
                        continue;
                    }
                }
                Method::Lbfgs => (cur.grad.iter().map(|g| -g).collect(), 1.0 / gnorm),
                Method::GradientDescent => (cur.grad.iter().map(|g| -g).collect(), 2.0 * alpha_gd),
            };
            let trial = |a: f64| cur.x.iter().zip(&dir).map(|(x, d)| x + a * d).collect();
            if let Some(hit) = line_search(asm, config, &cur, alpha0, trial) {
                found = Some(hit);
                break;
            }
            if config.method == Method::Lbfgs && !memory.is_empty() {
                memory.clear();
            } else {
                break;
            }
        }
        let Some((next, alpha, change)) = found else {
            return Err(Stalled {
                run: finish(cur, history, StopReason::MaxIters, gnorm),
                iteration,
            });
        };
        alpha_gd = alpha;
        if config.method == Method::Lbfgs {
            let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = next
                .grad
                .iter()
                .zip(&cur.grad)
                .map(|(a, b)| a - b)
                .collect();
            let sy = dot(&s, &y);
            if sy > 1e-14 * norm(&s) * norm(&y) && sy > 0.0 {
                if memory.len() == config.lbfgs_memory {
                    memory.remove(0);
                }
                memory.push((s, y, 1.0 / sy));
            }
        }
        let stalled = stall.update(cur.energy, change, config.energy_tol);
        cur = next;
        gnorm = norm(&cur.grad);
        history.push(IterRecord {
            energy: cur.energy,
            grad_norm: gnorm,
            step: alpha,
        });
        if stalled && gnorm > config.grad_tol {
            return Ok(finish(cur, history, StopReason::EnergyTol, gnorm));
        }
    }
    let stop = if gnorm <= config.grad_tol {
        StopReason::GradTol
    } else {
        StopReason::MaxIters
    };
    Ok(finish(cur, history, stop, gnorm))
}

/// L-BFGS two-loop recursion: returns `-H g`.
fn two_loop(g: &[f64], memory: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let (s, y, _) = memory.last().expect("nonempty memory");
    let gamma = dot(s, y) / dot(y, y);
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
