//! The `solve`, `sweep` and `diagnose` commands.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use pqobstacle::diagnostics::{
    default_offsets, diagnose, gap_check, nikolskii_seminorm_elements, v_of_gradient,
    DiagnosticsReport, GapCheck,
};
use pqobstacle::grid::{read_field, write_field, write_field_csv};
use pqobstacle::report::{stop_label, write_comments, write_history, write_ladder_trace};
use pqobstacle::solver::solve_ladder_observed;
use pqobstacle::{
    Error, Field, Grid, KappaChoice, LadderRung, ObstacleProblem, PenaltyParams, SolveConfig,
    SolveResult,
};

use crate::config::{config_error, Loaded};
use crate::sweep::{Axis, SweepValue};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

/// Output directory plus the provenance header every artifact carries.
struct Artifacts {
    dir: PathBuf,
    comments: Vec<String>,
}

impl Artifacts {
    fn new(loaded: &Loaded) -> anyhow::Result<Self> {
        let dir = loaded.output_dir();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Artifacts {
            dir,
            comments: loaded.provenance(),
        })
    }

    fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>, &[String]) -> pqobstacle::Result<()>,
    ) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        body(&mut out, &self.comments).with_context(|| format!("writing {}", path.display()))?;
        out.flush()
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Compact form for summaries; CSV artifacts keep full round-trip digits.
fn num(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e7) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Nodes where every component lies within `tol` of the obstacle.
struct ContactSet {
    nodes: usize,
    bounds: Vec<(f64, f64)>,
}

fn contact_set(problem: &ObstacleProblem, u: &Field, tol: f64) -> ContactSet {
    let grid = problem.grid();
    let nc = problem.components();
    let n = grid.dim();
    let mut nodes = 0;
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for v in (0..grid.node_count()).filter(|v| !grid.is_boundary(*v)) {
        let touching =
            (0..nc).all(|i| u.values()[v * nc + i] - problem.psi().values()[v * nc + i] <= tol);
        if touching {
            nodes += 1;
            let x = grid.coord(v);
            for (b, xk) in bounds.iter_mut().zip(&x[..n]) {
                *b = (b.0.min(*xk), b.1.max(*xk));
            }
        }
    }
    ContactSet { nodes, bounds }
}

fn gap_lines(gap: &GapCheck, q: f64, autonomous: bool, out: &mut String) {
    let kind = if autonomous {
        "autonomous"
    } else {
        "non-autonomous"
    };
    let verdict = if gap.satisfied {
        "satisfied"
    } else {
        "violated"
    };
    let _ = writeln!(
        out,
        "gap condition: q = {q} vs q_max = {} ({kind}): {verdict}",
        gap.q_max
    );
    if !gap.satisfied {
        let _ = writeln!(
            out,
            "warning: gap condition violated (q = {q} >= q_max = {})",
            gap.q_max
        );
    }
}

fn diagnostics_lines(report: &DiagnosticsReport, out: &mut String) {
    let _ = writeln!(out, "energy (unpenalized): {}", report.energy);
    let _ = writeln!(out, "W1q norm: {}", report.w1q_norm);
    let _ = writeln!(out, "L2 norm of V(Du): {}", report.v_l2);
    for e in &report.nikolskii {
        let _ = writeln!(
            out,
            "seminorm [{}]_(s={}, t={}): {}",
            e.target, e.s, e.t, e.value
        );
    }
    if let Some(l) = &report.lavrentiev {
        let _ = writeln!(
            out,
            "lavrentiev gap estimate: {} (signed {})",
            num(l.gap_estimate),
            num(l.signed_gap)
        );
    }
}

fn write_diagnostics(art: &Artifacts, report: &DiagnosticsReport) -> anyhow::Result<()> {
    art.write("diagnostics.csv", |out, comments| {
        write_comments(comments, out)?;
        writeln!(out, "quantity,target,s,t,value")?;
        writeln!(out, "energy,u,,,{}", report.energy)?;
        writeln!(out, "w1q_norm,u,,,{}", report.w1q_norm)?;
        writeln!(out, "l2_norm,V(Du),,,{}", report.v_l2)?;
        writeln!(out, "violation,u,,,{}", report.violation)?;
        writeln!(out, "q_max,,,,{}", report.gap_condition.q_max)?;
        for e in &report.nikolskii {
            writeln!(out, "nikolskii,{},{},{},{}", e.target, e.s, e.t, e.value)?;
        }
        if let Some(l) = &report.lavrentiev {
            writeln!(out, "lavrentiev_gap,u,,,{}", l.gap_estimate)?;
        }
        Ok(())
    })?;
    if let Some(l) = &report.lavrentiev {
        art.write("lavrentiev.csv", |out, comments| {
            write_comments(comments, out)?;
            writeln!(out, "radius,energy,violation")?;
            for ((r, e), v) in l.radii.iter().zip(&l.energies).zip(&l.violations) {
                writeln!(out, "{r},{e},{v}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn run_solve(loaded: &Loaded) -> anyhow::Result<ExitCode> {
    let problem = loaded.problem()?;
    let config = loaded.solve_config()?;
    let options = loaded.diagnose_options()?;
    let art = Artifacts::new(loaded)?;

    let start = Instant::now();
    let mut lap = Instant::now();
    let mut timings = Vec::new();
    let outcome = solve_ladder_observed(&problem, &config, problem.g(), |rec, _| {
        timings.push((rec.rung, lap.elapsed().as_secs_f64()));
        lap = Instant::now();
    });
    let total = start.elapsed().as_secs_f64();

    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(e) => match e.best_iterate() {
            Some(best) => (best.clone(), Some(e.to_string())),
            None => return Err(solver_error(e)),
        },
    };

    art.write("solution.field", |out, comments| {
        write_field(&result.u, comments, out)
    })?;
    if loaded.config.output.field_csv {
        art.write("solution.csv", |out, comments| {
            write_comments(comments, out)?;
            write_field_csv(&result.u, out)
        })?;
    }
    art.write("ladder_trace.csv", |out, comments| {
        write_ladder_trace(&result.ladder_trace, comments, out)
    })?;
    art.write("timing.csv", |out, comments| {
        write_comments(comments, out)?;
        writeln!(out, "rung,seconds")?;
        for (rung, secs) in &timings {
            writeln!(out, "{rung},{secs}")?;
        }
        writeln!(out, "total,{total}")?;
        Ok(())
    })?;
    if loaded.config.output.history {
        art.write("history.csv", |out, comments| {
            write_history(&result.history, comments, out)
        })?;
    }

    let violation = result.violation(&problem);
    let auto = matches!(config.penalty.kappa, KappaChoice::Auto);
    let violation_ok = !auto || violation <= loaded.config.penalty.violation_tol;
    let success = failure.is_none() && result.converged && violation_ok;

    let mut summary = String::new();
    let status = match (&failure, result.converged, violation_ok) {
        (Some(msg), _, _) => format!("failed ({msg}); artifacts hold the best iterate"),
        (None, false, _) => "not converged (iteration limit)".to_string(),
        (None, true, false) => {
            format!(
                "converged, but violation {} exceeds {}",
                num(violation),
                num(loaded.config.penalty.violation_tol)
            )
        }
        (None, true, true) => "converged".to_string(),
    };
    let _ = writeln!(summary, "status: {status}");
    let _ = writeln!(summary, "integrand: {}", problem.integrand().kind().name());
    let _ = writeln!(summary, "stop: {}", stop_label(result.stop));
    let _ = writeln!(summary, "rungs: {}", result.ladder_trace.len());
    let _ = writeln!(summary, "iterations: {}", result.iterations);
    let _ = writeln!(summary, "gradient norm: {}", num(result.grad_norm));
    match result.kappa0 {
        Some(k0) => {
            let _ = writeln!(
                summary,
                "kappa0: {} (unregularized {})",
                k0.value, k0.unregularized
            );
        }
        None => {
            let _ = writeln!(summary, "kappa0: not computed (fixed kappa)");
        }
    }
    let _ = writeln!(summary, "kappa: {}", result.kappa);
    let _ = writeln!(summary, "energy (final rung): {}", result.energy);
    let _ = writeln!(summary, "violation: {}", num(violation));
    let params = problem.integrand().params();
    let autonomous = problem.integrand().is_autonomous();
    gap_lines(
        &gap_check(params, problem.grid().dim(), autonomous),
        params.q,
        autonomous,
        &mut summary,
    );

    let tol = loaded.config.diagnostics.contact_tol;
    let contact = contact_set(&problem, &result.u, tol);
    if contact.nodes == 0 {
        let _ = writeln!(summary, "contact set (u - psi <= {}): empty", num(tol));
    } else {
        let ranges: Vec<String> = ["x", "y"]
            .iter()
            .zip(&contact.bounds)
            .map(|(name, (lo, hi))| format!("{name} in [{lo}, {hi}]"))
            .collect();
        let _ = writeln!(
            summary,
            "contact set (u - psi <= {}): {} nodes, {}",
            num(tol),
            contact.nodes,
            ranges.join(", ")
        );
    }

    if loaded.config.diagnostics.enabled {
        match diagnose(&problem, &result.u, &options) {
            Ok(report) => {
                diagnostics_lines(&report, &mut summary);
                write_diagnostics(&art, &report)?;
            }
            Err(e) => {
                let _ = writeln!(summary, "diagnostics failed: {e}");
            }
        }
    }

    art.write("summary.txt", |out, comments| {
        write_comments(comments, out)?;
        out.write_all(summary.as_bytes())?;
        Ok(())
    })?;
    print!("{summary}");
    println!("wall time: {total:.3} s");
    println!("artifacts: {}", art.dir.display());
    Ok(ExitCode::from(if success { EXIT_OK } else { EXIT_SOLVER }))
}

fn solver_error(e: Error) -> anyhow::Error {
    match e {
        Error::InvalidParameter(_) | Error::Shape(_) | Error::Domain(_) | Error::Resolution(_) => {
            config_error(e)
        }
        other => other.into(),
    }
}

pub fn run_diagnose(loaded: &Loaded, field_path: &Path) -> anyhow::Result<ExitCode> {
    let problem = loaded.problem()?;
    let options = loaded.diagnose_options()?;
    let file = File::open(field_path)
        .map_err(|e| config_error(format!("{}: {e}", field_path.display())))?;
    let field = read_field(BufReader::new(file))
        .map_err(|e| config_error(format!("{}: {e}", field_path.display())))?;
    if **field.grid() != **problem.grid() || field.components() != problem.components() {
        return Err(config_error(format!(
            "{}: field grid {:?} x {} components does not match the configured grid {:?} x {}",
            field_path.display(),
            field.grid().resolution(),
            field.components(),
            problem.grid().resolution(),
            problem.components()
        )));
    }
    let u = Field::new(
        problem.grid().clone(),
        problem.components(),
        field.into_values(),
    )?;
    let report = diagnose(&problem, &u, &options).map_err(solver_error)?;
    let art = Artifacts::new(loaded)?;
    write_diagnostics(&art, &report)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "field: {}", field_path.display());
    let _ = writeln!(summary, "violation: {}", num(report.violation));
    let params = problem.integrand().params();
    gap_lines(
        &report.gap_condition,
        params.q,
        problem.integrand().is_autonomous(),
        &mut summary,
    );
    diagnostics_lines(&report, &mut summary);
    art.write("diagnose_summary.txt", |out, comments| {
        write_comments(comments, out)?;
        out.write_all(summary.as_bytes())?;
        Ok(())
    })?;
    print!("{summary}");
    println!("artifacts: {}", art.dir.display());
    Ok(ExitCode::from(EXIT_OK))
}

/// One sweep point's outcome.
struct Row {
    label: String,
    parameter: f64,
    status: String,
    metrics: Option<Metrics>,
    seconds: f64,
}

struct Metrics {
    kappa: f64,
    energy: f64,
    violation: f64,
    w1q_norm: f64,
    seminorm: Option<f64>,
    iterations: usize,
}

impl Metrics {
    fn new(problem: &ObstacleProblem, r: &SolveResult, seminorm: Option<(f64, f64)>) -> Self {
        let params = problem.integrand().params();
        let seminorm = seminorm.and_then(|(s, t)| {
            let vdu = v_of_gradient(&r.u, params.mu, params.p);
            nikolskii_seminorm_elements(&vdu, s, t, &default_offsets(problem.grid()))
                .ok()
                .map(|rep| rep.value)
        });
        Metrics {
            kappa: r.kappa,
            energy: r.energy,
            violation: r.violation(problem),
            w1q_norm: r.ladder_trace.last().map_or(f64::NAN, |t| t.w1q_norm),
            seminorm,
            iterations: r.iterations,
        }
    }
}

fn resized_problem(loaded: &Loaded, m: usize) -> anyhow::Result<ObstacleProblem> {
    let base = loaded.grid()?;
    let grid = Grid::new(base.domain().clone(), vec![m; base.dim()])?;
    let grid = Arc::new(grid);
    let integrand = loaded.integrand(&grid)?;
    loaded.problem_on(grid, integrand)
}

/// Threshold with unit safety over the given regularization weights.
fn kappa0_over(
    problem: &ObstacleProblem,
    base: &SolveConfig,
    epsilons: &[f64],
) -> anyhow::Result<f64> {
    let probe = SolveConfig {
        ladder: epsilons.iter().map(|&e| LadderRung::new(e, 1.0)).collect(),
        penalty: PenaltyParams {
            kappa: KappaChoice::Auto,
            safety: 1.0,
            ..base.penalty
        },
        ..base.clone()
    };
    let (k0, _) = probe.ladder_kappa(problem).map_err(solver_error)?;
    Ok(k0)
}

/// Ladder ending in `last`, keeping the configured rungs that lie strictly
/// above it in the swept parameter.
fn ladder_ending(base: &[LadderRung], last: LadderRung, axis: Axis) -> Vec<LadderRung> {
    let mut ladder: Vec<LadderRung> = base
        .iter()
        .copied()
        .filter(|r| match axis {
            Axis::Delta => r.delta > last.delta && r.epsilon >= last.epsilon,
            _ => r.epsilon > last.epsilon && r.delta >= last.delta,
        })
        .collect();
    ladder.push(last);
    ladder
}

pub fn run_sweep(loaded: &Loaded, axis: Axis, values: &[SweepValue]) -> anyhow::Result<ExitCode> {
    let base_problem = loaded.problem()?;
    let base = loaded.solve_config()?;
    let options = loaded.diagnose_options()?;
    let seminorm = options.seminorms.first().copied();
    if values.is_empty() {
        return Err(config_error("sweep needs at least one value"));
    }
    if axis != Axis::Kappa && values.iter().any(|v| v.k0_multiple) {
        return Err(config_error(
            "the k0 suffix is only meaningful for --axis kappa",
        ));
    }
    if axis == Axis::Resolution
        && values
            .iter()
            .any(|v| v.value.fract() != 0.0 || v.value < 3.0)
    {
        return Err(config_error("resolution values must be integers >= 3"));
    }
    let final_rung = *base.ladder.last().expect("validated ladder is non-empty");
    let ladder_eps: Vec<f64> = base.ladder.iter().map(|r| r.epsilon).collect();

    // Delta and epsilon points share one kappa so their violations compare.
    let shared_kappa = match (axis, base.penalty.kappa) {
        (Axis::Delta | Axis::Epsilon, KappaChoice::Auto) => {
            let mut eps = ladder_eps.clone();
            if axis == Axis::Epsilon {
                eps.extend(values.iter().map(|v| v.value));
            }
            Some(base.penalty.safety * kappa0_over(&base_problem, &base, &eps)?)
        }
        _ => None,
    };
    let kappa0 = if axis == Axis::Kappa {
        Some(kappa0_over(&base_problem, &base, &ladder_eps)?)
    } else {
        None
    };
    let decreasing = values.windows(2).all(|w| w[1].value < w[0].value);
    let warm = matches!(axis, Axis::Delta | Axis::Epsilon) && decreasing;

    let mut rows: Vec<Row> = Vec::new();
    let mut previous: Option<Field> = None;
    for v in values {
        let start = Instant::now();
        let mut cfg = base.clone();
        if let Some(k) = shared_kappa {
            cfg.penalty.kappa = KappaChoice::Fixed(k);
        }
        let mut parameter = v.value;
        let mut initial = None;
        let problem = match axis {
            Axis::Kappa => {
                parameter = if v.k0_multiple {
                    v.value * kappa0.unwrap_or(0.0)
                } else {
                    v.value
                };
                cfg.penalty.kappa = KappaChoice::Fixed(parameter);
                Ok(base_problem.clone())
            }
            Axis::Delta | Axis::Epsilon => {
                let last = if axis == Axis::Delta {
                    LadderRung::new(final_rung.epsilon, v.value)
                } else {
                    LadderRung::new(v.value, final_rung.delta)
                };
                match (warm, &previous) {
                    (true, Some(u)) => {
                        cfg.ladder = vec![last];
                        initial = Some(u.clone());
                    }
                    _ => cfg.ladder = ladder_ending(&base.ladder, last, axis),
                }
                Ok(base_problem.clone())
            }
            Axis::Resolution => resized_problem(loaded, v.value as usize),
            Axis::Q => {
                let mut params = *base_problem.integrand().params();
                params.q = v.value;
                base_problem
                    .integrand()
                    .clone()
                    .with_params(params)
                    .map_err(anyhow::Error::from)
                    .and_then(|f| {
                        ObstacleProblem::new(
                            f,
                            base_problem.psi().clone(),
                            base_problem.g().clone(),
                        )
                        .map_err(anyhow::Error::from)
                    })
            }
        };
        let (status, metrics, solution) = match problem {
            Err(e) => (format!("error: {e}"), None, None),
            Ok(problem) => {
                let init = initial.as_ref().unwrap_or(problem.g());
                match solve_ladder_observed(&problem, &cfg, init, |_, _| {}) {
                    Ok(r) => {
                        let status = if r.converged { "ok" } else { "not_converged" };
                        (
                            status.to_string(),
                            Some(Metrics::new(&problem, &r, seminorm)),
                            Some(r.u),
                        )
                    }
                    Err(e) => match e.best_iterate() {
                        Some(best) => (
                            "stagnated".to_string(),
                            Some(Metrics::new(&problem, best, seminorm)),
                            None,
                        ),
                        None => (format!("error: {e}"), None, None),
                    },
                }
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        previous = if status == "ok" { solution } else { None };
        let row = Row {
            label: v.label.clone(),
            parameter,
            status,
            metrics,
            seconds,
        };
        print_row(axis, &row);
        rows.push(row);
    }

    let art = Artifacts::new(loaded)?;
    let name = axis.name();
    art.write(&format!("sweep_{name}.csv"), |out, comments| {
        write_comments(comments, out)?;
        let semi = seminorm.map_or(String::from("seminorm"), |(s, t)| {
            format!("seminorm_v_s{s}_t{t}")
        });
        writeln!(
            out,
            "{name},parameter,status,kappa,energy,violation,w1q_norm,{semi},iterations"
        )?;
        for row in &rows {
            let status = row.status.replace(',', ";");
            match &row.metrics {
                Some(m) => writeln!(
                    out,
                    "{},{},{status},{},{},{},{},{},{}",
                    row.label,
                    row.parameter,
                    m.kappa,
                    m.energy,
                    m.violation,
                    m.w1q_norm,
                    m.seminorm.map_or(String::new(), |v| v.to_string()),
                    m.iterations
                )?,
                None => writeln!(out, "{},{},{status},,,,,,", row.label, row.parameter)?,
            }
        }
        Ok(())
    })?;
    art.write(&format!("sweep_{name}_timing.csv"), |out, comments| {
        write_comments(comments, out)?;
        writeln!(out, "{name},seconds")?;
        for row in &rows {
            writeln!(out, "{},{}", row.label, row.seconds)?;
        }
        Ok(())
    })?;
    println!("artifacts: {}", art.dir.display());
    let all_ok = rows.iter().all(|r| r.status == "ok");
    Ok(ExitCode::from(if all_ok { EXIT_OK } else { EXIT_SOLVER }))
}

fn print_row(axis: Axis, row: &Row) {
    match &row.metrics {
        Some(m) => println!(
            "{} = {} ({}): {}, energy {}, violation {:.3e}, W1q norm {}, {} iterations, {:.2} s",
            axis.name(),
            row.label,
            row.parameter,
            row.status,
            m.energy,
            m.violation,
            m.w1q_norm,
            m.iterations,
            row.seconds
        ),
        None => println!("{} = {}: {}", axis.name(), row.label, row.status),
    }
}
