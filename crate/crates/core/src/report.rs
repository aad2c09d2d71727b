//! CSV tables for solver output.
//!
//! Numbers use shortest round-trip formatting, so identical runs produce
//! byte-identical files.

use std::io::Write;

use crate::solver::{IterRecord, RungRecord, StopReason};
use crate::Result;

pub const LADDER_HEADER: &str =
    "rung,epsilon,delta,kappa,energy,violation,w1q_norm,grad_lq_norm,iterations,grad_norm,stop";

pub fn stop_label(stop: StopReason) -> &'static str {
    match stop {
        StopReason::GradTol => "grad_tol",
        StopReason::EnergyTol => "energy_tol",
        StopReason::MaxIters => "max_iters",
    }
}

/// Writes `# ` comment lines, the header and one row per rung.
pub fn write_ladder_trace<W: Write>(
    trace: &[RungRecord],
    comments: &[String],
    mut out: W,
) -> Result<()> {
    write_comments(comments, &mut out)?;
    writeln!(out, "{LADDER_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.rung,
            r.epsilon,
            r.delta,
            r.kappa,
            r.energy,
            r.violation,
            r.w1q_norm,
            r.grad_lq_norm,
            r.iterations,
            r.grad_norm,
            stop_label(r.stop)
        )?;
    }
    Ok(())
}

pub fn write_history<W: Write>(
    history: &[IterRecord],
    comments: &[String],
    mut out: W,
) -> Result<()> {
    write_comments(comments, &mut out)?;
    writeln!(out, "iteration,energy,grad_norm,step")?;
    for (k, h) in history.iter().enumerate() {
        writeln!(out, "{k},{},{},{}", h.energy, h.grad_norm, h.step)?;
    }
    Ok(())
}

pub fn write_comments<W: Write>(comments: &[String], out: &mut W) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}
