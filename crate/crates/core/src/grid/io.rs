//! Plain-text nodal field files.
//!
//! ```text
//! pqfield <n> <m1> [<m2>] <N>
//! # optional comment lines
//! <x> [<y>] <u_1> ... <u_N>      one line per node, x fastest
//! ```
//!
//! Numbers are written in shortest round-trip form, so reading a written
//! file reproduces every value bit for bit.

use std::io::{BufRead, Write};
use std::sync::Arc;

use super::{BoxDomain, Field, Grid};
use crate::{Error, Result};

pub fn write_field<W: Write>(field: &Field, comments: &[String], mut out: W) -> Result<()> {
    let grid = field.grid();
    let n = grid.dim();
    let mut header = format!("pqfield {n}");
    for m in grid.resolution() {
        header.push_str(&format!(" {m}"));
    }
    writeln!(out, "{header} {}", field.components())?;
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    for node in 0..grid.node_count() {
        let x = grid.coord(node);
        let mut line = String::new();
        for xk in &x[..n] {
            line.push_str(&format!("{xk} "));
        }
        let vals: Vec<String> = field.node(node).iter().map(|v| format!("{v}")).collect();
        line.push_str(&vals.join(" "));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// CSV export for plotting: `x[,y],u0,...`.
pub fn write_field_csv<W: Write>(field: &Field, mut out: W) -> Result<()> {
    let grid = field.grid();
    let n = grid.dim();
    let mut cols: Vec<String> = ["x", "y"][..n].iter().map(|s| s.to_string()).collect();
    cols.extend((0..field.components()).map(|i| format!("u{i}")));
    writeln!(out, "{}", cols.join(","))?;
    for node in 0..grid.node_count() {
        let x = grid.coord(node);
        let mut row: Vec<String> = x[..n].iter().map(|v| format!("{v}")).collect();
        row.extend(field.node(node).iter().map(|v| format!("{v}")));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_field<R: BufRead>(input: R) -> Result<Field> {
    let mut lines = input
        .lines()
        .map(|l| l.map_err(Error::from))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('#')));

    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty file".into()))??;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.first() != Some(&"pqfield") {
        return Err(Error::Format(format!("bad header line {header:?}")));
    }
    let ints: Vec<usize> = tokens[1..]
        .iter()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Format(format!("bad header token {t:?}")))
        })
        .collect::<Result<_>>()?;
    let n = *ints
        .first()
        .ok_or_else(|| Error::Format("missing dimension".into()))?;
    if !(n == 1 || n == 2) || ints.len() != n + 2 {
        return Err(Error::Format(format!(
            "header {header:?} does not match 'pqfield n m1 [m2] N'"
        )));
    }
    let resolution = ints[1..=n].to_vec();
    let components = ints[n + 1];
    let count: usize = resolution.iter().product();

    let mut coords = Vec::with_capacity(count * n);
    let mut values = Vec::with_capacity(count * components);
    for (row, line) in lines.enumerate() {
        let line = line?;
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("line {}: bad number {t:?}", row + 2)))
            })
            .collect::<Result<_>>()?;
        if nums.len() != n + components {
            return Err(Error::Format(format!(
                "line {}: expected {} numbers, found {}",
                row + 2,
                n + components,
                nums.len()
            )));
        }
        coords.extend_from_slice(&nums[..n]);
        values.extend_from_slice(&nums[n..]);
    }
    if coords.len() != count * n {
        return Err(Error::Format(format!(
            "expected {count} node lines, found {}",
            coords.len() / n
        )));
    }
    let lower = coords[..n].to_vec();
    let upper = coords[(count - 1) * n..].to_vec();
    let grid = Arc::new(Grid::new(BoxDomain::new(lower, upper)?, resolution)?);
    for node in 0..count {
        let x = grid.coord(node);
        for k in 0..n {
            let tol = 1e-9 * (1.0 + x[k].abs());
            if (coords[node * n + k] - x[k]).abs() > tol {
                return Err(Error::Format(format!(
                    "node {node}: coordinates are not a uniform grid"
                )));
            }
        }
    }
    Field::new(grid, components, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Expr;

    #[test]
    fn round_trip_is_bitwise() {
        let grid = Arc::new(
            Grid::new(
                BoxDomain::new(vec![-1.0, 0.5], vec![1.0, 2.0]).unwrap(),
                vec![5, 4],
            )
            .unwrap(),
        );
        let u = Field::sample(
            grid,
            &[
                Expr::SineProduct {
                    amplitude: 1.0 / 3.0,
                    frequency: 0.7,
                },
                Expr::constant(1e-300),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_field(&u, &["config line".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("pqfield 2 5 4 2\n# config line\n"));
        let back = read_field(&buf[..]).unwrap();
        assert_eq!(back.values(), u.values());
        assert_eq!(back.grid().as_ref(), u.grid().as_ref());
    }

    #[test]
    fn rejects_truncated_file() {
        let text = "pqfield 1 3 1\n0 1\n0.5 2\n";
        assert!(read_field(text.as_bytes()).is_err());
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_field("pqfield 3 2 2 2 1\n".as_bytes()).is_err());
        assert!(read_field("field 1 2 1\n0 0\n1 0\n".as_bytes()).is_err());
    }
}
