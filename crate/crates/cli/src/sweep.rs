//! Sweep axes and the `--values` mini-language.
//!
//! A value list is comma separated. Each item is a number, a number with
//! a `k0` suffix (a multiple of the penalty threshold, kappa axis only), or
//! `geom:<start>:<stop>:<count>` for a geometric range with both ends
//! included.

use clap::ValueEnum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Kappa,
    Delta,
    Epsilon,
    Resolution,
    Q,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Kappa => "kappa",
            Axis::Delta => "delta",
            Axis::Epsilon => "epsilon",
            Axis::Resolution => "resolution",
            Axis::Q => "q",
        }
    }

    /// Values used when `--values` is absent.
    pub fn default_values(self) -> Option<&'static str> {
        match self {
            Axis::Kappa => Some("0.25k0,0.5k0,k0,2k0,4k0"),
            Axis::Delta => Some("geom:1e-1:1e-5:5"),
            Axis::Epsilon => Some("geom:1e-1:1e-4:4"),
            Axis::Resolution => Some("9,17,33,65"),
            Axis::Q => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepValue {
    /// The item as it appears in the table.
    pub label: String,
    pub value: f64,
    pub k0_multiple: bool,
}

fn parse_item(item: &str) -> Result<SweepValue, String> {
    let item = item.trim();
    let (number, k0_multiple) = match item.strip_suffix("k0") {
        Some("") => ("1", true),
        Some(rest) => (rest, true),
        None => (item, false),
    };
    let value: f64 = number
        .parse()
        .map_err(|_| format!("bad sweep value {item:?}"))?;
    if !value.is_finite() {
        return Err(format!("bad sweep value {item:?}"));
    }
    Ok(SweepValue {
        label: item.to_string(),
        value,
        k0_multiple,
    })
}

fn parse_geometric(spec: &str) -> Result<Vec<SweepValue>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, stop, count] = parts[..] else {
        return Err(format!(
            "geometric range needs geom:<start>:<stop>:<count>, got {spec:?}"
        ));
    };
    let (a, b) = (parse_item(start)?, parse_item(stop)?);
    if a.k0_multiple != b.k0_multiple {
        return Err(format!("both ends of {spec:?} need the same unit"));
    }
    let count: usize = count
        .trim()
        .parse()
        .map_err(|_| format!("bad count in {spec:?}"))?;
    if count < 2 || !(a.value > 0.0 && b.value > 0.0) {
        return Err(format!(
            "geometric range needs positive ends and count >= 2, got {spec:?}"
        ));
    }
    let ratio = (b.value / a.value).powf(1.0 / (count - 1) as f64);
    let suffix = if a.k0_multiple { "k0" } else { "" };
    Ok((0..count)
        .map(|k| {
            let raw = if k == count - 1 {
                b.value
            } else {
                a.value * ratio.powi(k as i32)
            };
            // 12 significant digits keep decade ranges on round numbers
            let value: f64 = format!("{raw:.11e}")
                .parse()
                .expect("formatted float parses");
            SweepValue {
                label: format!("{value}{suffix}"),
                value,
                k0_multiple: a.k0_multiple,
            }
        })
        .collect())
}

pub fn parse_values(spec: &str) -> Result<Vec<SweepValue>, String> {
    let mut out = Vec::new();
    for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
        match item.trim().strip_prefix("geom:") {
            Some(range) => out.extend(parse_geometric(range)?),
            None => out.push(parse_item(item)?),
        }
    }
    if out.is_empty() {
        return Err("empty value list".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_k0_items() {
        let v = parse_values("0.25k0, k0,2.5").unwrap();
        assert_eq!(
            v[0],
            SweepValue {
                label: "0.25k0".into(),
                value: 0.25,
                k0_multiple: true
            }
        );
        assert_eq!(v[1].value, 1.0);
        assert!(v[1].k0_multiple);
        assert_eq!(v[2].value, 2.5);
        assert!(!v[2].k0_multiple);
    }

    #[test]
    fn geometric_range_hits_both_ends() {
        let v = parse_values("geom:1e-1:1e-5:5").unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0].value, 0.1);
        assert_eq!(v[4].value, 1e-5);
        assert_eq!(v[2].value, 1e-3);
        assert_eq!(v[1].label, "0.01");
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_values("x").is_err());
        assert!(parse_values("geom:1:2").is_err());
        assert!(parse_values("geom:0:1:3").is_err());
        assert!(parse_values("geom:1k0:2:3").is_err());
        assert!(parse_values("").is_err());
    }
}
