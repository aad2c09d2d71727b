//! Closed-form scalar expressions used for obstacles, boundary data,
//! coefficient fields and test functions.
//!
//! The catalog is deliberately small so that experiment files stay
//! reproducible. Vector-valued fields apply one expression per component.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "expr", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expr {
    Constant {
        value: f64,
    },
    /// `offset + slope . x`
    Affine {
        #[serde(default)]
        offset: f64,
        slope: Vec<f64>,
    },
    /// `height - curvature * |x - center|^2`
    ParabolicCap {
        height: f64,
        curvature: f64,
        center: Vec<f64>,
    },
    /// `height * prod_k 4 (x_k - lower_k)(upper_k - x_k) / (upper_k - lower_k)^2`,
    /// which vanishes on the faces of the box and peaks at its center.
    QuadraticBump {
        height: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// `height * (1 - |x - center|^2 / radius^2)_+^2`
    RadialBump {
        height: f64,
        center: Vec<f64>,
        radius: f64,
    },
    /// `scale * (x_axis - shift)_+^exponent`
    PowerRamp {
        #[serde(default)]
        axis: usize,
        shift: f64,
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * |x_axis - center|^exponent`, the Hölder coefficient pattern.
    AbsPower {
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        center: f64,
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `offset + amplitude * sin^2(pi * frequency * x_axis)`, a stripe
    /// pattern for double-phase coefficients.
    Stripes {
        #[serde(default)]
        axis: usize,
        frequency: f64,
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `amplitude * prod_k sin(pi * frequency * x_k)`
    SineProduct {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Constant { value }
    }

    /// Checks that vector-valued parameters match the spatial dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_len = |name: &str, v: &[f64]| {
            if v.len() == dim {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{name} has {} entries, domain dimension is {dim}",
                    v.len()
                )))
            }
        };
        let check_axis = |axis: usize| {
            if axis < dim {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "axis {axis} out of range for dimension {dim}"
                )))
            }
        };
        match self {
            Expr::Constant { .. } | Expr::SineProduct { .. } => Ok(()),
            Expr::Affine { slope, .. } => check_len("slope", slope),
            Expr::ParabolicCap { center, .. } => check_len("center", center),
            Expr::QuadraticBump { lower, upper, .. } => {
                check_len("lower", lower)?;
                check_len("upper", upper)?;
                if lower.iter().zip(upper).any(|(a, b)| b <= a) {
                    return Err(Error::InvalidParameter(
                        "quadratic_bump needs lower < upper".into(),
                    ));
                }
                Ok(())
            }
            Expr::RadialBump { center, radius, .. } => {
                check_len("center", center)?;
                if *radius <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "radial_bump radius must be positive".into(),
                    ));
                }
                Ok(())
            }
            Expr::PowerRamp { axis, exponent, .. } | Expr::AbsPower { axis, exponent, .. } => {
                check_axis(*axis)?;
                if *exponent < 0.0 {
                    return Err(Error::InvalidParameter(
                        "exponent must be non-negative".into(),
                    ));
                }
                Ok(())
            }
            Expr::Stripes { axis, .. } => check_axis(*axis),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Constant { value } => *value,
            Expr::Affine { offset, slope } => {
                offset + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            Expr::ParabolicCap {
                height,
                curvature,
                center,
            } => height - curvature * dist2(x, center),
            Expr::QuadraticBump {
                height,
                lower,
                upper,
            } => {
                let mut v = *height;
                for ((xi, a), b) in x.iter().zip(lower).zip(upper) {
                    v *= 4.0 * (xi - a) * (b - xi) / ((b - a) * (b - a));
                }
                v
            }
            Expr::RadialBump {
                height,
                center,
                radius,
            } => {
                let s = (1.0 - dist2(x, center) / (radius * radius)).max(0.0);
                height * s * s
            }
            Expr::PowerRamp {
                axis,
                shift,
                exponent,
                scale,
            } => {
                let d = x[*axis] - shift;
                if d > 0.0 {
                    scale * d.powf(*exponent)
                } else {
                    0.0
                }
            }
            Expr::AbsPower {
                axis,
                center,
                exponent,
                scale,
            } => scale * (x[*axis] - center).abs().powf(*exponent),
            Expr::Stripes {
                axis,
                frequency,
                amplitude,
                offset,
            } => {
                let s = (std::f64::consts::PI * frequency * x[*axis]).sin();
                offset + amplitude * s * s
            }
            Expr::SineProduct {
                amplitude,
                frequency,
            } => {
                let mut v = *amplitude;
                for xi in x {
                    v *= (std::f64::consts::PI * frequency * xi).sin();
                }
                v
            }
        }
    }
}

fn dist2(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabolic_cap_matches_closed_form() {
        let e = Expr::ParabolicCap {
            height: 0.25,
            curvature: 1.0,
            center: vec![0.5, 0.5],
        };
        assert_eq!(e.eval(&[0.5, 0.5]), 0.25);
        assert!((e.eval(&[0.0, 0.0]) - (0.25 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn power_ramp_is_zero_left_of_shift() {
        let e = Expr::PowerRamp {
            axis: 0,
            shift: 0.5,
            exponent: 0.25,
            scale: 1.0,
        };
        assert_eq!(e.eval(&[0.25]), 0.0);
        assert!((e.eval(&[0.5 + 0.0625]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_wrong_center_length() {
        let e = Expr::RadialBump {
            height: 1.0,
            center: vec![0.5],
            radius: 0.2,
        };
        assert!(e.validate(2).is_err());
        assert!(e.validate(1).is_ok());
    }

    #[test]
    fn quadratic_bump_vanishes_on_faces() {
        let e = Expr::QuadraticBump {
            height: 1.0,
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        assert_eq!(e.eval(&[0.0, 0.3]), 0.0);
        assert!((e.eval(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
    }
}
