//! Energy densities `F(x, z)` with `(p,q)`-growth in the gradient variable
//! `z` (an `N x n` matrix stored row-major) and their `z`-gradients.
//!
//! Built-in densities all depend on `z` through the shifted modulus
//! `s = mu^2 + |z|^2` (Frobenius norm):
//!
//! | kind                 | `F(x, z)`                               |
//! |----------------------|-----------------------------------------|
//! | `PPower`             | `|z|^p`                                 |
//! | `PPowerRegularized`  | `s^{p/2}`, `mu > 0`                     |
//! | `DoublePhase`        | `s^{p/2} + a(x) s^{q/2}`, `a >= 0`      |
//! | `HolderModulated`    | `(1 + a(x)) s^{p/2}`                    |
//!
//! plus user-supplied densities with an explicit gradient.

mod checks;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::grid::Field;
use crate::{Error, Result};

pub use checks::{
    check_convexity, check_growth_bounds, check_h1_convexity, check_h3_holder,
    check_h4_monotonicity, check_h6, ConvexityReport, GrowthReport, H6Report, H6Witness,
    HolderReport, MonotonicityReport, SampleShape,
};

/// Exponents and structural constants of a `(p,q)`-growth density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "one", rename = "Lambda")]
    pub big_lambda: f64,
    /// Hölder exponent in `x`; only meaningful for non-autonomous densities.
    #[serde(default)]
    pub alpha: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl GrowthParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        let params = GrowthParams {
            p,
            q,
            mu: 0.0,
            lambda: 1.0,
            big_lambda: 1.0,
            alpha: None,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let GrowthParams {
            p,
            q,
            mu,
            lambda,
            big_lambda,
            alpha,
        } = *self;
        if !(p.is_finite() && q.is_finite() && 2.0 <= p && p <= q) {
            return Err(Error::InvalidParameter(format!(
                "need 2 <= p <= q, got p={p}, q={q}"
            )));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mu must be >= 0, got {mu}"
            )));
        }
        if !(lambda > 0.0 && big_lambda > 0.0) {
            return Err(Error::InvalidParameter(
                "lambda and Lambda must be positive".into(),
            ));
        }
        if let Some(a) = alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "alpha must lie in (0,1], got {a}"
                )));
            }
        }
        Ok(())
    }
}

/// Spatial coefficient `a(x) >= 0` of a non-autonomous density.
#[derive(Clone, Debug)]
pub enum Coefficient {
    Expr(Expr),
    /// Grid-sampled scalar field, evaluated by piecewise-linear interpolation.
    Field(Field),
}

impl Coefficient {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Expr(e) => e.eval(x),
            Coefficient::Field(f) => f.interpolate(x)[0],
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Expr(Expr::Constant { .. }))
    }
}

pub type DensityFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
pub type DensityGradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub enum IntegrandKind {
    PPower,
    PPowerRegularized,
    DoublePhase(Coefficient),
    HolderModulated(Coefficient),
    Custom {
        name: String,
        density: Arc<DensityFn>,
        gradient: Arc<DensityGradFn>,
    },
}

impl IntegrandKind {
    pub fn name(&self) -> &str {
        match self {
            IntegrandKind::PPower => "p-power",
            IntegrandKind::PPowerRegularized => "p-power-regularized",
            IntegrandKind::DoublePhase(_) => "double-phase",
            IntegrandKind::HolderModulated(_) => "holder-modulated",
            IntegrandKind::Custom { name, .. } => name,
        }
    }
}

impl fmt::Debug for IntegrandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntegrandKind::DoublePhase(c) => f.debug_tuple("DoublePhase").field(c).finish(),
            IntegrandKind::HolderModulated(c) => f.debug_tuple("HolderModulated").field(c).finish(),
            other => f.write_str(other.name()),
        }
    }
}

/// An energy density together with its growth metadata. Immutable once built.
#[derive(Clone, Debug)]
pub struct Integrand {
    params: GrowthParams,
    kind: IntegrandKind,
    autonomous: bool,
}

impl Integrand {
    /// `F(z) = |z|^p` with `q = p`.
    pub fn p_power(p: f64) -> Result<Self> {
        Self::build(GrowthParams::new(p, p)?, IntegrandKind::PPower, true)
    }

    /// `F(z) = (mu^2 + |z|^2)^{p/2}` with `mu > 0`.
    pub fn p_power_regularized(p: f64, mu: f64) -> Result<Self> {
        let mut params = GrowthParams::new(p, p)?;
        params.mu = mu;
        // (mu^2 + |z|^2)^{p/2} <= 2^{p/2-1} max(1, mu^2)^{p/2} (1 + |z|^p)
        params.big_lambda = 2f64.powf(p / 2.0 - 1.0).max(1.0) * mu.max(1.0).powf(p);
        Self::build(params, IntegrandKind::PPowerRegularized, true)
    }

    /// `F(x, z) = |z|^p + a(x) |z|^q`; autonomous when `a` is a constant expression.
    pub fn double_phase(p: f64, q: f64, coefficient: Coefficient) -> Result<Self> {
        let autonomous = coefficient.is_constant();
        Self::build(
            GrowthParams::new(p, q)?,
            IntegrandKind::DoublePhase(coefficient),
            autonomous,
        )
    }

    /// `F(x, z) = (1 + a(x)) |z|^p` with `a` Hölder continuous of order `alpha`.
    pub fn holder_modulated(p: f64, alpha: f64, coefficient: Coefficient) -> Result<Self> {
        let mut params = GrowthParams::new(p, p)?;
        params.alpha = Some(alpha);
        let autonomous = coefficient.is_constant();
        Self::build(
            params,
            IntegrandKind::HolderModulated(coefficient),
            autonomous,
        )
    }

    /// User-supplied density and gradient. Convexity is the caller's
    /// responsibility; the samplers in this module can probe it.
    pub fn custom(
        name: impl Into<String>,
        params: GrowthParams,
        autonomous: bool,
        density: Arc<DensityFn>,
        gradient: Arc<DensityGradFn>,
    ) -> Result<Self> {
        Self::build(
            params,
            IntegrandKind::Custom {
                name: name.into(),
                density,
                gradient,
            },
            autonomous,
        )
    }

    /// Builds from explicit parameters, e.g. to set `mu`, `lambda`, `Lambda`.
    pub fn build(params: GrowthParams, kind: IntegrandKind, autonomous: bool) -> Result<Self> {
        params.validate()?;
        match &kind {
            IntegrandKind::PPower if params.mu != 0.0 => {
                return Err(Error::InvalidParameter("p-power density has mu = 0".into()));
            }
            IntegrandKind::PPowerRegularized if params.mu <= 0.0 => {
                return Err(Error::InvalidParameter(
                    "regularized p-power density needs mu > 0".into(),
                ));
            }
            IntegrandKind::HolderModulated(_) if params.alpha.is_none() => {
                return Err(Error::InvalidParameter(
                    "holder-modulated density needs alpha".into(),
                ));
            }
            _ => {}
        }
        Ok(Integrand {
            params,
            kind,
            autonomous,
        })
    }

    pub fn with_params(mut self, params: GrowthParams) -> Result<Self> {
        self.params = params;
        Self::build(self.params, self.kind, self.autonomous)
    }

    pub fn params(&self) -> &GrowthParams {
        &self.params
    }

    pub fn kind(&self) -> &IntegrandKind {
        &self.kind
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    /// `F(x, z)`; rejects non-finite input.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        check_finite(x, z)?;
        Ok(self.density(x, z))
    }

    /// `d_z F(x, z)` as an `N x n` row-major matrix.
    pub fn grad_z(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_finite(x, z)?;
        let s = self.params.mu * self.params.mu + norm2(z);
        if s == 0.0 && self.params.p < 2.0 {
            return Err(Error::Singularity(
                "|z|^{p-2} z is unbounded at z = 0 for p < 2".into(),
            ));
        }
        let mut out = vec![0.0; z.len()];
        self.density_grad(x, z, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation used by the assembly loops.
    pub(crate) fn density(&self, x: &[f64], z: &[f64]) -> f64 {
        let GrowthParams { p, q, mu, .. } = self.params;
        let s = mu * mu + norm2(z);
        match &self.kind {
            IntegrandKind::PPower | IntegrandKind::PPowerRegularized => s.powf(0.5 * p),
            IntegrandKind::DoublePhase(a) => s.powf(0.5 * p) + a.value(x) * s.powf(0.5 * q),
            IntegrandKind::HolderModulated(a) => (1.0 + a.value(x)) * s.powf(0.5 * p),
            IntegrandKind::Custom { density, .. } => density(x, z),
        }
    }

    /// Unchecked gradient; writes `d_z F(x, z)` into `out`.
    pub(crate) fn density_grad(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let GrowthParams { p, q, mu, .. } = self.params;
        let s = mu * mu + norm2(z);
        // every built-in is phi(s) with dF/dz = 2 phi'(s) z
        let factor = match &self.kind {
            IntegrandKind::PPower | IntegrandKind::PPowerRegularized => p * s.powf(0.5 * p - 1.0),
            IntegrandKind::DoublePhase(a) => {
                p * s.powf(0.5 * p - 1.0) + a.value(x) * q * s.powf(0.5 * q - 1.0)
            }
            IntegrandKind::HolderModulated(a) => (1.0 + a.value(x)) * p * s.powf(0.5 * p - 1.0),
            IntegrandKind::Custom { gradient, .. } => {
                gradient(x, z, out);
                return;
            }
        };
        for (o, zi) in out.iter_mut().zip(z) {
            *o = factor * zi;
        }
    }
}

pub(crate) fn norm2(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

fn check_finite(x: &[f64], z: &[f64]) -> Result<()> {
    if z.iter().chain(x).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("F(x, z) needs finite x and z".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const X: [f64; 2] = [0.3, 0.4];

    fn fd_gradient(f: &Integrand, z: &[f64]) -> Vec<f64> {
        (0..z.len())
            .map(|i| {
                let h = 1e-6 * (1.0 + z[i].abs());
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                (f.eval(&X, &zp).unwrap() - f.eval(&X, &zm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn p_power_values() {
        let f2 = Integrand::p_power(2.0).unwrap();
        assert_eq!(f2.eval(&X, &[0.0; 4]).unwrap(), 0.0);
        let f4 = Integrand::p_power(4.0).unwrap();
        assert_eq!(f4.eval(&X, &[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        let reg = Integrand::p_power_regularized(2.0, 1.0).unwrap();
        assert_eq!(reg.eval(&X, &[0.0; 4]).unwrap(), 1.0);
    }

    #[test]
    fn quadratic_gradient_is_2z() {
        let f = Integrand::p_power(2.0).unwrap();
        let z = [0.7, -1.3, 2.0, 0.1];
        let g = f.grad_z(&X, &z).unwrap();
        for (gi, zi) in g.iter().zip(z) {
            assert!((gi - 2.0 * zi).abs() < 1e-14);
        }
    }

    #[test]
    fn quartic_gradient() {
        let f = Integrand::p_power(4.0).unwrap();
        assert_eq!(
            f.grad_z(&X, &[1.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![4.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn double_phase_gradient_against_finite_differences() {
        let f = Integrand::double_phase(2.0, 4.0, Coefficient::Expr(Expr::constant(1.0))).unwrap();
        let z = [1.0, 0.0, 0.0, 0.0];
        let g = f.grad_z(&X, &z).unwrap();
        let fd = fd_gradient(&f, &z);
        assert_eq!(g, vec![6.0, 0.0, 0.0, 0.0]);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_at_zero_is_zero_for_p_above_two() {
        let f = Integrand::p_power(3.0).unwrap();
        assert_eq!(f.grad_z(&X, &[0.0; 2]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_z_is_rejected() {
        let f = Integrand::p_power(2.0).unwrap();
        assert!(matches!(f.eval(&X, &[f64::NAN]), Err(Error::Domain(_))));
        assert!(f.grad_z(&X, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn autonomous_flag_follows_coefficient() {
        let c = Integrand::double_phase(2.0, 3.0, Coefficient::Expr(Expr::constant(0.5))).unwrap();
        assert!(c.is_autonomous());
        let v = Integrand::double_phase(
            2.0,
            3.0,
            Coefficient::Expr(Expr::AbsPower {
                axis: 0,
                center: 0.0,
                exponent: 0.5,
                scale: 1.0,
            }),
        )
        .unwrap();
        assert!(!v.is_autonomous());
    }

    #[test]
    fn params_are_validated() {
        assert!(GrowthParams::new(1.5, 2.0).is_err());
        assert!(GrowthParams::new(3.0, 2.0).is_err());
        assert!(Integrand::p_power_regularized(2.0, 0.0).is_err());
        let mut p = GrowthParams::new(2.0, 2.5).unwrap();
        p.alpha = Some(1.5);
        assert!(p.validate().is_err());
    }
}
