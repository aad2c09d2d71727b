//! The smoothed exact penalty.
//!
//! `H_delta(x) = delta * ln(1 + exp(x / delta))` is non-negative, convex and
//! non-decreasing, with `0 <= H_delta' <= 1` and
//! `|H_delta(x) - max(0, x)| <= delta ln 2`. The obstacle term uses the
//! nested composition `H_delta(H_delta(psi_i - u_i))`, summed over rows.

use serde::{Deserialize, Serialize};

use crate::grid::Field;
use crate::integrand::norm2;
use crate::problem::ObstacleProblem;
use crate::sum::compensated_sum;
use crate::{Error, Result};

/// Penalty weight: a fixed value or `safety * kappa_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KappaChoice {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub kappa: KappaChoice,
    /// Smoothing width in `(0, 1]`.
    pub delta: f64,
    /// Multiplier applied to `kappa_0` when `kappa` is `Auto`.
    pub safety: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        PenaltyParams {
            kappa: KappaChoice::Auto,
            delta: 1e-1,
            safety: 2.0,
        }
    }
}

impl PenaltyParams {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if self.delta > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "delta must be <= 1, got {}",
                self.delta
            )));
        }
        if !(self.safety >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "safety must be >= 1, got {}",
                self.safety
            )));
        }
        if let KappaChoice::Fixed(k) = self.kappa {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "kappa must be >= 0, got {k}"
                )));
            }
        }
        Ok(())
    }

    /// Resolves the weight given the threshold `kappa_0`.
    pub fn resolve(&self, kappa0: f64) -> f64 {
        match self.kappa {
            KappaChoice::Auto => self.safety * kappa0,
            KappaChoice::Fixed(k) => k,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "delta must be positive, got {delta}"
        )))
    }
}

#[inline]
pub(crate) fn softplus(x: f64, delta: f64) -> f64 {
    let t = x / delta;
    delta * (t.max(0.0) + (-t.abs()).exp().ln_1p())
}

#[inline]
pub(crate) fn logistic(x: f64, delta: f64) -> f64 {
    let t = x / delta;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `H_delta(x)`.
pub fn h_delta(x: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(softplus(x, delta))
}

/// `H_delta'(x)`, the logistic function of `x / delta`.
pub fn h_delta_prime(x: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(logistic(x, delta))
}

/// `H_delta(H_delta(y))`.
#[inline]
pub(crate) fn nested(y: f64, delta: f64) -> f64 {
    softplus(softplus(y, delta), delta)
}

/// `d/dy H_delta(H_delta(y))`.
#[inline]
pub(crate) fn nested_prime(y: f64, delta: f64) -> f64 {
    logistic(softplus(y, delta), delta) * logistic(y, delta)
}

/// `sum_nodes w_node sum_i H_delta(H_delta(psi_i - u_i))` with mass-lumped weights.
pub fn smoothed_penalty(u: &Field, psi: &Field, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    u.same_shape(psi, "smoothed penalty")?;
    let nc = u.components();
    let w = u.grid().lumped_weights();
    Ok(compensated_sum(
        u.values()
            .iter()
            .zip(psi.values())
            .enumerate()
            .map(|(k, (uv, pv))| w[k / nc] * nested(pv - uv, delta)),
    ))
}

/// Gradient of [`smoothed_penalty`] with respect to the nodal values of `u`.
pub fn smoothed_penalty_gradient(u: &Field, psi: &Field, delta: f64) -> Result<Field> {
    check_delta(delta)?;
    u.same_shape(psi, "smoothed penalty")?;
    let nc = u.components();
    let w = u.grid().lumped_weights();
    let values = u
        .values()
        .iter()
        .zip(psi.values())
        .enumerate()
        .map(|(k, (uv, pv))| -w[k / nc] * nested_prime(pv - uv, delta))
        .collect();
    Field::new(u.grid().clone(), nc, values)
}

/// The exactness threshold `kappa_0 = || div d_zF(x, D psi) ||_inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Kappa0 {
    /// Threshold for the density plus the `eps |z|^q` regularization.
    pub value: f64,
    /// Threshold for the density alone.
    pub unregularized: f64,
}

/// Computes `kappa_0` for `F + epsilon |z|^q` from the sampled obstacle.
///
/// Nodal gradients of `psi` and the divergence of the flux use central
/// differences in the interior and second-order one-sided differences on
/// boundary nodes, so quadratic obstacles and affine fluxes are handled
/// exactly.
pub fn compute_kappa0(problem: &ObstacleProblem, epsilon: f64) -> Result<Kappa0> {
    let grid = problem.grid();
    if let Some(m) = grid.resolution().iter().find(|m| **m < 3) {
        return Err(Error::Resolution(format!(
            "kappa_0 needs at least 3 nodes per axis for second differences, got {m}"
        )));
    }
    let n = grid.dim();
    let nc = problem.components();
    let psi = problem.psi().values();
    let q = problem.integrand().params().q;
    let count = grid.node_count();
    let width = nc * n;

    let mut dpsi = vec![0.0; count * width];
    for k in 0..n {
        let d = axis_derivative(grid, psi, nc, k);
        for node in 0..count {
            for i in 0..nc {
                dpsi[node * width + i * n + k] = d[node * nc + i];
            }
        }
    }

    let mut flux = vec![0.0; count * width];
    let mut reg = vec![0.0; count * width];
    for node in 0..count {
        let x = grid.coord(node);
        let z = &dpsi[node * width..(node + 1) * width];
        problem
            .integrand()
            .density_grad(&x[..n], z, &mut flux[node * width..(node + 1) * width]);
        let s = norm2(z);
        let factor = if s == 0.0 {
            0.0
        } else {
            q * s.powf(0.5 * q - 1.0)
        };
        for (r, zi) in reg[node * width..(node + 1) * width].iter_mut().zip(z) {
            *r = factor * zi;
        }
    }

    let divergence = |field: &[f64]| -> Vec<f64> {
        let mut div = vec![0.0; count * nc];
        for k in 0..n {
            // column k of every row, laid out as an nc-component nodal field
            let column: Vec<f64> = (0..count * nc)
                .map(|j| field[(j / nc) * width + (j % nc) * n + k])
                .collect();
            for (acc, d) in div.iter_mut().zip(axis_derivative(grid, &column, nc, k)) {
                *acc += d;
            }
        }
        div
    };
    let div_f = divergence(&flux);
    let div_r = divergence(&reg);
    let unregularized = div_f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let value = div_f
        .iter()
        .zip(&div_r)
        .fold(0.0f64, |m, (a, b)| m.max((a + epsilon * b).abs()));
    Ok(Kappa0 {
        value,
        unregularized,
    })
}

/// Derivative along `axis` of an `nc`-component nodal array.
fn axis_derivative(grid: &crate::grid::Grid, values: &[f64], nc: usize, axis: usize) -> Vec<f64> {
    let m = grid.resolution()[axis];
    let h = grid.spacing()[axis];
    let stride = if axis == 0 { 1 } else { grid.resolution()[0] };
    let mut out = vec![0.0; values.len()];
    for node in 0..grid.node_count() {
        let i = grid.node_multi_index(node)[axis];
        for c in 0..nc {
            let at = |offset: isize| {
                values[((node as isize + offset * stride as isize) as usize) * nc + c]
            };
            out[node * nc + c] = if i == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else if i == m - 1 {
                (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
            } else {
                (at(1) - at(-1)) / (2.0 * h)
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::expr::Expr;
    use crate::grid::Grid;
    use crate::integrand::Integrand;

    #[test]
    fn h_delta_at_zero_is_delta_ln2() {
        for d in [1.0, 0.3, 1e-4] {
            assert!((h_delta(0.0, d).unwrap() - d * 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn h_delta_deep_inactive_and_saturated() {
        assert!(h_delta(-10.0, 0.01).unwrap() < 1e-6);
        assert!((h_delta_prime(10.0, 0.01).unwrap() - 1.0).abs() < 1e-12);
        // no overflow far on the active side
        assert!((h_delta(1e6, 1e-6).unwrap() - 1e6).abs() < 1e-6);
    }

    #[test]
    fn h_delta_rejects_non_positive_delta() {
        assert!(h_delta(0.0, 0.0).is_err());
        assert!(h_delta_prime(0.0, -1.0).is_err());
    }

    #[test]
    fn penalty_of_obstacle_itself() {
        let grid = Arc::new(Grid::interval(0.0, 1.0, 11).unwrap());
        let psi = Field::sample(
            grid.clone(),
            &[Expr::SineProduct {
                amplitude: 1.0,
                frequency: 1.0,
            }],
        )
        .unwrap();
        let v = smoothed_penalty(&psi, &psi, 0.5).unwrap();
        let expected = h_delta(0.5 * 2f64.ln(), 0.5).unwrap();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn penalty_far_above_obstacle() {
        let grid = Arc::new(Grid::unit_square(9).unwrap());
        let psi = Field::zeros(grid.clone(), 1);
        let u = Field::constant(grid, 1, 10.0);
        let d = 0.01;
        let v = smoothed_penalty(&u, &psi, d).unwrap();
        let expected = softplus(softplus(-10.0, d), d);
        assert!((v - expected).abs() < 1e-15);
        assert!((v / (d * 2f64.ln()) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kappa0_vanishes_for_affine_obstacle() {
        let grid = Arc::new(Grid::unit_square(9).unwrap());
        let psi = Field::sample(
            grid.clone(),
            &[Expr::Affine {
                offset: -1.0,
                slope: vec![0.3, -0.2],
            }],
        )
        .unwrap();
        let g = Field::constant(grid, 1, 5.0);
        for f in [
            Integrand::p_power(2.0).unwrap(),
            Integrand::p_power(4.0).unwrap(),
        ] {
            let problem = ObstacleProblem::new(f, psi.clone(), g.clone()).unwrap();
            assert!(compute_kappa0(&problem, 0.0).unwrap().value < 1e-12);
        }
    }

    #[test]
    fn kappa0_is_twice_laplacian_for_dirichlet_energy() {
        let grid = Arc::new(Grid::unit_square(11).unwrap());
        let psi = Field::sample(
            grid.clone(),
            &[Expr::ParabolicCap {
                height: 1.0,
                curvature: 1.0,
                center: vec![0.0, 0.0],
            }],
        )
        .unwrap();
        let g = Field::constant(grid, 1, 1.0);
        let problem = ObstacleProblem::new(Integrand::p_power(2.0).unwrap(), psi, g).unwrap();
        let k = compute_kappa0(&problem, 0.0).unwrap();
        assert!((k.value - 8.0).abs() < 1e-9, "{}", k.value);
        // eps |z|^2 adds 2 eps Δψ
        let k = compute_kappa0(&problem, 0.5).unwrap();
        assert!((k.value - 12.0).abs() < 1e-9 && (k.unregularized - 8.0).abs() < 1e-9);
    }

    #[test]
    fn kappa0_needs_three_nodes() {
        let grid = Arc::new(Grid::new(crate::grid::BoxDomain::unit_square(), vec![2, 5]).unwrap());
        let f = Field::zeros(grid, 1);
        let problem = ObstacleProblem::new(Integrand::p_power(2.0).unwrap(), f.clone(), f).unwrap();
        assert!(matches!(
            compute_kappa0(&problem, 0.0),
            Err(Error::Resolution(_))
        ));
    }
}
