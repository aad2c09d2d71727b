//! Discrete regularized-penalized energy
//!
//! ```text
//! E(u) = sum_T |T| [F(x_T, Du|_T) + eps |Du|_T|^q]
//!      + sum_nodes w_node kappa sum_i H_delta(H_delta(psi_i - u_i))
//! ```
//!
//! with `x_T` the element centroid and `w_node` the mass-lumped weights, and
//! its exact gradient with respect to the nodal values.

use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{Element, Field};
use crate::integrand::norm2;
use crate::penalty::{nested, nested_prime};
use crate::problem::ObstacleProblem;
use crate::sum::compensated_sum;
use crate::{Error, Result};

/// Weights of the regularization and penalty terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyParams {
    pub epsilon: f64,
    pub kappa: f64,
    pub delta: f64,
}

impl EnergyParams {
    /// The unpenalized, unregularized energy `∫ F(x, Du)`.
    pub fn plain() -> Self {
        EnergyParams {
            epsilon: 0.0,
            kappa: 0.0,
            delta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.kappa >= 0.0 && self.delta > 0.0)
            || !(self.epsilon.is_finite() && self.kappa.is_finite() && self.delta.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "need eps >= 0, kappa >= 0, delta > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Evaluates the energy and its gradient for a fixed problem and weights.
pub struct Assembler<'a> {
    problem: &'a ObstacleProblem,
    params: EnergyParams,
    parallel: bool,
}

impl<'a> Assembler<'a> {
    pub fn new(problem: &'a ObstacleProblem, params: EnergyParams) -> Result<Self> {
        params.validate()?;
        Ok(Assembler {
            problem,
            params,
            parallel: false,
        })
    }

    /// Element loops run on the rayon pool and the final reduction is no
    /// longer performed in a fixed order.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn problem(&self) -> &ObstacleProblem {
        self.problem
    }

    fn width(&self) -> usize {
        self.problem.components() * self.problem.grid().dim()
    }

    fn element_gradient(&self, e: &Element, u: &[f64], z: &mut [f64]) {
        let nc = self.problem.components();
        let n = self.problem.grid().dim();
        for i in 0..nc {
            for k in 0..n {
                let mut d = 0.0;
                for (a, &v) in e.vertices().iter().enumerate() {
                    d += u[v * nc + i] * e.shape_grads[a][k];
                }
                z[i * n + k] = d;
            }
        }
    }

    fn element_energy(&self, e: &Element, u: &[f64], z: &mut [f64]) -> f64 {
        self.element_gradient(e, u, z);
        let n = self.problem.grid().dim();
        let mut f = self.problem.integrand().density(&e.centroid[..n], z);
        if self.params.epsilon > 0.0 {
            let q = self.problem.integrand().params().q;
            f += self.params.epsilon * norm2(z).powf(0.5 * q);
        }
        e.measure * f
    }

    fn element_flux(&self, e: &Element, u: &[f64], z: &mut [f64], flux: &mut [f64]) {
        self.element_gradient(e, u, z);
        let n = self.problem.grid().dim();
        self.problem
            .integrand()
            .density_grad(&e.centroid[..n], z, flux);
        if self.params.epsilon > 0.0 {
            let q = self.problem.integrand().params().q;
            let s = norm2(z);
            if s > 0.0 {
                let c = self.params.epsilon * q * s.powf(0.5 * q - 1.0);
                for (fl, zi) in flux.iter_mut().zip(z.iter()) {
                    *fl += c * zi;
                }
            }
        }
    }

    /// Individual energy terms: one per element, then one per nodal row when
    /// `kappa > 0`. Their sum is the energy.
    pub fn contributions(&self, u: &[f64], out: &mut Vec<f64>) {
        let elements = self.problem.grid().elements();
        let width = self.width();
        out.clear();
        if self.parallel {
            elements
                .par_iter()
                .map_init(|| vec![0.0; width], |z, e| self.element_energy(e, u, z))
                .collect_into_vec(out);
        } else {
            let mut z = vec![0.0; width];
            out.extend(elements.iter().map(|e| self.element_energy(e, u, &mut z)));
        }
        if self.params.kappa > 0.0 {
            let EnergyParams { kappa, delta, .. } = self.params;
            let nc = self.problem.components();
            let w = self.problem.grid().lumped_weights();
            let psi = self.problem.psi().values();
            out.extend(
                u.iter()
                    .zip(psi)
                    .enumerate()
                    .map(|(k, (uv, pv))| kappa * w[k / nc] * nested(pv - uv, delta)),
            );
        }
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut terms = Vec::new();
        self.contributions(u, &mut terms);
        self.reduce(&terms)
    }

    pub(crate) fn reduce(&self, terms: &[f64]) -> f64 {
        if self.parallel {
            terms.par_iter().sum()
        } else {
            compensated_sum(terms.iter().copied())
        }
    }

    /// Exact gradient with respect to nodal values; boundary entries are zero.
    pub fn gradient(&self, u: &[f64], out: &mut [f64]) {
        let grid = self.problem.grid();
        let elements = grid.elements();
        let nc = self.problem.components();
        let n = grid.dim();
        let width = self.width();
        out.iter_mut().for_each(|v| *v = 0.0);

        let mut scatter = |e: &Element, flux: &[f64]| {
            for (a, &v) in e.vertices().iter().enumerate() {
                let sg = &e.shape_grads[a];
                for i in 0..nc {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += flux[i * n + k] * sg[k];
                    }
                    out[v * nc + i] += e.measure * acc;
                }
            }
        };
        if self.parallel {
            let mut fluxes = vec![0.0; elements.len() * width];
            fluxes
                .par_chunks_mut(width)
                .zip(elements.par_iter())
                .for_each_init(
                    || vec![0.0; width],
                    |z, (flux, e)| self.element_flux(e, u, z, flux),
                );
            for (e, flux) in elements.iter().zip(fluxes.chunks(width)) {
                scatter(e, flux);
            }
        } else {
            let mut z = vec![0.0; width];
            let mut flux = vec![0.0; width];
            for e in elements {
                self.element_flux(e, u, &mut z, &mut flux);
                scatter(e, &flux);
            }
        }

        if self.params.kappa > 0.0 {
            let EnergyParams { kappa, delta, .. } = self.params;
            let w = grid.lumped_weights();
            let psi = self.problem.psi().values();
            for (k, (o, (uv, pv))) in out.iter_mut().zip(u.iter().zip(psi)).enumerate() {
                *o -= kappa * w[k / nc] * nested_prime(pv - uv, delta);
            }
        }
        for node in (0..grid.node_count()).filter(|v| grid.is_boundary(*v)) {
            out[node * nc..(node + 1) * nc]
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
}

/// Discrete energy of `u`, which must carry the problem's Dirichlet data.
/// With `eps = kappa = 0` this is the discrete `∫ F(x, Du)`.
pub fn integrate_energy(problem: &ObstacleProblem, u: &Field, params: EnergyParams) -> Result<f64> {
    problem.check_dirichlet(u)?;
    Ok(Assembler::new(problem, params)?.energy(u.values()))
}

/// Gradient of [`integrate_energy`] with respect to the free nodal values.
/// A zero result certifies discrete Euler–Lagrange stationarity.
pub fn assemble_gradient(
    problem: &ObstacleProblem,
    u: &Field,
    params: EnergyParams,
) -> Result<Field> {
    problem.check_dirichlet(u)?;
    let mut g = vec![0.0; u.values().len()];
    Assembler::new(problem, params)?.gradient(u.values(), &mut g);
    Field::new(u.grid().clone(), u.components(), g)
}
