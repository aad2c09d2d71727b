//! Sampling probes for the structural hypotheses on `F`.
//!
//! Every probe draws from a `ChaCha8Rng` seeded by the caller, so identical
//! seeds give identical reports. Verdicts are sound when they report a
//! failure and heuristic when they report success.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{norm2, Integrand};
use crate::grid::BoxDomain;

/// Shape `N x n` of the sampled gradient matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleShape {
    pub rows: usize,
    pub cols: usize,
}

impl SampleShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        SampleShape { rows, cols }
    }

    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// Uniform sample from the Euclidean ball of the given radius.
pub(crate) fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2 = norm2(&v);
        if r2 > 1e-12 && r2 <= 1.0 {
            let scale = radius * rng.gen::<f64>().powf(1.0 / dim as f64) / r2.sqrt();
            return v.into_iter().map(|x| x * scale).collect();
        }
    }
}

/// Random matrix whose norm is log-uniform in `[lo, hi]`.
pub(crate) fn sample_log_magnitude<R: Rng>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    let dir = sample_ball(rng, dim, 1.0);
    let norm = norm2(&dir).sqrt();
    let mag = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
    dir.into_iter().map(|x| x * mag / norm).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub samples: usize,
    pub violations: usize,
    /// Largest `G(mid) - (G(z1) + G(z2)) / 2` seen; positive values violate convexity.
    pub worst_gap: f64,
}

fn midpoint_convexity(
    integrand: &Integrand,
    domain: &BoxDomain,
    shape: SampleShape,
    samples: usize,
    radius: f64,
    seed: u64,
    lower_weight: f64,
) -> ConvexityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prm = *integrand.params();
    let g = |x: &[f64], z: &[f64]| {
        let f = integrand.density(x, z);
        if lower_weight == 0.0 {
            f
        } else {
            f - lower_weight * (prm.mu * prm.mu + norm2(z)).powf(0.5 * prm.p)
        }
    };
    let mut violations = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..samples.max(1) {
        let x = domain.sample_point(&mut rng);
        let z1 = sample_ball(&mut rng, shape.len(), radius);
        let z2 = sample_ball(&mut rng, shape.len(), radius);
        let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (g1, g2, gm) = (g(&x, &z1), g(&x, &z2), g(&x, &mid));
        let gap = gm - 0.5 * (g1 + g2);
        let scale = 1f64
            .max(g1.abs())
            .max(g2.abs())
            .max(integrand.density(&x, &z1).abs());
        if gap > 1e-10 * scale {
            violations += 1;
        }
        worst_gap = worst_gap.max(gap);
    }
    ConvexityReport {
        samples: samples.max(1),
        violations,
        worst_gap,
    }
}

/// Midpoint convexity of `F(x, .)` itself.
pub fn check_convexity(
    integrand: &Integrand,
    domain: &BoxDomain,
    shape: SampleShape,
    samples: usize,
    radius: f64,
    seed: u64,
) -> ConvexityReport {
    midpoint_convexity(integrand, domain, shape, samples, radius, seed, 0.0)
}

/// Midpoint convexity of `G(z) = F(x, z) - lambda (mu^2 + |z|^2)^{p/2}`.
pub fn check_h1_convexity(
    integrand: &Integrand,
    domain: &BoxDomain,
    shape: SampleShape,
    samples: usize,
    radius: f64,
    seed: u64,
) -> ConvexityReport {
    let lambda = integrand.params().lambda;
    midpoint_convexity(integrand, domain, shape, samples, radius, seed, lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    /// Smallest `C >= 0` with `lambda (mu^2+|z|^2)^{p/2} - C <= F` on the sample.
    pub lower_constant: f64,
    /// Largest `F / (Lambda (1 + |z|^q))` on the sample; the upper bound holds iff `<= 1`.
    pub max_upper_ratio: f64,
}

pub fn check_growth_bounds(
    integrand: &Integrand,
    domain: &BoxDomain,
    shape: SampleShape,
    samples: usize,
    radius: f64,
    seed: u64,
) -> GrowthReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prm = *integrand.params();
    let mut lower_constant: f64 = 0.0;
    let mut max_upper_ratio: f64 = 0.0;
    for _ in 0..samples.max(1) {
        let x = domain.sample_point(&mut rng);
        let z = sample_ball(&mut rng, shape.len(), radius);
        let f = integrand.density(&x, &z);
        let r2 = norm2(&z);
        lower_constant =
            lower_constant.max(prm.lambda * (prm.mu * prm.mu + r2).powf(0.5 * prm.p) - f);
        max_upper_ratio = max_upper_ratio.max(f / (prm.big_lambda * (1.0 + r2.powf(0.5 * prm.q))));
    }
    GrowthReport {
        lower_constant,
        max_upper_ratio,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum HolderReport {
    /// The density does not depend on `x`.
    NotApplicable,
    Checked {
        max_ratio: f64,
        passes: bool,
    },
}

/// `max |F(x,z) - F(y,z)| / (Lambda |x-y|^alpha (1+|z|^2)^{q/2})` over samples.
pub fn check_h3_holder(
    integrand: &Integrand,
    domain: &BoxDomain,
    shape: SampleShape,
    samples: usize,
    radius: f64,
    seed: u64,
) -> HolderReport {
    let prm = *integrand.params();
    let alpha = match prm.alpha {
        Some(a) if !integrand.is_autonomous() => a,
        _ => return HolderReport::NotApplicable,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..samples.max(1) {
        let x = domain.sample_point(&mut rng);
        let y = domain.sample_point(&mut rng);
        let dist = norm2(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>()).sqrt();
        if dist == 0.0 {
            continue;
        }
        let z = sample_ball(&mut rng, shape.len(), radius);
        let diff = (integrand.density(&x, &z) - integrand.density(&y, &z)).abs();
        let bound = prm.big_lambda * dist.powf(alpha) * (1.0 + norm2(&z)).powf(0.5 * prm.q);
        max_ratio = max_ratio.max(diff / bound);
    }
    HolderReport::Checked {
        max_ratio,
        passes: max_ratio <= 1.0 + 1e-9,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// Best constant `c` with
    /// `F(z) - F(w) - <d_zF(w), z-w> >= c (mu^2+|z|^2+|w|^2)^{(p-2)/2} |z-w|^2` on the sample.
    pub fitted_constant: f64,
}

pub fn check_h4_monotonicity(
    integrand: &Integrand,
    domain: &BoxDomain,
    shape: SampleShape,
    samples: usize,
    radius: f64,
    seed: u64,
) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prm = *integrand.params();
    let mut grad = vec![0.0; shape.len()];
    let mut fitted = f64::INFINITY;
    for _ in 0..samples.max(1) {
        let x = domain.sample_point(&mut rng);
        let z = sample_ball(&mut rng, shape.len(), radius);
        let w = sample_ball(&mut rng, shape.len(), radius);
        let d2: f64 = z.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < 1e-8 * radius * radius {
            continue;
        }
        integrand.density_grad(&x, &w, &mut grad);
        let lin: f64 = grad
            .iter()
            .zip(z.iter().zip(&w))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        let excess = integrand.density(&x, &z) - integrand.density(&x, &w) - lin;
        let weight = (prm.mu * prm.mu + norm2(&z) + norm2(&w)).powf(0.5 * (prm.p - 2.0)) * d2;
        fitted = fitted.min(excess / weight);
    }
    MonotonicityReport {
        fitted_constant: fitted,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct H6Witness {
    pub x: Vec<f64>,
    pub eps: f64,
    /// `min_{y_hat} max_{y, z} (F(y_hat, z) - F(y, z))` at this point.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct H6Report {
    pub holds: bool,
    pub worst_point: Option<H6Witness>,
}

/// Searches, for sampled `x` and `eps in (0, eps0)`, a point `y_hat` of the
/// sampled ball `B_eps(x) ∩ Ω` with `F(y_hat, z) <= F(y, z)` for every sampled
/// `y` and `z`.
pub fn check_h6(
    integrand: &Integrand,
    domain: &BoxDomain,
    shape: SampleShape,
    eps0: f64,
    x_samples: usize,
    z_samples: usize,
    seed: u64,
) -> H6Report {
    if integrand.is_autonomous() {
        return H6Report {
            holds: true,
            worst_point: None,
        };
    }
    const BALL_POINTS: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = domain.dim();
    let mut worst: Option<H6Witness> = None;
    for _ in 0..x_samples.max(1) {
        let x = domain.sample_point(&mut rng);
        let eps = eps0 * (1.0 - rng.gen::<f64>());
        let mut ys = vec![x.clone()];
        while ys.len() < BALL_POINTS + 1 {
            let off = sample_ball(&mut rng, n, eps);
            let y: Vec<f64> = x.iter().zip(&off).map(|(a, b)| a + b).collect();
            if domain.contains(&y) {
                ys.push(y);
            }
        }
        let zs: Vec<Vec<f64>> = (0..z_samples.max(1))
            .map(|_| sample_log_magnitude(&mut rng, shape.len(), 0.1, 10.0))
            .collect();
        // table[y][z] = F(y, z)
        let table: Vec<Vec<f64>> = ys
            .iter()
            .map(|y| zs.iter().map(|z| integrand.density(y, z)).collect())
            .collect();
        let column_min: Vec<f64> = (0..zs.len())
            .map(|j| table.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
            .collect();
        let best_excess = table
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&column_min)
                    .map(|(f, m)| (f - m) / f.abs().max(1.0))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        if worst.as_ref().is_none_or(|w| best_excess > w.excess) {
            worst = Some(H6Witness {
                x,
                eps,
                excess: best_excess,
            });
        }
    }
    let holds = worst.as_ref().is_none_or(|w| w.excess <= 1e-12);
    H6Report {
        holds,
        worst_point: worst,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::expr::Expr;
    use crate::integrand::{Coefficient, GrowthParams};

    fn square() -> BoxDomain {
        BoxDomain::unit_square()
    }

    const SHAPE: SampleShape = SampleShape { rows: 2, cols: 2 };

    #[test]
    fn p_power_minus_lower_bound_is_convex() {
        let f = Integrand::p_power(3.0).unwrap();
        let r = check_h1_convexity(&f, &square(), SHAPE, 500, 5.0, 1);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn double_phase_h1_holds() {
        let f = Integrand::double_phase(2.0, 3.0, Coefficient::Expr(Expr::constant(1.0))).unwrap();
        let r = check_h1_convexity(&f, &square(), SHAPE, 1000, 5.0, 2);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn concave_density_fails() {
        let params = GrowthParams::new(2.0, 2.0).unwrap();
        let f = Integrand::custom(
            "concave",
            params,
            true,
            Arc::new(|_, z| -norm2(z)),
            Arc::new(|_, z, out| out.iter_mut().zip(z).for_each(|(o, zi)| *o = -2.0 * zi)),
        )
        .unwrap();
        let r = check_h1_convexity(&f, &square(), SHAPE, 200, 2.0, 3);
        assert!(r.violations > 0);
        assert!(r.worst_gap > 0.0);
    }

    #[test]
    fn reports_are_seed_deterministic() {
        let f = Integrand::p_power(2.5).unwrap();
        let a = check_growth_bounds(&f, &square(), SHAPE, 100, 3.0, 9);
        let b = check_growth_bounds(&f, &square(), SHAPE, 100, 3.0, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn growth_bounds_hold_for_p_power() {
        let f = Integrand::p_power(3.0).unwrap();
        let r = check_growth_bounds(&f, &square(), SHAPE, 500, 10.0, 4);
        assert!(r.lower_constant <= 1e-12);
        assert!(r.max_upper_ratio <= 1.0);
    }

    #[test]
    fn monotonicity_constant_is_positive() {
        for f in [
            Integrand::p_power(2.0).unwrap(),
            Integrand::p_power(4.0).unwrap(),
            Integrand::p_power_regularized(3.0, 0.5).unwrap(),
            Integrand::double_phase(2.0, 2.5, Coefficient::Expr(Expr::constant(1.0))).unwrap(),
        ] {
            let r = check_h4_monotonicity(&f, &square(), SHAPE, 500, 5.0, 5);
            assert!(
                r.fitted_constant > 0.0,
                "{:?}: {}",
                f.kind(),
                r.fitted_constant
            );
        }
    }

    #[test]
    fn holder_not_applicable_when_autonomous() {
        let f = Integrand::p_power(2.0).unwrap();
        assert_eq!(
            check_h3_holder(&f, &square(), SHAPE, 10, 1.0, 0),
            HolderReport::NotApplicable
        );
    }

    fn holder_density(big_lambda: f64) -> Integrand {
        let a = Coefficient::Expr(Expr::AbsPower {
            axis: 0,
            center: 0.0,
            exponent: 0.5,
            scale: 1.0,
        });
        let f = Integrand::holder_modulated(2.0, 0.5, a).unwrap();
        let mut prm = *f.params();
        prm.mu = 1.0;
        prm.big_lambda = big_lambda;
        f.with_params(prm).unwrap()
    }

    #[test]
    fn holder_ratio_respects_true_constant() {
        let domain = BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        match check_h3_holder(&holder_density(1.0), &domain, SHAPE, 4000, 1.0, 6) {
            HolderReport::Checked { max_ratio, passes } => {
                assert!(passes && max_ratio <= 1.0 + 1e-9, "{max_ratio}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn holder_ratio_exceeds_one_with_halved_constant() {
        let domain = BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        match check_h3_holder(&holder_density(0.5), &domain, SHAPE, 4000, 1.0, 6) {
            HolderReport::Checked { max_ratio, passes } => assert!(!passes && max_ratio > 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn h6_holds_for_double_phase() {
        let a = Coefficient::Expr(Expr::Stripes {
            axis: 0,
            frequency: 3.0,
            amplitude: 1.0,
            offset: 0.0,
        });
        let f = Integrand::double_phase(2.0, 3.0, a).unwrap();
        let r = check_h6(&f, &square(), SHAPE, 0.1, 50, 20, 7);
        assert!(r.holds, "{:?}", r.worst_point);
    }

    #[test]
    fn h6_trivial_when_autonomous() {
        let f = Integrand::p_power(2.0).unwrap();
        assert!(check_h6(&f, &square(), SHAPE, 0.1, 5, 5, 0).holds);
    }

    #[test]
    fn h6_fails_for_competing_coefficients() {
        // (1 + a(x))|z|^2 + (2 - a(x))|z|^3 with a = sin^2: small |z| wants min a,
        // large |z| wants max a, so no single y_hat serves every z
        let a = Expr::Stripes {
            axis: 0,
            frequency: 4.0,
            amplitude: 1.0,
            offset: 0.0,
        };
        let a2 = a.clone();
        let params = GrowthParams::new(2.0, 3.0).unwrap();
        let f = Integrand::custom(
            "competing",
            params,
            false,
            Arc::new(move |x, z| {
                let s = norm2(z);
                let av = a.eval(x);
                (1.0 + av) * s + (2.0 - av) * s.powf(1.5)
            }),
            Arc::new(move |x, z, out| {
                let s = norm2(z);
                let av = a2.eval(x);
                let c = 2.0 * (1.0 + av) + 3.0 * (2.0 - av) * s.sqrt();
                out.iter_mut().zip(z).for_each(|(o, zi)| *o = c * zi);
            }),
        )
        .unwrap();
        let r = check_h6(&f, &square(), SHAPE, 0.05, 20, 20, 8);
        assert!(!r.holds);
        assert!(r.worst_point.unwrap().excess > 0.0);
    }
}
