//! Quantities bounded by the regularity theory: the V-function, difference
//! quotient (Nikolskii) seminorms, the radial cutoff functional, the
//! gap-condition bounds and a Lavrentiev probe built from mollified
//! competitors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{Assembler, EnergyParams};
use crate::grid::{w1q_norm, ElementField, Field, Grid};
use crate::integrand::{norm2, GrowthParams};
use crate::problem::ObstacleProblem;
use crate::sum::compensated_sum;
use crate::{Error, Result};

/// `V_{mu,t}(z) = (mu^2 + |z|^2)^{(t-2)/4} z`; zero at `z = 0, mu = 0`.
pub fn v_function(z: &[f64], mu: f64, t: f64) -> Result<Vec<f64>> {
    if !(t > 1.0) {
        return Err(Error::Domain(format!("V-function needs t > 1, got {t}")));
    }
    Ok(v_apply(z, mu, t))
}

fn v_apply(z: &[f64], mu: f64, t: f64) -> Vec<f64> {
    let s = mu * mu + norm2(z);
    if s == 0.0 {
        return vec![0.0; z.len()];
    }
    let c = s.powf(0.25 * (t - 2.0));
    z.iter().map(|v| c * v).collect()
}

/// `|V(z1) - V(z2)|^2 / ((mu^2 + |z1|^2 + |z2|^2)^{(t-2)/2} |z1 - z2|^2)`.
pub fn v_ratio(z1: &[f64], z2: &[f64], mu: f64, t: f64) -> Result<f64> {
    let (v1, v2) = (v_function(z1, mu, t)?, v_function(z2, mu, t)?);
    let dv: f64 = v1.iter().zip(&v2).map(|(a, b)| (a - b) * (a - b)).sum();
    let dz: f64 = z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum();
    let s = mu * mu + norm2(z1) + norm2(z2);
    if dz == 0.0 || s == 0.0 {
        return Err(Error::Domain(
            "V-ratio needs z1 != z2 and mu + |z1| + |z2| > 0".into(),
        ));
    }
    Ok(dv / (s.powf(0.5 * (t - 2.0)) * dz))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VEquivalenceReport {
    pub samples: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl VEquivalenceReport {
    pub fn spread(&self) -> f64 {
        self.ratio_max / self.ratio_min
    }

    pub fn passes(&self, bound: f64) -> bool {
        self.spread() <= bound
    }
}

/// Extremes of [`v_ratio`] over random pairs of 2x2 matrices with
/// independent directions and magnitudes log-uniform in `[1e-3, 1e3]`.
pub fn v_equivalence_check(
    mu: f64,
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<VEquivalenceReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let dir: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = norm2(&dir).sqrt().max(1e-12);
        let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
        dir.iter().map(|v| v * mag / len).collect()
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut taken = 0;
    while taken < samples {
        let (z1, z2) = (draw(&mut rng), draw(&mut rng));
        let Ok(r) = v_ratio(&z1, &z2, mu, t) else {
            continue;
        };
        lo = lo.min(r);
        hi = hi.max(r);
        taken += 1;
    }
    Ok(VEquivalenceReport {
        samples,
        ratio_min: lo,
        ratio_max: hi,
    })
}

/// A translation by whole grid steps, `(k_x, k_y)`; `k_y` is ignored in 1D.
pub type Offset = [isize; 2];

/// Axis-aligned and diagonal offsets with `2 h <= |h| <= diam / 4`.
pub fn default_offsets(grid: &Grid) -> Vec<Offset> {
    let h = grid.spacing();
    let diam = grid.domain().diameter();
    let len = |o: &Offset| offset_length(grid, o);
    let kmax = grid.resolution().iter().copied().max().unwrap_or(2) as isize;
    let mut out = Vec::new();
    for k in 1..kmax {
        let mut family: Vec<Offset> = vec![[k, 0]];
        if grid.dim() == 2 {
            family.extend([[0, k], [k, k], [k, -k]]);
        }
        for o in family {
            let l = len(&o);
            if l >= 2.0 * h.iter().copied().fold(f64::INFINITY, f64::min) - 1e-12
                && l <= diam / 4.0 + 1e-12
            {
                out.push(o);
            }
        }
    }
    out
}

pub fn offset_length(grid: &Grid, o: &Offset) -> f64 {
    let h = grid.spacing();
    let mut s = (o[0] as f64 * h[0]).powi(2);
    if grid.dim() == 2 {
        s += (o[1] as f64 * h[1]).powi(2);
    }
    s.sqrt()
}

/// `L^t(Omega_h)` norm of `v(. + h) - v` for one offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OffsetDifference {
    pub offset: Offset,
    pub length: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeminormReport {
    pub s: f64,
    pub t: f64,
    /// `sup_h |h|^{-s} ||v(. + h) - v||_{L^t(Omega_h)}`.
    pub value: f64,
    pub offsets: Vec<OffsetDifference>,
}

/// Values located on a regular index lattice with quadrature weights, so
/// that nodal and element fields share the shifting logic.
struct Lattice<'a> {
    dims: [usize; 2],
    /// Number of lattice sites sharing one index (triangle pairs in a cell).
    layers: usize,
    width: usize,
    values: &'a [f64],
    weight: Box<dyn Fn([usize; 2], [usize; 2], [usize; 2]) -> f64 + Sync + 'a>,
}

impl Lattice<'_> {
    fn difference(&self, o: &Offset, t: f64) -> Option<f64> {
        let mut lo = [0usize; 2];
        let mut hi = [0usize; 2];
        for k in 0..2 {
            let m = self.dims[k] as isize;
            let (a, b) = (0.max(-o[k]), m.min(m - o[k]));
            if a >= b {
                return None;
            }
            lo[k] = a as usize;
            hi[k] = b as usize;
        }
        let mut acc = Vec::with_capacity((hi[0] - lo[0]) * (hi[1] - lo[1]) * self.layers);
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                let w = (self.weight)([i, j], lo, hi);
                let src = j * self.dims[0] + i;
                let dst =
                    (j as isize + o[1]) as usize * self.dims[0] + (i as isize + o[0]) as usize;
                for layer in 0..self.layers {
                    let a = &self.values[(src * self.layers + layer) * self.width..][..self.width];
                    let b = &self.values[(dst * self.layers + layer) * self.width..][..self.width];
                    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    acc.push(w * d.sqrt().powf(t));
                }
            }
        }
        Some(compensated_sum(acc).powf(1.0 / t))
    }
}

fn seminorm_on(
    lattice: &Lattice,
    grid: &Grid,
    s: f64,
    t: f64,
    offsets: &[Offset],
) -> Result<SeminormReport> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Domain(format!(
            "smoothness s must lie in (0, 1], got {s}"
        )));
    }
    if !(t >= 1.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "exponent t must be finite and >= 1, got {t}"
        )));
    }
    let diam = grid.domain().diameter();
    let rows: Vec<Option<OffsetDifference>> = offsets
        .par_iter()
        .map(|o| {
            let o = if grid.dim() == 1 { [o[0], 0] } else { *o };
            let length = offset_length(grid, &o);
            if length == 0.0 || length > diam / 2.0 + 1e-12 {
                return None;
            }
            lattice.difference(&o, t).map(|norm| OffsetDifference {
                offset: o,
                length,
                norm,
            })
        })
        .collect();
    let offsets: Vec<OffsetDifference> = rows.into_iter().flatten().collect();
    if offsets.is_empty() {
        return Err(Error::Domain(
            "no admissible offset leaves a nonempty Omega_h".into(),
        ));
    }
    let value = offsets
        .iter()
        .map(|d| d.norm / d.length.powf(s))
        .fold(0.0, f64::max);
    Ok(SeminormReport {
        s,
        t,
        value,
        offsets,
    })
}

/// Trapezoid weight of index `i` within the index range `[lo, hi)`.
fn trapezoid(i: usize, lo: usize, hi: usize, h: f64) -> f64 {
    if hi - lo == 1 {
        0.0
    } else if i == lo || i + 1 == hi {
        0.5 * h
    } else {
        h
    }
}

/// Nikolskii seminorm of a nodal field; `Omega_h` is sampled on the nodes
/// `x` with `x + h` a node, integrated by the trapezoid rule.
pub fn nikolskii_seminorm(v: &Field, s: f64, t: f64, offsets: &[Offset]) -> Result<SeminormReport> {
    let grid = v.grid();
    let h = grid.spacing().to_vec();
    let dims = if grid.dim() == 1 {
        [grid.resolution()[0], 1]
    } else {
        [grid.resolution()[0], grid.resolution()[1]]
    };
    let lattice = Lattice {
        dims,
        layers: 1,
        width: v.components(),
        values: v.values(),
        weight: Box::new(move |idx, lo, hi| {
            let mut w = trapezoid(idx[0], lo[0], hi[0], h[0]);
            if h.len() == 2 {
                w *= trapezoid(idx[1], lo[1], hi[1], h[1]);
            }
            w
        }),
    };
    seminorm_on(&lattice, grid, s, t, offsets)
}

/// Nikolskii seminorm of an element field, shifting whole cells; each
/// element keeps its own measure as quadrature weight.
pub fn nikolskii_seminorm_elements(
    v: &ElementField,
    s: f64,
    t: f64,
    offsets: &[Offset],
) -> Result<SeminormReport> {
    let grid = v.grid();
    let m = grid.resolution();
    let (dims, layers) = if grid.dim() == 1 {
        ([m[0] - 1, 1], 1)
    } else {
        ([m[0] - 1, m[1] - 1], 2)
    };
    let measure = grid.elements()[0].measure;
    let lattice = Lattice {
        dims,
        layers,
        width: v.rows() * v.cols(),
        values: v.values(),
        weight: Box::new(move |_, _, _| measure),
    };
    seminorm_on(&lattice, grid, s, t, offsets)
}

/// Least-squares slope of `log norm` against `log length`.
pub fn loglog_slope(points: &[OffsetDifference]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|d| d.norm > 0.0)
        .map(|d| (d.length.ln(), d.norm.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Domain("slope fit needs two positive points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("slope fit needs distinct lengths".into()));
    }
    Ok(sxy / sxx)
}

/// Result of the radial cutoff construction on `[rho, sigma]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutoffReport {
    /// `(sigma - rho)^{-t - 1/delta} (∫ b^delta)^{1/delta}`.
    pub j_bound: f64,
    /// `∫ (|phi'| + |phi'|^t) b` for `profile`.
    pub j_construction: f64,
    /// Minimum of the same functional over cutoffs that are piecewise linear
    /// on the sample grid, attained by `optimal_profile`.
    pub j_optimal: f64,
    pub radii: Vec<f64>,
    /// `phi(r) = 1 - (∫_rho^sigma 1/b)^{-1} ∫_rho^r 1/b`.
    pub profile: Vec<f64>,
    pub optimal_profile: Vec<f64>,
}

fn cutoff_inputs(b: &[f64], rho: f64, sigma: f64, t: f64) -> Result<f64> {
    if !(0.0 < rho && rho < sigma && sigma - rho < 1.0) {
        return Err(Error::Domain(format!(
            "need 0 < rho < sigma < rho + 1, got rho = {rho}, sigma = {sigma}"
        )));
    }
    if !(t > 1.0) {
        return Err(Error::Domain(format!("need t > 1, got {t}")));
    }
    if b.len() < 2 {
        return Err(Error::Domain(
            "profile needs at least two radial samples".into(),
        ));
    }
    if let Some(v) = b.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "profile must be positive, found {v}"
        )));
    }
    Ok((sigma - rho) / (b.len() - 1) as f64)
}

/// `∫ (|phi'| + |phi'|^t) b dr` for the piecewise-linear `phi` through the
/// samples, with `b` averaged over each interval.
pub fn cutoff_energy(b: &[f64], phi: &[f64], rho: f64, sigma: f64, t: f64) -> Result<f64> {
    let dr = cutoff_inputs(b, rho, sigma, t)?;
    if phi.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} cutoff samples for {} profile samples",
            phi.len(),
            b.len()
        )));
    }
    Ok(compensated_sum((0..b.len() - 1).map(|k| {
        let d = ((phi[k + 1] - phi[k]) / dr).abs();
        dr * (d + d.powf(t)) * 0.5 * (b[k] + b[k + 1])
    })))
}

/// Builds the cutoff from samples of `b` on a uniform grid of `[rho, sigma]`.
///
/// `1/b` is integrated by the trapezoid rule, `(1/b_k + 1/b_{k+1}) / 2` per
/// interval.
pub fn cutoff_functional(
    b: &[f64],
    rho: f64,
    sigma: f64,
    t: f64,
    delta: f64,
) -> Result<CutoffReport> {
    let dr = cutoff_inputs(b, rho, sigma, t)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("need delta in (0, 1), got {delta}")));
    }
    let mut cumulative = vec![0.0; b.len()];
    for k in 1..b.len() {
        cumulative[k] = cumulative[k - 1] + 0.5 * dr * (1.0 / b[k - 1] + 1.0 / b[k]);
    }
    let total = cumulative[b.len() - 1];
    let profile: Vec<f64> = cumulative.iter().map(|c| 1.0 - c / total).collect();
    let j_construction = cutoff_energy(b, &profile, rho, sigma, t)?;
    let optimal_profile = optimal_cutoff(b, dr, t);
    let j_optimal = cutoff_energy(b, &optimal_profile, rho, sigma, t)?;
    let integral = compensated_sum(
        (0..b.len() - 1).map(|k| 0.5 * dr * (b[k].powf(delta) + b[k + 1].powf(delta))),
    );
    let j_bound = (sigma - rho).powf(-t - 1.0 / delta) * integral.powf(1.0 / delta);
    let radii = (0..b.len()).map(|k| rho + k as f64 * dr).collect();
    Ok(CutoffReport {
        j_bound,
        j_construction,
        j_optimal,
        radii,
        profile,
        optimal_profile,
    })
}

/// Minimizes `sum dr (d_k + d_k^t) w_k` over slopes `d_k >= 0` with
/// `sum dr d_k = 1`, `w_k` the interval averages of `b`.
///
/// The optimality condition `w_k (1 + t d_k^{t-1}) = lambda` on the support
/// gives `d_k(lambda)`, increasing in `lambda`; the multiplier is found by
/// bisection.
fn optimal_cutoff(b: &[f64], dr: f64, t: f64) -> Vec<f64> {
    let w: Vec<f64> = b.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    let slopes = |lambda: f64| -> Vec<f64> {
        w.iter()
            .map(|wk| ((lambda / wk - 1.0) / t).max(0.0).powf(1.0 / (t - 1.0)))
            .collect()
    };
    let drop = |d: &[f64]| dr * compensated_sum(d.iter().copied());
    let mut lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = 2.0 * lo;
    while drop(&slopes(hi)) < 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if drop(&slopes(mid)) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let d = slopes(hi);
    let scale = 1.0 / drop(&d);
    let mut phi = vec![1.0; b.len()];
    let mut fallen = Vec::with_capacity(d.len());
    for (k, dk) in d.iter().enumerate() {
        fallen.push(dr * dk * scale);
        phi[k + 1] = 1.0 - compensated_sum(fallen.iter().copied());
    }
    phi[b.len() - 1] = 0.0;
    phi
}

/// Upper bounds on `q` from the gap conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapCheck {
    /// `min(np/(n-1), p+1)`; `p + 1` when `n = 1`.
    pub q_max_autonomous: f64,
    /// `(n + alpha) p / n`, when `alpha` is known.
    pub q_max_nonautonomous: Option<f64>,
    /// The bound that applies to this integrand.
    pub q_max: f64,
    /// `q < q_max`.
    pub satisfied: bool,
}

/// Non-autonomous integrands without a declared `alpha` are checked with
/// `alpha = 1`, the most permissive choice.
pub fn gap_check(params: &GrowthParams, n: usize, autonomous: bool) -> GapCheck {
    let (p, q, nf) = (params.p, params.q, n as f64);
    let sobolev = if n <= 1 {
        f64::INFINITY
    } else {
        nf * p / (nf - 1.0)
    };
    let q_max_autonomous = sobolev.min(p + 1.0);
    let q_max_nonautonomous = params.alpha.map(|a| (nf + a) * p / nf);
    let q_max = if autonomous {
        q_max_autonomous
    } else {
        q_max_nonautonomous.unwrap_or((nf + 1.0) * p / nf)
    };
    GapCheck {
        q_max_autonomous,
        q_max_nonautonomous,
        q_max,
        satisfied: q < q_max,
    }
}

/// Where the mollified part of the competitor is switched on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Eta {
    /// 0 within `width / 2` of the boundary, 1 beyond `width`, smoothstep between.
    BoundaryLayer { width: f64 },
    /// Mollify everywhere, boundary values included.
    One,
}

impl Eta {
    fn value(&self, dist: f64) -> f64 {
        match *self {
            Eta::One => 1.0,
            Eta::BoundaryLayer { width } => {
                let s = ((dist - 0.5 * width) / (0.5 * width)).clamp(0.0, 1.0);
                s * s * (3.0 - 2.0 * s)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LavrentievOptions {
    pub eta: Eta,
    /// Strictly decreasing mollifier radii.
    pub radii: Vec<f64>,
    /// Largest tolerated `max (psi - u)_+` of the input.
    pub feasibility_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LavrentievReport {
    pub base_energy: f64,
    pub radii: Vec<f64>,
    pub energies: Vec<f64>,
    /// `max (psi - u_eps)_+` per radius.
    pub violations: Vec<f64>,
    /// `energy(smallest radius) - base_energy`.
    pub signed_gap: f64,
    /// `max(0, signed_gap)`.
    pub gap_estimate: f64,
}

/// Discrete cubic B-spline weights on `-k..=k`, unit sum.
pub fn bspline_kernel(k: usize) -> Vec<f64> {
    let b3 = |x: f64| {
        let a = x.abs();
        if a < 1.0 {
            (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
        } else if a < 2.0 {
            (2.0 - a).powi(3) / 6.0
        } else {
            0.0
        }
    };
    let scale = 2.0 / (k as f64 + 1.0);
    let w: Vec<f64> = (-(k as isize)..=k as isize)
        .map(|j| b3(j as f64 * scale))
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Tensor-product mollification with the kernel renormalized where it
/// leaves the box.
fn mollify(field: &Field, radius: f64) -> Field {
    let grid = field.grid();
    let nc = field.components();
    let mut values = field.values().to_vec();
    for axis in 0..grid.dim() {
        let k = ((radius / grid.spacing()[axis]).round() as usize).max(1);
        let kernel = bspline_kernel(k);
        let m = grid.resolution()[axis];
        let src = values.clone();
        for node in 0..grid.node_count() {
            let idx = grid.node_multi_index(node);
            let (mut acc, mut mass) = (vec![0.0; nc], 0.0);
            for (j, w) in kernel.iter().enumerate() {
                let pos = idx[axis] as isize + j as isize - k as isize;
                if pos < 0 || pos >= m as isize {
                    continue;
                }
                let mut other = idx;
                other[axis] = pos as usize;
                let o = grid.node_index(other);
                for i in 0..nc {
                    acc[i] += w * src[o * nc + i];
                }
                mass += w;
            }
            for i in 0..nc {
                values[node * nc + i] = acc[i] / mass;
            }
        }
    }
    Field::new(grid.clone(), nc, values).expect("mollified values are finite")
}

/// Energies `∫ F(x, D u_eps)` of `u_eps = eta (u * phi - psi * phi + psi) + (1 - eta) u`
/// along decreasing mollifier radii.
pub fn lavrentiev_probe(
    problem: &ObstacleProblem,
    u: &Field,
    options: &LavrentievOptions,
) -> Result<LavrentievReport> {
    u.same_shape(problem.psi(), "probe input vs obstacle")?;
    let violation = u.max_violation(problem.psi())?;
    if violation > options.feasibility_tol {
        return Err(Error::Precondition(format!(
            "probe input violates the obstacle by {violation} > {}",
            options.feasibility_tol
        )));
    }
    if options.radii.is_empty()
        || options.radii.iter().any(|r| !(*r > 0.0))
        || options.radii.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidParameter(
            "mollifier radii must be positive and strictly decreasing".into(),
        ));
    }
    if let Eta::BoundaryLayer { width } = options.eta {
        if !(options.radii[0] < width) {
            return Err(Error::InvalidParameter(format!(
                "mollifier radii must stay below the cutoff width {width}"
            )));
        }
    }
    let grid = problem.grid();
    let nc = problem.components();
    let asm = Assembler::new(problem, EnergyParams::plain())?;
    let base_energy = asm.energy(u.values());
    let eta: Vec<f64> = (0..grid.node_count())
        .map(|v| {
            options.eta.value(
                grid.domain()
                    .distance_to_boundary(&grid.coord(v)[..grid.dim()]),
            )
        })
        .collect();
    let psi = problem.psi();
    let mut energies = Vec::new();
    let mut violations = Vec::new();
    for &r in &options.radii {
        let mu = mollify(u, r);
        let mp = mollify(psi, r);
        let mut values = u.values().to_vec();
        for (k, v) in values.iter_mut().enumerate() {
            let e = eta[k / nc];
            let smooth = mu.values()[k] - mp.values()[k] + psi.values()[k];
            *v = e * smooth + (1.0 - e) * u.values()[k];
        }
        let competitor = Field::new(grid.clone(), nc, values)?;
        energies.push(asm.energy(competitor.values()));
        violations.push(competitor.max_violation(psi)?);
    }
    let signed_gap = energies.last().copied().unwrap_or(base_energy) - base_energy;
    Ok(LavrentievReport {
        base_energy,
        radii: options.radii.clone(),
        energies,
        violations,
        signed_gap,
        gap_estimate: signed_gap.max(0.0),
    })
}

/// Which reports [`diagnose`] produces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnoseOptions {
    /// `(s, t)` pairs evaluated on `u` and on `V_{mu,p}(Du)`.
    pub seminorms: Vec<(f64, f64)>,
    pub lavrentiev: Option<LavrentievOptions>,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            seminorms: vec![(0.45, 2.0)],
            lavrentiev: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeminormEntry {
    /// `"u"` or `"V(Du)"`.
    pub target: &'static str,
    pub s: f64,
    pub t: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub w1q_norm: f64,
    pub v_l2: f64,
    pub nikolskii: Vec<SeminormEntry>,
    pub violation: f64,
    pub energy: f64,
    pub gap_condition: GapCheck,
    pub lavrentiev: Option<LavrentievReport>,
}

/// `V_{mu,p}(Du)` element by element.
pub fn v_of_gradient(u: &Field, mu: f64, p: f64) -> ElementField {
    let du = u.gradient();
    let (r, c) = (du.rows(), du.cols());
    du.map(r, c, |z, out| out.copy_from_slice(&v_apply(z, mu, p)))
}

pub fn diagnose(
    problem: &ObstacleProblem,
    u: &Field,
    options: &DiagnoseOptions,
) -> Result<DiagnosticsReport> {
    u.same_shape(problem.psi(), "field vs problem")?;
    let params = problem.integrand().params();
    let grid = problem.grid();
    let offsets = default_offsets(grid);
    let vdu = v_of_gradient(u, params.mu, params.p);
    let mut nikolskii = Vec::new();
    for &(s, t) in &options.seminorms {
        let value = nikolskii_seminorm(u, s, t, &offsets)?.value;
        nikolskii.push(SeminormEntry {
            target: "u",
            s,
            t,
            value,
        });
        let value = nikolskii_seminorm_elements(&vdu, s, t, &offsets)?.value;
        nikolskii.push(SeminormEntry {
            target: "V(Du)",
            s,
            t,
            value,
        });
    }
    let lavrentiev = options
        .lavrentiev
        .as_ref()
        .map(|o| lavrentiev_probe(problem, u, o))
        .transpose()?;
    Ok(DiagnosticsReport {
        w1q_norm: w1q_norm(u, params.q)?,
        v_l2: vdu.lp_norm(2.0)?,
        nikolskii,
        violation: u.max_violation(problem.psi())?,
        energy: Assembler::new(problem, EnergyParams::plain())?.energy(u.values()),
        gap_condition: gap_check(params, grid.dim(), problem.integrand().is_autonomous()),
        lavrentiev,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::expr::Expr;

    #[test]
    fn v_function_examples() {
        let z = [0.3, -1.2, 2.0, 0.0];
        assert_eq!(v_function(&z, 0.7, 2.0).unwrap(), z.to_vec());
        let v = v_function(&[2.0, 0.0], 0.0, 4.0).unwrap();
        assert_eq!(v, vec![4.0, 0.0]);
        assert_eq!(v_function(&[0.0, 0.0], 1.0, 4.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(v_function(&[0.0], 0.0, 3.0).unwrap(), vec![0.0]);
        assert!(v_function(&[1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn v_ratio_exact_cases() {
        assert_eq!(v_ratio(&[1.0, 0.0], &[-1.0, 0.0], 0.0, 2.0).unwrap(), 1.0);
        assert!((v_ratio(&[1.0, 0.0], &[0.0, 0.0], 0.0, 4.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gap_bounds() {
        let p2 = GrowthParams::new(2.0, 2.0).unwrap();
        assert_eq!(gap_check(&p2, 2, true).q_max, 3.0);
        let mut a = p2;
        a.alpha = Some(0.5);
        assert_eq!(gap_check(&a, 2, false).q_max, 2.5);
        assert_eq!(gap_check(&p2, 1, true).q_max, 3.0);
        let over = GrowthParams::new(2.0, 3.0).unwrap();
        assert!(!gap_check(&over, 2, true).satisfied);
    }

    #[test]
    fn kernel_is_symmetric_with_unit_mass() {
        for k in 1..6 {
            let w = bspline_kernel(k);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for j in 0..w.len() {
                assert_eq!(w[j], w[w.len() - 1 - j]);
            }
            assert!(w.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn constant_field_has_zero_seminorm() {
        let grid = Arc::new(Grid::unit_square(17).unwrap());
        let v = Field::constant(grid.clone(), 2, 3.0);
        let r = nikolskii_seminorm(&v, 0.5, 2.0, &default_offsets(&grid)).unwrap();
        assert_eq!(r.value, 0.0);
        let e =
            nikolskii_seminorm_elements(&v.gradient(), 0.5, 2.0, &default_offsets(&grid)).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn linear_field_difference_norm_is_closed_form() {
        let grid = Arc::new(Grid::interval(0.0, 1.0, 65).unwrap());
        let v = Field::sample(
            grid.clone(),
            &[Expr::Affine {
                offset: 0.0,
                slope: vec![1.0],
            }],
        )
        .unwrap();
        let r = nikolskii_seminorm(&v, 1.0, 2.0, &[[8, 0], [16, 0]]).unwrap();
        for d in &r.offsets {
            let h = d.length;
            assert!((d.norm - (h * h * (1.0 - h)).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_cutoff_closed_form() {
        let (rho, sigma, t) = (1.0, 1.5, 2.0);
        let b = vec![3.0; 1001];
        let r = cutoff_functional(&b, rho, sigma, t, 0.5).unwrap();
        let d: f64 = sigma - rho;
        assert!((r.j_construction - 3.0 * (1.0 + d.powf(1.0 - t))).abs() < 1e-10);
        assert!((r.j_optimal - r.j_construction).abs() < 1e-10);
        assert!((r.j_bound - 3.0 * d.powf(-t)).abs() < 1e-10);
        assert_eq!(r.profile[0], 1.0);
        assert!(r.profile.last().unwrap().abs() < 1e-15);
    }

    #[test]
    fn optimal_cutoff_improves_on_construction() {
        let (rho, sigma) = (1.0, 1.5);
        let b: Vec<f64> = (0..1001)
            .map(|k| 1.0 + 4.0 * (k as f64 / 1000.0).powi(2))
            .collect();
        for t in [2.0, 3.0] {
            let r = cutoff_functional(&b, rho, sigma, t, 0.5).unwrap();
            assert!(
                r.j_optimal < r.j_construction,
                "{} {}",
                r.j_optimal,
                r.j_construction
            );
            assert!(r.optimal_profile.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(r.optimal_profile[0], 1.0);
            assert_eq!(*r.optimal_profile.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn cutoff_rejects_bad_profiles() {
        assert!(cutoff_functional(&[1.0, 0.0, 1.0], 1.0, 1.5, 2.0, 0.5).is_err());
        assert!(cutoff_functional(&[1.0, 1.0], 1.0, 2.5, 2.0, 0.5).is_err());
        assert!(cutoff_functional(&[1.0, 1.0], 1.0, 1.5, 2.0, 1.0).is_err());
    }
}
