//! Blow-up profiles, log-log rate fits, and the comparison checks
//! `u̲ ≤ u^ε ≤ upper` and `ε ↦ u^ε` decreasing.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{solve_poisson, Grid4, GridField, NodeClass, DIM};
use crate::radial::RadialSolution;
use crate::sampling::sphere_directions;
use crate::subsolution::{norm_sq, DomainSpec, Field, Shape};

pub const GRID_MONOTONICITY_SLACK: f64 = 1e-5;
const SPHERE_POINTS: usize = 100;
const MIN_SPHERE_NODES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    Value,
    Gradient,
    HessianNorm,
}

#[derive(Clone, Copy)]
pub enum ProfileSource<'a> {
    Radial(&'a RadialSolution),
    Grid(&'a Grid4, &'a GridField),
}

/// `(r, sup_{|z| = r} q)` for each radius.
pub fn sphere_profile(src: ProfileSource<'_>, radii: &[f64], q: Quantity) -> Result<Vec<(f64, f64)>> {
    match src {
        ProfileSource::Radial(sol) => radii.iter().map(|&r| Ok((r, radial_sup(sol, r, q)?))).collect(),
        ProfileSource::Grid(grid, field) => radii.iter().map(|&r| Ok((r, grid_sup(grid, field, r, q)?))).collect(),
    }
}

fn radial_sup(sol: &RadialSolution, r: f64, q: Quantity) -> Result<f64> {
    let inner = sol.problem.eps;
    let outer = sol.problem.radius;
    if !(r > inner && r < outer) {
        return Err(Error::invalid(format!("radius {r} outside the annulus ({inner}, {outer})")));
    }
    let s = r * r;
    let pt = sol.eval(s)?;
    Ok(match q {
        Quantity::Value => pt.phi.abs(),
        Quantity::Gradient => (2.0 * r * pt.dphi).abs(),
        // φ′I + φ″ z̄zᵀ: the largest entry over the sphere sits on the
        // diagonal (|φ′| or |φ′ + sφ″|) or off it (|φ″|s/2).
        Quantity::HessianNorm => pt
            .dphi
            .abs()
            .max((pt.dphi + s * pt.d2phi).abs())
            .max(0.5 * s * pt.d2phi.abs()),
    })
}

fn outer_radius(domain: &DomainSpec) -> f64 {
    match &domain.shape {
        Shape::Ball { center, radius } => radius - norm_sq(center).sqrt(),
        Shape::Box { lower, upper } => lower.iter().chain(upper).map(|v| v.abs()).fold(f64::INFINITY, f64::min),
    }
}

fn grid_sup(grid: &Grid4, field: &GridField, r: f64, q: Quantity) -> Result<f64> {
    let outer = outer_radius(&grid.domain);
    if !(r > grid.eps && r < outer) {
        return Err(Error::invalid(format!("radius {r} outside the annulus ({}, {outer})", grid.eps)));
    }
    let near = grid
        .active_nodes()
        .iter()
        .filter(|&&l| (norm_sq(&grid.coords(l)).sqrt() - r).abs() <= 0.5 * grid.h)
        .count();
    if near < MIN_SPHERE_NODES {
        return Err(Error::invalid(format!(
            "sphere of radius {r} meets only {near} active nodes (need {MIN_SPHERE_NODES})"
        )));
    }
    let hess_norm = HessianNormField { grid, field };
    let h = grid.h;
    let mut sup: f64 = 0.0;
    for d in sphere_directions(DIM, SPHERE_POINTS) {
        let x: Vec<f64> = d.iter().map(|v| r * v).collect();
        let v = match q {
            Quantity::Value => field.interpolate(grid, &x)?.abs(),
            Quantity::Gradient => {
                let mut g2 = 0.0;
                for a in 0..DIM {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[a] += h;
                    xm[a] -= h;
                    let g = (field.interpolate(grid, &xp)? - field.interpolate(grid, &xm)?) / (2.0 * h);
                    g2 += g * g;
                }
                g2.sqrt()
            }
            Quantity::HessianNorm => hess_norm.interpolate(grid, &x)?,
        };
        sup = sup.max(v);
    }
    Ok(sup)
}

/// Max-abs complex-Hessian entry, interpolated from active nodes.
struct HessianNormField<'a> {
    grid: &'a Grid4,
    field: &'a GridField,
}

impl HessianNormField<'_> {
    fn interpolate(&self, grid: &Grid4, x: &[f64]) -> Result<f64> {
        let n = grid.half_nodes as f64;
        let mut base = [0usize; DIM];
        let mut frac = [0.0; DIM];
        for a in 0..DIM {
            let g = x[a] / grid.h + n;
            base[a] = g.floor() as usize;
            frac[a] = g - g.floor();
        }
        let mut acc = 0.0;
        for corner in 0..16usize {
            let mut idx = base;
            let mut w = 1.0;
            for a in 0..DIM {
                if corner >> a & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let lin = self.grid.linear(idx);
            if self.grid.class(lin) != NodeClass::Active {
                return Err(Error::invalid("Hessian interpolation stencil leaves the active set"));
            }
            acc += w * crate::grid::complex_hessian(self.grid, self.field, lin)?.max_abs_entry();
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub window: (f64, f64),
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(log r, log value)`.
pub fn fit_rate(samples: &[(f64, f64)]) -> Result<RateFit> {
    if samples.len() < 6 {
        return Err(Error::invalid(format!("rate fit needs at least 6 samples, got {}", samples.len())));
    }
    if let Some(&(r, v)) = samples.iter().find(|(r, v)| !(*v > 0.0 && *r > 0.0)) {
        return Err(Error::invalid(format!("nonpositive sample ({r}, {v})")));
    }
    let m = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs at least two distinct radii"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(RateFit {
        window: (lo, hi),
        samples: samples.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

/// `count` log-spaced radii in `[lo, hi]`.
pub fn log_radii(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count.max(2) - 1) as f64).exp())
        .collect()
}

/// `max(lower − u, u − upper)` over `(lower, u, upper)` triples; `−inf` on
/// an empty set.
pub fn sandwich_check(triples: impl IntoIterator<Item = (f64, f64, f64)>) -> f64 {
    triples
        .into_iter()
        .map(|(lo, u, up)| (lo - u).max(u - up))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Sandwich over the nodes of a radial solution.
pub fn sandwich_check_radial(sol: &RadialSolution, lower: &dyn Fn(f64) -> f64, upper: &dyn Fn(f64) -> f64) -> f64 {
    sandwich_check(
        sol.radii()
            .into_iter()
            .zip(&sol.phi)
            .map(|(r, &u)| (lower(r), u, upper(r))),
    )
}

/// Sandwich over the active nodes of `grid` where `region` holds; `upper`
/// is a grid field on the same node set.
pub fn sandwich_check_grid(
    grid: &Grid4,
    field: &GridField,
    lower: &dyn Field,
    upper: &GridField,
    region: &dyn Fn(&[f64]) -> bool,
) -> f64 {
    sandwich_check(grid.active_nodes().iter().filter_map(|&lin| {
        let x = grid.coords(lin);
        region(&x).then(|| (lower.value(&x), field.values[lin], upper.values[lin]))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityResult {
    pub ok: bool,
    /// Largest `u^{ε_j} − u^{ε_{j+1}}` over consecutive runs and probes.
    pub worst_gap: f64,
}

/// `runs[j]` holds probe values at `ε_j`, with `ε` decreasing in j.
pub fn monotonicity_check(runs: &[Vec<f64>], slack: f64) -> MonotonicityResult {
    let mut worst = 0.0f64;
    for w in runs.windows(2) {
        for (a, b) in w[0].iter().zip(&w[1]) {
            worst = worst.max(a - b);
        }
    }
    MonotonicityResult {
        ok: worst <= slack,
        worst_gap: worst,
    }
}

/// Discrete harmonic function on `r0 < |z|` inside the domain with value
/// `inner_value` on the masked puncture and `outer` elsewhere.
pub fn harmonic_majorant(domain: &DomainSpec, h: f64, r0: f64, inner_value: f64, outer: &dyn Field) -> Result<(Grid4, GridField)> {
    struct Data<'a> {
        r0: f64,
        inner: f64,
        outer: &'a dyn Field,
    }
    impl Field for Data<'_> {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &[f64]) -> f64 {
            if norm_sq(x) <= self.r0 * self.r0 {
                self.inner
            } else {
                self.outer.value(x)
            }
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            self.outer.gradient(x)
        }
        fn complex_hessian(&self, x: &[f64]) -> crate::hessian::HermitianMatrix {
            self.outer.complex_hessian(x)
        }
    }
    let grid = Grid4::new(domain, r0, h)?;
    let data = Data { r0, inner: inner_value, outer };
    let field = solve_poisson(&grid, &data, 0.0)?;
    Ok((grid, field))
}

/// Majorant values carried onto the node set of `target` (matching nodes
/// by coordinates); NaN where the majorant is undefined.
pub fn transfer(from: &Grid4, values: &GridField, target: &Grid4) -> GridField {
    let out = (0..target.total_nodes())
        .map(|lin| match from.node_at(&target.coords(lin)) {
            Some(l) if from.class(l) != NodeClass::Unused => values.values[l],
            _ => f64::NAN,
        })
        .collect();
    GridField { values: out }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub eps: Vec<f64>,
    /// `sup_{1 ≤ |z| ≤ 2} |ε^γ u^ε(εz)|` per run.
    pub sup: Vec<f64>,
    pub bound: f64,
    pub ok: bool,
}

/// Rescaled solutions `ε^γ u^ε(εz)` on `1 ≤ |z| ≤ 2`, bounded by twice the
/// value at the largest ε.
pub fn scaling_diagnostic(runs: &[&RadialSolution], gamma: f64) -> Result<ScalingReport> {
    if runs.is_empty() {
        return Err(Error::invalid("no runs"));
    }
    let mut eps = Vec::new();
    let mut sup = Vec::new();
    for sol in runs {
        let e = sol.problem.eps;
        if 2.0 * e >= sol.problem.radius {
            return Err(Error::invalid(format!("2ε = {} leaves the ball", 2.0 * e)));
        }
        let mut m: f64 = 0.0;
        for z in log_radii(1.0, 2.0, 17) {
            m = m.max((e.powf(gamma) * sol.value_at_radius(e * z)?).abs());
        }
        eps.push(e);
        sup.push(m);
    }
    let imax = (0..eps.len()).max_by(|&a, &b| eps[a].total_cmp(&eps[b])).unwrap();
    let bound = 2.0 * sup[imax];
    let ok = sup.iter().all(|&v| v <= bound);
    Ok(ScalingReport { eps, sup, bound, ok })
}
