//! Subsolutions for the punctured Dirichlet problems: the explicit radial one
//! on balls, `u̲ = −|z|^{−γ} + a|z|² + b`, and the quadratic barrier
//! `u̲ = φ + B(|z|² − d²)` on boxes. Also the Levi-trace check for
//! 1-pseudoconvexity of a defining function.
//!
//! Points are real coordinates `(x_1, y_1, …, x_n, y_n)` with `z_j = x_j + i y_j`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fundamental::{binom, fundamental_in_closed_cone, radial_hessian, radial_sk_from_pair, RadialPoint};
use crate::hessian::{mu_of_matrix, HermitianMatrix, OperatorParams};
use crate::symfun::{esym, in_gamma_k_raw};

/// A smooth function defined on all of `R^{2n}` (away from the origin when
/// it is singular there).
pub trait Field: Send + Sync {
    /// Complex dimension n.
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn complex_hessian(&self, x: &[f64]) -> HermitianMatrix;
}

/// A field with `S_k(μ[u̲]) ≥ rhs_floor` on its domain.
pub trait Subsolution: Field {
    fn rhs_floor(&self) -> f64;
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// A bounded domain in `C^n` containing the puncture at the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainSpec {
    pub n: usize,
    pub shape: Shape,
}

impl DomainSpec {
    pub fn ball(n: usize, center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.len() != 2 * n {
            return Err(Error::invalid(format!("center has {} coordinates, expected {}", center.len(), 2 * n)));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("radius {radius} must be positive")));
        }
        if norm_sq(&center).sqrt() >= radius {
            return Err(Error::invalid("the puncture (origin) must lie strictly inside the ball"));
        }
        Ok(DomainSpec { n, shape: Shape::Ball { center, radius } })
    }

    pub fn centered_ball(n: usize, radius: f64) -> Result<Self> {
        Self::ball(n, vec![0.0; 2 * n], radius)
    }

    pub fn boxed(n: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != 2 * n || upper.len() != 2 * n {
            return Err(Error::invalid("box corners need 2n coordinates"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(u > l) {
                return Err(Error::invalid("box extents must be strictly positive"));
            }
            if !(*l < 0.0 && *u > 0.0) {
                return Err(Error::invalid("the puncture (origin) must lie strictly inside the box"));
            }
        }
        Ok(DomainSpec { n, shape: Shape::Box { lower, upper } })
    }

    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>() < radius * radius
            }
            Shape::Box { lower, upper } => x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| v > l && v < u),
        }
    }
}

/// Trace of the Levi form of the defining function at a boundary point:
/// `tr σ_{ij̄} − (σ ν, ν)/|ν|²` with ν the complex normal. Positive means the
/// boundary is pseudo mean-convex there.
pub fn levi_trace(domain: &DomainSpec, x: &[f64]) -> Result<f64> {
    let (center, radius) = match &domain.shape {
        Shape::Ball { center, radius } => (center, *radius),
        Shape::Box { .. } => {
            return Err(Error::Unsupported(
                "box boundaries are not smooth; the Levi trace is only defined for balls".into(),
            ))
        }
    };
    if x.len() != 2 * domain.n {
        return Err(Error::invalid("boundary point has the wrong dimension"));
    }
    let rel: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
    let sigma = norm_sq(&rel) - radius * radius;
    if sigma.abs() > 1e-10 * radius * radius {
        return Err(Error::invalid(format!("point is not on the boundary (sigma = {sigma:e})")));
    }
    // σ = |z − c|² − R²: σ_{ij̄} = δ_ij, ∂σ/∂z̄_i = z_i − c_i.
    let hess = HermitianMatrix::identity(domain.n);
    let normal = to_complex(&rel);
    let nn: f64 = normal.iter().map(|v| v.norm_sqr()).sum();
    let mut quad = Complex64::new(0.0, 0.0);
    for i in 0..domain.n {
        for j in 0..domain.n {
            quad += normal[i].conj() * hess.get(i, j) * normal[j];
        }
    }
    Ok(hess.trace() - quad.re / nn)
}

/// `u̲(z) = −|z|^{−γ} + a|z|² + b` on the ball `|z| < R`, with `a` chosen so
/// that `S_k(μ[a|z|²]) = 1` and `b` so that `u̲ = boundary_constant` on
/// `|z| = R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallSubsolution {
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
    pub radius: f64,
    pub a: f64,
    pub b: f64,
    pub boundary_constant: f64,
    pub rhs_floor: f64,
    /// Inner radius of the annulus on which the floor was certified; zero
    /// when it holds on the whole punctured ball.
    pub certified_from: f64,
}

/// `a` with `C(n,k)·((n−1)a)^k = 1`.
pub fn quadratic_coefficient(n: usize, k: usize) -> f64 {
    (((n - 1) as f64).powi(k as i32) * binom(n, k)).powf(-1.0 / k as f64)
}

impl BallSubsolution {
    fn build(radius: f64, gamma: f64, p: &OperatorParams, boundary_constant: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::invalid(format!("gamma = {gamma} must be positive")));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid(format!("radius = {radius} must be positive")));
        }
        if !boundary_constant.is_finite() {
            return Err(Error::invalid("boundary constant must be finite"));
        }
        let a = quadratic_coefficient(p.n, p.k);
        let b = boundary_constant + radius.powf(-gamma) - a * radius * radius;
        Ok(BallSubsolution {
            n: p.n,
            k: p.k,
            gamma,
            radius,
            a,
            b,
            boundary_constant,
            rhs_floor: 1.0,
            certified_from: 0.0,
        })
    }

    pub fn profile(&self, s: f64) -> RadialPoint {
        let g = self.gamma / 2.0;
        let base = s.powf(-g);
        RadialPoint {
            s,
            phi: -base + self.a * s + self.b,
            dphi: g * base / s + self.a,
            d2phi: -g * (g + 1.0) * base / (s * s),
        }
    }

    pub fn value_at_radius(&self, r: f64) -> f64 {
        self.profile(r * r).phi
    }

    /// `S_k(μ[u̲])` at radius r.
    pub fn sk_at_radius(&self, r: f64) -> f64 {
        let (m, last) = self.profile(r * r).mu_pair(self.n);
        radial_sk_from_pair(m, last, self.n, self.k)
    }

    pub fn admissible_at_radius(&self, r: f64) -> bool {
        let (m, last) = self.profile(r * r).mu_pair(self.n);
        let mut mu = vec![m; self.n - 1];
        mu.push(last);
        in_gamma_k_raw(&mu, self.k)
    }

    /// `sup |a|z|² + b|` over the ball: the constant in `u̲ ≤ u^ε ≤ Φ + C_0`.
    pub fn c0(&self) -> f64 {
        self.b.abs().max((self.a * self.radius * self.radius + self.b).abs())
    }
}

/// The ball subsolution. Requires `μ[−|z|^{−γ}]` in the closed cone Γ̄_k, so
/// that `S_k(μ[u̲]) ≥ S_k(μ[a|z|²]) = 1` on the whole punctured ball.
pub fn ball_subsolution(radius: f64, gamma: f64, p: &OperatorParams, boundary_constant: f64) -> Result<BallSubsolution> {
    let sub = BallSubsolution::build(radius, gamma, p, boundary_constant)?;
    if !fundamental_in_closed_cone(p.n, p.k, gamma) {
        return Err(Error::Unsupported(format!(
            "-|z|^-{gamma} is not admissible for n = {}, k = {}: mu[Phi] lies outside the closed cone, \
             so a|z|^2 + b + Phi is not a subsolution near the puncture",
            p.n, p.k
        )));
    }
    Ok(sub)
}

/// The same formula with no admissibility check. Only the boundary values
/// and the profile are meaningful; `rhs_floor` is `-inf`.
pub fn ball_profile(radius: f64, gamma: f64, p: &OperatorParams, boundary_constant: f64) -> Result<BallSubsolution> {
    let mut sub = BallSubsolution::build(radius, gamma, p, boundary_constant)?;
    if !fundamental_in_closed_cone(p.n, p.k, gamma) {
        sub.rhs_floor = f64::NEG_INFINITY;
    }
    Ok(sub)
}

/// Same profile, certified only on the annulus `r_inner ≤ |z| ≤ R` by dense
/// radial sampling. The floor is the smallest sampled `S_k`.
pub fn ball_subsolution_on_annulus(
    radius: f64,
    r_inner: f64,
    gamma: f64,
    p: &OperatorParams,
    boundary_constant: f64,
) -> Result<BallSubsolution> {
    if !(r_inner > 0.0 && r_inner < radius) {
        return Err(Error::invalid(format!("inner radius {r_inner} must lie in (0, {radius})")));
    }
    let mut sub = BallSubsolution::build(radius, gamma, p, boundary_constant)?;
    if fundamental_in_closed_cone(p.n, p.k, gamma) {
        return Ok(sub);
    }
    const SAMPLES: usize = 4000;
    let (l0, l1) = (r_inner.ln(), radius.ln());
    let mut floor = f64::INFINITY;
    for i in 0..=SAMPLES {
        let r = (l0 + (l1 - l0) * i as f64 / SAMPLES as f64).exp();
        if !sub.admissible_at_radius(r) {
            return Err(Error::ConstructionFailure {
                message: format!("ball profile with gamma = {gamma} is inadmissible at radius {r}"),
                point: vec![r],
            });
        }
        floor = floor.min(sub.sk_at_radius(r));
    }
    sub.rhs_floor = floor.min(1.0);
    sub.certified_from = r_inner;
    Ok(sub)
}

impl Field for BallSubsolution {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.profile(norm_sq(x)).phi
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.profile(norm_sq(x)).dphi;
        x.iter().map(|v| 2.0 * d * v).collect()
    }

    fn complex_hessian(&self, x: &[f64]) -> HermitianMatrix {
        let pt = self.profile(norm_sq(x));
        radial_hessian(pt.dphi, pt.d2phi, &to_complex(x))
    }
}

impl Subsolution for BallSubsolution {
    fn rhs_floor(&self) -> f64 {
        self.rhs_floor
    }
}

/// `u̲ = φ + B(|z|² − d²)` with `d` the diameter of the box.
#[derive(Clone)]
pub struct BoxSubsolution {
    pub data: Arc<dyn Field>,
    pub big_b: f64,
    pub diameter: f64,
    pub rhs_floor: f64,
}

impl std::fmt::Debug for BoxSubsolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoxSubsolution")
            .field("big_b", &self.big_b)
            .field("diameter", &self.diameter)
            .field("rhs_floor", &self.rhs_floor)
            .finish()
    }
}

impl Field for BoxSubsolution {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.data.value(x) + self.big_b * (norm_sq(x) - self.diameter * self.diameter)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.data.gradient(x).iter().zip(x).map(|(g, v)| g + 2.0 * self.big_b * v).collect()
    }

    fn complex_hessian(&self, x: &[f64]) -> HermitianMatrix {
        self.data
            .complex_hessian(x)
            .add_scaled(&HermitianMatrix::identity(self.dim()), self.big_b)
    }
}

impl Subsolution for BoxSubsolution {
    fn rhs_floor(&self) -> f64 {
        self.rhs_floor
    }
}

/// Hessian of φ plus `B·I` is admissible with `S_k ≥ h_level` at every sample.
fn box_feasible(hessians: &[HermitianMatrix], big_b: f64, k: usize, h_level: f64) -> Result<Option<usize>> {
    for (idx, h) in hessians.iter().enumerate() {
        let shifted = h.add_scaled(&HermitianMatrix::identity(h.dim()), big_b);
        let (mu, _) = mu_of_matrix(&shifted)?;
        if !in_gamma_k_raw(mu.values(), k) || esym(mu.values(), k) < h_level {
            return Ok(Some(idx));
        }
    }
    Ok(None)
}

/// Quadratic-barrier subsolution on a box for k < n. `B` is found by
/// doubling from 1 until every sample point satisfies `S_k(μ[u̲]) ≥ h_level`,
/// then reduced by bisection to the smallest feasible value.
pub fn box_subsolution(
    domain: &DomainSpec,
    boundary_data: Arc<dyn Field>,
    p: &OperatorParams,
    h_level: f64,
    samples: &[Vec<f64>],
) -> Result<BoxSubsolution> {
    if !matches!(domain.shape, Shape::Box { .. }) {
        return Err(Error::invalid("box_subsolution needs a box domain"));
    }
    if p.k >= p.n {
        return Err(Error::Unsupported(
            "box subsolution without a Levi condition needs k < n".into(),
        ));
    }
    if boundary_data.dim() != domain.n || p.n != domain.n {
        return Err(Error::invalid("dimension mismatch between domain, data and operator"));
    }
    if !(h_level >= 0.0) {
        return Err(Error::invalid(format!("h_level = {h_level} must be >= 0")));
    }
    if samples.is_empty() {
        return Err(Error::invalid("at least one sample point is required"));
    }
    let hessians: Vec<HermitianMatrix> = samples.iter().map(|x| boundary_data.complex_hessian(x)).collect();

    let mut hi = 1.0_f64;
    let mut lo = 0.0_f64;
    loop {
        match box_feasible(&hessians, hi, p.k, h_level)? {
            None => break,
            Some(idx) => {
                if hi >= 2f64.powi(60) {
                    return Err(Error::ConstructionFailure {
                        message: format!("no feasible B up to 2^60 for h_level = {h_level}"),
                        point: samples[idx].clone(),
                    });
                }
                lo = hi;
                hi *= 2.0;
            }
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if box_feasible(&hessians, mid, p.k, h_level)?.is_none() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BoxSubsolution {
        data: boundary_data,
        big_b: hi,
        diameter: domain.diameter(),
        rhs_floor: h_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::{OperatorForm, OperatorParams};

    struct Zero(usize);
    impl Field for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn value(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![0.0; x.len()]
        }
        fn complex_hessian(&self, _: &[f64]) -> HermitianMatrix {
            HermitianMatrix::diagonal(&vec![0.0; self.0])
        }
    }

    #[test]
    fn levi_trace_of_balls() {
        let d = DomainSpec::centered_ball(3, 1.0).unwrap();
        let x = [0.6, 0.0, 0.0, 0.8, 0.0, 0.0];
        assert!((levi_trace(&d, &x).unwrap() - 2.0).abs() < 1e-14);
        let d = DomainSpec::ball(2, vec![0.1, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!((levi_trace(&d, &[1.1, 0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!(levi_trace(&d, &[0.5, 0.0, 0.0, 0.0]).is_err());
        let b = DomainSpec::boxed(2, vec![-1.0; 4], vec![1.0; 4]).unwrap();
        assert!(matches!(levi_trace(&b, &[1.0, 0.0, 0.0, 0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn quadratic_coefficients() {
        assert!((quadratic_coefficient(3, 2) - 12f64.powf(-0.5)).abs() < 1e-15);
        assert!((quadratic_coefficient(3, 1) - 1.0 / 6.0).abs() < 1e-15);
        assert!((quadratic_coefficient(3, 3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ball_subsolution_floor_and_boundary() {
        let p = OperatorParams::new(3, 3, OperatorForm::Log, 0.1).unwrap();
        let sub = ball_subsolution(1.0, 2.0, &p, 0.5).unwrap();
        assert!((sub.value_at_radius(1.0) - 0.5).abs() < 1e-14);
        for r in [0.1, 0.5, 0.9] {
            assert!(sub.sk_at_radius(r) >= 1.0 - 1e-9);
            assert!(sub.value_at_radius(r) <= 0.5);
        }
        let p = OperatorParams::new(3, 2, OperatorForm::Root, 0.1).unwrap();
        assert!(matches!(ball_subsolution(1.0, 10.0, &p, 0.0), Err(Error::Unsupported(_))));
        assert!(ball_subsolution(1.0, 2.0, &p, 0.0).is_ok());
        assert!(ball_subsolution(1.0, -1.0, &p, 0.0).is_err());
    }

    #[test]
    fn annulus_certification_for_n2_k2() {
        let p = OperatorParams::new(2, 2, OperatorForm::Log, 0.25).unwrap();
        let sub = ball_subsolution_on_annulus(1.0, 0.2, 0.25, &p, 0.0).unwrap();
        assert!(sub.rhs_floor > 0.25);
        assert!(ball_subsolution_on_annulus(1.0, 0.01, 0.25, &p, 0.0).is_err());
    }

    #[test]
    fn box_subsolution_minimal_b() {
        let dom = DomainSpec::boxed(2, vec![-0.5; 4], vec![0.5; 4]).unwrap();
        let p = OperatorParams::new(2, 1, OperatorForm::Root, 1.0).unwrap();
        let samples = vec![vec![0.1, 0.2, -0.3, 0.0], vec![0.0; 4]];
        // S_1(μ[B|z|²]) = B·n·(n−1) = 2B for n = 2.
        let sub = box_subsolution(&dom, Arc::new(Zero(2)), &p, 1.0, &samples).unwrap();
        assert!((sub.big_b - 0.5).abs() < 1e-12, "{}", sub.big_b);
        assert!(box_feasible(
            &[HermitianMatrix::diagonal(&[0.0, 0.0])],
            1.0,
            1,
            0.0
        )
        .unwrap()
        .is_none());
        let sub = box_subsolution(&dom, Arc::new(Zero(2)), &p, 0.0, &samples).unwrap();
        assert!(sub.big_b > 0.0);
        let p3 = OperatorParams::new(2, 2, OperatorForm::Log, 1.0).unwrap();
        assert!(box_subsolution(&dom, Arc::new(Zero(2)), &p3, 1.0, &samples).is_err());
    }
}
