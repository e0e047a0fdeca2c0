//! Radial ε-problems on balls: `S_k(μ[u]) = ε` on `ε < |z| < R` with
//! Dirichlet data on both spheres, and the monotone limit ε → 0.
//!
//! The mesh is uniform in `t = log s`. With `p = n − 2` (k ≥ 2) or `p = n − 1`
//! (k = 1) and the flux `F = e^{pt} φ_t`,
//!
//! ```text
//! m   = (n−1)φ′ + sφ″ = e^{−(n−1)t} F_t        (k ≥ 2)
//! S_1 = (n−1) e^{−nt} F_t                      (k = 1)
//! μ_n = (n−1) e^{−t} φ_t
//! ```
//!
//! The discrete unknowns are the flux on the first half cell and the flux
//! increments `x_j = F_{j+1/2} − F_{j−1/2}`. This keeps `m` at full relative
//! precision even where φ itself is huge, and makes the homogeneous profiles
//! `−s^{−p}` discretely exact. Nodal values are recovered by summing fluxes
//! inwards from the outer boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fundamental::{binom, fundamental_in_closed_cone, RadialPoint};
use crate::hessian::{OperatorForm, OperatorParams};
use crate::subsolution::{ball_profile, quadratic_coefficient, BallSubsolution};

const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 40;

/// Inner Dirichlet data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerData {
    /// The ball subsolution value `u̲(ε)`.
    Subsolution,
    /// `g(ε)` with `g(r) = −r^{−γ} + R^{−γ} + c`, the homogeneous profile
    /// matching the outer value c.
    ExactHomogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialProblem {
    pub n: usize,
    pub k: usize,
    pub form: OperatorForm,
    pub gamma: f64,
    pub radius: f64,
    pub eps: f64,
    pub inner_value: f64,
    pub outer_value: f64,
    /// Number of mesh cells M; nodes are `t_0 < … < t_M`.
    pub mesh_size: usize,
}

impl RadialProblem {
    pub fn new(
        p: &OperatorParams,
        gamma: f64,
        radius: f64,
        eps: f64,
        inner_value: f64,
        outer_value: f64,
        mesh_size: usize,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("outer radius {radius} must be positive")));
        }
        if !(eps > 0.0 && eps < radius) {
            return Err(Error::invalid(format!("eps = {eps} must lie in (0, R = {radius})")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma = {gamma} must be positive")));
        }
        if mesh_size < 32 {
            return Err(Error::invalid(format!("mesh size {mesh_size} must be >= 32")));
        }
        if !inner_value.is_finite() || !outer_value.is_finite() {
            return Err(Error::invalid("boundary values must be finite"));
        }
        Ok(RadialProblem {
            n: p.n,
            k: p.k,
            form: p.form,
            gamma,
            radius,
            eps,
            inner_value,
            outer_value,
            mesh_size,
        })
    }

    /// Boundary data from the ball profile `−|z|^{−γ} + a|z|² + b` or from the
    /// exact homogeneous profile; the outer value is `boundary_constant`.
    pub fn on_ball(
        p: &OperatorParams,
        gamma: f64,
        radius: f64,
        eps: f64,
        boundary_constant: f64,
        inner: InnerData,
        mesh_size: usize,
    ) -> Result<Self> {
        let inner_value = match inner {
            InnerData::Subsolution => ball_profile(radius, gamma, p, boundary_constant)?.value_at_radius(eps),
            InnerData::ExactHomogeneous => homogeneous_value(gamma, radius, boundary_constant, eps),
        };
        Self::new(p, gamma, radius, eps, inner_value, boundary_constant, mesh_size)
    }

    pub fn params(&self) -> OperatorParams {
        OperatorParams {
            n: self.n,
            k: self.k,
            form: self.form,
            rhs_level: self.eps,
        }
    }

    pub fn t_bounds(&self) -> (f64, f64) {
        (2.0 * self.eps.ln(), 2.0 * self.radius.ln())
    }

    pub fn dt(&self) -> f64 {
        let (a, b) = self.t_bounds();
        (b - a) / self.mesh_size as f64
    }

    pub fn mesh(&self) -> Vec<f64> {
        let (a, b) = self.t_bounds();
        let dt = self.dt();
        (0..=self.mesh_size)
            .map(|j| if j == self.mesh_size { b } else { a + dt * j as f64 })
            .collect()
    }
}

/// `g(r) = −r^{−γ} + R^{−γ} + c`.
pub fn homogeneous_value(gamma: f64, radius: f64, boundary_constant: f64, r: f64) -> f64 {
    -r.powf(-gamma) + radius.powf(-gamma) + boundary_constant
}

/// Exponent of the conservative flux: `n − 2` for k ≥ 2, `n − 1` for k = 1.
pub fn flux_exponent(n: usize, k: usize) -> f64 {
    if k == 1 {
        (n - 1) as f64
    } else {
        (n - 2) as f64
    }
}

/// One term of an analytic initial profile in `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ProfileTerm {
    /// `c·s^q`
    Power { c: f64, q: f64 },
    /// `c·log s`
    Log { c: f64 },
    Const { c: f64 },
}

/// Initial guesses for the Newton iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialInit {
    /// The ball profile when it is discretely admissible, otherwise
    /// [`RadialInit::Interpolant`].
    Auto,
    /// `−s^{−γ/2} + a s + b` from the ball subsolution.
    BallProfile,
    /// `A + B·h(s) + a s` with h the homogeneous profile of the flux
    /// (`−s^{−p}`, or `log s` when p = 0), matched to both boundary values.
    Interpolant,
    /// A sum of analytic terms.
    Terms(Vec<ProfileTerm>),
    /// Nodal values, length M + 1.
    Nodal(Vec<f64>),
    /// The discrete state of an earlier solve on the same mesh.
    Previous(RadialSolution),
}

#[derive(Debug, Clone, PartialEq)]
struct FluxState {
    f0: f64,
    /// `x[j−1]` is the increment at node j, j = 1..M−1.
    x: Vec<f64>,
}

/// Per-node quantities of a discrete state.
struct Evaluation {
    fluxes: Vec<f64>,
    phi: Vec<f64>,
    /// Newton residual (log form for k ≥ 2, `S_1 − ε` for k = 1), interior nodes.
    internal: Vec<f64>,
    /// Reported residual at interior nodes.
    reported: Vec<f64>,
    m: Vec<f64>,
    mun: Vec<f64>,
    admissible: bool,
    bc_raw: f64,
}

struct Mesh {
    n: usize,
    k: usize,
    m_cells: usize,
    dt: f64,
    t: Vec<f64>,
    /// Cell average of `e^{−pt}` over `[t_j, t_{j+1}]`, j = 0..M−1, so that
    /// `φ_{j+1} − φ_j = dt·w_j·F_{j+1/2}` is exact for constant flux.
    w: Vec<f64>,
    /// `e^{−p t_j}` at the nodes.
    ep: Vec<f64>,
    /// `∫ e^{(p+1)t} dt` over the dual cell of node j.
    vol: Vec<f64>,
    p: f64,
}

impl Mesh {
    fn new(problem: &RadialProblem) -> Self {
        let t = problem.mesh();
        let dt = problem.dt();
        let p = flux_exponent(problem.n, problem.k);
        let w = (0..problem.mesh_size).map(|j| (-p * t[j]).exp() * cell_factor(p, dt)).collect();
        let ep = t.iter().map(|tj| (-p * tj).exp()).collect();
        let a = p + 1.0;
        let vol = t.iter().map(|tj| (a * (tj - 0.5 * dt)).exp() * (a * dt).exp_m1() / a).collect();
        Mesh {
            n: problem.n,
            k: problem.k,
            m_cells: problem.mesh_size,
            dt,
            t,
            w,
            ep,
            vol,
            p,
        }
    }

}

/// `(1 − e^{−p dt})/(p dt)`, the mean of `e^{−p τ}` over `[0, dt]`.
fn cell_factor(p: f64, dt: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        -(-p * dt).exp_m1() / (p * dt)
    }
}

fn bc_scale(problem: &RadialProblem) -> f64 {
    problem.inner_value.abs().max(problem.outer_value.abs()).max(1.0)
}

/// `S_k(m, …, m, μ_n)` and the admissibility of that spectrum with a
/// relative margin on the linear factors.
fn node_sk(m: f64, mun: f64, n: usize, k: usize) -> (f64, bool) {
    let lin = |j: usize| (n - j) as f64 * m + j as f64 * mun;
    let margin = 1e-14 * n as f64 * (m.abs() + mun.abs());
    let admissible = if k == 1 {
        lin(1) > margin
    } else {
        m > 0.0 && lin(1) > margin && lin(k) > margin
    };
    let sk = binom(n - 1, k - 1) / k as f64 * m.powi(k as i32 - 1) * lin(k);
    (sk, admissible)
}

fn evaluate(problem: &RadialProblem, mesh: &Mesh, state: &FluxState) -> Evaluation {
    let (n, k, mc) = (mesh.n, mesh.k, mesh.m_cells);
    let mut fluxes = Vec::with_capacity(mc);
    fluxes.push(state.f0);
    for j in 1..mc {
        let prev = fluxes[j - 1];
        fluxes.push(prev + state.x[j - 1]);
    }
    let mut phi = vec![0.0; mc + 1];
    phi[mc] = problem.outer_value;
    for j in (0..mc).rev() {
        phi[j] = phi[j + 1] - mesh.dt * mesh.w[j] * fluxes[j];
    }
    let n1 = (n - 1) as f64;
    let ln_eps = problem.eps.ln();
    let ln_c = (binom(n - 1, k - 1) / k as f64).ln();
    let mut internal = Vec::with_capacity(mc - 1);
    let mut reported = Vec::with_capacity(mc - 1);
    let mut ms = Vec::with_capacity(mc - 1);
    let mut muns = Vec::with_capacity(mc - 1);
    let mut admissible = true;
    for j in 1..mc {
        let tj = mesh.t[j];
        let xj = state.x[j - 1];
        let phi_t = mesh.ep[j] * 0.5 * (fluxes[j - 1] + fluxes[j]);
        let mun = n1 * (-tj).exp() * phi_t;
        if k == 1 {
            let s1 = n1 * xj / mesh.vol[j];
            // m recovered from S_1 = (n−1)m + μ_n for reporting.
            ms.push((s1 - mun) / n1);
            muns.push(mun);
            admissible &= s1 > 0.0;
            internal.push(s1 - problem.eps);
            reported.push(s1 - problem.eps);
            continue;
        }
        let m = xj / mesh.vol[j];
        let (sk, ok) = node_sk(m, mun, n, k);
        admissible &= ok;
        ms.push(m);
        muns.push(mun);
        let lin = (n - k) as f64 * m + k as f64 * mun;
        let q = if ok {
            (k - 1) as f64 * m.ln() + lin.ln() + ln_c - ln_eps
        } else {
            f64::NAN
        };
        internal.push(q);
        reported.push(match problem.form {
            OperatorForm::Root => sk - problem.eps,
            OperatorForm::Log => q,
        });
    }
    Evaluation {
        fluxes,
        bc_raw: phi[0] - problem.inner_value,
        phi,
        internal,
        reported,
        m: ms,
        mun: muns,
        admissible,
    }
}

fn merit(ev: &Evaluation, scale: f64) -> f64 {
    ev.internal
        .iter()
        .fold((ev.bc_raw / scale).abs(), |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v.abs()) })
}

fn reported_norm(ev: &Evaluation, scale: f64) -> f64 {
    ev.reported.iter().fold((ev.bc_raw / scale).abs(), |acc, v| acc.max(v.abs()))
}

/// Newton direction via the forward recurrence `δx_j = α_j + β_j δF_0`, with
/// `δF_0` fixed by the inner boundary row.
fn newton_direction(mesh: &Mesh, ev: &Evaluation) -> Result<FluxState> {
    let (n, k, mc) = (mesh.n, mesh.k, mesh.m_cells);
    let n1 = (n - 1) as f64;
    let mut alpha = Vec::with_capacity(mc - 1);
    let mut beta = Vec::with_capacity(mc - 1);
    let (mut pj, mut qj) = (0.0, 1.0);
    let (mut sum_wp, mut sum_wq) = (mesh.w[0] * pj, mesh.w[0] * qj);
    for j in 1..mc {
        let tj = mesh.t[j];
        // φ_t at node j is e^{−p t_j}(F_{j−1/2} + x_j/2).
        let (a, b) = if k == 1 {
            (n1 / mesh.vol[j], 0.0)
        } else {
            let (m, mun) = (ev.m[j - 1], ev.mun[j - 1]);
            let lin = (n - k) as f64 * m + k as f64 * mun;
            let q_m = (k - 1) as f64 / m + (n - k) as f64 / lin;
            let q_mu = k as f64 / lin;
            let dmu = n1 * (-tj).exp() * mesh.ep[j];
            (q_m / mesh.vol[j] + 0.5 * q_mu * dmu, q_mu * dmu)
        };
        if !(a.is_finite() && a != 0.0 && b.is_finite()) {
            return Err(Error::Numerical(format!("singular Newton row at node {j}")));
        }
        let al = (-ev.internal[j - 1] - b * pj) / a;
        let be = -b * qj / a;
        alpha.push(al);
        beta.push(be);
        pj += al;
        qj += be;
        sum_wp += mesh.w[j] * pj;
        sum_wq += mesh.w[j] * qj;
    }
    // φ_0 = φ_M − dt Σ w_j F_j, so δφ_0 = −dt Σ w_j δF_j = −bc_raw.
    let df0 = (ev.bc_raw / mesh.dt - sum_wp) / sum_wq;
    if !df0.is_finite() {
        return Err(Error::Numerical("boundary row of the Newton system is singular".into()));
    }
    Ok(FluxState {
        f0: df0,
        x: alpha.iter().zip(&beta).map(|(a, b)| a + b * df0).collect(),
    })
}

fn state_from_terms(mesh: &Mesh, terms: &[ProfileTerm]) -> FluxState {
    let (dt, p) = (mesh.dt, mesh.p);
    // F_{j+1/2} = (φ_{j+1} − φ_j)/(dt w_j) with w_j = e^{−p t_j}·cell_factor.
    let scale = 1.0 / (dt * cell_factor(p, dt));
    let mut f0 = 0.0;
    let mut x = vec![0.0; mesh.m_cells - 1];
    for term in terms {
        let (kk, rate) = match *term {
            ProfileTerm::Const { .. } => continue,
            // Increment c e^{q t_j} expm1(q dt).
            ProfileTerm::Power { c, q } => (c * (q * dt).exp_m1() * scale, p + q),
            // Increment c dt.
            ProfileTerm::Log { c } => (c * dt * scale, p),
        };
        // F_{j+1/2} = kk e^{rate t_j}
        f0 += kk * (rate * mesh.t[0]).exp();
        let grow = (rate * dt).exp_m1();
        for j in 1..mesh.m_cells {
            x[j - 1] += kk * (rate * mesh.t[j - 1]).exp() * grow;
        }
    }
    FluxState { f0, x }
}

fn state_from_nodal(mesh: &Mesh, phi: &[f64]) -> FluxState {
    let fluxes: Vec<f64> = (0..mesh.m_cells)
        .map(|j| (phi[j + 1] - phi[j]) / (mesh.dt * mesh.w[j]))
        .collect();
    FluxState {
        f0: fluxes[0],
        x: fluxes.windows(2).map(|w| w[1] - w[0]).collect(),
    }
}

/// Terms of the ball profile `−s^{−γ/2} + a s + b`.
pub fn ball_terms(sub: &BallSubsolution) -> Vec<ProfileTerm> {
    vec![
        ProfileTerm::Power { c: -1.0, q: -sub.gamma / 2.0 },
        ProfileTerm::Power { c: sub.a, q: 1.0 },
        ProfileTerm::Const { c: sub.b },
    ]
}

/// Terms of `A + B·h(s) + a s` matching both boundary values. Requires B ≥ 0.
pub fn interpolant_terms(problem: &RadialProblem) -> Result<Vec<ProfileTerm>> {
    let (n, k) = (problem.n, problem.k);
    let a = quadratic_coefficient(n, k);
    let p = flux_exponent(n, k);
    let (s0, s1) = (problem.eps * problem.eps, problem.radius * problem.radius);
    let h = |s: f64| if p == 0.0 { s.ln() } else { -s.powf(-p) };
    let big_b = (problem.outer_value - problem.inner_value - a * (s1 - s0)) / (h(s1) - h(s0));
    if !(big_b >= 0.0) {
        return Err(Error::invalid(format!(
            "no admissible interpolant: the boundary data need B = {big_b} < 0"
        )));
    }
    let big_a = problem.outer_value - big_b * h(s1) - a * s1;
    let hom = if p == 0.0 {
        ProfileTerm::Log { c: big_b }
    } else {
        ProfileTerm::Power { c: -big_b, q: -p }
    };
    Ok(vec![hom, ProfileTerm::Power { c: a, q: 1.0 }, ProfileTerm::Const { c: big_a }])
}

/// Residual of nodal values: `[φ_0 − inner, r_1, …, r_{M−1}, φ_M − outer]`
/// with `r_j = S_k − ε` (root form and k = 1) or `log S_n − log ε` (log form).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialResidual {
    pub values: Vec<f64>,
    /// Interior node indices where μ leaves Γ_k.
    pub inadmissible: Vec<usize>,
}

pub fn radial_residual(profile: &[f64], problem: &RadialProblem) -> Result<RadialResidual> {
    if profile.len() != problem.mesh_size + 1 {
        return Err(Error::invalid(format!(
            "profile has {} values, mesh has {} nodes",
            profile.len(),
            problem.mesh_size + 1
        )));
    }
    let mesh = Mesh::new(problem);
    let state = state_from_nodal(&mesh, profile);
    let mut shifted = problem.clone();
    shifted.outer_value = profile[problem.mesh_size];
    let ev = evaluate(&shifted, &mesh, &state);
    let mut values = Vec::with_capacity(problem.mesh_size + 1);
    values.push(profile[0] - problem.inner_value);
    let mut inadmissible = Vec::new();
    for (idx, r) in ev.reported.iter().enumerate() {
        let (m, mun) = (ev.m[idx], ev.mun[idx]);
        let ok = if problem.k == 1 {
            (problem.n - 1) as f64 * m + mun > 0.0
        } else {
            node_sk(m, mun, problem.n, problem.k).1
        };
        if !ok {
            inadmissible.push(idx + 1);
        }
        values.push(if ok || problem.form == OperatorForm::Root || problem.k == 1 {
            *r
        } else {
            f64::NAN
        });
    }
    values.push(profile[problem.mesh_size] - problem.outer_value);
    Ok(RadialResidual { values, inadmissible })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialSolution {
    pub problem: RadialProblem,
    /// Mesh nodes in t = log s.
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    /// dφ/dt at the nodes.
    pub phi_t: Vec<f64>,
    /// d²φ/dt² at the nodes.
    pub phi_tt: Vec<f64>,
    /// Reported residual at every node (boundary rows are the Dirichlet
    /// mismatch, normalized at the inner node).
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub newton_iters: usize,
    pub admissible: bool,
    pub residual_history: Vec<f64>,
    /// Flux `F = e^{pt} φ_t` on the half cells.
    pub flux: Vec<f64>,
    /// Flux exponent p.
    pub p: f64,
    state: FluxState,
}

impl RadialSolution {
    fn assemble(problem: &RadialProblem, mesh: &Mesh, state: FluxState, ev: Evaluation, iters: usize, history: Vec<f64>) -> Self {
        let mc = mesh.m_cells;
        let f = &ev.fluxes;
        let mut phi_t = vec![0.0; mc + 1];
        let mut phi_tt = vec![0.0; mc + 1];
        for j in 0..=mc {
            let (fj, ft) = if j == 0 {
                (f[0], state.x[0] / mesh.dt)
            } else if j == mc {
                (f[mc - 1], state.x[mc - 2] / mesh.dt)
            } else {
                (0.5 * (f[j - 1] + f[j]), state.x[j - 1] / mesh.dt)
            };
            phi_t[j] = mesh.ep[j] * fj;
            phi_tt[j] = mesh.ep[j] * ft - mesh.p * phi_t[j];
        }
        let scale = bc_scale(problem);
        let mut residual = Vec::with_capacity(mc + 1);
        residual.push(ev.bc_raw / scale);
        residual.extend_from_slice(&ev.reported);
        residual.push(0.0);
        RadialSolution {
            problem: problem.clone(),
            t: mesh.t.clone(),
            residual_norm: reported_norm(&ev, scale),
            phi: ev.phi,
            phi_t,
            phi_tt,
            residual,
            newton_iters: iters,
            admissible: ev.admissible,
            residual_history: history,
            flux: ev.fluxes,
            p: mesh.p,
            state,
        }
    }

    /// `(φ, φ′, φ″)` at `s`. The value integrates the cell flux exactly; the
    /// derivatives use the flux interpolated linearly between half cells.
    /// Both are exact for the homogeneous profile.
    pub fn eval(&self, s: f64) -> Result<RadialPoint> {
        let t = s.ln();
        let (t0, t1) = (self.t[0], self.t[self.t.len() - 1]);
        let tol = 1e-12 * (1.0 + t0.abs().max(t1.abs()));
        if !(t >= t0 - tol && t <= t1 + tol) {
            return Err(Error::invalid(format!("s = {s} outside the annulus")));
        }
        let t = t.clamp(t0, t1);
        let dt = self.t[1] - self.t[0];
        let mc = self.t.len() - 1;
        let j = (((t - t0) / dt).floor() as usize).min(mc - 1);
        let p = self.p;
        let tau = t - self.t[j];
        // ∫_{t_j}^{t} e^{−pτ} dτ
        let integral = (-p * self.t[j]).exp() * tau * cell_factor(p, tau);
        let value = self.phi[j] + self.flux[j] * integral;

        let pos = (t - t0) / dt - 0.5;
        let (f, fp) = if pos <= 0.0 {
            (self.flux[0], 0.0)
        } else if pos >= (mc - 1) as f64 {
            (self.flux[mc - 1], 0.0)
        } else {
            let i = (pos.floor() as usize).min(mc - 2);
            let u = pos - i as f64;
            let slope = (self.flux[i + 1] - self.flux[i]) / dt;
            ((1.0 - u) * self.flux[i] + u * self.flux[i + 1], slope)
        };
        let e = (-p * t).exp();
        let phi_t = e * f;
        let phi_tt = e * fp - p * phi_t;
        Ok(RadialPoint {
            s,
            phi: value,
            dphi: phi_t / s,
            d2phi: (phi_tt - phi_t) / (s * s),
        })
    }

    pub fn value_at_radius(&self, r: f64) -> Result<f64> {
        Ok(self.eval(r * r)?.phi)
    }

    /// `|d u/d r| = 2 r φ′(r²)`.
    pub fn gradient_at_radius(&self, r: f64) -> Result<f64> {
        Ok((2.0 * r * self.eval(r * r)?.dphi).abs())
    }

    pub fn radii(&self) -> Vec<f64> {
        self.t.iter().map(|t| (0.5 * t).exp()).collect()
    }

    /// Node rows `s, phi, dphi, d2phi, residual`.
    pub fn node_points(&self) -> Vec<(RadialPoint, f64)> {
        self.t
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let s = t.exp();
                let pt = RadialPoint {
                    s,
                    phi: self.phi[j],
                    dphi: self.phi_t[j] / s,
                    d2phi: (self.phi_tt[j] - self.phi_t[j]) / (s * s),
                };
                (pt, self.residual[j])
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,phi,dphi,d2phi,residual\n");
        for (pt, r) in self.node_points() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                pt.s, pt.phi, pt.dphi, pt.d2phi, r
            ));
        }
        out
    }
}

fn initial_state(problem: &RadialProblem, mesh: &Mesh, init: &RadialInit) -> Result<FluxState> {
    let p = problem.params();
    Ok(match init {
        RadialInit::Auto => {
            let ball = initial_state(problem, mesh, &RadialInit::BallProfile)?;
            if evaluate(problem, mesh, &ball).admissible {
                ball
            } else {
                initial_state(problem, mesh, &RadialInit::Interpolant)?
            }
        }
        RadialInit::BallProfile => {
            let sub = ball_profile(problem.radius, problem.gamma, &p, problem.outer_value)?;
            state_from_terms(mesh, &ball_terms(&sub))
        }
        RadialInit::Interpolant => state_from_terms(mesh, &interpolant_terms(problem)?),
        RadialInit::Terms(terms) => state_from_terms(mesh, terms),
        RadialInit::Nodal(values) => {
            if values.len() != problem.mesh_size + 1 {
                return Err(Error::invalid("nodal init has the wrong length"));
            }
            state_from_nodal(mesh, values)
        }
        RadialInit::Previous(sol) => {
            if sol.problem.mesh_size != problem.mesh_size
                || sol.problem.eps != problem.eps
                || sol.problem.radius != problem.radius
            {
                return Err(Error::invalid("previous solution lives on a different mesh"));
            }
            sol.state.clone()
        }
    })
}

/// Damped Newton: full step, halved until every node stays admissible and
/// the residual decreases. Stops when the reported max-norm residual is at
/// most `1e−10·(1+ε)`.
pub fn solve_radial(problem: &RadialProblem, init: &RadialInit) -> Result<RadialSolution> {
    let mesh = Mesh::new(problem);
    let mut state = initial_state(problem, &mesh, init)?;
    let mut ev = evaluate(problem, &mesh, &state);
    if !ev.admissible {
        return Err(Error::invalid("initial profile is not admissible at every interior node"));
    }
    let scale = bc_scale(problem);
    let tol = 1e-10 * (1.0 + problem.eps);
    let mut history = vec![reported_norm(&ev, scale)];
    let mut iters = 0;
    while reported_norm(&ev, scale) > tol {
        if iters == MAX_ITERATIONS {
            return Err(Error::SolverFailure {
                message: format!("no convergence in {MAX_ITERATIONS} Newton iterations"),
                residual_history: history,
            });
        }
        let dir = newton_direction(&mesh, &ev)?;
        let current = merit(&ev, scale);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = FluxState {
                f0: state.f0 + lambda * dir.f0,
                x: state.x.iter().zip(&dir.x).map(|(a, d)| a + lambda * d).collect(),
            };
            let tev = evaluate(problem, &mesh, &trial);
            if tev.admissible && merit(&tev, scale) < current {
                accepted = Some((trial, tev));
                break;
            }
            lambda *= 0.5;
        }
        let Some((s, e)) = accepted else {
            return Err(Error::SolverFailure {
                message: format!("line search stalled after {MAX_HALVINGS} halvings"),
                residual_history: history,
            });
        };
        state = s;
        ev = e;
        iters += 1;
        history.push(reported_norm(&ev, scale));
    }
    Ok(RadialSolution::assemble(problem, &mesh, state, ev, iters, history))
}

/// Polynomial extrapolation to x = 0 through the given points (Neville).
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for level in 1..n {
        for i in 0..n - level {
            p[i] = (xs[i + level] * p[i] - xs[i] * p[i + 1]) / (xs[i + level] - xs[i]);
        }
    }
    p[0]
}

/// Exponent of the expected leading ε-dependence: `ε^{1/(k−1)}` for k ≥ 2,
/// `ε` for k = 1.
pub fn extrapolation_exponent(k: usize) -> f64 {
    if k == 1 {
        1.0
    } else {
        1.0 / (k - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenLimitConfig {
    pub n: usize,
    pub k: usize,
    pub form: OperatorForm,
    pub gamma: f64,
    pub radius: f64,
    pub boundary_constant: f64,
    pub inner: InnerData,
    pub mesh_size: usize,
    pub eps_schedule: Vec<f64>,
    pub probe_radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichSummary {
    /// Whether the lower profile is a certified subsolution.
    pub lower_available: bool,
    /// `max(u̲ − u, u − Φ − C_0)/(1 + |Φ + C_0|)` over all nodes of all runs.
    pub max_violation: f64,
    pub c0: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenLimitReport {
    pub config: GreenLimitConfig,
    pub eps_schedule: Vec<f64>,
    pub probe_radii: Vec<f64>,
    /// `values[i][j] = u^{ε_i}(r_j)`; `None` when the solve failed.
    pub values: Vec<Option<Vec<f64>>>,
    pub failures: Vec<Option<String>>,
    pub newton_iters: Vec<Option<usize>>,
    pub monotonicity_ok: bool,
    pub worst_monotonicity_gap: f64,
    pub extrapolation_exponent: f64,
    pub extrapolated: Vec<f64>,
    /// `|u^{ε_{i+1}}(r_j) − u^{ε_i}(r_j)|`
    pub cauchy_differences: Vec<Vec<f64>>,
    /// `log2` ratio of the last two Cauchy differences per probe.
    pub empirical_rates: Vec<f64>,
    pub sandwich: SandwichSummary,
}

pub struct GreenLimitRun {
    pub report: GreenLimitReport,
    pub solutions: Vec<Option<RadialSolution>>,
}

pub const MONOTONICITY_SLACK: f64 = 1e-8;
pub const SANDWICH_TOL: f64 = 1e-6;

pub fn green_limit(cfg: &GreenLimitConfig) -> Result<GreenLimitRun> {
    if cfg.eps_schedule.is_empty() {
        return Err(Error::invalid("empty eps schedule"));
    }
    if cfg.eps_schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("eps schedule must be strictly decreasing"));
    }
    let max_eps = cfg.eps_schedule[0];
    if cfg.probe_radii.iter().any(|&r| !(r > max_eps && r < cfg.radius)) {
        return Err(Error::invalid(format!(
            "probe radii must lie in ({max_eps}, {})",
            cfg.radius
        )));
    }
    let params = OperatorParams::new(cfg.n, cfg.k, cfg.form, max_eps)?;
    let problems = cfg
        .eps_schedule
        .iter()
        .map(|&e| RadialProblem::on_ball(&params, cfg.gamma, cfg.radius, e, cfg.boundary_constant, cfg.inner, cfg.mesh_size))
        .collect::<Result<Vec<_>>>()?;

    let outcomes: Vec<Result<RadialSolution>> =
        problems.par_iter().map(|p| solve_radial(p, &RadialInit::Auto)).collect();

    let mut values = Vec::new();
    let mut failures = Vec::new();
    let mut iters = Vec::new();
    let mut solutions = Vec::new();
    for out in outcomes {
        match out {
            Ok(sol) => {
                let v = cfg
                    .probe_radii
                    .iter()
                    .map(|&r| sol.value_at_radius(r))
                    .collect::<Result<Vec<_>>>()?;
                values.push(Some(v));
                failures.push(None);
                iters.push(Some(sol.newton_iters));
                solutions.push(Some(sol));
            }
            Err(e) => {
                values.push(None);
                failures.push(Some(e.to_string()));
                iters.push(None);
                solutions.push(None);
            }
        }
    }

    let all_ok = failures.iter().all(|f| f.is_none());
    let np = cfg.probe_radii.len();
    let mut worst_gap: f64 = 0.0;
    let mut cauchy = vec![Vec::new(); np];
    for w in values.windows(2) {
        if let (Some(a), Some(b)) = (&w[0], &w[1]) {
            for j in 0..np {
                worst_gap = worst_gap.max(a[j] - b[j]);
                cauchy[j].push((b[j] - a[j]).abs());
            }
        }
    }
    let monotonicity_ok = all_ok && worst_gap <= MONOTONICITY_SLACK;

    let pexp = extrapolation_exponent(cfg.k);
    let ok_idx: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let tail: Vec<usize> = ok_idx.iter().rev().take(4).rev().copied().collect();
    let xs: Vec<f64> = tail.iter().map(|&i| cfg.eps_schedule[i].powf(pexp)).collect();
    let extrapolated = (0..np)
        .map(|j| {
            if tail.is_empty() {
                return f64::NAN;
            }
            let ys: Vec<f64> = tail.iter().map(|&i| values[i].as_ref().unwrap()[j]).collect();
            extrapolate_to_zero(&xs, &ys)
        })
        .collect();
    let empirical_rates = cauchy
        .iter()
        .map(|d| {
            if d.len() >= 2 {
                (d[d.len() - 2] / d[d.len() - 1]).log2()
            } else {
                f64::NAN
            }
        })
        .collect();

    let sandwich = sandwich_summary(cfg, &params, &solutions)?;

    Ok(GreenLimitRun {
        report: GreenLimitReport {
            config: cfg.clone(),
            eps_schedule: cfg.eps_schedule.clone(),
            probe_radii: cfg.probe_radii.clone(),
            values,
            failures,
            newton_iters: iters,
            monotonicity_ok,
            worst_monotonicity_gap: worst_gap,
            extrapolation_exponent: pexp,
            extrapolated,
            cauchy_differences: cauchy,
            empirical_rates,
            sandwich,
        },
        solutions,
    })
}

fn sandwich_summary(cfg: &GreenLimitConfig, params: &OperatorParams, sols: &[Option<RadialSolution>]) -> Result<SandwichSummary> {
    let sub = ball_profile(cfg.radius, cfg.gamma, params, cfg.boundary_constant)?;
    let lower_available = fundamental_in_closed_cone(cfg.n, cfg.k, cfg.gamma);
    let c0 = sub.c0();
    let mut worst = f64::NEG_INFINITY;
    for sol in sols.iter().flatten() {
        for (j, r) in sol.radii().into_iter().enumerate() {
            let u = sol.phi[j];
            let upper = -r.powf(-cfg.gamma) + c0;
            let lower = sub.value_at_radius(r);
            let v = (lower - u).max(u - upper) / (1.0 + upper.abs());
            worst = worst.max(v);
        }
    }
    let solved = sols.iter().all(|s| s.is_some());
    Ok(SandwichSummary {
        lower_available,
        max_violation: worst,
        c0,
        ok: lower_available && solved && worst <= SANDWICH_TOL,
    })
}
