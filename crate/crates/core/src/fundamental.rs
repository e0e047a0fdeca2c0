//! Radial fundamental solutions `Φ(z) = −|z|^{−γ}` and the radial eigenvalue
//! algebra. Radial functions are written `φ(s)` with `s = |z|²`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hessian::HermitianMatrix;
use crate::symfun::{esym_upto, Spectrum};

/// A point `s = |z|² > 0` with `φ, φ′ = dφ/ds, φ″`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialPoint {
    pub s: f64,
    pub phi: f64,
    pub dphi: f64,
    pub d2phi: f64,
}

impl RadialPoint {
    pub fn new(s: f64, phi: f64, dphi: f64, d2phi: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::invalid(format!("radial point needs s > 0, got {s}")));
        }
        Ok(RadialPoint { s, phi, dphi, d2phi })
    }

    /// The repeated eigenvalue `m = (n−1)φ′ + φ″s` and the last one
    /// `(n−1)φ′`.
    pub fn mu_pair(&self, n: usize) -> (f64, f64) {
        let n1 = (n - 1) as f64;
        (n1 * self.dphi + self.d2phi * self.s, n1 * self.dphi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `γ = (2n² − 4n + 2k)/(n − k)`, k < n; solves `(n−k)φ″s + n(n−1)φ′ = 0`.
    Generic,
    /// `γ = 2n − 4`, k > 1; makes the n−1 repeated eigenvalues vanish.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaBranch {
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
    pub branch: Branch,
    /// Whether `μ[Φ]` lies in the closed cone Γ̄_k. False for the generic
    /// branch whenever k ≥ 2: there `S_1(μ[Φ]) < 0`.
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaTable {
    pub n: usize,
    pub k: usize,
    pub branches: Vec<GammaBranch>,
    pub diagnostics: Vec<String>,
}

pub fn generic_gamma(n: usize, k: usize) -> f64 {
    let (n, k) = (n as f64, k as f64);
    (2.0 * n * n - 4.0 * n + 2.0 * k) / (n - k)
}

pub fn degenerate_gamma(n: usize) -> f64 {
    2.0 * n as f64 - 4.0
}

/// Whether `−|z|^{−γ}` has μ in the closed cone Γ̄_k at s = 1 (the sign
/// pattern is the same at every s).
pub fn fundamental_in_closed_cone(n: usize, k: usize, gamma: f64) -> bool {
    let pt = phi_eval(gamma, 1.0).expect("s = 1 and gamma > 0");
    let (m, last) = pt.mu_pair(n);
    let scale = m.abs().max(last.abs()).max(1.0);
    let mut mu = vec![m / scale; n - 1];
    mu.push(last / scale);
    esym_upto(&mu, k)[1..].iter().all(|&s| s >= -1e-12)
}

pub fn gamma_exponents(n: usize, k: usize) -> Result<GammaTable> {
    if n < 2 {
        return Err(Error::invalid(format!("n = {n} must be >= 2")));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    let mut branches = Vec::new();
    let mut diagnostics = Vec::new();
    if k < n {
        let gamma = generic_gamma(n, k);
        branches.push(GammaBranch {
            n,
            k,
            gamma,
            branch: Branch::Generic,
            admissible: fundamental_in_closed_cone(n, k, gamma),
        });
    }
    if k > 1 {
        let gamma = degenerate_gamma(n);
        if gamma > 0.0 {
            branches.push(GammaBranch {
                n,
                k,
                gamma,
                branch: Branch::Degenerate,
                admissible: fundamental_in_closed_cone(n, k, gamma),
            });
        } else {
            diagnostics.push(format!(
                "degenerate branch rejected: 2n-4 = {gamma} <= 0 for n = {n}; the ODE s*phi'' + (n-1)*phi' = 0 has the logarithmic solution instead"
            ));
        }
    }
    for b in &branches {
        if !b.admissible {
            diagnostics.push(format!(
                "{:?} branch gamma = {} is not admissible: mu[-|z|^-gamma] lies outside the closed cone Gamma_{} (S_1 < 0)",
                b.branch, b.gamma, k
            ));
        }
    }
    Ok(GammaTable { n, k, branches, diagnostics })
}

/// `μ = (m, …, m, (n−1)φ′)` with `m = (n−1)φ′ + φ″s`.
pub fn radial_mu(pt: &RadialPoint, n: usize) -> Spectrum {
    let (m, last) = pt.mu_pair(n);
    let mut v = vec![m; n - 1];
    v.push(last);
    Spectrum::new(v).expect("finite radial data")
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub(crate) fn binom(n: usize, k: usize) -> f64 {
    binomial(n, k)
}

/// Closed form `(1/k)·C(n−1,k−1)·m^{k−1}·((n−k)φ″s + n(n−1)φ′)`.
pub fn radial_sk(pt: &RadialPoint, n: usize, k: usize) -> f64 {
    let (m, last) = pt.mu_pair(n);
    radial_sk_from_pair(m, last, n, k)
}

/// `S_k(m, …, m, μ_n)` with `m` repeated n−1 times.
pub fn radial_sk_from_pair(m: f64, last: f64, n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let linear = (n - k) as f64 * m + k as f64 * last;
    binomial(n - 1, k - 1) / k as f64 * m.powi(k as i32 - 1) * linear
}

pub fn phi_eval(gamma: f64, s: f64) -> Result<RadialPoint> {
    if !(s > 0.0) {
        return Err(Error::invalid(format!("s = {s} must be positive")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma = {gamma} must be positive")));
    }
    let g = gamma / 2.0;
    let base = s.powf(-g);
    Ok(RadialPoint {
        s,
        phi: -base,
        dphi: g * base / s,
        d2phi: -g * (g + 1.0) * base / (s * s),
    })
}

/// Dense complex Hessian `φ″ z̄_i z_j + φ′ δ_ij` of `φ(|z|²)` at `z`.
pub fn radial_hessian(dphi: f64, d2phi: f64, z: &[Complex64]) -> HermitianMatrix {
    HermitianMatrix::from_upper(z.len(), |i, j| {
        let diag = if i == j { dphi } else { 0.0 };
        z[i].conj() * z[j] * d2phi + Complex64::new(diag, 0.0)
    })
}
