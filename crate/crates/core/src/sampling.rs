//! Seeded random samplers for cone points, unitary matrices and admissible
//! Hermitian matrices. Everything is driven by a `ChaCha8Rng` so results are
//! reproducible from a single seed.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::hessian::{lambda_from_mu, HermitianMatrix};
use crate::symfun::{in_gamma_k_raw, Spectrum};

pub type SampleRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Rejection-sampled μ ∈ Γ_k from a standard Gaussian. Returns `None` after
/// `max_tries` rejections.
pub fn gaussian_cone_sample(rng: &mut impl Rng, n: usize, k: usize, max_tries: usize) -> Option<Spectrum> {
    for _ in 0..max_tries {
        let v: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        if in_gamma_k_raw(&v, k) {
            return Spectrum::new(v).ok();
        }
    }
    None
}

/// Gaussian sample conditioned on Γ_k. When plain rejection is hopeless
/// (Γ_n has probability 2^{−n}) the sample is shifted towards the cone axis
/// by a random multiple of (1,…,1), which keeps every region of the cone
/// reachable.
pub fn cone_sample(rng: &mut impl Rng, n: usize, k: usize) -> Spectrum {
    if let Some(s) = gaussian_cone_sample(rng, n, k, 64) {
        return s;
    }
    loop {
        let shift = gaussian(rng).abs() * 2.0;
        let v: Vec<f64> = (0..n).map(|_| gaussian(rng) + shift).collect();
        if in_gamma_k_raw(&v, k) {
            return Spectrum::new(v).expect("finite sample");
        }
    }
}

/// Haar-distributed unitary via QR of a complex Gaussian matrix with the
/// phases of R's diagonal absorbed.
pub fn random_unitary(rng: &mut impl Rng, n: usize) -> DMatrix<Complex64> {
    let z = DMatrix::from_fn(n, n, |_, _| Complex64::new(gaussian(rng), gaussian(rng)));
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
    HermitianMatrix::from_upper(n, |i, j| {
        if i == j {
            Complex64::new(gaussian(rng), 0.0)
        } else {
            Complex64::new(gaussian(rng), gaussian(rng)) * std::f64::consts::FRAC_1_SQRT_2
        }
    })
}

/// A Hermitian matrix whose μ is `mu`, in a random eigenbasis.
pub fn matrix_with_mu(rng: &mut impl Rng, mu: &Spectrum) -> HermitianMatrix {
    let lambda = lambda_from_mu(mu).expect("n >= 2");
    let u = random_unitary(rng, mu.dim());
    HermitianMatrix::from_spectral(&u, lambda.values()).expect("matching sizes")
}

/// Random matrix with μ ∈ Γ_k.
pub fn admissible_matrix(rng: &mut impl Rng, n: usize, k: usize) -> (HermitianMatrix, Spectrum) {
    let mu = cone_sample(rng, n, k);
    (matrix_with_mu(rng, &mu), mu)
}

/// Deterministic low-discrepancy unit vectors in R^dim (dim = 2, 3 or 4):
/// a Halton sequence mapped to the sphere through Gaussian-free spherical
/// coordinates. Used for sphere suprema on grids.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    fn halton(mut i: usize, base: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }
    use std::f64::consts::PI;
    (1..=count)
        .map(|i| match dim {
            2 => {
                let a = 2.0 * PI * halton(i, 2);
                vec![a.cos(), a.sin()]
            }
            3 => {
                let z = 2.0 * halton(i, 2) - 1.0;
                let a = 2.0 * PI * halton(i, 3);
                let r = (1.0 - z * z).sqrt();
                vec![r * a.cos(), r * a.sin(), z]
            }
            4 => {
                // Hopf-type parametrization: uniform on S^3.
                let u = halton(i, 2);
                let (a, b) = (2.0 * PI * halton(i, 3), 2.0 * PI * halton(i, 5));
                let (r1, r2) = (u.sqrt(), (1.0 - u).sqrt());
                vec![r1 * a.cos(), r1 * a.sin(), r2 * b.cos(), r2 * b.sin()]
            }
            _ => panic!("sphere_directions supports dimensions 2..=4, got {dim}"),
        })
        .collect()
}
