//! Elementary symmetric polynomials, their partial derivatives and the
//! Gårding cones `Γ_k = { μ : S_j(μ) > 0, j = 1..k }`.

use serde::Serialize;

use crate::error::{Error, Result};

/// An ordered real n-vector (λ or μ). Entries are finite and `n >= 2`.
///
/// No operation sorts a spectrum implicitly; the few that need an ordering
/// say so.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "spectrum needs dimension >= 2, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("spectrum entry {i} is not finite")));
        }
        Ok(Spectrum(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn sorted_descending(&self) -> Spectrum {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        Spectrum(v)
    }

    pub fn sorted_ascending(&self) -> Spectrum {
        let mut v = self.0.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        Spectrum(v)
    }
}

/// All of `S_0..=S_kmax` in one pass of the product recurrence.
/// Entries with index above `values.len()` are zero.
pub fn esym_upto(values: &[f64], kmax: usize) -> Vec<f64> {
    let mut e = vec![0.0; kmax + 1];
    e[0] = 1.0;
    for (i, &x) in values.iter().enumerate() {
        let top = (i + 1).min(kmax);
        for j in (1..=top).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// `S_k` of a raw slice. `S_0 = 1`, `S_k = 0` for `k > len`.
pub fn esym(values: &[f64], k: usize) -> f64 {
    if k > values.len() {
        return 0.0;
    }
    esym_upto(values, k)[k]
}

/// `S_k` of `values` with entry `skip` removed.
pub fn esym_without(values: &[f64], k: usize, skip: usize) -> f64 {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    let mut seen = 0;
    for (i, &x) in values.iter().enumerate() {
        if i == skip {
            continue;
        }
        seen += 1;
        let top = seen.min(k);
        for j in (1..=top).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e[k]
}

/// `S_k(μ)`; zero for `k > n`.
pub fn elementary_symmetric(mu: &Spectrum, k: usize) -> f64 {
    esym(mu.values(), k)
}

/// `S_{k-1;j}(μ) = ∂S_k/∂μ_j`, i.e. `S_{k-1}` of μ with entry `j` deleted.
/// `j` is zero-based.
pub fn partial_symmetric(mu: &Spectrum, k: usize, j: usize) -> Result<f64> {
    let n = mu.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    if j >= n {
        return Err(Error::invalid(format!("index {j} outside 0..{n}")));
    }
    Ok(esym_without(mu.values(), k - 1, j))
}

/// Strict membership in Γ_k. No tolerance: the cone is open.
pub fn in_gamma_k(mu: &Spectrum, k: usize) -> Result<bool> {
    let n = mu.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    Ok(in_gamma_k_raw(mu.values(), k))
}

pub(crate) fn in_gamma_k_raw(values: &[f64], k: usize) -> bool {
    esym_upto(values, k)[1..].iter().all(|&s| s > 0.0)
}

/// Residuals and ratios of the four symmetric-polynomial facts used in the
/// a priori estimates, evaluated at one μ (sorted descending internally).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub n: usize,
    pub k: usize,
    pub s_k: f64,
    /// max_i |S_k − S_{k;i} − μ_i S_{k−1;i}|
    pub splitting_residual: f64,
    /// S_k^{1/k} / S_{k−1}^{1/(k−1)}; `None` for k = 1.
    pub newton_maclaurin_ratio: Option<f64>,
    /// |Σ_i S_{k−1;i} − (n−k+1) S_{k−1}|
    pub partial_sum_residual: f64,
    /// S_{k−1;k} / Σ_i S_{k−1;i} with μ sorted descending.
    pub kth_partial_ratio: f64,
}

/// Polynomial kernel used by the identity checks. Swappable so that a
/// corrupted kernel can be fed through the same checks.
pub type SymKernel = fn(&[f64], usize) -> f64;

pub fn identity_suite(mu: &Spectrum, k: usize) -> Result<IdentityReport> {
    identity_suite_with(esym, mu, k)
}

pub fn identity_suite_with(kernel: SymKernel, mu: &Spectrum, k: usize) -> Result<IdentityReport> {
    let n = mu.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    let sorted = mu.sorted_descending();
    let v = sorted.values();
    if !(1..=k).all(|j| kernel(v, j) > 0.0) {
        return Err(Error::ConeViolation {
            mu: v.to_vec(),
            k,
        });
    }

    let deleted = |i: usize| -> Vec<f64> {
        v.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &x)| x)
            .collect()
    };

    let s_k = kernel(v, k);
    let s_km1 = kernel(v, k - 1);
    let mut splitting_residual: f64 = 0.0;
    let mut partial_sum = 0.0;
    let mut partials = Vec::with_capacity(n);
    for i in 0..n {
        let rest = deleted(i);
        let s_k_i = kernel(&rest, k);
        let s_km1_i = kernel(&rest, k - 1);
        splitting_residual = splitting_residual.max((s_k - s_k_i - v[i] * s_km1_i).abs());
        partial_sum += s_km1_i;
        partials.push(s_km1_i);
    }
    let partial_sum_residual = (partial_sum - (n - k + 1) as f64 * s_km1).abs();
    let newton_maclaurin_ratio = if k >= 2 {
        Some(s_k.powf(1.0 / k as f64) / s_km1.powf(1.0 / (k - 1) as f64))
    } else {
        None
    };
    Ok(IdentityReport {
        n,
        k,
        s_k,
        splitting_residual,
        newton_maclaurin_ratio,
        partial_sum_residual,
        kth_partial_ratio: partials[k - 1] / partial_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    fn brute(v: &[f64], k: usize) -> f64 {
        let n = v.len();
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| v[i]).product::<f64>())
            .sum()
    }

    #[test]
    fn known_values() {
        assert_eq!(brute(&[3.0, 2.0, 1.0], 2), 11.0);
        assert_eq!(elementary_symmetric(&spec(&[3.0, 2.0, 1.0]), 2), 11.0);
        assert_eq!(elementary_symmetric(&spec(&[1.0, 1.0, 1.0]), 3), 1.0);
        assert_eq!(elementary_symmetric(&spec(&[-4.5, 7.0]), 0), 1.0);
        assert_eq!(elementary_symmetric(&spec(&[1.0, 2.0]), 3), 0.0);
    }

    #[test]
    fn partials() {
        assert_eq!(partial_symmetric(&spec(&[2.0, 2.0, 2.0]), 2, 0).unwrap(), 4.0);
        assert_eq!(partial_symmetric(&spec(&[1.0, 0.0, 0.0]), 1, 0).unwrap(), 1.0);
        assert_eq!(partial_symmetric(&spec(&[3.0, 2.0, 1.0]), 3, 1).unwrap(), 3.0);
        assert!(partial_symmetric(&spec(&[1.0, 2.0]), 1, 2).is_err());
        assert!(partial_symmetric(&spec(&[1.0, 2.0]), 3, 0).is_err());
        assert!(partial_symmetric(&spec(&[1.0, 2.0]), 0, 0).is_err());
    }

    #[test]
    fn cone_membership() {
        assert!(in_gamma_k(&spec(&[1.0, 1.0, 1.0]), 3).unwrap());
        assert!(in_gamma_k(&spec(&[3.0, 3.0, -1.0]), 2).unwrap());
        assert!(!in_gamma_k(&spec(&[3.0, 3.0, -1.0]), 3).unwrap());
        assert!(!in_gamma_k(&spec(&[1.0, -1.0, 0.0]), 1).unwrap());
        assert!(in_gamma_k(&spec(&[1.0, 2.0]), 0).is_err());
    }

    #[test]
    fn spectrum_validation() {
        assert!(Spectrum::new(vec![1.0]).is_err());
        assert!(Spectrum::new(vec![1.0, f64::NAN]).is_err());
        assert!(Spectrum::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn identity_examples() {
        let r = identity_suite(&spec(&[2.0, 2.0, 2.0]), 2).unwrap();
        assert_eq!(r.splitting_residual, 0.0);
        assert_eq!(r.partial_sum_residual, 0.0);

        let r = identity_suite(&spec(&[1.0, 1.0, 1.0]), 1).unwrap();
        assert_eq!(r.partial_sum_residual, 0.0);
        assert!(r.newton_maclaurin_ratio.is_none());

        // S_{1;i} = S_1 − μ_i = (3, 4, 5); second after sorting is 4.
        let r = identity_suite(&spec(&[1.0, 3.0, 2.0]), 2).unwrap();
        assert!((r.kth_partial_ratio - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_rejects_outside_cone() {
        let e = identity_suite(&spec(&[1.0, -1.0, 0.0]), 1).unwrap_err();
        assert!(matches!(e, Error::ConeViolation { k: 1, .. }));
    }

    #[test]
    fn recurrence_matches_enumeration() {
        let v = [0.3, -1.2, 2.5, 0.7, -0.4, 1.1, 3.0, -2.2];
        for k in 0..=8 {
            let a = esym(&v, k);
            let b = brute(&v, k);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "k={k}: {a} vs {b}");
        }
    }
}
