//! The form-type operator `F(A) = S_k(μ(A))^{1/k}` (or `log S_n(μ(A))` for
//! k = n), where `μ_i = tr(A) − λ_i(A)`, together with its spectral gradient
//! and the ellipticity/concavity probes used by the solvers and the checks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symfun::{esym, esym_upto, esym_without, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorForm {
    /// `S_k^{1/k}(μ)`, degree-one homogeneous.
    Root,
    /// `log S_n(μ)`, only for k = n.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub n: usize,
    pub k: usize,
    pub form: OperatorForm,
    /// Right-hand side level; zero marks the degenerate (homogeneous) target.
    pub rhs_level: f64,
}

impl OperatorParams {
    pub fn new(n: usize, k: usize, form: OperatorForm, rhs_level: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("dimension n = {n} must be >= 2")));
        }
        if k == 0 || k > n {
            return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
        }
        if form == OperatorForm::Log && k != n {
            return Err(Error::invalid(format!("log form requires k = n, got k = {k}, n = {n}")));
        }
        if !(rhs_level >= 0.0) || !rhs_level.is_finite() {
            return Err(Error::invalid(format!("rhs level {rhs_level} must be finite and >= 0")));
        }
        Ok(OperatorParams { n, k, form, rhs_level })
    }

    /// Root form for k < n, log form for k = n.
    pub fn natural(n: usize, k: usize, rhs_level: f64) -> Result<Self> {
        let form = if k == n { OperatorForm::Log } else { OperatorForm::Root };
        Self::new(n, k, form, rhs_level)
    }

    /// Value of the operator that corresponds to `S_k(μ) = level`.
    pub fn target(&self, level: f64) -> f64 {
        match self.form {
            OperatorForm::Root => level.powf(1.0 / self.k as f64),
            OperatorForm::Log => level.ln(),
        }
    }
}

/// n×n complex Hermitian matrix. Every constructor mirrors the upper
/// triangle and drops the imaginary part of the diagonal, so `A = A^*` holds
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    m: DMatrix<Complex64>,
}

impl HermitianMatrix {
    /// Builds from the upper triangle (`i <= j`) given by `f(i, j)`.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(f(i, i).re, 0.0);
            for j in i + 1..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
        HermitianMatrix { m }
    }

    /// Hermitian part `(M + M^*)/2` of an arbitrary square matrix.
    pub fn from_matrix(m: &DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!("matrix is {}x{}", m.nrows(), m.ncols())));
        }
        let a = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(Self::from_upper(a.nrows(), |i, j| a[(i, j)]))
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self::from_upper(d.len(), |i, j| {
            if i == j {
                Complex64::new(d[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    /// `U diag(d) U^*`.
    pub fn from_spectral(u: &DMatrix<Complex64>, d: &[f64]) -> Result<Self> {
        let n = d.len();
        if u.nrows() != n || u.ncols() != n {
            return Err(Error::invalid("unitary and diagonal sizes differ"));
        }
        let mut scaled = u.clone();
        for (j, &dj) in d.iter().enumerate() {
            scaled.column_mut(j).scale_mut(dj);
        }
        Self::from_matrix(&(scaled * u.adjoint()))
    }

    /// `U A U^*`.
    pub fn conjugate_by(&self, u: &DMatrix<Complex64>) -> Result<Self> {
        Self::from_matrix(&(u * &self.m * u.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.m[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m[(i, i)].re).sum()
    }

    pub fn scale(&self, t: f64) -> Self {
        HermitianMatrix { m: &self.m * Complex64::new(t, 0.0) }
    }

    /// `self + t·other`.
    pub fn add_scaled(&self, other: &HermitianMatrix, t: f64) -> Self {
        HermitianMatrix { m: &self.m + &other.m * Complex64::new(t, 0.0) }
    }

    /// Real number `tr(self · other)`.
    pub fn trace_product(&self, other: &HermitianMatrix) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.m[(i, j)] * other.m[(j, i)]).re;
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Eigen-decomposition `A = U diag(λ) U^*` with λ ascending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Spectrum,
    pub unitary: DMatrix<Complex64>,
}

pub fn decompose(a: &HermitianMatrix) -> Result<SpectralDecomposition> {
    let n = a.dim();
    let norm = a.frobenius_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical(format!("non-finite matrix entries (norm {norm})")));
    }
    let eig = nalgebra::SymmetricEigen::try_new(a.m.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
        Error::Numerical(format!("Hermitian eigensolver did not converge (n = {n}, norm = {norm:e})"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let unitary = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SpectralDecomposition {
        eigenvalues: Spectrum::new(values)?,
        unitary,
    })
}

/// `μ_i = S_1(λ) − λ_i`.
pub fn mu_from_lambda(lambda: &Spectrum) -> Spectrum {
    let s1: f64 = lambda.values().iter().sum();
    Spectrum::new(lambda.values().iter().map(|l| s1 - l).collect()).expect("finite input")
}

/// Inverse of [`mu_from_lambda`]: `λ_i = S_1(μ)/(n−1) − μ_i`.
pub fn lambda_from_mu(mu: &Spectrum) -> Result<Spectrum> {
    let n = mu.dim();
    if n < 2 {
        return Err(Error::invalid("n = 1 has no inverse map"));
    }
    let s1: f64 = mu.values().iter().sum();
    let c = s1 / (n - 1) as f64;
    Spectrum::new(mu.values().iter().map(|m| c - m).collect())
}

/// μ of `tr(A)·I − A`, in the order of the (ascending) eigenvalues of A,
/// plus the decomposition of A.
pub fn mu_of_matrix(a: &HermitianMatrix) -> Result<(Spectrum, SpectralDecomposition)> {
    let dec = decompose(a)?;
    let mu = mu_from_lambda(&dec.eigenvalues);
    Ok((mu, dec))
}

fn check_admissible(mu: &[f64], p: &OperatorParams) -> Result<()> {
    let ok = match p.form {
        OperatorForm::Root => esym_upto(mu, p.k)[1..].iter().all(|&s| s > 0.0),
        OperatorForm::Log => mu.iter().all(|&m| m > 0.0),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InadmissiblePoint { mu: mu.to_vec() })
    }
}

fn check_dim(a: &HermitianMatrix, p: &OperatorParams) -> Result<()> {
    if a.dim() != p.n {
        return Err(Error::invalid(format!("matrix is {0}x{0}, operator expects n = {1}", a.dim(), p.n)));
    }
    Ok(())
}

/// `f(μ)` on an admissible spectrum.
pub fn f_of_mu(mu: &[f64], p: &OperatorParams) -> Result<f64> {
    check_admissible(mu, p)?;
    Ok(match p.form {
        OperatorForm::Root => esym(mu, p.k).powf(1.0 / p.k as f64),
        OperatorForm::Log => mu.iter().map(|m| m.ln()).sum(),
    })
}

/// `∂f/∂λ_i` for each i, given an admissible μ.
pub fn spectral_gradient(mu: &[f64], p: &OperatorParams) -> Result<Vec<f64>> {
    check_admissible(mu, p)?;
    let n = mu.len();
    Ok(match p.form {
        OperatorForm::Root => {
            let k = p.k;
            let sk = esym(mu, k);
            let pre = sk.powf(1.0 / k as f64 - 1.0) / k as f64;
            let partials: Vec<f64> = (0..n).map(|j| esym_without(mu, k - 1, j)).collect();
            let total: f64 = partials.iter().sum();
            partials.iter().map(|pj| pre * (total - pj)).collect()
        }
        OperatorForm::Log => {
            let inv_sum: f64 = mu.iter().map(|m| 1.0 / m).sum();
            mu.iter().map(|m| inv_sum - 1.0 / m).collect()
        }
    })
}

pub fn f_value(a: &HermitianMatrix, p: &OperatorParams) -> Result<f64> {
    check_dim(a, p)?;
    let (mu, _) = mu_of_matrix(a)?;
    f_of_mu(mu.values(), p)
}

/// `F^{grad} = U diag(f_1..f_n) U^*`, so that `dF = tr(F^{grad}·dA)`.
pub fn f_gradient(a: &HermitianMatrix, p: &OperatorParams) -> Result<HermitianMatrix> {
    check_dim(a, p)?;
    let (mu, dec) = mu_of_matrix(a)?;
    let fi = spectral_gradient(mu.values(), p)?;
    HermitianMatrix::from_spectral(&dec.unitary, &fi)
}

/// Value and gradient from a single decomposition.
pub fn f_value_and_gradient(a: &HermitianMatrix, p: &OperatorParams) -> Result<(f64, HermitianMatrix)> {
    check_dim(a, p)?;
    let (mu, dec) = mu_of_matrix(a)?;
    let value = f_of_mu(mu.values(), p)?;
    let fi = spectral_gradient(mu.values(), p)?;
    Ok((value, HermitianMatrix::from_spectral(&dec.unitary, &fi)?))
}

/// `|tr(F^{grad}·A) − f(A)|` (root form) or `|tr(F^{grad}·A) − n|` (log form).
pub fn trace_identity_residual(a: &HermitianMatrix, p: &OperatorParams) -> Result<f64> {
    let (value, grad) = f_value_and_gradient(a, p)?;
    let tr = grad.trace_product(a);
    Ok(match p.form {
        OperatorForm::Root => (tr - value).abs(),
        OperatorForm::Log => (tr - p.n as f64).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityReport {
    /// `min_i f_i / Σ_i f_i`
    pub ratio: f64,
    /// `Σ_i f_i`
    pub trace_sum: f64,
    /// `((n−1)(n−k+1)/k) S_k^{1/k−1} S_{k−1}`
    pub closed_form: f64,
    pub closed_form_rel_err: f64,
}

pub fn ellipticity_ratio(a: &HermitianMatrix, p: &OperatorParams) -> Result<EllipticityReport> {
    check_dim(a, p)?;
    if p.k >= p.n || p.form == OperatorForm::Log {
        return Err(Error::Unsupported(format!(
            "ellipticity ratio needs the root form with k < n (k = {}, n = {})",
            p.k, p.n
        )));
    }
    let (mu, _) = mu_of_matrix(a)?;
    let fi = spectral_gradient(mu.values(), p)?;
    let trace_sum: f64 = fi.iter().sum();
    let min = fi.iter().copied().fold(f64::INFINITY, f64::min);
    let (n, k) = (p.n as f64, p.k as f64);
    let s = esym_upto(mu.values(), p.k);
    let closed_form = (n - 1.0) * (n - k + 1.0) / k * s[p.k].powf(1.0 / k - 1.0) * s[p.k - 1];
    Ok(EllipticityReport {
        ratio: min / trace_sum,
        trace_sum,
        closed_form,
        closed_form_rel_err: (closed_form - trace_sum).abs() / trace_sum.abs(),
    })
}

/// Largest second difference of `t ↦ f(A + tH)` over a 9-point stencil on
/// `[−t_max, t_max]`. Concavity makes every such difference nonpositive.
pub fn concavity_probe(
    a: &HermitianMatrix,
    h: &HermitianMatrix,
    p: &OperatorParams,
    t_max: f64,
) -> Result<f64> {
    if !(t_max > 0.0) {
        return Err(Error::invalid(format!("t_max = {t_max} must be positive")));
    }
    if h.dim() != a.dim() {
        return Err(Error::invalid("direction has the wrong dimension"));
    }
    let step = t_max / 4.0;
    let values = (0..9)
        .map(|i| f_value(&a.add_scaled(h, -t_max + step * i as f64), p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]) / (step * step))
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mu_lambda_maps() {
        assert_eq!(mu_from_lambda(&sp(&[1.0, 2.0, 3.0])).values(), &[5.0, 4.0, 3.0]);
        assert_eq!(mu_from_lambda(&sp(&[0.0, 0.0, 0.0])).values(), &[0.0, 0.0, 0.0]);
        assert_eq!(mu_from_lambda(&sp(&[1.0, 0.0, 0.0])).values(), &[0.0, 1.0, 1.0]);
        assert_eq!(lambda_from_mu(&sp(&[5.0, 4.0, 3.0])).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(lambda_from_mu(&sp(&[0.0, 0.0])).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(lambda_from_mu(&sp(&[3.0; 4])).unwrap().values(), &[1.0; 4]);
    }

    #[test]
    fn mu_of_simple_matrices() {
        let (mu, _) = mu_of_matrix(&HermitianMatrix::identity(3)).unwrap();
        for m in mu.values() {
            assert!((m - 2.0).abs() < 1e-14);
        }
        let (mu, dec) = mu_of_matrix(&HermitianMatrix::diagonal(&[2.0, 3.0, 1.0])).unwrap();
        let expected = [5.0, 4.0, 3.0];
        for (m, e) in mu.values().iter().zip(expected) {
            assert!((m - e).abs() < 1e-14);
        }
        assert_eq!(dec.eigenvalues.dim(), 3);
    }

    #[test]
    fn operator_values_at_identity() {
        let a = HermitianMatrix::identity(3);
        let root = OperatorParams::new(3, 2, OperatorForm::Root, 0.0).unwrap();
        assert!((f_value(&a, &root).unwrap() - 12f64.sqrt()).abs() < 1e-13);
        let log = OperatorParams::new(3, 3, OperatorForm::Log, 0.0).unwrap();
        assert!((f_value(&a, &log).unwrap() - 8f64.ln()).abs() < 1e-13);

        let g = f_gradient(&a, &root).unwrap();
        for i in 0..3 {
            assert!((g.get(i, i).re - 4.0 / 12f64.sqrt()).abs() < 1e-13);
        }
        let g = f_gradient(&a, &log).unwrap();
        for i in 0..3 {
            assert!((g.get(i, i).re - 1.0).abs() < 1e-13);
        }
        assert!(trace_identity_residual(&a, &root).unwrap() < 1e-13);
        assert!(trace_identity_residual(&a, &log).unwrap() < 1e-13);
    }

    #[test]
    fn k_equal_one_is_linear() {
        let a = HermitianMatrix::diagonal(&[1.0, 2.0, 3.0]);
        let p = OperatorParams::new(3, 1, OperatorForm::Root, 0.0).unwrap();
        // S_1(μ) = (n−1) tr A
        assert!((f_value(&a, &p).unwrap() - 12.0).abs() < 1e-13);
        assert!(trace_identity_residual(&a, &p).unwrap() < 1e-12);
        let r = ellipticity_ratio(&a, &p).unwrap();
        assert!((r.ratio - 1.0 / 3.0).abs() < 1e-14);
        assert!(r.closed_form_rel_err < 1e-14);
        let h = HermitianMatrix::diagonal(&[0.3, -0.2, 0.1]);
        assert!(concavity_probe(&a, &h, &p, 0.5).unwrap().abs() < 1e-10);
    }

    #[test]
    fn ellipticity_at_identity_and_errors() {
        let a = HermitianMatrix::identity(3);
        let p = OperatorParams::new(3, 2, OperatorForm::Root, 0.0).unwrap();
        let r = ellipticity_ratio(&a, &p).unwrap();
        assert!((r.ratio - 1.0 / 3.0).abs() < 1e-14);
        let p = OperatorParams::new(3, 3, OperatorForm::Root, 0.0).unwrap();
        assert!(matches!(ellipticity_ratio(&a, &p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn concavity_along_identity_is_linear() {
        let a = HermitianMatrix::identity(3);
        let p = OperatorParams::new(3, 2, OperatorForm::Root, 0.0).unwrap();
        let d = concavity_probe(&a, &HermitianMatrix::identity(3), &p, 0.5).unwrap();
        assert!(d.abs() < 1e-9, "{d}");
    }

    #[test]
    fn params_validation() {
        assert!(OperatorParams::new(3, 2, OperatorForm::Log, 0.0).is_err());
        assert!(OperatorParams::new(1, 1, OperatorForm::Root, 0.0).is_err());
        assert!(OperatorParams::new(3, 4, OperatorForm::Root, 0.0).is_err());
        assert!(OperatorParams::new(3, 2, OperatorForm::Root, -1.0).is_err());
        assert_eq!(OperatorParams::natural(3, 3, 1.0).unwrap().form, OperatorForm::Log);
    }

    #[test]
    fn inadmissible_point_carries_mu() {
        let a = HermitianMatrix::diagonal(&[-1.0, -1.0, -1.0]);
        let p = OperatorParams::new(3, 1, OperatorForm::Root, 0.0).unwrap();
        match f_value(&a, &p) {
            Err(Error::InadmissiblePoint { mu }) => assert_eq!(mu.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
