//! The property suite behind `verify` and `fundamental-check`.

use green_core::fundamental::{gamma_exponents, phi_eval, radial_hessian, radial_mu, radial_sk, radial_sk_from_pair, RadialPoint};
use green_core::hessian::{
    concavity_probe, ellipticity_ratio, f_value, f_value_and_gradient, mu_of_matrix, spectral_gradient,
    trace_identity_residual, HermitianMatrix, OperatorForm, OperatorParams,
};
use green_core::sampling::{admissible_matrix, cone_sample, gaussian, random_hermitian, rng_from_seed, SampleRng};
use green_core::subsolution::to_complex;
use green_core::symfun::{esym, esym_without, identity_suite_with, SymKernel};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const IDENTITY_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const TRACE_TOL: f64 = 1e-8;
pub const CONCAVITY_TOL: f64 = 1e-6;
pub const ELLIPTICITY_FLOOR: f64 = 0.01;
pub const CLOSED_FORM_TOL: f64 = 1e-10;
pub const FUNDAMENTAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub count: usize,
    pub failures: usize,
    /// Largest observed value of the checked quantity (a residual, or the
    /// smallest ratio for floor checks).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Up to 5 failing cases.
    pub failing_cases: Vec<String>,
}

impl Check {
    fn new(name: &str, tolerance: f64, worst_init: f64) -> Self {
        Check {
            name: name.into(),
            count: 0,
            failures: 0,
            worst: worst_init,
            tolerance,
            passed: true,
            failing_cases: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, case: impl FnOnce() -> String) {
        self.count += 1;
        if !ok {
            self.failures += 1;
            self.passed = false;
            if self.failing_cases.len() < 5 {
                self.failing_cases.push(case());
            }
        }
    }

    fn upper(&mut self, value: f64, case: impl FnOnce() -> String) {
        if value.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(value);
        }
        self.record(value <= self.tolerance, case);
    }

    fn floor(&mut self, value: f64, case: impl FnOnce() -> String) {
        self.worst = self.worst.min(value);
        self.record(value >= self.tolerance, case);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_max: usize,
    pub samples: usize,
    pub seed: u64,
    pub canary: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n_max: 6,
            samples: 10_000,
            seed: 42,
            canary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport<C> {
    pub config: C,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// The S_k recurrence with the sign of the update flipped.
pub fn corrupted_esym(values: &[f64], k: usize) -> f64 {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &x in values {
        for j in (1..=k).rev() {
            e[j] -= x * e[j - 1];
        }
    }
    e[k]
}

fn pairs(n_min: usize, n_max: usize, k_limit: impl Fn(usize) -> usize) -> Vec<(usize, usize)> {
    (n_min..=n_max).flat_map(|n| (1..=k_limit(n)).map(move |k| (n, k))).collect()
}

fn params_for(n: usize, k: usize, rng: &mut SampleRng) -> OperatorParams {
    let form = if k == n && rng.random_bool(0.5) { OperatorForm::Log } else { OperatorForm::Root };
    OperatorParams::new(n, k, form, 0.0).expect("valid (n, k)")
}

/// Identities, Schur monotonicity, linearization, concavity and uniform
/// ellipticity on random cone samples, plus the fundamental-solution
/// checks.
pub fn run_verify(cfg: &VerifyConfig) -> SuiteReport<VerifyConfig> {
    let kernel: SymKernel = if cfg.canary { corrupted_esym } else { esym };
    let mut rng = rng_from_seed(cfg.seed);
    let mut checks = identity_checks(cfg, kernel, &mut rng);
    checks.extend(operator_checks(cfg.samples / 10, &mut rng));
    checks.extend(ellipticity_checks(cfg.samples * 10, &mut rng));
    checks.extend(fundamental_checks(cfg.n_max, 50, cfg.samples / 100, &mut rng));
    let passed = checks.iter().all(|c| c.passed);
    SuiteReport {
        config: cfg.clone(),
        passed,
        checks,
    }
}

fn identity_checks(cfg: &VerifyConfig, kernel: SymKernel, rng: &mut SampleRng) -> Vec<Check> {
    let mut p04 = Check::new("identity-splitting", IDENTITY_TOL, 0.0);
    let mut p02 = Check::new("identity-partial-sum", IDENTITY_TOL, 0.0);
    let mut ratios = Check::new("identity-ratios-positive", 0.0, f64::INFINITY);
    let mut schur_partials = Check::new("schur-partials-ordered", 0.0, 0.0);
    let mut schur_gradient = Check::new("schur-gradient-ordered", 0.0, 0.0);
    let all = pairs(2, cfg.n_max.max(2), |n| n);
    for i in 0..cfg.samples {
        let (n, k) = all[i % all.len()];
        let mu = cone_sample(rng, n, k);
        let scale_k = 1.0 + esym(mu.values(), k).abs();
        match identity_suite_with(kernel, &mu, k) {
            Ok(rep) => {
                p04.upper(rep.splitting_residual / scale_k, || format!("{:?} k={k}", mu.values()));
                let scale_p02 = 1.0 + (n - k + 1) as f64 * esym(mu.values(), k - 1).abs();
                p02.upper(rep.partial_sum_residual / scale_p02, || format!("{:?} k={k}", mu.values()));
                let r = rep.newton_maclaurin_ratio.unwrap_or(1.0).min(rep.kth_partial_ratio);
                ratios.floor(if r > 0.0 { r } else { -1.0 }, || format!("{:?} k={k}", mu.values()));
            }
            Err(e) => {
                let msg = format!("{:?} k={k}: {e}", mu.values());
                p04.worst = f64::NAN;
                p04.record(false, || msg.clone());
                p02.record(false, || msg.clone());
                ratios.record(false, || msg);
            }
        }
        // S_{k−1;i} nondecreasing along μ sorted descending.
        let sorted = mu.sorted_descending();
        let v = sorted.values();
        let partials: Vec<f64> = (0..n).map(|j| esym_without(v, k - 1, j)).collect();
        let scale = partials.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let worst = partials.windows(2).map(|w| (w[0] - w[1]) / scale).fold(f64::NEG_INFINITY, f64::max);
        schur_partials.upper(worst - 1e-12, || format!("{v:?} k={k}"));
        // μ descending means λ ascending, so f_i ≤ f_j for λ_i ≥ λ_j makes f
        // nonincreasing along this order.
        let p = OperatorParams::new(n, k, OperatorForm::Root, 0.0).expect("valid");
        if let Ok(f) = spectral_gradient(v, &p) {
            let fscale = f.iter().fold(1e-300f64, |m, x| m.max(x.abs()));
            let w = f.windows(2).map(|w| (w[1] - w[0]) / fscale).fold(f64::NEG_INFINITY, f64::max);
            schur_gradient.upper(w - 1e-12, || format!("{v:?} k={k}"));
        }
    }
    for c in [&mut schur_partials, &mut schur_gradient] {
        c.worst = c.worst.max(0.0);
    }
    vec![p04, p02, ratios, schur_partials, schur_gradient]
}

/// Directional derivative of f at `a` along `e` by central differences.
fn fd_directional(a: &HermitianMatrix, e: &HermitianMatrix, p: &OperatorParams, step: f64) -> Option<f64> {
    let fp = f_value(&a.add_scaled(e, step), p).ok()?;
    let fm = f_value(&a.add_scaled(e, -step), p).ok()?;
    Some((fp - fm) / (2.0 * step))
}

fn unit_direction(n: usize, i: usize, j: usize, imaginary: bool) -> HermitianMatrix {
    HermitianMatrix::from_upper(n, |r, c| {
        if (r, c) != (i, j) {
            Complex64::new(0.0, 0.0)
        } else if i == j {
            Complex64::new(1.0, 0.0)
        } else if imaginary {
            Complex64::new(0.0, 1.0)
        } else {
            Complex64::new(1.0, 0.0)
        }
    })
}

fn operator_checks(count: usize, rng: &mut SampleRng) -> Vec<Check> {
    let mut grad = Check::new("gradient-vs-finite-differences", GRADIENT_TOL, 0.0);
    let mut trace = Check::new("trace-identity", TRACE_TOL, 0.0);
    let mut conc = Check::new("concavity", CONCAVITY_TOL, f64::NEG_INFINITY);
    let all = pairs(2, 4, |n| n);
    for s in 0..count {
        let (n, k) = all[s % all.len()];
        let p = params_for(n, k, rng);
        let (a, _) = admissible_matrix(rng, n, k);
        let (value, g) = match f_value_and_gradient(&a, &p) {
            Ok(v) => v,
            Err(e) => {
                grad.record(false, || format!("n={n} k={k}: {e}"));
                continue;
            }
        };
        let gscale = g.max_abs_entry().max(1e-300);
        let step = 1e-6 * (1.0 + a.max_abs_entry());
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                for imaginary in [false, true] {
                    if i == j && imaginary {
                        continue;
                    }
                    let e = unit_direction(n, i, j, imaginary);
                    let exact = g.trace_product(&e);
                    match fd_directional(&a, &e, &p, step) {
                        Some(fd) => worst = worst.max((fd - exact).abs() / gscale),
                        None => worst = f64::INFINITY,
                    }
                }
            }
        }
        grad.upper(worst, || format!("n={n} k={k} {:?}", p.form));
        let scale = match p.form {
            OperatorForm::Root => 1.0 + value.abs(),
            OperatorForm::Log => n as f64,
        };
        let t = trace_identity_residual(&a, &p).map(|r| r / scale).unwrap_or(f64::INFINITY);
        trace.upper(t, || format!("n={n} k={k} {:?}", p.form));

        // Concavity along a random direction, scaled to stay inside the cone.
        let h = random_hermitian(rng, n);
        let mut t_max = 0.25 * a.frobenius_norm() / h.frobenius_norm().max(1e-300);
        let probe = loop {
            match concavity_probe(&a, &h, &p, t_max) {
                Ok(v) => break Some(v),
                Err(_) if t_max > 1e-8 => t_max *= 0.5,
                Err(_) => break None,
            }
        };
        if let Some(v) = probe {
            // f″ along H scales like |f|·|H|²/|A|².
            let ratio = h.frobenius_norm() / a.frobenius_norm().max(1e-300);
            let scale = 1.0 + value.abs() * ratio * ratio;
            conc.upper(v / scale, || format!("n={n} k={k} {:?} t_max={t_max}", p.form));
        }
    }
    if conc.count == 0 {
        conc.worst = 0.0;
    }
    vec![grad, trace, conc]
}

fn ellipticity_checks(count: usize, rng: &mut SampleRng) -> Vec<Check> {
    let mut c = Check::new("uniform-ellipticity", ELLIPTICITY_FLOOR, f64::INFINITY);
    let mut closed = Check::new("closed-form-trace", CLOSED_FORM_TOL, 0.0);
    let all = pairs(2, 4, |n| n - 1);
    for s in 0..count {
        let (n, k) = all[s % all.len()];
        let p = OperatorParams::new(n, k, OperatorForm::Root, 0.0).expect("valid");
        let mu = cone_sample(rng, n, k);
        let lambda: Vec<f64> = green_core::hessian::lambda_from_mu(&mu).expect("n >= 2").into_inner();
        let a = HermitianMatrix::diagonal(&lambda);
        match ellipticity_ratio(&a, &p) {
            Ok(rep) => {
                c.floor(rep.ratio, || format!("{:?} k={k}", mu.values()));
                closed.upper(rep.closed_form_rel_err, || format!("{:?} k={k}", mu.values()));
            }
            Err(e) => {
                c.record(false, || format!("{:?} k={k}: {e}", mu.values()));
                closed.record(false, || format!("{:?} k={k}: {e}", mu.values()));
            }
        }
    }
    if c.count == 0 {
        c.worst = 1.0;
    }
    vec![c, closed]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundamentalConfig {
    pub n_max: usize,
    pub radii: usize,
    pub seed: u64,
}

/// `|S_k(μ[Φ])|` on log-spaced radii for every branch, and the dense
/// Hessian cross-check at random points.
pub fn fundamental_checks(n_max: usize, radii: usize, dense_points: usize, rng: &mut SampleRng) -> Vec<Check> {
    let mut resid = Check::new("fundamental-residual", FUNDAMENTAL_TOL, 0.0);
    let mut dense = Check::new("fundamental-dense-hessian", 1e-9, 0.0);
    for n in 2..=n_max.max(2) {
        for k in 1..=n {
            let Ok(table) = gamma_exponents(n, k) else { continue };
            for b in &table.branches {
                for i in 0..radii {
                    let r = 10f64.powf(-2.0 + 3.0 * i as f64 / (radii.max(2) - 1) as f64);
                    let s = r * r;
                    // S_k is homogeneous of degree k in (φ′, φ″); rescaling by
                    // s^{γ/2+1} keeps large γ from overflowing. The zero is then
                    // measured against the two terms that cancel in it.
                    let pt = phi_eval(b.gamma, s).expect("s > 0");
                    let c = s.powf(b.gamma / 2.0 + 1.0);
                    let scaled = RadialPoint { dphi: pt.dphi * c, d2phi: pt.d2phi * c, ..pt };
                    let (m, last) = scaled.mu_pair(n);
                    let terms = radial_sk_from_pair(m.abs(), last.abs(), n, k).abs().max(1.0);
                    let v = radial_sk(&scaled, n, k).abs() / terms;
                    resid.upper(v, || format!("n={n} k={k} gamma={} s={s}", b.gamma));
                }
                for _ in 0..dense_points {
                    let z: Vec<f64> = (0..2 * n).map(|_| gaussian(rng)).collect();
                    let zc = to_complex(&z);
                    let s: f64 = z.iter().map(|v| v * v).sum();
                    let pt = phi_eval(b.gamma, s).expect("s > 0");
                    let h = radial_hessian(pt.dphi, pt.d2phi, &zc);
                    let mut expected = radial_mu(&pt, n).into_inner();
                    expected.sort_by(f64::total_cmp);
                    let v = match mu_of_matrix(&h) {
                        Ok((mu, _)) => {
                            let mut got = mu.into_inner();
                            got.sort_by(f64::total_cmp);
                            let scale = expected.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                            got.iter().zip(&expected).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max)
                        }
                        Err(_) => f64::INFINITY,
                    };
                    dense.upper(v, || format!("n={n} k={k} gamma={}", b.gamma));
                }
            }
        }
    }
    vec![resid, dense]
}

pub fn run_fundamental_check(cfg: &FundamentalConfig) -> SuiteReport<FundamentalConfig> {
    let mut rng = rng_from_seed(cfg.seed);
    let checks = fundamental_checks(cfg.n_max, cfg.radii, 0, &mut rng);
    let passed = checks.iter().all(|c| c.passed);
    SuiteReport {
        config: cfg.clone(),
        passed,
        checks: checks.into_iter().filter(|c| c.count > 0 || c.name == "fundamental-residual").collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let rep = run_verify(&VerifyConfig { samples: 600, ..Default::default() });
        for c in &rep.checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn empty_suite_passes() {
        let rep = run_verify(&VerifyConfig { samples: 0, ..Default::default() });
        assert!(rep.passed);
        assert!(rep.checks.iter().filter(|c| c.name.starts_with("identity")).all(|c| c.count == 0));
    }

    #[test]
    fn canary_fails() {
        let rep = run_verify(&VerifyConfig { samples: 200, canary: true, ..Default::default() });
        assert!(!rep.passed);
    }
}
