//! Algebraic invariants of the symmetric functions, the operator and the
//! explicit fundamental and subsolution profiles.

use green_core::fundamental::{gamma_exponents, phi_eval, radial_hessian, radial_mu, radial_sk, RadialPoint};
use green_core::hessian::{
    concavity_probe, ellipticity_ratio, f_gradient, f_value, mu_of_matrix, spectral_gradient, trace_identity_residual,
    HermitianMatrix, OperatorForm, OperatorParams,
};
use green_core::sampling::{admissible_matrix, cone_sample, random_hermitian, random_unitary, rng_from_seed};
use green_core::subsolution::{ball_subsolution, to_complex, Field};
use green_core::symfun::{elementary_symmetric, esym, identity_suite, in_gamma_k, partial_symmetric, Spectrum};
use proptest::prelude::*;

/// S_k by summing products over all k-subsets.
fn brute_esym(v: &[f64], k: usize) -> f64 {
    let n = v.len();
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| v[i]).product::<f64>())
        .sum()
}

fn nk() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=6).prop_flat_map(|n| (Just(n), 1..=n))
}

fn params(n: usize, k: usize, log: bool) -> OperatorParams {
    let form = if log && k == n { OperatorForm::Log } else { OperatorForm::Root };
    OperatorParams::new(n, k, form, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn recurrence_matches_enumeration(v in prop::collection::vec(-3.0f64..3.0, 1..=8), k in 0usize..=8) {
        let k = k.min(v.len());
        let scale = v.iter().map(|x| x.abs()).fold(1.0, f64::max).powi(k as i32) * 256.0;
        prop_assert!((esym(&v, k) - brute_esym(&v, k)).abs() <= 1e-13 * scale);
    }

    #[test]
    fn identities_on_cone_samples((n, k) in nk(), seed in any::<u64>()) {
        let mu = cone_sample(&mut rng_from_seed(seed), n, k);
        let rep = identity_suite(&mu, k).unwrap();
        prop_assert!(rep.splitting_residual <= 1e-10 * (1.0 + rep.s_k.abs()));
        let sk1 = elementary_symmetric(&mu, k - 1);
        prop_assert!(rep.partial_sum_residual <= 1e-10 * (1.0 + sk1.abs()));
        // Γ_k is nested.
        for j in 1..=k {
            prop_assert!(in_gamma_k(&mu, j).unwrap());
        }
        // S_{k−1;i} increases as μ_i decreases.
        let sorted = mu.sorted_descending();
        let parts: Vec<f64> = (0..n).map(|i| partial_symmetric(&sorted, k, i).unwrap()).collect();
        for w in parts.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12 * w[1].abs().max(1.0));
        }
    }

    #[test]
    fn partials_match_finite_differences((n, k) in nk(), seed in any::<u64>()) {
        let mu = cone_sample(&mut rng_from_seed(seed), n, k);
        let v = mu.values();
        for i in 0..n {
            let h = 1e-5 * v[i].abs().max(1.0);
            let shift = |d: f64| {
                let mut w = v.to_vec();
                w[i] += d;
                elementary_symmetric(&Spectrum::new(w).unwrap(), k)
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let exact = partial_symmetric(&mu, k, i).unwrap();
            let scale = exact.abs().max(elementary_symmetric(&mu, k).abs() / v[i].abs().max(1.0)).max(1e-3);
            prop_assert!((fd - exact).abs() <= 1e-6 * scale, "i={i}: fd {fd} vs {exact}");
        }
    }

    #[test]
    fn operator_invariants(n in 2usize..=4, kk in 0usize..4, log in any::<bool>(), seed in any::<u64>()) {
        let k = 1 + kk % n;
        let p = params(n, k, log);
        let mut rng = rng_from_seed(seed);
        let (a, _) = admissible_matrix(&mut rng, n, k);
        let f = f_value(&a, &p).unwrap();
        let u = random_unitary(&mut rng, n);
        let rotated = a.conjugate_by(&u).unwrap();
        prop_assert!((f_value(&rotated, &p).unwrap() - f).abs() <= 1e-10 * f.abs().max(1.0));
        if p.form == OperatorForm::Root {
            let t = 2.7;
            prop_assert!((f_value(&a.scale(t), &p).unwrap() - t * f).abs() <= 1e-12 * (t * f).abs().max(1e-300) * 10.0);
        }
        // Positive definite gradient.
        let g = f_gradient(&a, &p).unwrap();
        let (mu_g, _) = mu_of_matrix(&g).unwrap();
        let smallest = mu_g.values().iter().sum::<f64>() / (n - 1) as f64
            - mu_g.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(smallest > 0.0);
        prop_assert!(trace_identity_residual(&a, &p).unwrap() <= 1e-8 * f.abs().max(1.0));
        // dF = tr(G dA) along a random direction.
        let e = random_hermitian(&mut rng, n);
        let step = 1e-6 * a.frobenius_norm().max(1.0);
        if let (Ok(fp), Ok(fm)) = (f_value(&a.add_scaled(&e, step), &p), f_value(&a.add_scaled(&e, -step), &p)) {
            let fd = (fp - fm) / (2.0 * step);
            let exact = g.trace_product(&e);
            prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(g.frobenius_norm() * e.frobenius_norm() * 1e-3));
        }
    }

    #[test]
    fn concave_along_lines(n in 2usize..=4, kk in 0usize..4, log in any::<bool>(), seed in any::<u64>()) {
        let k = 1 + kk % n;
        let p = params(n, k, log);
        let mut rng = rng_from_seed(seed);
        let (a, mu) = admissible_matrix(&mut rng, n, k);
        let h = random_hermitian(&mut rng, n);
        // Keep the segment inside the cone: shrink until every point is admissible.
        let mut t = 0.25 * mu.values().iter().map(|m| m.abs()).fold(f64::INFINITY, f64::min).max(1e-3) / h.frobenius_norm();
        let mut probe = concavity_probe(&a, &h, &p, t);
        while probe.is_err() && t > 1e-12 {
            t *= 0.5;
            probe = concavity_probe(&a, &h, &p, t);
        }
        let second = probe.unwrap();
        let f = f_value(&a, &p).unwrap();
        let scale = 1.0 + f.abs() * (h.frobenius_norm() / a.frobenius_norm()).powi(2);
        // Cancellation in the second difference with step t/4.
        let roundoff = 1e-13 * f.abs().max(1.0) * 16.0 / (t * t);
        prop_assert!(second <= 1e-6 * scale + roundoff, "second difference {second}");
    }

    #[test]
    fn ellipticity_floor(n in 3usize..=4, kk in 0usize..3, seed in any::<u64>()) {
        let k = 1 + kk % (n - 1);
        let p = params(n, k, false);
        let (a, _) = admissible_matrix(&mut rng_from_seed(seed), n, k);
        let rep = ellipticity_ratio(&a, &p).unwrap();
        prop_assert!(rep.ratio >= 0.01);
        prop_assert!(rep.closed_form_rel_err <= 1e-10);
    }

    #[test]
    fn radial_sk_is_esym_of_radial_mu(n in 2usize..=6, kk in 0usize..6, s in 1e-3f64..10.0, d1 in -5.0f64..5.0, d2 in -5.0f64..5.0) {
        let k = 1 + kk % n;
        let pt = RadialPoint::new(s, 0.0, d1, d2).unwrap();
        let closed = radial_sk(&pt, n, k);
        let general = elementary_symmetric(&radial_mu(&pt, n), k);
        let (m, last) = pt.mu_pair(n);
        let scale = m.abs().max(last.abs()).max(1e-12).powi(k as i32) * 64.0;
        prop_assert!((closed - general).abs() <= 1e-12 * scale);
    }
}

#[test]
fn fundamental_solutions_are_homogeneous_and_closed_cone() {
    for n in 2..=6 {
        for k in 1..=n {
            for b in gamma_exponents(n, k).unwrap().branches {
                for i in 0..50 {
                    let s = 10f64.powf(-4.0 + 6.0 * i as f64 / 49.0);
                    let pt = phi_eval(b.gamma, s).unwrap();
                    let bound = 1e-10 * s.powf(-(k as f64) * (b.gamma / 2.0 + 1.0));
                    // Scale the zero by the size of the cancelling terms.
                    let (m, last) = pt.mu_pair(n);
                    let size = green_core::fundamental::radial_sk_from_pair(m.abs(), last.abs(), n, k).abs();
                    if !size.is_finite() {
                        continue;
                    }
                    assert!(radial_sk(&pt, n, k).abs() <= bound.max(1e-10 * size), "n={n} k={k} γ={} s={s}", b.gamma);
                    if b.admissible {
                        let mu = radial_mu(&pt, n);
                        let scale = m.abs().max(last.abs()).max(1.0);
                        for j in 1..=k {
                            assert!(elementary_symmetric(&mu, j) >= -1e-12 * scale.powi(j as i32));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn dense_hessian_spectrum_matches_radial_mu() {
    let mut rng = rng_from_seed(7);
    for n in 2..=6 {
        for k in 1..=n {
            for b in gamma_exponents(n, k).unwrap().branches {
                for _ in 0..100 {
                    let z: Vec<f64> = (0..2 * n).map(|_| green_core::sampling::gaussian(&mut rng)).collect();
                    let s: f64 = z.iter().map(|v| v * v).sum();
                    let pt = phi_eval(b.gamma, s).unwrap();
                    let h = radial_hessian(pt.dphi, pt.d2phi, &to_complex(&z));
                    let (mu, _) = mu_of_matrix(&h).unwrap();
                    let mut got = mu.into_inner();
                    let mut want = radial_mu(&pt, n).into_inner();
                    got.sort_by(f64::total_cmp);
                    want.sort_by(f64::total_cmp);
                    let scale = want.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                    for (g, w) in got.iter().zip(&want) {
                        assert!((g - w).abs() <= 1e-9 * scale);
                    }
                }
            }
        }
    }
}

#[test]
fn ball_subsolutions_on_admissible_branches() {
    let mut rng = rng_from_seed(11);
    for n in 2..=5 {
        for k in 1..=n {
            for b in gamma_exponents(n, k).unwrap().branches.into_iter().filter(|b| b.admissible) {
                let p = params(n, k, true);
                let radius = 1.5;
                let sub = ball_subsolution(radius, b.gamma, &p, 0.7).unwrap();
                for _ in 0..1000 {
                    let dir: Vec<f64> = (0..2 * n).map(|_| green_core::sampling::gaussian(&mut rng)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let r = radius * (0.02 + 0.98 * rand_unit(&mut rng));
                    let x: Vec<f64> = dir.iter().map(|v| v * r / norm).collect();
                    let (mu, _) = mu_of_matrix(&sub.complex_hessian(&x)).unwrap();
                    let top = mu.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    for j in 1..=k {
                        let sj = elementary_symmetric(&mu, j);
                        assert!(sj > -1e-12 * top.powi(j as i32), "n={n} k={k} γ={} r={r} S_{j} = {sj}", b.gamma);
                    }
                    let sk = elementary_symmetric(&mu, k);
                    assert!(sk >= sub.rhs_floor - 1e-12 * top.powi(k as i32), "S_k = {sk}");
                    if i_boundary(&mut rng) {
                        let y: Vec<f64> = dir.iter().map(|v| v * radius / norm).collect();
                        assert!((sub.value(&y) - 0.7).abs() <= 1e-10);
                    }
                }
                // −|z|^{−γ} dominates near the puncture.
                let ratio = |r: f64| (sub.value_at_radius(r) - 0.7) / -r.powf(-b.gamma);
                assert!((ratio(1e-3) - 1.0).abs() < (ratio(1e-1) - 1.0).abs() + 1e-12);
                assert!((ratio(1e-4) - 1.0).abs() < 1e-2);
            }
        }
    }
}

fn rand_unit(rng: &mut green_core::sampling::SampleRng) -> f64 {
    use rand::Rng;
    rng.random::<f64>()
}

fn i_boundary(rng: &mut green_core::sampling::SampleRng) -> bool {
    use rand::Rng;
    rng.random_bool(0.1)
}

#[test]
fn schur_order_of_spectral_gradient() {
    let mut rng = rng_from_seed(3);
    for n in 2..=6 {
        for k in 1..=n {
            let p = params(n, k, false);
            for _ in 0..200 {
                let mu = cone_sample(&mut rng, n, k);
                // λ descending ⇔ μ ascending.
                let asc = mu.sorted_ascending();
                let fi = spectral_gradient(asc.values(), &p).unwrap();
                for w in fi.windows(2) {
                    assert!(w[0] <= w[1] + 1e-12 * w[1].abs().max(1.0));
                }
            }
        }
    }
    let _ = HermitianMatrix::identity(2);
}
