use green_core::fundamental::gamma_exponents;
use green_core::hessian::{OperatorForm, OperatorParams};
use green_core::radial::{solve_radial, InnerData, RadialInit, RadialProblem, RadialSolution};

fn solve(n: usize, k: usize, gamma: f64, eps: f64, mesh: usize) -> RadialSolution {
    solve_with_rhs(n, k, gamma, eps, eps, mesh)
}

fn solve_with_rhs(n: usize, k: usize, gamma: f64, rhs: f64, eps: f64, mesh: usize) -> RadialSolution {
    let p = OperatorParams::natural(n, k, rhs).unwrap();
    let pr = RadialProblem::on_ball(&p, gamma, 1.0, eps, 0.0, InnerData::Subsolution, mesh).unwrap();
    solve_radial(&pr, &RadialInit::Auto).unwrap()
}

fn admissible_gamma(n: usize, k: usize) -> f64 {
    gamma_exponents(n, k).unwrap().branches.iter().find(|b| b.admissible).unwrap().gamma
}

#[test]
fn second_order_in_the_mesh() {
    let probes = [0.3, 0.5, 0.7, 0.9];
    for (n, k) in [(3, 2), (3, 3), (4, 3)] {
        let gamma = admissible_gamma(n, k);
        let reference = solve(n, k, gamma, 0.2, 4096);
        let err = |m: usize| {
            let sol = solve(n, k, gamma, 0.2, m);
            probes
                .iter()
                .map(|&r| (sol.value_at_radius(r).unwrap() - reference.value_at_radius(r).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(128), err(256), err(512));
        assert!(e1 / e2 >= 3.0 && e2 / e3 >= 3.0, "n={n} k={k}: {e1:e} {e2:e} {e3:e}");
    }
}

#[test]
fn laplacian_case_matches_closed_form() {
    // S_1 = (n−1)(nφ′ + sφ″) = ε is solved by A + B s^{1−n} + ε s/(n(n−1)).
    for n in 2..=5 {
        let eps = 0.15;
        let (inner, outer) = (-3.0, 0.5);
        let p = OperatorParams::new(n, 1, OperatorForm::Root, eps).unwrap();
        let pr = RadialProblem::new(&p, (2 * n - 2) as f64, 1.0, eps, inner, outer, 512).unwrap();
        let sol = solve_radial(&pr, &RadialInit::Interpolant).unwrap();
        assert_eq!(sol.newton_iters, 1);
        let c = eps / (n * (n - 1)) as f64;
        let h = |s: f64| s.powi(1 - n as i32);
        let (s0, s1) = (eps * eps, 1.0);
        let b = (outer - inner - c * (s1 - s0)) / (h(s1) - h(s0));
        let a = outer - b * h(s1) - c * s1;
        for r in [0.16, 0.2, 0.4, 0.8, 1.0] {
            let exact = a + b * h(r * r) + c * r * r;
            let got = sol.value_at_radius(r).unwrap();
            assert!((got - exact).abs() <= 1e-5 * (1.0 + exact.abs()), "n={n} r={r}: {got} vs {exact}");
        }
        let again = solve_radial(&pr, &RadialInit::Previous(sol)).unwrap();
        assert!(again.newton_iters <= 1);
    }
}

#[test]
fn increasing_as_the_hole_shrinks() {
    let radii = [0.3, 0.45, 0.6, 0.8, 0.95];
    for (n, k) in [(3, 1), (3, 2), (3, 3), (4, 2)] {
        let gamma = admissible_gamma(n, k);
        let runs: Vec<Vec<f64>> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&eps| {
                let sol = solve_with_rhs(n, k, gamma, 0.2, eps, 512);
                radii.iter().map(|&r| sol.value_at_radius(r).unwrap()).collect()
            })
            .collect();
        for w in runs.windows(2) {
            for (coarse, fine) in w[0].iter().zip(&w[1]) {
                assert!(*fine >= coarse - 1e-8, "n={n} k={k}: {fine} < {coarse}");
            }
        }
    }
}

#[test]
fn generic_branch_request_still_converges() {
    // n = 3, k = 2 with γ = 10: the data are not admissible, the solver
    // must still return an admissible discrete solution.
    let sol = solve(3, 2, 10.0, 0.2, 512);
    assert!(sol.admissible);
    assert!(sol.newton_iters <= 30);
    assert!(sol.residual_norm <= 1e-10 * 1.2);
}

#[test]
fn warm_start_from_previous_solution() {
    let sol = solve(3, 2, 2.0, 0.1, 256);
    let again = solve_radial(&sol.problem.clone(), &RadialInit::Previous(sol)).unwrap();
    assert!(again.newton_iters <= 1);
}
