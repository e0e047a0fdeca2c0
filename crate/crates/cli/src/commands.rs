//! Command bodies. Each returns whether its diagnostics passed; reports are
//! pretty-printed JSON with fields in declaration order and no timings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use green_core::diagnostics::{
    fit_rate, log_radii, scaling_diagnostic, sphere_profile, ProfileSource, Quantity, RateFit, ScalingReport,
};
use green_core::fundamental::{gamma_exponents, GammaTable};
use green_core::grid::{plane_csv, solve_grid, solve_poisson, write_dump, Grid4, GridField, GridProblem, NodeClass, SolveReport};
use green_core::hessian::{HermitianMatrix, OperatorParams};
use green_core::radial::{
    green_limit, homogeneous_value, solve_radial, GreenLimitConfig, GreenLimitReport, InnerData, RadialInit,
    RadialProblem, RadialSolution,
};
use green_core::subsolution::{ball_subsolution_on_annulus, norm_sq, BallSubsolution, DomainSpec, Field};
use serde::Serialize;

use crate::config::{
    config_err, failure, CliError, GridData, GridInit, GridSolveConfig, RadialGreenConfig, RadialSolveConfig,
    RatesConfig,
};
use crate::verify::{run_fundamental_check, run_verify, FundamentalConfig, SuiteReport, VerifyConfig};

pub const ORACLE_TOL: f64 = 1e-4;
pub const SLOPE_TOL: f64 = 0.05;

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| failure(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl NamedCheck {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        NamedCheck {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    fn flag(name: &str, ok: bool) -> Self {
        NamedCheck {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            passed: ok,
        }
    }
}

pub fn cmd_gamma(n: usize, k: usize) -> Result<GammaTable, CliError> {
    gamma_exponents(n, k).map_err(config_err)
}

pub fn gamma_text(t: &GammaTable) -> String {
    let mut out = format!("n = {}, k = {}\nbranch      gamma       admissible\n", t.n, t.k);
    for b in &t.branches {
        out.push_str(&format!("{:<11} {:<11} {}\n", format!("{:?}", b.branch), b.gamma, b.admissible));
    }
    if t.branches.is_empty() {
        out.push_str("(none)\n");
    }
    for d in &t.diagnostics {
        out.push_str(&format!("note: {d}\n"));
    }
    out
}

pub fn cmd_verify(cfg: &VerifyConfig, out: Option<&Path>) -> Result<(SuiteReport<VerifyConfig>, String), CliError> {
    if cfg.n_max < 2 {
        return Err(config_err("n_max must be >= 2"));
    }
    let rep = run_verify(cfg);
    let json = to_json(&rep);
    if let Some(p) = out {
        write_file(p, json.as_bytes())?;
    }
    Ok((rep, json))
}

pub fn cmd_fundamental_check(cfg: &FundamentalConfig) -> Result<(SuiteReport<FundamentalConfig>, String), CliError> {
    if cfg.n_max < 2 || cfg.radii < 2 {
        return Err(config_err("n_max and radii must be >= 2"));
    }
    let rep = run_fundamental_check(cfg);
    let json = to_json(&rep);
    Ok((rep, json))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialSolveSummary {
    pub config: RadialSolveConfig,
    pub inner_value: f64,
    pub newton_iters: usize,
    pub residual_norm: f64,
    pub admissible: bool,
}

pub fn cmd_radial_solve(cfg: RadialSolveConfig) -> Result<(RadialSolution, RadialSolveSummary), CliError> {
    let (cfg, p) = cfg.finalize()?;
    let problem = RadialProblem::on_ball(
        &p,
        cfg.gamma.expect("finalized"),
        cfg.radius,
        cfg.eps,
        cfg.boundary_constant,
        cfg.inner,
        cfg.mesh_size,
    )
    .map_err(config_err)?;
    let sol = solve_radial(&problem, &RadialInit::Auto).map_err(failure)?;
    if let Some(path) = &cfg.output {
        write_file(path, sol.to_csv().as_bytes())?;
    }
    let summary = RadialSolveSummary {
        inner_value: problem.inner_value,
        newton_iters: sol.newton_iters,
        residual_norm: sol.residual_norm,
        admissible: sol.admissible,
        config: cfg,
    };
    Ok((sol, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub exact: Vec<f64>,
    pub abs_errors: Vec<f64>,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGreenReport {
    pub config: RadialGreenConfig,
    pub limit: GreenLimitReport,
    /// `g(r) = −r^{−γ} + R^{−γ} + c` at the probes against the extrapolated limit.
    pub oracle: OracleComparison,
    pub oracle_checked: bool,
    /// Fits on the finest ε run.
    pub value_rate: Option<RateFit>,
    pub gradient_rate: Option<RateFit>,
    pub scaling: Option<ScalingReport>,
    pub checks: Vec<NamedCheck>,
    pub passed: bool,
}

pub struct RadialGreenRun {
    pub report: RadialGreenReport,
    pub solutions: Vec<Option<RadialSolution>>,
}

fn slope_check(name: &str, fit: &Option<RateFit>, expected: f64) -> NamedCheck {
    let rel = fit
        .as_ref()
        .map(|f| (f.slope - expected).abs() / expected.abs())
        .unwrap_or(f64::INFINITY);
    NamedCheck::at_most(name, rel, SLOPE_TOL)
}

/// The ε-limit with its diagnostics. Exact-homogeneous inner data is
/// compared against the closed-form limit; subsolution data only reports
/// the gap.
pub fn radial_green(cfg: RadialGreenConfig) -> Result<RadialGreenRun, CliError> {
    let (cfg, p) = cfg.finalize()?;
    let gamma = cfg.gamma.expect("finalized");
    let lc = GreenLimitConfig {
        n: cfg.n,
        k: cfg.k,
        form: p.form,
        gamma,
        radius: cfg.radius,
        boundary_constant: cfg.boundary_constant,
        inner: cfg.inner,
        mesh_size: cfg.mesh_size,
        eps_schedule: cfg.eps_schedule.clone().expect("finalized"),
        probe_radii: cfg.probe_radii.clone(),
    };
    let run = green_limit(&lc).map_err(config_err)?;
    let limit = run.report;

    let exact: Vec<f64> = cfg
        .probe_radii
        .iter()
        .map(|&r| homogeneous_value(gamma, cfg.radius, cfg.boundary_constant, r))
        .collect();
    let abs_errors: Vec<f64> = exact.iter().zip(&limit.extrapolated).map(|(g, u)| (u - g).abs()).collect();
    let max_error = abs_errors.iter().fold(0.0f64, |m, &e| if e.is_nan() { f64::NAN } else { m.max(e) });
    let oracle = OracleComparison { exact, abs_errors, max_error };
    let oracle_checked = cfg.inner == InnerData::ExactHomogeneous;

    let finest = run.solutions.iter().rev().flatten().next();
    let radii = log_radii(cfg.rate_window[0], cfg.rate_window[1], cfg.rate_samples);
    let fit = |q| {
        finest.and_then(|sol| {
            sphere_profile(ProfileSource::Radial(sol), &radii, q)
                .and_then(|s| fit_rate(&s))
                .ok()
        })
    };
    let value_rate = fit(Quantity::Value);
    let gradient_rate = fit(Quantity::Gradient);
    let solved: Vec<&RadialSolution> = run.solutions.iter().flatten().collect();
    let scaling = if solved.is_empty() { None } else { scaling_diagnostic(&solved, gamma).ok() };

    let all_solved = limit.failures.iter().all(|f| f.is_none());
    let mut checks = vec![
        NamedCheck::flag("all-solves-converged", all_solved),
        NamedCheck::at_most("monotonicity", limit.worst_monotonicity_gap, green_core::radial::MONOTONICITY_SLACK),
        NamedCheck {
            name: "sandwich".into(),
            value: limit.sandwich.max_violation,
            tolerance: green_core::radial::SANDWICH_TOL,
            passed: limit.sandwich.ok,
        },
    ];
    if oracle_checked {
        checks.push(NamedCheck::at_most("oracle-limit", oracle.max_error, ORACLE_TOL));
    }
    checks.push(slope_check("value-slope", &value_rate, -gamma));
    checks.push(slope_check("gradient-slope", &gradient_rate, -(gamma + 1.0)));
    checks.push(NamedCheck::flag("scaling-bounded", scaling.as_ref().is_some_and(|s| s.ok)));
    let passed = checks.iter().all(|c| c.passed);

    Ok(RadialGreenRun {
        report: RadialGreenReport {
            config: cfg,
            limit,
            oracle,
            oracle_checked,
            value_rate,
            gradient_rate,
            scaling,
            checks,
            passed,
        },
        solutions: run.solutions,
    })
}

/// `r,value,gradient,hessian` sphere suprema of the finest run.
pub fn profiles_csv(sol: &RadialSolution, radii: &[f64]) -> Result<String, CliError> {
    let cols = [Quantity::Value, Quantity::Gradient, Quantity::HessianNorm]
        .map(|q| sphere_profile(ProfileSource::Radial(sol), radii, q).map_err(failure));
    let [v, g, h] = cols;
    let (v, g, h) = (v?, g?, h?);
    let mut out = String::from("r,value,gradient,hessian\n");
    for i in 0..radii.len() {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", radii[i], v[i].1, g[i].1, h[i].1));
    }
    Ok(out)
}

pub fn cmd_radial_green(cfg: RadialGreenConfig) -> Result<(RadialGreenReport, String), CliError> {
    let run = radial_green(cfg)?;
    let rep = run.report;
    let json = to_json(&rep);
    if let Some(dir) = &rep.config.output_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("report.json"), json.as_bytes())?;
        for (j, sol) in run.solutions.iter().enumerate() {
            if let Some(sol) = sol {
                write_file(&dir.join(format!("eps_{j}.csv")), sol.to_csv().as_bytes())?;
            }
        }
        if let Some(sol) = run.solutions.iter().rev().flatten().next() {
            let radii = log_radii(rep.config.rate_window[0], rep.config.rate_window[1], rep.config.rate_samples);
            write_file(&dir.join("profiles.csv"), profiles_csv(sol, &radii)?.as_bytes())?;
        }
    }
    Ok((rep, json))
}

/// `(ε/2)|z|² + e^{x1} cos y1 + e^{x2} cos y2` in C²; its complex Hessian is
/// `(ε/2)I`, so it solves `S_1(μ[u]) = ε` exactly.
#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub eps: f64,
}

impl Field for Manufactured {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.eps * norm_sq(x) + x[0].exp() * x[1].cos() + x[2].exp() * x[3].cos()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let e = self.eps;
        vec![
            e * x[0] + x[0].exp() * x[1].cos(),
            e * x[1] - x[0].exp() * x[1].sin(),
            e * x[2] + x[2].exp() * x[3].cos(),
            e * x[3] - x[2].exp() * x[3].sin(),
        ]
    }

    fn complex_hessian(&self, _x: &[f64]) -> HermitianMatrix {
        HermitianMatrix::identity(2).scale(0.5 * self.eps)
    }
}

/// The zero function, as Dirichlet data for the bump below.
struct Zero;

impl Field for Zero {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; 4]
    }

    fn complex_hessian(&self, _x: &[f64]) -> HermitianMatrix {
        HermitianMatrix::identity(2).scale(0.0)
    }
}

/// `data + t·ψ` with `¼Δ_h ψ = 1` and `ψ = 0` on every Dirichlet node: a
/// second admissible start that agrees with the data wherever the data is
/// imposed and raises the discrete trace by exactly t.
pub fn bumped_init(grid: &Grid4, data: &dyn Field, t: f64) -> Result<GridField, CliError> {
    let psi = solve_poisson(grid, &Zero, 1.0).map_err(failure)?;
    let mut f = GridField::with_dirichlet(grid, data, data);
    for &lin in grid.active_nodes() {
        f.values[lin] += t * psi.values[lin];
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub side: usize,
    pub total_nodes: usize,
    pub active_nodes: usize,
    pub dirichlet_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolveReport {
    pub config: GridSolveConfig,
    pub grid: GridSummary,
    pub subsolution: Option<BallSubsolution>,
    pub solve: SolveReport,
    /// `max |u − u_rad(|z|)| / max |u_rad(|z|)|` over active nodes.
    pub radial_gap: Option<f64>,
    /// `max |u − u*|` over active nodes for manufactured data.
    pub manufactured_error: Option<f64>,
    /// `max (u̲ − u)` over active nodes for subsolution data.
    pub comparison_violation: Option<f64>,
    pub passed: bool,
}

pub struct GridRun {
    pub grid: Grid4,
    pub field: GridField,
    pub data: Arc<dyn Field>,
    pub report: GridSolveReport,
}

/// The grid problem of a configuration: its Dirichlet data and the
/// subsolution behind it (if any).
pub fn grid_problem(cfg: &GridSolveConfig, p: &OperatorParams) -> Result<(GridProblem, Option<BallSubsolution>), CliError> {
    let domain = DomainSpec::centered_ball(2, cfg.radius).map_err(config_err)?;
    let (data, sub): (Arc<dyn Field>, _) = match cfg.data {
        GridData::Subsolution => {
            let params = OperatorParams { rhs_level: cfg.eps, ..*p };
            let sub = ball_subsolution_on_annulus(cfg.radius, cfg.eps, cfg.gamma, &params, cfg.boundary_constant)
                .map_err(config_err)?;
            if !(sub.rhs_floor >= cfg.eps) {
                return Err(config_err(format!(
                    "subsolution floor {} is below the right-hand side {}",
                    sub.rhs_floor, cfg.eps
                )));
            }
            (Arc::new(sub.clone()), Some(sub))
        }
        GridData::Manufactured => (Arc::new(Manufactured { eps: cfg.eps }), None),
    };
    let grid = Grid4::new(&domain, cfg.eps, cfg.h).map_err(config_err)?;
    let params = OperatorParams { rhs_level: cfg.eps, ..*p };
    Ok((
        GridProblem {
            grid,
            params,
            eps: cfg.eps,
            dirichlet: data,
        },
        sub,
    ))
}

/// Radial solve with the same data, used as the oracle for subsolution runs.
pub fn radial_oracle(cfg: &GridSolveConfig, p: &OperatorParams, sub: &BallSubsolution) -> Result<RadialSolution, CliError> {
    let params = OperatorParams { rhs_level: cfg.eps, ..*p };
    let problem = RadialProblem::new(
        &params,
        cfg.gamma,
        cfg.radius,
        cfg.eps,
        sub.value_at_radius(cfg.eps),
        cfg.boundary_constant,
        cfg.radial_mesh,
    )
    .map_err(config_err)?;
    solve_radial(&problem, &RadialInit::Auto).map_err(failure)
}

pub fn radial_gap(grid: &Grid4, field: &GridField, sol: &RadialSolution) -> Result<f64, CliError> {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for &lin in grid.active_nodes() {
        let r = norm_sq(&grid.coords(lin)).sqrt();
        let v = sol.value_at_radius(r.min(sol.problem.radius)).map_err(failure)?;
        num = num.max((field.values[lin] - v).abs());
        den = den.max(v.abs());
    }
    Ok(num / den.max(f64::MIN_POSITIVE))
}

pub fn grid_solve(cfg: GridSolveConfig) -> Result<GridRun, CliError> {
    let (cfg, p) = cfg.finalize()?;
    let (problem, sub) = grid_problem(&cfg, &p)?;
    let data = problem.dirichlet.clone();
    let grid = &problem.grid;
    let init = match cfg.init {
        GridInit::Data => GridField::with_dirichlet(grid, data.as_ref(), data.as_ref()),
        GridInit::Bumped => bumped_init(grid, data.as_ref(), cfg.shift)?,
    };
    let (field, solve) = solve_grid(&problem, &init).map_err(|e| match e {
        green_core::Error::InvalidArgument(_) => config_err(e),
        _ => failure(e),
    })?;

    let active = grid.active_nodes();
    let summary = GridSummary {
        side: grid.side(),
        total_nodes: grid.total_nodes(),
        active_nodes: active.len(),
        dirichlet_nodes: grid.classes().iter().filter(|&&c| c == NodeClass::Dirichlet).count(),
    };
    let (radial_gap, comparison_violation) = match &sub {
        Some(sub) => {
            let oracle = radial_oracle(&cfg, &p, sub)?;
            let gap = radial_gap(grid, &field, &oracle)?;
            let viol = active
                .iter()
                .map(|&lin| sub.value(&grid.coords(lin)) - field.values[lin])
                .fold(f64::NEG_INFINITY, f64::max);
            (Some(gap), Some(viol))
        }
        None => (None, None),
    };
    let manufactured_error = (cfg.data == GridData::Manufactured).then(|| {
        active
            .iter()
            .map(|&lin| (field.values[lin] - data.value(&grid.coords(lin))).abs())
            .fold(0.0, f64::max)
    });
    let passed = solve.converged && solve.all_iterates_admissible;
    let report = GridSolveReport {
        config: cfg,
        grid: summary,
        subsolution: sub,
        solve,
        radial_gap,
        manufactured_error,
        comparison_violation,
        passed,
    };
    Ok(GridRun {
        grid: problem.grid,
        field,
        data,
        report,
    })
}

pub fn cmd_grid_solve(cfg: GridSolveConfig) -> Result<(GridSolveReport, String), CliError> {
    let run = grid_solve(cfg)?;
    let json = to_json(&run.report);
    if let Some(dir) = &run.report.config.output_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("report.json"), json.as_bytes())?;
        write_file(&dir.join("slice.csv"), plane_csv(&run.grid, &run.field).as_bytes())?;
        let path = dir.join("field.grd4");
        let f = File::create(&path).map_err(|e| failure(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        write_dump(&run.grid, &run.field, &mut w).map_err(failure)?;
        w.flush().map_err(|e| failure(format!("{}: {e}", path.display())))?;
    }
    Ok((run.report, json))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatesReport {
    pub config: RatesConfig,
    pub fit: RateFit,
    pub relative_deviation: Option<f64>,
    pub passed: bool,
}

/// Log-log fit of `|column|` against the `r` column of a CSV file, over the
/// rows inside the window.
pub fn cmd_rates(cfg: RatesConfig) -> Result<(RatesReport, String), CliError> {
    let input: PathBuf = cfg.input.clone().ok_or_else(|| config_err("rates needs an input CSV"))?;
    let [lo, hi] = cfg.rate_window;
    if !(lo > 0.0 && lo < hi) {
        return Err(config_err("rate window must satisfy 0 < lo < hi"));
    }
    let mut rdr = csv::Reader::from_path(&input).map_err(|e| config_err(format!("{}: {e}", input.display())))?;
    let headers = rdr.headers().map_err(config_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| config_err(format!("column '{name}' not in {}", input.display())))
    };
    let ri = find("r")?;
    let ci = find(&cfg.column)?;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(config_err)?;
        let parse = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| config_err(format!("'{}': {e}", &rec[i])));
        let (r, v) = (parse(ri)?, parse(ci)?);
        if r >= lo && r <= hi {
            samples.push((r, v.abs()));
        }
    }
    let fit = fit_rate(&samples).map_err(failure)?;
    let relative_deviation = cfg.expect_slope.map(|e| (fit.slope - e).abs() / e.abs());
    let passed = relative_deviation.is_none_or(|d| d <= cfg.tolerance);
    let rep = RatesReport {
        config: cfg,
        fit,
        relative_deviation,
        passed,
    };
    let json = to_json(&rep);
    Ok((rep, json))
}
