//! Run configuration: JSON file values overridden by command-line flags,
//! then filled with defaults.

use std::path::{Path, PathBuf};

use green_core::fundamental::gamma_exponents;
use green_core::hessian::{OperatorForm, OperatorParams};
use green_core::radial::InnerData;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Failure classes of a command, mapped to exit codes 2 and 1.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

/// Flags (serialized without unset options) layered over the JSON file.
pub fn resolve<T: DeserializeOwned>(flags: &impl Serialize, file: Option<&Path>) -> Result<T, CliError> {
    let mut merged = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))? {
                Value::Object(m) => m,
                _ => return Err(config_err(format!("{}: expected a JSON object", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(f) = serde_json::to_value(flags).map_err(config_err)? {
        for (k, v) in f {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(config_err)
}

fn natural_form(n: usize, k: usize) -> OperatorForm {
    if k == n {
        OperatorForm::Log
    } else {
        OperatorForm::Root
    }
}

/// The first branch of the exponent table.
fn default_gamma(n: usize, k: usize) -> Result<f64, CliError> {
    let table = gamma_exponents(n, k).map_err(config_err)?;
    table
        .branches
        .first()
        .map(|b| b.gamma)
        .ok_or_else(|| config_err(format!("no fundamental exponent for n = {n}, k = {k}: {:?}", table.diagnostics)))
}

/// Rejects exponents that are not in the table for (n, k).
fn check_gamma(n: usize, k: usize, gamma: f64) -> Result<(), CliError> {
    let table = gamma_exponents(n, k).map_err(config_err)?;
    if table.branches.iter().any(|b| (b.gamma - gamma).abs() <= 1e-12 * b.gamma.max(1.0)) {
        Ok(())
    } else if n == 2 && k == 2 && gamma > 0.0 {
        // No positive exponent exists here; γ only shapes the data.
        Ok(())
    } else {
        Err(config_err(format!(
            "gamma = {gamma} is not a fundamental exponent for n = {n}, k = {k} (table: {:?})",
            table.branches.iter().map(|b| b.gamma).collect::<Vec<_>>()
        )))
    }
}

fn operator(n: usize, k: usize, form: Option<OperatorForm>) -> Result<OperatorParams, CliError> {
    OperatorParams::new(n, k, form.unwrap_or(natural_form(n, k)), 0.0).map_err(config_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialSolveConfig {
    pub n: usize,
    pub k: usize,
    pub form: Option<OperatorForm>,
    pub gamma: Option<f64>,
    pub radius: f64,
    pub eps: f64,
    pub boundary_constant: f64,
    pub inner: InnerData,
    pub mesh_size: usize,
    pub output: Option<PathBuf>,
}

impl Default for RadialSolveConfig {
    fn default() -> Self {
        RadialSolveConfig {
            n: 3,
            k: 2,
            form: None,
            gamma: None,
            radius: 1.0,
            eps: 0.2,
            boundary_constant: 0.0,
            inner: InnerData::Subsolution,
            mesh_size: 512,
            output: None,
        }
    }
}

impl RadialSolveConfig {
    pub fn finalize(mut self) -> Result<(Self, OperatorParams), CliError> {
        let p = operator(self.n, self.k, self.form)?;
        self.form = Some(p.form);
        let gamma = match self.gamma {
            Some(g) => g,
            None => default_gamma(self.n, self.k)?,
        };
        check_gamma(self.n, self.k, gamma)?;
        self.gamma = Some(gamma);
        if !(self.eps > 0.0 && self.eps < self.radius) {
            return Err(config_err(format!("eps = {} must lie in (0, R = {})", self.eps, self.radius)));
        }
        if self.mesh_size < 32 {
            return Err(config_err("mesh_size must be >= 32"));
        }
        Ok((self, p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialGreenConfig {
    pub n: usize,
    pub k: usize,
    pub form: Option<OperatorForm>,
    pub gamma: Option<f64>,
    pub radius: f64,
    pub boundary_constant: f64,
    pub inner: InnerData,
    pub mesh_size: usize,
    pub eps0: f64,
    pub levels: usize,
    /// Overrides `eps0·2^{−j}`, j < levels, when given.
    pub eps_schedule: Option<Vec<f64>>,
    pub probe_radii: Vec<f64>,
    pub rate_window: [f64; 2],
    pub rate_samples: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RadialGreenConfig {
    fn default() -> Self {
        RadialGreenConfig {
            n: 3,
            k: 2,
            form: None,
            gamma: None,
            radius: 1.0,
            boundary_constant: 0.0,
            inner: InnerData::Subsolution,
            mesh_size: 512,
            eps0: 0.2,
            levels: 7,
            eps_schedule: None,
            probe_radii: vec![0.3, 0.5, 0.7],
            rate_window: [0.02, 0.1],
            rate_samples: 12,
            seed: 42,
            output_dir: None,
        }
    }
}

impl RadialGreenConfig {
    pub fn finalize(mut self) -> Result<(Self, OperatorParams), CliError> {
        let p = operator(self.n, self.k, self.form)?;
        self.form = Some(p.form);
        let gamma = match self.gamma {
            Some(g) => g,
            None => default_gamma(self.n, self.k)?,
        };
        check_gamma(self.n, self.k, gamma)?;
        self.gamma = Some(gamma);
        let schedule = match self.eps_schedule.take() {
            Some(s) => s,
            None => (0..self.levels).map(|j| self.eps0 * 0.5f64.powi(j as i32)).collect(),
        };
        if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(config_err("eps schedule must be nonempty and strictly decreasing"));
        }
        if !(schedule[0] < self.radius && *schedule.last().unwrap() > 0.0) {
            return Err(config_err("eps schedule must lie in (0, R)"));
        }
        if self.probe_radii.iter().any(|&r| !(r > schedule[0] && r < self.radius)) {
            return Err(config_err(format!("probe radii must lie in ({}, {})", schedule[0], self.radius)));
        }
        let [lo, hi] = self.rate_window;
        if !(lo > *schedule.last().unwrap() && lo < hi && hi < self.radius) {
            return Err(config_err("rate window must lie inside the finest annulus"));
        }
        if self.rate_samples < 6 {
            return Err(config_err("rate_samples must be >= 6"));
        }
        if self.mesh_size < 32 {
            return Err(config_err("mesh_size must be >= 32"));
        }
        self.levels = schedule.len();
        self.eps_schedule = Some(schedule);
        Ok((self, p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridData {
    /// The ball subsolution `−|z|^{−γ} + a|z|² + b`.
    Subsolution,
    /// `(ε/2)|z|² + e^{x1} cos y1 + e^{x2} cos y2`, an exact k = 1 solution.
    Manufactured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridInit {
    /// The Dirichlet data itself.
    Data,
    /// The data plus `shift·ψ`, where `¼Δ_h ψ = 1` and ψ vanishes on the
    /// Dirichlet nodes.
    Bumped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSolveConfig {
    pub k: usize,
    pub form: Option<OperatorForm>,
    pub gamma: f64,
    pub radius: f64,
    pub eps: f64,
    pub h: f64,
    pub boundary_constant: f64,
    pub data: GridData,
    pub init: GridInit,
    pub shift: f64,
    /// Compare against a radial solve on a mesh of this size (subsolution data).
    pub radial_mesh: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for GridSolveConfig {
    fn default() -> Self {
        GridSolveConfig {
            k: 2,
            form: None,
            gamma: 0.25,
            radius: 1.0,
            eps: 0.25,
            h: 0.0625,
            boundary_constant: 0.0,
            data: GridData::Subsolution,
            init: GridInit::Data,
            shift: 0.05,
            radial_mesh: 2048,
            output_dir: None,
        }
    }
}

impl GridSolveConfig {
    pub fn finalize(mut self) -> Result<(Self, OperatorParams), CliError> {
        let p = operator(2, self.k, self.form)?;
        self.form = Some(p.form);
        if !(self.h > 0.0) {
            return Err(config_err("h must be positive"));
        }
        let cells = self.radius / self.h;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(config_err(format!("h = {} does not divide the box half-width {}", self.h, self.radius)));
        }
        if !(self.eps > 0.0 && self.eps + 2.0 * self.h < self.radius) {
            return Err(config_err("the puncture needs eps > 0 and a 2h margin inside the ball"));
        }
        if self.data == GridData::Manufactured && self.k != 1 {
            return Err(config_err("manufactured data solves the k = 1 equation only"));
        }
        if !(self.gamma > 0.0) {
            return Err(config_err("gamma must be positive"));
        }
        if self.shift < 0.0 {
            return Err(config_err("shift must be nonnegative"));
        }
        Ok((self, p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub input: Option<PathBuf>,
    pub column: String,
    pub rate_window: [f64; 2],
    /// Expected slope and relative tolerance; the command fails outside it.
    pub expect_slope: Option<f64>,
    pub tolerance: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            input: None,
            column: "value".into(),
            rate_window: [0.02, 0.1],
            expect_slope: None,
            tolerance: 0.05,
        }
    }
}
