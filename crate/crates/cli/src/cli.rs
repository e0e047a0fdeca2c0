//! Argument parsing and dispatch for `formgreen`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use green_core::hessian::OperatorForm;
use green_core::radial::InnerData;
use serde::Serialize;

use crate::commands::{
    cmd_fundamental_check, cmd_gamma, cmd_grid_solve, cmd_radial_green, cmd_radial_solve, cmd_rates, cmd_verify,
    gamma_text, to_json,
};
use crate::config::{resolve, CliError, GridData, GridInit, GridSolveConfig, RadialGreenConfig, RadialSolveConfig, RatesConfig};
use crate::verify::{FundamentalConfig, VerifyConfig};

#[derive(Parser, Debug)]
#[command(name = "formgreen", version, about = "Pluricomplex Green functions of form-type Hessian equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fundamental exponents γ for (n, k).
    Gamma(GammaArgs),
    /// Property suite on random cone samples.
    Verify(VerifyArgs),
    /// Residuals of −|z|^{−γ} for every branch.
    FundamentalCheck(FundamentalArgs),
    /// One punctured radial solve, CSV profile out.
    RadialSolve(RadialSolveArgs),
    /// The ε → 0 limit with all diagnostics.
    RadialGreen(RadialGreenArgs),
    /// Punctured Dirichlet problem on a 4-dimensional grid (n = 2).
    GridSolve(GridSolveArgs),
    /// Log-log slope of a CSV column.
    Rates(RatesArgs),
}

fn parse_form(s: &str) -> Result<OperatorForm, String> {
    match s {
        "root" => Ok(OperatorForm::Root),
        "log" => Ok(OperatorForm::Log),
        _ => Err(format!("unknown form '{s}' (root, log)")),
    }
}

fn parse_inner(s: &str) -> Result<InnerData, String> {
    match s {
        "subsolution" => Ok(InnerData::Subsolution),
        "exact-homogeneous" => Ok(InnerData::ExactHomogeneous),
        _ => Err(format!("unknown inner data '{s}' (subsolution, exact-homogeneous)")),
    }
}

fn parse_grid_data(s: &str) -> Result<GridData, String> {
    match s {
        "subsolution" => Ok(GridData::Subsolution),
        "manufactured" => Ok(GridData::Manufactured),
        _ => Err(format!("unknown data '{s}' (subsolution, manufactured)")),
    }
}

fn parse_grid_init(s: &str) -> Result<GridInit, String> {
    match s {
        "data" => Ok(GridInit::Data),
        "bumped" => Ok(GridInit::Bumped),
        _ => Err(format!("unknown init '{s}' (data, bumped)")),
    }
}

#[derive(Args, Debug)]
pub struct GammaArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Run with a corrupted S_k recurrence; the suite must fail.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub canary: bool,
    /// Also write the JSON summary here.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FundamentalArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RadialSolveArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_form)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<OperatorForm>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_constant: Option<f64>,
    #[arg(long, value_parser = parse_inner)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner: Option<InnerData>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_size: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RadialGreenArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_form)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<OperatorForm>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_constant: Option<f64>,
    #[arg(long, value_parser = parse_inner)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner: Option<InnerData>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_schedule: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_radii: Option<Vec<f64>>,
    /// `lo,hi`
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_window: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GridSolveArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_form)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<OperatorForm>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_constant: Option<f64>,
    #[arg(long, value_parser = parse_grid_data)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<GridData>,
    #[arg(long, value_parser = parse_grid_init)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<GridInit>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radial_mesh: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RatesArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_window: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_slope: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn verdict(passed: bool) -> i32 {
    if passed {
        0
    } else {
        1
    }
}

/// Runs one command; returns the exit code.
pub fn dispatch(command: Command, out: &mut dyn std::io::Write) -> Result<i32, CliError> {
    let print = |out: &mut dyn std::io::Write, s: &str| {
        out.write_all(s.as_bytes()).map_err(|e| crate::config::failure(e.to_string()))
    };
    match command {
        Command::Gamma(a) => {
            let t = cmd_gamma(a.n, a.k)?;
            print(out, &if a.json { to_json(&t) } else { gamma_text(&t) })?;
            Ok(0)
        }
        Command::Verify(a) => {
            let cfg: VerifyConfig = resolve_with_defaults(&a, a.config.as_deref())?;
            let (rep, json) = cmd_verify(&cfg, a.out.as_deref())?;
            print(out, &json)?;
            for c in rep.checks.iter().filter(|c| !c.passed) {
                eprintln!("FAIL {} ({} of {}): {:?}", c.name, c.failures, c.count, c.failing_cases);
            }
            Ok(verdict(rep.passed))
        }
        Command::FundamentalCheck(a) => {
            let base = FundamentalConfig { n_max: 6, radii: 50, seed: 42 };
            let cfg: FundamentalConfig = merge_over(&base, &a, a.config.as_deref())?;
            let (rep, json) = cmd_fundamental_check(&cfg)?;
            print(out, &json)?;
            Ok(verdict(rep.passed))
        }
        Command::RadialSolve(a) => {
            let cfg: RadialSolveConfig = resolve(&a, a.config.as_deref())?;
            let to_stdout = cfg.output.is_none();
            let (sol, summary) = cmd_radial_solve(cfg)?;
            if to_stdout {
                print(out, &sol.to_csv())?;
            } else {
                print(out, &to_json(&summary))?;
            }
            Ok(verdict(summary.admissible))
        }
        Command::RadialGreen(a) => {
            let cfg: RadialGreenConfig = resolve(&a, a.config.as_deref())?;
            let (rep, json) = cmd_radial_green(cfg)?;
            print(out, &json)?;
            for c in rep.checks.iter().filter(|c| !c.passed) {
                eprintln!("FAIL {}: {} (tolerance {})", c.name, c.value, c.tolerance);
            }
            for f in rep.limit.failures.iter().flatten() {
                eprintln!("solver failure: {f}");
            }
            Ok(verdict(rep.passed))
        }
        Command::GridSolve(a) => {
            let cfg: GridSolveConfig = resolve(&a, a.config.as_deref())?;
            let (rep, json) = cmd_grid_solve(cfg)?;
            print(out, &json)?;
            Ok(verdict(rep.passed))
        }
        Command::Rates(a) => {
            let cfg: RatesConfig = resolve(&a, a.config.as_deref())?;
            let (rep, json) = cmd_rates(cfg)?;
            print(out, &json)?;
            Ok(verdict(rep.passed))
        }
    }
}

/// The verify config has no serde defaults of its own; layer over them.
fn resolve_with_defaults(a: &VerifyArgs, file: Option<&std::path::Path>) -> Result<VerifyConfig, CliError> {
    merge_over(&VerifyConfig::default(), a, file)
}

fn merge_over<T: Serialize + serde::de::DeserializeOwned>(
    base: &T,
    flags: &impl Serialize,
    file: Option<&std::path::Path>,
) -> Result<T, CliError> {
    let mut merged = serde_json::to_value(base).map_err(crate::config::config_err)?;
    let layer: serde_json::Value = resolve(flags, file)?;
    if let (Some(m), serde_json::Value::Object(l)) = (merged.as_object_mut(), layer) {
        for (k, v) in l {
            if !m.contains_key(&k) {
                return Err(crate::config::config_err(format!("unknown field `{k}`")));
            }
            m.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(crate::config::config_err)
}

/// Parses `args` and runs the command. Usage errors exit with 2.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(cli.command, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("formgreen: {e}");
            e.exit_code()
        }
    }
}
