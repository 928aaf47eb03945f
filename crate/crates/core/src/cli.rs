//! Command-line entry point: configuration loading, subcommands and exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::certifier::{check_conditions, compute_theta2, derive_constants, ConditionReport, RateConstants, RateVariant};
use crate::dynamics::{build_propagator, simulate, Scheme, SimulationSpec};
use crate::experiments::{
    centering_check, ergodic_average_test, estimate_decay, form_checks, identity_suite, invariance_suite,
    poincare_catalog, poincare_check, propagator_suite, sampler_suite, stationary_start, CheckRow, ExperimentError,
    FaultInjection, McParams, Setup,
};
use crate::generator::{default_catalog, CylinderFunction};
use crate::measures::{RngStream, StreamTag};
use crate::model::{Exponents, ModelConfig};
use crate::potential::{PhysicalGrid, PotentialSpec, ScalarPotential};
use crate::spectral_ops::SpectrumRule;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const SEED_ENV: &str = "HYPOLANG_SEED";

#[derive(Debug, Parser)]
#[command(name = "hypolang", version, about = "Simulate and certify degenerate Langevin dynamics on a Hilbert space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Rate formula variant (overrides the config).
    #[arg(long, global = true)]
    pub variant: Option<RateVariant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the parameter conditions.
    Check,
    /// Print the rate certificate.
    Rate,
    /// Write one stationary trajectory.
    Simulate,
    /// Estimate semigroup decay against the certified envelope.
    Decay,
    /// Compare time averages against the ergodic bound.
    Ergodic,
    /// Run the oracle suites.
    Verify,
}

fn default_theta1() -> Vec<f64> {
    vec![2.0]
}

fn default_times() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 5.0]
}

fn default_horizons() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0]
}

fn default_drift_times() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub horizon: f64,
    pub stride: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            stride: 10,
        }
    }
}

/// Run configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub modes: usize,
    pub potential: PotentialSpec,
    pub seed: u64,
    #[serde(default)]
    pub spectrum: SpectrumRule,
    /// Quadrature points on (0, 1); defaults to `4·modes`.
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub mc: McParams,
    /// Decay evaluation times.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Ergodic-average horizons.
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    /// Times of the dynamic invariance check.
    #[serde(default = "default_drift_times")]
    pub drift_times: Vec<f64>,
    #[serde(default = "default_theta1")]
    pub theta1: Vec<f64>,
    #[serde(default)]
    pub variant: RateVariant,
    /// Observables for `decay` and `simulate`.
    #[serde(default)]
    pub observables: Option<Vec<CylinderFunction>>,
    /// Observable for `ergodic`.
    #[serde(default)]
    pub ergodic_observable: Option<CylinderFunction>,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub fault_injection: FaultInjection,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAIL,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::BadTimes | ExperimentError::TooFewSamples { .. } => CliError::config(e.to_string()),
            _ => CliError::failure(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::failure(format!("{}: {e}", path.display()))
}

/// Everything built from a validated config.
pub struct Prepared {
    pub config: RunConfig,
    pub model: ModelConfig,
    pub potential: ScalarPotential,
    pub grid: PhysicalGrid,
}

impl Prepared {
    pub fn setup(&self) -> Setup<'_> {
        Setup {
            model: &self.model,
            potential: &self.potential,
            grid: &self.grid,
            seed: self.config.seed,
        }
    }

    fn observables(&self) -> Vec<CylinderFunction> {
        self.config
            .observables
            .clone()
            .unwrap_or_else(|| decay_observables(self.model.modes))
    }
}

/// The three observables used for decay curves by default.
pub fn decay_observables(modes: usize) -> Vec<CylinderFunction> {
    let cat = default_catalog(modes);
    vec![cat[1].clone(), cat[4].clone(), cat[10].clone()]
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn exponents(&self) -> Exponents {
        Exponents::new(self.alpha1, self.alpha2, self.beta1, self.beta2)
    }

    /// Validates and builds the model, potential and grid.
    pub fn prepare(self) -> Result<Prepared, CliError> {
        let model = ModelConfig::from_rule(self.exponents(), &self.spectrum, self.modes)
            .map_err(|e| CliError::config(e.to_string()))?;
        let potential = self.potential.build().map_err(|e| CliError::config(e.to_string()))?;
        let grid = PhysicalGrid::new(self.grid_points.unwrap_or(4 * self.modes), self.modes)
            .map_err(|e| CliError::config(e.to_string()))?;
        if let Some(t) = self.theta1.iter().find(|t| !(**t > 1.0 && t.is_finite())) {
            return Err(CliError::config(format!("theta1 must exceed 1, got {t}")));
        }
        if self.theta1.is_empty() {
            return Err(CliError::config("theta1 list is empty"));
        }
        let observables = self.observables.iter().flatten().chain(&self.ergodic_observable);
        for f in observables {
            f.check_modes(self.modes).map_err(|e| CliError::config(e.to_string()))?;
        }
        if !(self.mc.h > 0.0 && self.mc.h.is_finite()) {
            return Err(CliError::config(format!("step size must be positive, got {}", self.mc.h)));
        }
        Ok(Prepared {
            config: self,
            model,
            potential,
            grid,
        })
    }
}

/// Result of one subcommand: text for stdout, files written, exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

#[derive(Debug, Serialize)]
struct RateRow {
    theta1: f64,
    theta2: f64,
    theta2_thm5_2: f64,
    theta2_thm6_10: f64,
}

#[derive(Debug, Serialize)]
struct RateTable {
    conditions: ConditionReport,
    constants: RateConstants,
    variant: RateVariant,
    rates: Vec<RateRow>,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| io_err(&dir.join(name), e);
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(&dir.join(name), e))?;
    write_file(dir, name, &String::from_utf8(bytes).expect("utf-8 csv"))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// θ2 for the first θ1 of the config, or the failed conditions.
fn certified_rate(p: &Prepared, variant: RateVariant) -> Result<(f64, f64), CliError> {
    let report = check_conditions(&p.model, &p.potential);
    let cert = derive_constants(&p.model, &report).map_err(|e| CliError::failure(e.to_string()))?;
    let theta1 = p.config.theta1[0];
    let theta2 = compute_theta2(&cert.constants, theta1, variant).map_err(|e| CliError::failure(e.to_string()))?;
    Ok((theta1, theta2))
}

pub fn cmd_check(p: &Prepared) -> Outcome {
    let report = check_conditions(&p.model, &p.potential);
    let mut stdout = to_json(&report);
    for f in report.failures() {
        stdout.push_str(&format!("FAILED: {f}\n"));
    }
    Outcome {
        stdout,
        code: if report.all_pass() { EXIT_PASS } else { EXIT_FAIL },
    }
}

pub fn cmd_rate(p: &Prepared, variant: RateVariant, out: &Path) -> Result<Outcome, CliError> {
    let report = check_conditions(&p.model, &p.potential);
    let cert = match derive_constants(&p.model, &report) {
        Ok(c) => c,
        Err(e) => {
            return Ok(Outcome {
                stdout: to_json(&report) + &format!("{e}\n"),
                code: EXIT_FAIL,
            })
        }
    };
    let mut rates = Vec::new();
    for &theta1 in &p.config.theta1 {
        let rate = |v| compute_theta2(&cert.constants, theta1, v).map_err(|e| CliError::failure(e.to_string()));
        rates.push(RateRow {
            theta1,
            theta2: rate(variant)?,
            theta2_thm5_2: rate(RateVariant::Thm5_2)?,
            theta2_thm6_10: rate(RateVariant::Thm6_10)?,
        });
    }
    let table = RateTable {
        conditions: cert.conditions,
        constants: cert.constants,
        variant,
        rates,
    };
    let json = to_json(&table);
    write_file(out, "rate.json", &json)?;
    Ok(Outcome {
        stdout: json,
        code: EXIT_PASS,
    })
}

pub fn cmd_simulate(p: &Prepared, out: &Path) -> Result<Outcome, CliError> {
    let observables = p.observables();
    let setup = p.setup();
    let start = stationary_start(&setup)?;
    let prop = build_propagator(&p.model, p.config.mc.h).map_err(|e| CliError::config(e.to_string()))?;
    let spec = SimulationSpec {
        horizon: p.config.simulate.horizon,
        stride: p.config.simulate.stride,
        observables: &observables,
        keep_states: false,
        scheme: Scheme::StrangExactOu,
    };
    let mut rng = RngStream::named(p.config.seed, StreamTag::Simulate, 1);
    let traj = simulate(&start, &spec, &prop, &p.potential, &p.grid, &mut rng)
        .map_err(|e| CliError::failure(e.to_string()))?;
    let mut header = vec!["t".to_string()];
    header.extend(observables.iter().map(|f| f.label()));
    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.values)
        .map(|(t, vals)| std::iter::once(num(*t)).chain(vals.iter().map(|x| num(*x))).collect())
        .collect();
    write_csv(out, "trajectory.csv", &header, &rows)?;
    Ok(Outcome {
        stdout: format!("wrote {} rows to {}\n", rows.len(), out.join("trajectory.csv").display()),
        code: EXIT_PASS,
    })
}

#[derive(Debug, Serialize)]
struct DecaySummary<'a> {
    theta1: f64,
    theta2: f64,
    variant: RateVariant,
    pass: bool,
    curves: Vec<DecayEntry<'a>>,
}

#[derive(Debug, Serialize)]
struct DecayEntry<'a> {
    file: String,
    pass: bool,
    #[serde(flatten)]
    curve: &'a crate::experiments::DecayCurve,
}

pub fn cmd_decay(p: &Prepared, variant: RateVariant, out: &Path) -> Result<Outcome, CliError> {
    let (theta1, theta2) = certified_rate(p, variant)?;
    let observables = p.observables();
    let curves = estimate_decay(&p.setup(), &observables, &p.config.times, &p.config.mc, theta1, theta2)?;
    let header: Vec<String> = ["t", "D_hat", "SE", "envelope"].map(String::from).to_vec();
    let mut entries = Vec::new();
    let mut stdout = String::new();
    for (i, c) in curves.iter().enumerate() {
        let rows: Vec<Vec<String>> = (0..c.times.len())
            .map(|j| vec![num(c.times[j]), num(c.d_hat[j]), num(c.se[j]), num(c.envelope[j])])
            .collect();
        let file = format!("decay_{i}.csv");
        write_csv(out, &file, &header, &rows)?;
        stdout.push_str(&format!(
            "{} {}: fitted rate {}\n",
            if c.pass() { "PASS" } else { "FAIL" },
            c.observable,
            c.fitted_rate.map_or("n/a".into(), num)
        ));
        entries.push(DecayEntry {
            file,
            pass: c.pass(),
            curve: c,
        });
    }
    let pass = entries.iter().all(|e| e.pass);
    let summary = DecaySummary {
        theta1,
        theta2,
        variant,
        pass,
        curves: entries,
    };
    write_file(out, "decay.json", &to_json(&summary))?;
    Ok(Outcome {
        stdout,
        code: if pass { EXIT_PASS } else { EXIT_FAIL },
    })
}

pub fn cmd_ergodic(p: &Prepared, variant: RateVariant, out: &Path) -> Result<Outcome, CliError> {
    let (theta1, theta2) = certified_rate(p, variant)?;
    let g = p
        .config
        .ergodic_observable
        .clone()
        .unwrap_or_else(|| CylinderFunction::v(0));
    let report = ergodic_average_test(&p.setup(), &g, &p.config.horizons, &p.config.mc, theta1, theta2)?;
    let header: Vec<String> = ["T", "error", "SE", "bound", "oracle"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![num(r.horizon), num(r.error), num(r.se), num(r.bound), r.oracle.map_or(String::new(), num)])
        .collect();
    write_csv(out, "ergodic.csv", &header, &rows)?;
    write_file(out, "ergodic.json", &to_json(&report))?;
    let mut stdout = String::new();
    for r in &report.rows {
        stdout.push_str(&format!(
            "{} T={}: error {} (SE {}) bound {}\n",
            if r.pass && r.oracle_pass.unwrap_or(true) { "PASS" } else { "FAIL" },
            r.horizon,
            num(r.error),
            num(r.se),
            num(r.bound)
        ));
    }
    Ok(Outcome {
        stdout,
        code: if report.pass() { EXIT_PASS } else { EXIT_FAIL },
    })
}

/// All oracle suites as one flat list of checks.
pub fn verify_rows(p: &Prepared) -> Result<Vec<CheckRow>, CliError> {
    let setup = p.setup();
    let mc = &p.config.mc;
    let mut rows = identity_suite(&setup, &p.config.fault_injection)?;
    rows.push(centering_check(&setup, mc.reference_samples.min(10_000))?);
    rows.extend(form_checks(&setup, mc.invariance_samples)?);
    let catalog = default_catalog(p.model.modes);
    for r in invariance_suite(&setup, &catalog, &McParams { dynamic_trajectories: 0, ..*mc }, &[])? {
        rows.push(CheckRow {
            suite: "invariance".into(),
            name: r.observable,
            value: r.mean_generator.abs(),
            tolerance: 3.0 * r.se,
            pass: r.pass,
        });
    }
    for r in poincare_check(&setup, &poincare_catalog(p.model.modes), mc.reference_samples)? {
        rows.push(CheckRow {
            suite: "poincare".into(),
            name: r.observable,
            value: -r.slack,
            tolerance: 3.0 * r.se,
            pass: r.pass,
        });
    }
    rows.extend(sampler_suite(&setup, mc.reference_samples)?);
    rows.extend(propagator_suite(&p.model, mc.h)?);
    Ok(rows)
}

pub fn cmd_verify(p: &Prepared, out: &Path) -> Result<Outcome, CliError> {
    let rows = verify_rows(p)?;
    let pass = rows.iter().all(|r| r.pass);
    write_file(out, "verify.json", &to_json(&rows))?;
    let mut stdout = String::new();
    for r in &rows {
        stdout.push_str(&format!(
            "{} [{}] {}: {} (tolerance {})\n",
            if r.pass { "PASS" } else { "FAIL" },
            r.suite,
            r.name,
            num(r.value),
            num(r.tolerance)
        ));
    }
    Ok(Outcome {
        stdout,
        code: if pass { EXIT_PASS } else { EXIT_FAIL },
    })
}

/// Parses the environment seed override.
fn seed_override(value: Option<String>) -> Result<Option<u64>, CliError> {
    value
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))
        })
        .transpose()
}

/// Runs a parsed command line with an explicit seed override.
pub fn execute(cli: &Cli, seed_env: Option<String>) -> Result<Outcome, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config PATH is required"))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed_override(seed_env)? {
        config.seed = seed;
    }
    let variant = cli.variant.unwrap_or(config.variant);
    let out = cli.out.clone().unwrap_or_else(|| config.output_dir.clone());
    let prepared = config.prepare()?;
    let run = || match cli.command {
        Command::Check => Ok(cmd_check(&prepared)),
        Command::Rate => cmd_rate(&prepared, variant, &out),
        Command::Simulate => cmd_simulate(&prepared, &out),
        Command::Decay => cmd_decay(&prepared, variant, &out),
        Command::Ergodic => cmd_ergodic(&prepared, variant, &out),
        Command::Verify => cmd_verify(&prepared, &out),
    };
    match cli.workers {
        Some(0) => Err(CliError::config("--workers must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::failure(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    match execute(&cli, std::env::var(SEED_ENV).ok()) {
        Ok(o) => {
            let _ = std::io::stdout().write_all(o.stdout.as_bytes());
            o.code
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
