//! Monte Carlo experiments against the certified bounds, together with the
//! exact oracles they are checked against.
//!
//! All random draws come from [`RngStream::named`] streams indexed by sample or
//! trajectory number, and partial results are merged in index order, so every
//! number here is a function of the seed alone.

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certifier::{ergodic_bound, CertError};
use crate::dynamics::{build_propagator, mode_blocks, whole_steps, DynamicsError, Integrator, ModeBlock, Scheme, StateVector};
use crate::generator::{
    gaussian_moment_expansion, isserlis_moment, velocity_expectation, AppliedAP, CylinderFn, CylinderFunction,
    GaussianSpec, Generator, GeneratorError, Projection, QuadraticForm,
};
use crate::measures::{sample_gaussian, Mu1PhiSampler, MuPhiSampler, RngStream, SamplerError, StreamTag};
use crate::model::{ModelConfig, ModelError};
use crate::spectral_ops::SpectralError;
use crate::potential::{PhysicalGrid, ScalarPotential};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("times must start at 0 and increase strictly")]
    BadTimes,
    #[error("need at least 2 samples per level (got outer {outer}, inner {inner})")]
    TooFewSamples { outer: usize, inner: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance (denominator `n − 1`).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// `|mean| ≤ 3 SE`, with an exact zero accepted when the SE vanishes.
pub fn within_three_se(mean: f64, se: f64) -> bool {
    mean.abs() <= 3.0 * se
}

/// Monte Carlo sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McParams {
    pub m_out: usize,
    pub m_in: usize,
    pub h: f64,
    pub invariance_samples: usize,
    pub dynamic_trajectories: usize,
    pub reference_samples: usize,
    pub ergodic_trajectories: usize,
}

impl Default for McParams {
    fn default() -> Self {
        Self {
            m_out: 2000,
            m_in: 50,
            h: 0.01,
            invariance_samples: 100_000,
            dynamic_trajectories: 10_000,
            reference_samples: 100_000,
            ergodic_trajectories: 2000,
        }
    }
}

/// Everything a suite needs about the model under test.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub model: &'a ModelConfig,
    pub potential: &'a ScalarPotential,
    pub grid: &'a PhysicalGrid,
    pub seed: u64,
}

impl<'a> Setup<'a> {
    pub fn generator(&self) -> Generator<'a> {
        Generator::new(self.model, self.potential, self.grid)
    }
}

const CHUNK: usize = 1000;

/// Runs `work(chunk_index, len)` over `total` items in chunks and returns the
/// results in chunk order.
fn chunked<T, W>(total: usize, work: W) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    W: Fn(usize, usize) -> Result<T, ExperimentError> + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| work(c, CHUNK.min(total - c * CHUNK)))
        .collect()
}

/// Mean and spread of each observable under `μ^Φ`.
pub fn stationary_moments<F: CylinderFn + Sync>(
    setup: &Setup<'_>,
    observables: &[F],
    samples: usize,
) -> Result<Vec<Welford>, ExperimentError> {
    let parts = chunked(samples, |c, len| {
        let mut rng = RngStream::named(setup.seed, StreamTag::Reference, c as u64);
        let mut sampler = MuPhiSampler::new(setup.model, setup.potential, setup.grid)?;
        let mut acc = vec![Welford::new(); observables.len()];
        for _ in 0..len {
            let x = sampler.sample(&mut rng)?;
            for (a, f) in acc.iter_mut().zip(observables) {
                a.push(f.value(&x.u, &x.v));
            }
        }
        Ok(acc)
    })?;
    let mut out = vec![Welford::new(); observables.len()];
    for part in parts {
        for (o, p) in out.iter_mut().zip(&part) {
            o.merge(p);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// decay of the semigroup

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub observable: String,
    pub times: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub se: Vec<f64>,
    /// Bias-corrected `D̂²` before clamping.
    pub d2_raw: Vec<f64>,
    pub se_d2: Vec<f64>,
    pub envelope: Vec<f64>,
    pub under_resolved: Vec<bool>,
    pub within_envelope: Vec<bool>,
    /// Least-squares `−d log D̂/dt` over the resolved points.
    pub fitted_rate: Option<f64>,
    pub theta1: f64,
    pub theta2: f64,
}

impl DecayCurve {
    pub fn pass(&self) -> bool {
        self.within_envelope.iter().all(|&b| b) && !self.under_resolved.iter().any(|&b| b)
    }
}

fn check_times(times: &[f64], h: f64) -> Result<Vec<usize>, ExperimentError> {
    if times.first() != Some(&0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::BadTimes);
    }
    times.iter().map(|&t| Ok(whole_steps(t, h)?)).collect()
}

/// Per-outer-sample inner means and variances, indexed `[obs][time]`.
type InnerStats = Vec<Vec<Welford>>;

/// `D̂(t)` for each observable by nested Monte Carlo: `m_out` stationary
/// starts, `m_in` trajectories from each.
pub fn estimate_decay(
    setup: &Setup<'_>,
    observables: &[CylinderFunction],
    times: &[f64],
    mc: &McParams,
    theta1: f64,
    theta2: f64,
) -> Result<Vec<DecayCurve>, ExperimentError> {
    if mc.m_out < 2 || mc.m_in < 2 {
        return Err(ExperimentError::TooFewSamples {
            outer: mc.m_out,
            inner: mc.m_in,
        });
    }
    let steps = check_times(times, mc.h)?;
    let prop = build_propagator(setup.model, mc.h)?;
    let last = *steps.last().unwrap();
    let per_outer: Vec<InnerStats> = (0..mc.m_out)
        .into_par_iter()
        .map(|i| -> Result<InnerStats, ExperimentError> {
            let mut rng = RngStream::named(setup.seed, StreamTag::Decay, i as u64);
            let mut sampler = MuPhiSampler::new(setup.model, setup.potential, setup.grid)?;
            let start = sampler.sample(&mut rng)?;
            let mut stats = vec![vec![Welford::new(); times.len()]; observables.len()];
            let mut integ = Integrator::new(&prop, setup.potential, setup.grid, Scheme::StrangExactOu);
            for _ in 0..mc.m_in {
                let mut x = start.clone();
                integ.reset();
                let mut next = 0;
                for s in 0..=last {
                    if s > 0 {
                        integ.step(&mut x, &mut rng)?;
                    }
                    if steps[next] == s {
                        for (o, f) in observables.iter().enumerate() {
                            stats[o][next].push(f.value(&x.u, &x.v));
                        }
                        next += 1;
                        if next == steps.len() {
                            break;
                        }
                    }
                }
            }
            Ok(stats)
        })
        .collect::<Result<_, _>>()?;

    let m = mc.m_out as f64;
    let mut curves = Vec::with_capacity(observables.len());
    for (o, f) in observables.iter().enumerate() {
        let mut d_hat = Vec::new();
        let mut se = Vec::new();
        let mut d2_raw = Vec::new();
        let mut se_d2 = Vec::new();
        let mut under = Vec::new();
        for t in 0..times.len() {
            let mut outer = Welford::new();
            for s in &per_outer {
                outer.push(s[o][t].mean());
            }
            let gbar = outer.mean();
            let mut y = Welford::new();
            for s in &per_outer {
                let d = s[o][t].mean() - gbar;
                y.push(d * d * m / (m - 1.0) - s[o][t].variance() / mc.m_in as f64);
            }
            let d2 = y.mean();
            let sd2 = y.se();
            let d = d2.max(0.0).sqrt();
            let sd = if d > 0.0 { (sd2 / (2.0 * d)).min(sd2.sqrt()) } else { sd2.sqrt() };
            d2_raw.push(d2);
            se_d2.push(sd2);
            d_hat.push(d);
            se.push(sd);
            under.push(d2 < -3.0 * sd2);
        }
        let envelope: Vec<f64> = times.iter().map(|&t| theta1 * (-theta2 * t).exp() * d_hat[0]).collect();
        let within = d_hat
            .iter()
            .zip(&envelope)
            .zip(&se)
            .map(|((d, e), s)| *d <= e + 3.0 * s)
            .collect();
        curves.push(DecayCurve {
            observable: f.label(),
            times: times.to_vec(),
            fitted_rate: fit_rate(times, &d_hat, &se),
            d_hat,
            se,
            d2_raw,
            se_d2,
            envelope,
            under_resolved: under,
            within_envelope: within,
            theta1,
            theta2,
        });
    }
    Ok(curves)
}

fn fit_rate(times: &[f64], d: &[f64], se: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(d.iter().zip(se))
        .filter(|(_, (d, s))| **d > 3.0 * **s && **d > 0.0)
        .map(|(t, (d, _))| (*t, d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// `‖T_t v_k‖_{L²(μ)}` for `Φ = 0`: `T_t v_k = E21(t) u_k + E22(t) v_k`.
pub fn ou_decay_norm(model: &ModelConfig, mode: usize, t: f64) -> f64 {
    let b = mode_blocks(model)[mode];
    let e = b.transition(t);
    (e[(1, 0)].powi(2) * b.stationary.0 + e[(1, 1)].powi(2) * b.stationary.1).sqrt()
}

/// Stationary autocovariance of `v_k` for `Φ = 0`: `E22(τ) λ_k^{α2}`.
pub fn ou_autocovariance(block: &ModeBlock, tau: f64) -> f64 {
    block.transition(tau)[(1, 1)] * block.stationary.1
}

/// `‖(1/T)∫₀ᵀ v_k ds‖_{L²(P_μ)}` for `Φ = 0`, from
/// `(2/T²)∫₀ᵀ (T − τ) C(τ) dτ` by composite Simpson.
pub fn ou_time_average_error(model: &ModelConfig, mode: usize, horizon: f64) -> f64 {
    let b = mode_blocks(model)[mode];
    let panels = 20_000;
    let dx = horizon / panels as f64;
    let f = |tau: f64| (horizon - tau) * ou_autocovariance(&b, tau);
    let mut acc = f(0.0) + f(horizon);
    for i in 1..panels {
        acc += f(i as f64 * dx) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (2.0 / (horizon * horizon) * acc * dx / 3.0).max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// ergodic averages

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicRow {
    pub horizon: f64,
    pub error: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
    /// Closed-form error for `Φ = 0` and a velocity coordinate.
    pub oracle: Option<f64>,
    pub oracle_pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub observable: String,
    pub stationary_mean: f64,
    pub base_norm: f64,
    pub rows: Vec<ErgodicRow>,
}

impl ErgodicReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass && r.oracle_pass.unwrap_or(true))
    }
}

/// L²(P) distance of trapezoid time averages to the stationary mean, against
/// the ergodic bound.
pub fn ergodic_average_test(
    setup: &Setup<'_>,
    g: &CylinderFunction,
    horizons: &[f64],
    mc: &McParams,
    theta1: f64,
    theta2: f64,
) -> Result<ErgodicReport, ExperimentError> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] <= 0.0 {
        return Err(ExperimentError::BadTimes);
    }
    if mc.ergodic_trajectories < 2 {
        return Err(ExperimentError::TooFewSamples {
            outer: mc.ergodic_trajectories,
            inner: 1,
        });
    }
    let steps: Vec<usize> = horizons.iter().map(|&t| whole_steps(t, mc.h)).collect::<Result<_, _>>()?;
    let reference = stationary_moments(setup, std::slice::from_ref(g), mc.reference_samples)?[0];
    let gbar = reference.mean();
    let base_norm = reference.variance().sqrt();
    let prop = build_propagator(setup.model, mc.h)?;
    let last = *steps.last().unwrap();

    let averages: Vec<Vec<f64>> = (0..mc.ergodic_trajectories)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>, ExperimentError> {
            let mut rng = RngStream::named(setup.seed, StreamTag::Ergodic, i as u64);
            let mut sampler = MuPhiSampler::new(setup.model, setup.potential, setup.grid)?;
            let mut x = sampler.sample(&mut rng)?;
            let mut integ = Integrator::new(&prop, setup.potential, setup.grid, Scheme::StrangExactOu);
            let mut prev = g.value(&x.u, &x.v);
            let mut integral = 0.0;
            let mut out = Vec::with_capacity(steps.len());
            let mut next = 0;
            for s in 1..=last {
                integ.step(&mut x, &mut rng)?;
                let cur = g.value(&x.u, &x.v);
                integral += 0.5 * mc.h * (prev + cur);
                prev = cur;
                if steps[next] == s {
                    out.push(integral / horizons[next]);
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let oracle_mode = match g {
        CylinderFunction::CoordinateV { i } if setup.potential.is_zero() => Some(*i),
        _ => None,
    };
    let mut rows = Vec::new();
    for (j, &t) in horizons.iter().enumerate() {
        let mut sq = Welford::new();
        for a in &averages {
            sq.push((a[j] - gbar).powi(2));
        }
        let error = sq.mean().sqrt();
        let se = if error > 0.0 { (sq.se() / (2.0 * error)).min(sq.se().sqrt()) } else { sq.se().sqrt() };
        let bound = ergodic_bound(theta1, theta2, t, base_norm)?;
        let oracle = oracle_mode.map(|k| ou_time_average_error(setup.model, k, t));
        rows.push(ErgodicRow {
            horizon: t,
            error,
            se,
            bound,
            pass: error <= bound + 3.0 * se,
            oracle,
            oracle_pass: oracle.map(|o| (error - o).abs() <= 3.0 * se),
        });
    }
    Ok(ErgodicReport {
        observable: g.label(),
        stationary_mean: gbar,
        base_norm,
        rows,
    })
}

// ---------------------------------------------------------------------------
// invariance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub t: f64,
    pub mean_change: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub observable: String,
    pub mean_generator: f64,
    pub se: f64,
    pub pass: bool,
    pub drift: Vec<DriftRow>,
}

impl InvarianceRow {
    pub fn all_pass(&self) -> bool {
        self.pass && self.drift.iter().all(|d| d.pass)
    }
}

/// MC means of `L_Φ f` under `μ^Φ`.
pub fn generator_means(
    setup: &Setup<'_>,
    catalog: &[CylinderFunction],
    samples: usize,
) -> Result<Vec<Welford>, ExperimentError> {
    let generator = setup.generator();
    let parts = chunked(samples, |c, len| {
        let mut rng = RngStream::named(setup.seed, StreamTag::Stationary, c as u64);
        let mut sampler = MuPhiSampler::new(setup.model, setup.potential, setup.grid)?;
        let mut acc = vec![Welford::new(); catalog.len()];
        for _ in 0..len {
            let x = sampler.sample(&mut rng)?;
            let dphi = generator.grad_phi(&x.u);
            for (a, f) in acc.iter_mut().zip(catalog) {
                a.push(generator.apply_l_with(f, &x.u, &x.v, &dphi));
            }
        }
        Ok(acc)
    })?;
    Ok(merge_parts(parts, catalog.len()))
}

fn merge_parts(parts: Vec<Vec<Welford>>, width: usize) -> Vec<Welford> {
    let mut out = vec![Welford::new(); width];
    for part in parts {
        for (o, p) in out.iter_mut().zip(&part) {
            o.merge(p);
        }
    }
    out
}

/// Static check of `∫ L_Φ f dμ^Φ = 0` plus the paired drift
/// `f(X_t) − f(X_0)` along stationary trajectories.
pub fn invariance_suite(
    setup: &Setup<'_>,
    catalog: &[CylinderFunction],
    mc: &McParams,
    drift_times: &[f64],
) -> Result<Vec<InvarianceRow>, ExperimentError> {
    let means = generator_means(setup, catalog, mc.invariance_samples)?;
    let drift = if drift_times.is_empty() || mc.dynamic_trajectories == 0 {
        vec![Vec::new(); catalog.len()]
    } else {
        drift_check(setup, catalog, mc, drift_times)?
    };
    Ok(catalog
        .iter()
        .zip(means)
        .zip(drift)
        .map(|((f, w), drift)| InvarianceRow {
            observable: f.label(),
            mean_generator: w.mean(),
            se: w.se(),
            pass: within_three_se(w.mean(), w.se()),
            drift,
        })
        .collect())
}

fn drift_check(
    setup: &Setup<'_>,
    catalog: &[CylinderFunction],
    mc: &McParams,
    times: &[f64],
) -> Result<Vec<Vec<DriftRow>>, ExperimentError> {
    let mut all = vec![0.0];
    all.extend_from_slice(times);
    let steps = check_times(&all, mc.h)?;
    let prop = build_propagator(setup.model, mc.h)?;
    let last = *steps.last().unwrap();
    let parts = chunked(mc.dynamic_trajectories, |c, len| {
        let mut rng = RngStream::named(setup.seed, StreamTag::Trajectory, c as u64);
        let mut sampler = MuPhiSampler::new(setup.model, setup.potential, setup.grid)?;
        let mut acc = vec![Welford::new(); catalog.len() * times.len()];
        let mut integ = Integrator::new(&prop, setup.potential, setup.grid, Scheme::StrangExactOu);
        for _ in 0..len {
            let mut x = sampler.sample(&mut rng)?;
            integ.reset();
            let start: Vec<f64> = catalog.iter().map(|f| f.value(&x.u, &x.v)).collect();
            let mut next = 1;
            for s in 1..=last {
                integ.step(&mut x, &mut rng)?;
                if steps[next] == s {
                    for (o, f) in catalog.iter().enumerate() {
                        acc[o * times.len() + next - 1].push(f.value(&x.u, &x.v) - start[o]);
                    }
                    next += 1;
                }
            }
        }
        Ok(acc)
    })?;
    let merged = merge_parts(parts, catalog.len() * times.len());
    Ok((0..catalog.len())
        .map(|o| {
            times
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    let w = merged[o * times.len() + j];
                    DriftRow {
                        t,
                        mean_change: w.mean(),
                        se: w.se(),
                        pass: within_three_se(w.mean(), w.se()),
                    }
                })
                .collect()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// verification suites

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub suite: String,
    pub name: String,
    /// Observed discrepancy (or test statistic).
    pub value: f64,
    /// Allowed discrepancy.
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(suite: &str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    fn mc(suite: &str, name: impl Into<String>, w: &Welford) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            value: w.mean().abs(),
            tolerance: 3.0 * w.se(),
            pass: within_three_se(w.mean(), w.se()),
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Optional deliberate corruption for exercising failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FaultInjection {
    /// Scale the μ2 variance of one mode in the covariance table fed to the
    /// moment formulas.
    pub tamper_mode: Option<usize>,
    #[serde(default = "default_tamper_factor")]
    pub tamper_factor: f64,
}

fn default_tamper_factor() -> f64 {
    1.01
}

pub const IDENTITY_STATES: usize = 100;

fn random_state(n: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let u = (0..n).map(|_| rng.normal()).collect();
    let v = (0..n).map(|_| rng.normal()).collect();
    (u, v)
}

/// Moment identities, generator actions on coordinates, the second-order
/// projection formulas and the algebraic relation, on random states.
pub fn identity_suite(setup: &Setup<'_>, fault: &FaultInjection) -> Result<Vec<CheckRow>, ExperimentError> {
    const S: &str = "identities";
    let model = setup.model;
    let n = model.modes;
    let c = model.coeffs();
    let generator = setup.generator();
    let mut rng = RngStream::named(setup.seed, StreamTag::Verify, 0);
    let mut rows = Vec::new();

    // Gaussian moments: covariance-pair formula on the coefficient table vs
    // full index expansion with variances recomputed from the spectrum.
    let mut table = GaussianSpec::mu2(model);
    if let Some(k) = fault.tamper_mode {
        if k < n {
            table.variances[k] *= fault.tamper_factor;
        }
    }
    let fresh: Vec<f64> = (1..=n)
        .map(|k| model.spectrum.eigenvalue(k).map(|l| l.powf(model.exponents.alpha2)))
        .collect::<Result<_, _>>()?;
    let mut e2 = 0.0f64;
    let mut e4 = 0.0f64;
    for trial in 0..20 {
        let ls: Vec<Vec<f64>> = (0..4)
            .map(|j| {
                (0..n)
                    .map(|k| if trial == 0 { f64::from(u8::from(k == j % 2)) } else { rng.normal() })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = ls.iter().map(|l| l.as_slice()).collect();
        let a = isserlis_moment(&refs[..2], &table)?;
        let b = gaussian_moment_expansion(&refs[..2], &fresh);
        e2 = e2.max((a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
        let same = [refs[0], refs[0], refs[1], refs[1]];
        for quad in [&refs[..], &same[..]] {
            let a = isserlis_moment(quad, &table)?;
            let b = gaussian_moment_expansion(quad, &fresh);
            e4 = e4.max((a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
        }
    }
    rows.push(CheckRow::new(S, "isserlis order 2", e2, 1e-12));
    rows.push(CheckRow::new(S, "isserlis order 4", e4, 1e-12));

    // Coordinate functions and their products.
    let mut lf = 0.0f64;
    let mut lg = 0.0f64;
    let mut lgg = 0.0f64;
    let mut lff = 0.0f64;
    for _ in 0..IDENTITY_STATES {
        let (u, v) = random_state(n, &mut rng);
        let dphi = generator.grad_phi(&u);
        let lf_i: Vec<f64> = (0..n).map(|i| c.transport[i] * v[i]).collect();
        let lg_i: Vec<f64> = (0..n)
            .map(|i| -c.damping[i] * v[i] - c.restoring[i] * u[i] - c.k12[i] * dphi[i])
            .collect();
        for i in 0..n {
            lf = lf.max(rel_err(generator.apply_l_with(&CylinderFunction::u(i), &u, &v, &dphi), lf_i[i]));
            lg = lg.max(rel_err(generator.apply_l_with(&CylinderFunction::v(i), &u, &v, &dphi), lg_i[i]));
            for j in 0..n {
                let trace = if i == j { 2.0 * c.k22[i] } else { 0.0 };
                let got = generator.apply_l_with(&CylinderFunction::vv(i, j), &u, &v, &dphi);
                lgg = lgg.max(rel_err(got, trace + v[j] * lg_i[i] + v[i] * lg_i[j]));
                let got = generator.apply_l_with(&CylinderFunction::uu(i, j), &u, &v, &dphi);
                lff = lff.max(rel_err(got, u[j] * lf_i[i] + u[i] * lf_i[j]));
            }
        }
    }
    rows.push(CheckRow::new(S, "L f_i", lf, 1e-10));
    rows.push(CheckRow::new(S, "L g_i", lg, 1e-10));
    rows.push(CheckRow::new(S, "L (g_i g_j)", lgg, 1e-10));
    rows.push(CheckRow::new(S, "L (f_i f_j)", lff, 1e-10));

    // Second-order formulas.
    let catalog = crate::generator::default_catalog(n);
    let var_v = &c.q2;
    let mut nested = 0.0f64;
    let mut projected = 0.0f64;
    let mut algebraic = 0.0f64;
    let mut idempotent = 0.0f64;
    for f in &catalog {
        let f_s = generator.project_s(f)?;
        let ap = AppliedAP::new(&f_s, model);
        if let Projection::Closed(inner) = &f_s {
            if generator.project_s(inner)? != f_s {
                idempotent = f64::INFINITY;
            }
        }
        for _ in 0..IDENTITY_STATES / 4 {
            let (u, v) = random_state(n, &mut rng);
            let dphi = generator.grad_phi(&u);
            let frozen = Frozen::at(&f_s, &u);
            let formula = generator.a_squared_p_with(&frozen, &u, &v, &dphi)?;
            nested = nested.max(rel_err(generator.apply_a_with(&ap, &u, &v, &dphi), formula));
            let avg = velocity_expectation(var_v, 3, |w| {
                generator.a_squared_p_with(&frozen, &u, w, &dphi).unwrap_or(f64::NAN)
            });
            projected = projected.max(rel_err(avg, generator.ps_a_squared_p(&frozen, &u)?));
            let zero = velocity_expectation(var_v, 2, |w| ap.value(&u, w));
            algebraic = algebraic.max(zero.abs());
            // P_S of a function of u alone returns it unchanged
            let ps_twice = f_s.value(&u, &v);
            idempotent = idempotent.max((ps_twice - f_s.at(&u)).abs());
        }
    }
    rows.push(CheckRow::new(S, "A^2 P f formula vs nested application", nested, 1e-10));
    rows.push(CheckRow::new(S, "P_S A^2 P f formula vs Hermite projection", projected, 1e-8));
    rows.push(CheckRow::new(S, "P A P f = 0", algebraic, 0.0));
    rows.push(CheckRow::new(S, "P_S P_S = P_S", idempotent, 0.0));
    Ok(rows)
}

/// A function of `u` with derivatives frozen at one point; lets projections
/// be reused across many velocity evaluations.
struct Frozen {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Frozen {
    fn at(f: &Projection, u: &[f64]) -> Self {
        let v = vec![0.0; u.len()];
        Self {
            value: f.value(u, &v),
            grad: f.grad_u(u, &v),
            hess: f.hess_u(u, &v).expect("projection Hessian"),
        }
    }
}

impl CylinderFn for Frozen {
    fn active_modes(&self) -> usize {
        self.grad.len()
    }
    fn v_modes(&self) -> std::collections::BTreeSet<usize> {
        Default::default()
    }
    fn value(&self, _u: &[f64], _v: &[f64]) -> f64 {
        self.value
    }
    fn grad_u(&self, _u: &[f64], _v: &[f64]) -> Vec<f64> {
        self.grad.clone()
    }
    fn grad_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        vec![0.0; v.len()]
    }
    fn hess_u(&self, _u: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        Some(self.hess.clone())
    }
    fn hess_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        vec![0.0; v.len() * v.len()]
    }
}

/// Neumaier summation.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// `P∘P = P` for `P f = P_S f − (f, 1)`, with the mean taken over one
/// reference sample: the centred function has sample mean zero up to
/// round-off.
pub fn centering_check(setup: &Setup<'_>, samples: usize) -> Result<CheckRow, ExperimentError> {
    let generator = setup.generator();
    let mut rng = RngStream::named(setup.seed, StreamTag::Verify, 1);
    let mut sampler = Mu1PhiSampler::new(setup.model, setup.potential, setup.grid)?;
    let us: Vec<Vec<f64>> = (0..samples).map(|_| sampler.sample(&mut rng)).collect::<Result<_, _>>()?;
    let mut worst = 0.0f64;
    for f in crate::generator::default_catalog(setup.model.modes) {
        let f_s = generator.project_s(&f)?;
        let vals: Vec<f64> = us.iter().map(|u| f_s.at(u)).collect();
        let mean = compensated_sum(&vals) / samples as f64;
        let centered: Vec<f64> = vals.iter().map(|x| x - mean).collect();
        let mean2 = compensated_sum(&centered) / samples as f64;
        let scale = vals.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        worst = worst.max(mean2.abs() / scale);
    }
    Ok(CheckRow::new("identities", "P P = P", worst, 1e-14))
}

/// Antisymmetry of `A_Φ` and the Dirichlet-form identity for `S` under `μ^Φ`,
/// as paired MC differences.
pub fn form_checks(setup: &Setup<'_>, samples: usize) -> Result<Vec<CheckRow>, ExperimentError> {
    const S: &str = "forms";
    let generator = setup.generator();
    let catalog = crate::generator::default_catalog(setup.model.modes);
    let k = catalog.len();
    let parts = chunked(samples, |c, len| {
        let mut rng = RngStream::named(setup.seed, StreamTag::Verify, 1000 + c as u64);
        let mut sampler = MuPhiSampler::new(setup.model, setup.potential, setup.grid)?;
        let mut acc = vec![Welford::new(); 2 * k];
        for _ in 0..len {
            let x = sampler.sample(&mut rng)?;
            let dphi = generator.grad_phi(&x.u);
            let vals: Vec<f64> = catalog.iter().map(|f| f.value(&x.u, &x.v)).collect();
            let a: Vec<f64> = catalog.iter().map(|f| generator.apply_a_with(f, &x.u, &x.v, &dphi)).collect();
            for i in 0..k {
                let j = (i + 3) % k;
                acc[i].push(a[i] * vals[j] + vals[i] * a[j]);
                let s = generator.apply_s(&catalog[i], &x.u, &x.v);
                acc[k + i].push(-s * vals[i] - generator.velocity_energy(&catalog[i], &x.u, &x.v));
            }
        }
        Ok(acc)
    })?;
    let merged = merge_parts(parts, 2 * k);
    let mut rows = Vec::new();
    for i in 0..k {
        let j = (i + 3) % k;
        rows.push(CheckRow::mc(S, format!("antisymmetry ({}, {})", catalog[i].label(), catalog[j].label()), &merged[i]));
    }
    for i in 0..k {
        rows.push(CheckRow::mc(S, format!("dirichlet identity {}", catalog[i].label()), &merged[k + i]));
    }
    Ok(rows)
}

/// Functions of `u` alone for the Poincaré check.
pub fn poincare_catalog(modes: usize) -> Vec<CylinderFunction> {
    let second = 1.min(modes - 1);
    let mut q = QuadraticForm::zeros(modes.min(3));
    let m = q.n;
    for i in 0..m {
        q.uu[i * m + i] = 1.0 / (i + 1) as f64;
        q.bu[i] = 0.3;
    }
    vec![
        CylinderFunction::u(0),
        CylinderFunction::uu(0, 0),
        CylinderFunction::uu(0, second),
        CylinderFunction::QuadraticForm(q),
        CylinderFunction::tanh_u((0..modes.min(4)).map(|k| 3.0 / (k + 1) as f64).collect()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareRow {
    pub observable: String,
    pub dirichlet_form: f64,
    pub variance: f64,
    /// `dirichlet_form − λ1^{α1}·variance`
    pub slack: f64,
    pub se: f64,
    pub pass: bool,
}

/// `∫(Q1 Df, Df) dμ1^Φ ≥ λ1^{α1} Var_{μ1^Φ}(f)` up to 3 SE.
pub fn poincare_check(
    setup: &Setup<'_>,
    functions: &[CylinderFunction],
    samples: usize,
) -> Result<Vec<PoincareRow>, ExperimentError> {
    let generator = setup.generator();
    let mut rng = RngStream::named(setup.seed, StreamTag::Verify, 2);
    let mut sampler = Mu1PhiSampler::new(setup.model, setup.potential, setup.grid)?;
    let us: Vec<Vec<f64>> = (0..samples).map(|_| sampler.sample(&mut rng)).collect::<Result<_, _>>()?;
    let zero_v = vec![0.0; setup.model.modes];
    let top = setup.model.coeffs().q1[0];
    let mut rows = Vec::new();
    for f in functions {
        let vals: Vec<f64> = us.iter().map(|u| f.value(u, &zero_v)).collect();
        let mean = vals.iter().sum::<f64>() / samples as f64;
        let mut y = Welford::new();
        let mut form = Welford::new();
        let mut var = Welford::new();
        for (u, val) in us.iter().zip(&vals) {
            let e = generator.position_energy(f, u, &zero_v);
            form.push(e);
            var.push((val - mean).powi(2));
            y.push(e - top * (val - mean).powi(2));
        }
        rows.push(PoincareRow {
            observable: f.label(),
            dirichlet_form: form.mean(),
            variance: var.mean(),
            slack: y.mean(),
            se: y.se(),
            pass: y.mean() >= -3.0 * y.se(),
        });
    }
    Ok(rows)
}

/// `∫₀ʰ e^{As} N e^{Aᵀs} ds` by composite Simpson, with `e^{As}` from a
/// scaled Taylor series.
pub fn simpson_step_covariance(block: &ModeBlock, h: f64, panels: usize) -> Matrix2<f64> {
    let expm = |s: f64| {
        let a = block.drift() * s;
        let norm = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let j = norm.log2().ceil().max(0.0) as i32 + 4;
        let a = a / 2f64.powi(j);
        let mut term = Matrix2::<f64>::identity();
        let mut sum = Matrix2::<f64>::identity();
        for i in 1..25 {
            term = term * a / i as f64;
            sum += term;
        }
        (0..j).fold(sum, |m, _| m * m)
    };
    let f = |s: f64| {
        let e = expm(s);
        e * block.noise() * e.transpose()
    };
    let panels = panels + panels % 2;
    let dx = h / panels as f64;
    let mut acc = f(0.0) + f(h);
    for i in 1..panels {
        acc += f(i as f64 * dx) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * (dx / 3.0)
}

fn max_abs(m: &Matrix2<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Step covariance against quadrature, stationary covariance against the
/// Lyapunov equation, and composed steps against the closed-form law at
/// `t = 1`.
pub fn propagator_suite(model: &ModelConfig, h: f64) -> Result<Vec<CheckRow>, ExperimentError> {
    const S: &str = "propagator";
    let blocks = mode_blocks(model);
    let mut rows = Vec::new();

    let b0 = blocks[0];
    let quad = simpson_step_covariance(&b0, 0.5, 4000);
    let (vl, _) = b0.step_covariance(0.5);
    rows.push(CheckRow::new(S, "step covariance vs Simpson (mode 1, h = 0.5)", max_abs(&(vl - quad)), 1e-9));

    let mut lyap = 0.0f64;
    for b in &blocks {
        let r = b.lyapunov_residual(&b.stationary_covariance());
        lyap = lyap.max(max_abs(&r) / b.q);
    }
    rows.push(CheckRow::new(S, "stationary covariance solves Lyapunov", lyap, 1e-10));

    let prop = build_propagator(model, h)?;
    let steps = whole_steps(1.0, h)?;
    let mut cov_err = 0.0f64;
    let mut mean_err = 0.0f64;
    for (k, b) in blocks.iter().enumerate() {
        let (e, s) = (prop.transitions[k], prop.covariances[k]);
        let mut en = Matrix2::<f64>::identity();
        let mut sn = Matrix2::<f64>::zeros();
        for _ in 0..steps {
            sn = e * sn * e.transpose() + s;
            en = e * en;
        }
        let closed = b.lyapunov_difference(1.0);
        cov_err = cov_err.max(max_abs(&(sn - closed)) / max_abs(&closed));
        let e1 = b.transition(1.0);
        mean_err = mean_err.max(max_abs(&(en - e1)) / max_abs(&e1));
    }
    rows.push(CheckRow::new(S, "composed covariance at t = 1", cov_err, 1e-8));
    rows.push(CheckRow::new(S, "composed mean map at t = 1", mean_err, 1e-8));
    Ok(rows)
}

/// Cumulative distribution of `u_1` under `μ1^Φ` for a one-mode model, by
/// the trapezoid rule on `e^{−Φ(x e1)} e^{−x²/(2λ)}`.
pub fn one_mode_reference_cdf(model: &ModelConfig, potential: &ScalarPotential, grid: &PhysicalGrid) -> impl Fn(f64) -> f64 {
    let nu = model.coeffs().q1[0];
    let sd = nu.sqrt();
    let lo = -8.0 * sd;
    let cells = 20_000usize;
    let dx = 16.0 * sd / cells as f64;
    let dens: Vec<f64> = (0..=cells)
        .map(|i| {
            let x = lo + i as f64 * dx;
            let phi = grid.phi(&[x], potential).unwrap_or(0.0);
            (-phi - x * x / (2.0 * nu)).exp()
        })
        .collect();
    let mut cdf = vec![0.0; cells + 1];
    for i in 1..=cells {
        cdf[i] = cdf[i - 1] + 0.5 * dx * (dens[i] + dens[i - 1]);
    }
    let z = cdf[cells];
    move |x: f64| {
        let pos = ((x - lo) / dx).clamp(0.0, cells as f64);
        let i = (pos.floor() as usize).min(cells - 1);
        let f = pos - i as f64;
        (cdf[i] * (1.0 - f) + cdf[i + 1] * f) / z
    }
}

/// Variances of μ1, μ2 draws, centredness, and the one-mode rejection law.
pub fn sampler_suite(setup: &Setup<'_>, samples: usize) -> Result<Vec<CheckRow>, ExperimentError> {
    const S: &str = "sampler";
    let model = setup.model;
    let n = model.modes;
    let mut rows = Vec::new();
    for (name, spec, idx) in [("mu1", GaussianSpec::mu1(model), 3u64), ("mu2", GaussianSpec::mu2(model), 4)] {
        let mut rng = RngStream::named(setup.seed, StreamTag::Verify, idx);
        let mut acc = vec![Welford::new(); n];
        for _ in 0..samples {
            for (a, x) in acc.iter_mut().zip(sample_gaussian(&spec, n, &mut rng)) {
                a.push(x);
            }
        }
        let var_err = acc
            .iter()
            .zip(&spec.variances)
            .map(|(a, nu)| (a.variance() / nu - 1.0).abs())
            .fold(0.0, f64::max);
        rows.push(CheckRow::new(S, format!("{name} variance relative error"), var_err, 0.05));
        let worst_z = acc.iter().map(|a| a.mean().abs() / a.se()).fold(0.0, f64::max);
        rows.push(CheckRow::new(S, format!("{name} mean in SE units"), worst_z, 3.0));
    }
    let one = model.with_modes(1)?;
    let cdf = one_mode_reference_cdf(&one, setup.potential, setup.grid);
    let mut sampler = Mu1PhiSampler::new(&one, setup.potential, setup.grid)?;
    let mut rng = RngStream::named(setup.seed, StreamTag::Verify, 5);
    let mut xs: Vec<f64> = (0..samples).map(|_| sampler.sample(&mut rng).map(|u| u[0])).collect::<Result<_, _>>()?;
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / m).abs().max((c - (i + 1) as f64 / m).abs())
        })
        .fold(0.0, f64::max);
    rows.push(CheckRow::new(S, "one-mode rejection KS distance", ks, 0.01));
    Ok(rows)
}

/// The initial state used by `simulate`: a stationary draw.
pub fn stationary_start(setup: &Setup<'_>) -> Result<StateVector, ExperimentError> {
    let mut rng = RngStream::named(setup.seed, StreamTag::Simulate, 0);
    Ok(MuPhiSampler::new(setup.model, setup.potential, setup.grid)?.sample(&mut rng)?)
}
