//! Time integration of the truncated Langevin system
//!
//! ```text
//! du_k = λ_k^{β1−α2} v_k dt
//! dv_k = −(λ_k^{β2−α2} v_k + λ_k^{β1−α1} u_k + λ_k^{β1} (DΦ(u))_k) dt + √(2λ_k^{β2}) dW_k
//! ```
//!
//! The default scheme composes an exact per-mode Ornstein–Uhlenbeck step with
//! half kicks of the nonlinear force (Strang splitting).

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::CylinderFn;
use crate::measures::RngStream;
use crate::model::ModelConfig;
use crate::potential::{PhysicalGrid, ScalarPotential};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("horizon {horizon} is not a whole number of output intervals of {interval}")]
    MisalignedGrid { horizon: f64, interval: f64 },
    #[error("non-finite state at step {0}")]
    NonFinite(usize),
    #[error("step covariance of mode {mode} is not positive semidefinite (entry {value:e})")]
    IndefiniteCovariance { mode: usize, value: f64 },
    #[error("state has {got} modes, propagator has {expected}")]
    ModeMismatch { got: usize, expected: usize },
}

/// Spectral coefficients of `(U_t, V_t)` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            v: vec![0.0; n],
            t: 0.0,
        }
    }

    pub fn modes(&self) -> usize {
        self.u.len()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    StrangExactOu,
    EulerMaruyama,
}

/// Coefficients of one mode: `A = [[0, a], [−b, −γ]]`, noise `diag(0, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeBlock {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub q: f64,
    /// `λ^{β1}`: coupling of `DΦ` into the velocity equation.
    pub kick: f64,
    /// Stationary covariance `diag(λ^{α1}, λ^{α2})`.
    pub stationary: (f64, f64),
}

impl ModeBlock {
    pub fn drift(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, self.a, -self.b, -self.gamma)
    }

    pub fn noise(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, 0.0, 0.0, self.q)
    }

    pub fn stationary_covariance(&self) -> Matrix2<f64> {
        Matrix2::new(self.stationary.0, 0.0, 0.0, self.stationary.1)
    }

    /// `exp(A h)` from the eigenvalues `−γ/2 ± δ`, `δ² = γ²/4 − ab`.
    pub fn transition(&self, h: f64) -> Matrix2<f64> {
        let a = self.drift();
        let half = 0.5 * self.gamma;
        let d2 = half * half - self.a * self.b;
        let shifted = a + Matrix2::identity() * half;
        let x2 = d2 * h * h;
        if x2.abs() < 1e-10 {
            // cosh(δh) and sinh(δh)/δ by series in δ²h²
            let c = 1.0 + x2 / 2.0 + x2 * x2 / 24.0;
            let s = h * (1.0 + x2 / 6.0 + x2 * x2 / 120.0);
            return (Matrix2::identity() * c + shifted * s) * (-half * h).exp();
        }
        if d2 < 0.0 {
            let w = (-d2).sqrt();
            let (sn, cs) = (w * h).sin_cos();
            return (Matrix2::identity() * cs + shifted * (sn / w)) * (-half * h).exp();
        }
        let d = d2.sqrt();
        if d * h < 20.0 {
            let (c, s) = ((d * h).cosh(), (d * h).sinh() / d);
            return (Matrix2::identity() * c + shifted * s) * (-half * h).exp();
        }
        // Stiff real case: exponentials of the two eigenvalues separately.
        // μ+ = −ab/(γ/2 + δ) avoids cancellation.
        let mu_minus = -half - d;
        let mu_plus = -self.a * self.b / (half + d);
        let ep = (mu_plus * h).exp();
        let em = (mu_minus * h).exp();
        let id = Matrix2::identity();
        ((a - id * mu_minus) * ep - (a - id * mu_plus) * em) / (mu_plus - mu_minus)
    }

    /// `Σ(h) = ∫₀ʰ e^{As} N e^{Aᵀs} ds` by the Van Loan block exponential;
    /// falls back to `Σ∞ − E Σ∞ Eᵀ` when the block exponential is unusable.
    pub fn step_covariance(&self, h: f64) -> (Matrix2<f64>, CovarianceRoute) {
        if self.gamma * h <= VAN_LOAN_MAX_DAMPING {
            if let Some(s) = self.van_loan(h) {
                return (s, CovarianceRoute::VanLoan);
            }
        }
        (self.lyapunov_difference(h), CovarianceRoute::Lyapunov)
    }

    /// Block exponential of `[[−A, N], [0, Aᵀ]]·h = [[·, F12], [0, F22]]`
    /// with `F22 = e^{Aᵀh}` and `Σ = F22ᵀ F12`.
    pub fn van_loan(&self, h: f64) -> Option<Matrix2<f64>> {
        let a = self.drift();
        let mut m = Matrix4::<f64>::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-a * h));
        m.fixed_view_mut::<2, 2>(0, 2).copy_from(&(self.noise() * h));
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(&(a.transpose() * h));
        let e = m.exp();
        let f12: Matrix2<f64> = e.fixed_view::<2, 2>(0, 2).into();
        let f22: Matrix2<f64> = e.fixed_view::<2, 2>(2, 2).into();
        let s = f22.transpose() * f12;
        let s = (s + s.transpose()) * 0.5;
        s.iter().all(|x| x.is_finite()).then_some(s)
    }

    /// `Σ∞ − E Σ∞ Eᵀ`, exact because `Σ∞` solves the Lyapunov equation.
    pub fn lyapunov_difference(&self, h: f64) -> Matrix2<f64> {
        let e = self.transition(h);
        let p = self.stationary_covariance();
        let s = p - e * p * e.transpose();
        (s + s.transpose()) * 0.5
    }

    /// `A Σ + Σ Aᵀ + N`.
    pub fn lyapunov_residual(&self, sigma: &Matrix2<f64>) -> Matrix2<f64> {
        let a = self.drift();
        a * sigma + sigma * a.transpose() + self.noise()
    }
}

/// Largest `γh` for which the block exponential route is used; beyond it the
/// `e^{γh}` growth of the lower block costs accuracy.
pub const VAN_LOAN_MAX_DAMPING: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceRoute {
    VanLoan,
    Lyapunov,
}

/// Lower-triangular factor of a 2×2 PSD matrix; diagonal round-off down to
/// `−1e−14·trace` is clamped to zero.
pub fn cholesky2(s: &Matrix2<f64>) -> Result<Matrix2<f64>, f64> {
    let tol = 1e-14 * (s[(0, 0)] + s[(1, 1)]).abs();
    let clamp = |x: f64| if x < 0.0 && x >= -tol { 0.0 } else { x };
    let s11 = clamp(s[(0, 0)]);
    if s11 < 0.0 {
        return Err(s11);
    }
    let l11 = s11.sqrt();
    let l21 = if l11 > 0.0 { s[(1, 0)] / l11 } else { 0.0 };
    let r = clamp(s[(1, 1)] - l21 * l21);
    if r < 0.0 {
        return Err(r);
    }
    Ok(Matrix2::new(l11, 0.0, l21, r.sqrt()))
}

/// Per-mode transition tables for a fixed step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ModePropagator {
    pub h: f64,
    pub blocks: Vec<ModeBlock>,
    pub transitions: Vec<Matrix2<f64>>,
    pub covariances: Vec<Matrix2<f64>>,
    pub factors: Vec<Matrix2<f64>>,
    pub routes: Vec<CovarianceRoute>,
    pub noise: bool,
}

pub fn mode_blocks(model: &ModelConfig) -> Vec<ModeBlock> {
    let c = model.coeffs();
    (0..model.modes)
        .map(|k| ModeBlock {
            a: c.transport[k],
            b: c.restoring[k],
            gamma: c.damping[k],
            q: 2.0 * c.k22[k],
            kick: c.k12[k],
            stationary: (c.q1[k], c.q2[k]),
        })
        .collect()
}

pub fn build_propagator(model: &ModelConfig, h: f64) -> Result<ModePropagator, DynamicsError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(DynamicsError::BadStep(h));
    }
    let blocks = mode_blocks(model);
    let mut transitions = Vec::with_capacity(blocks.len());
    let mut covariances = Vec::with_capacity(blocks.len());
    let mut factors = Vec::with_capacity(blocks.len());
    let mut routes = Vec::with_capacity(blocks.len());
    for (mode, b) in blocks.iter().enumerate() {
        transitions.push(b.transition(h));
        let (s, route) = b.step_covariance(h);
        factors.push(cholesky2(&s).map_err(|value| DynamicsError::IndefiniteCovariance { mode, value })?);
        covariances.push(s);
        routes.push(route);
    }
    Ok(ModePropagator {
        h,
        blocks,
        transitions,
        covariances,
        factors,
        routes,
        noise: true,
    })
}

impl ModePropagator {
    pub fn modes(&self) -> usize {
        self.blocks.len()
    }

    /// Same tables with the Brownian forcing switched off.
    pub fn noiseless(mut self) -> Self {
        self.noise = false;
        self
    }
}

/// Stepper with reusable buffers; the force at the current position is
/// cached between steps.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    prop: &'a ModePropagator,
    potential: &'a ScalarPotential,
    grid: &'a PhysicalGrid,
    scheme: Scheme,
    force: Vec<f64>,
    scratch: Vec<f64>,
    force_valid: bool,
    steps: usize,
}

impl<'a> Integrator<'a> {
    pub fn new(prop: &'a ModePropagator, potential: &'a ScalarPotential, grid: &'a PhysicalGrid, scheme: Scheme) -> Self {
        assert!(grid.modes() >= prop.modes(), "grid supports fewer modes than the propagator");
        Self {
            prop,
            potential,
            grid,
            scheme,
            force: vec![0.0; prop.modes()],
            scratch: vec![0.0; grid.len()],
            force_valid: false,
            steps: 0,
        }
    }

    fn refresh_force(&mut self, u: &[f64]) {
        self.grid.grad_phi_into(u, self.potential, &mut self.force, &mut self.scratch);
        self.force_valid = true;
    }

    /// Forget the cached force, e.g. after the caller edits the state.
    pub fn reset(&mut self) {
        self.force_valid = false;
        self.steps = 0;
    }

    fn kick(&mut self, x: &mut StateVector, dt: f64) {
        if self.potential.is_zero() {
            return;
        }
        if !self.force_valid {
            self.refresh_force(&x.u);
        }
        for (k, b) in self.prop.blocks.iter().enumerate() {
            x.v[k] -= dt * b.kick * self.force[k];
        }
    }

    pub fn step(&mut self, x: &mut StateVector, rng: &mut RngStream) -> Result<(), DynamicsError> {
        let n = self.prop.modes();
        if x.modes() != n {
            return Err(DynamicsError::ModeMismatch {
                got: x.modes(),
                expected: n,
            });
        }
        let h = self.prop.h;
        match self.scheme {
            Scheme::StrangExactOu => {
                self.kick(x, 0.5 * h);
                for k in 0..n {
                    let e = &self.prop.transitions[k];
                    let (u, v) = (x.u[k], x.v[k]);
                    let mut nu = e[(0, 0)] * u + e[(0, 1)] * v;
                    let mut nv = e[(1, 0)] * u + e[(1, 1)] * v;
                    if self.prop.noise {
                        let l = &self.prop.factors[k];
                        let (z1, z2) = (rng.normal(), rng.normal());
                        nu += l[(0, 0)] * z1;
                        nv += l[(1, 0)] * z1 + l[(1, 1)] * z2;
                    }
                    x.u[k] = nu;
                    x.v[k] = nv;
                }
                self.force_valid = false;
                self.kick(x, 0.5 * h);
            }
            Scheme::EulerMaruyama => {
                if !self.potential.is_zero() {
                    self.refresh_force(&x.u);
                }
                for (k, b) in self.prop.blocks.iter().enumerate() {
                    let (u, v) = (x.u[k], x.v[k]);
                    let f = if self.potential.is_zero() { 0.0 } else { self.force[k] };
                    x.u[k] = u + h * b.a * v;
                    x.v[k] = v - h * (b.gamma * v + b.b * u + b.kick * f);
                    if self.prop.noise {
                        x.v[k] += (b.q * h).sqrt() * rng.normal();
                    }
                }
                self.force_valid = false;
            }
        }
        x.t += h;
        self.steps += 1;
        if !x.is_finite() {
            return Err(DynamicsError::NonFinite(self.steps));
        }
        Ok(())
    }
}

/// One step of `scheme` from `x`.
pub fn step(
    x: &mut StateVector,
    prop: &ModePropagator,
    potential: &ScalarPotential,
    grid: &PhysicalGrid,
    rng: &mut RngStream,
) -> Result<(), DynamicsError> {
    Integrator::new(prop, potential, grid, Scheme::StrangExactOu).step(x, rng)
}

/// Observable values on an output grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `values[i][j]`: observable `j` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    pub states: Vec<StateVector>,
}

/// Number of steps `T/h` when it is an integer up to round-off.
pub fn whole_steps(horizon: f64, h: f64) -> Result<usize, DynamicsError> {
    let r = horizon / h;
    let n = r.round();
    if !(n >= 0.0) || (r - n).abs() > 1e-9 * n.max(1.0) {
        return Err(DynamicsError::MisalignedGrid {
            horizon,
            interval: h,
        });
    }
    Ok(n as usize)
}

pub struct SimulationSpec<'a, F: CylinderFn> {
    pub horizon: f64,
    /// Output every `stride` steps.
    pub stride: usize,
    pub observables: &'a [F],
    pub keep_states: bool,
    pub scheme: Scheme,
}

pub fn simulate<F: CylinderFn>(
    initial: &StateVector,
    spec: &SimulationSpec<'_, F>,
    prop: &ModePropagator,
    potential: &ScalarPotential,
    grid: &PhysicalGrid,
    rng: &mut RngStream,
) -> Result<Trajectory, DynamicsError> {
    let stride = spec.stride.max(1);
    let total = whole_steps(spec.horizon, prop.h)?;
    if total % stride != 0 {
        return Err(DynamicsError::MisalignedGrid {
            horizon: spec.horizon,
            interval: prop.h * stride as f64,
        });
    }
    let mut x = initial.clone();
    let mut out = Trajectory::default();
    let record = |x: &StateVector, out: &mut Trajectory| {
        out.times.push(x.t);
        out.values.push(spec.observables.iter().map(|f| f.value(&x.u, &x.v)).collect());
        if spec.keep_states {
            out.states.push(x.clone());
        }
    };
    record(&x, &mut out);
    let mut integ = Integrator::new(prop, potential, grid, spec.scheme);
    for i in 1..=total {
        integ.step(&mut x, rng)?;
        if i % stride == 0 {
            record(&x, &mut out);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::CylinderFunction;
    use crate::model::Exponents;
    use proptest::prelude::*;

    fn unit_block(k: usize) -> ModeBlock {
        let m = ModelConfig::dirichlet(Exponents::unit(), k + 1).unwrap();
        mode_blocks(&m)[k]
    }

    fn max_abs(m: &Matrix2<f64>) -> f64 {
        m.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// Composite Simpson on `e^{As} N e^{Aᵀs}` with `e^{As}` from a Taylor
    /// series with scaling and squaring, independent of the closed form.
    fn simpson_covariance(b: &ModeBlock, h: f64, panels: usize) -> Matrix2<f64> {
        let expm = |s: f64| {
            let a = b.drift() * s;
            let j = (max_abs(&a).log2().ceil().max(0.0) as i32) + 4;
            let a = a / 2f64.powi(j);
            let mut term = Matrix2::<f64>::identity();
            let mut sum = Matrix2::identity();
            for i in 1..25 {
                term = term * a / i as f64;
                sum += term;
            }
            (0..j).fold(sum, |m, _| m * m)
        };
        let f = |s: f64| {
            let e = expm(s);
            e * b.noise() * e.transpose()
        };
        let dx = h / panels as f64;
        let mut acc = f(0.0) + f(h);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += f(i as f64 * dx) * w;
        }
        acc * (dx / 3.0)
    }

    #[test]
    fn covariance_matches_quadrature() {
        let b = unit_block(0);
        let (s, route) = b.step_covariance(0.5);
        assert_eq!(route, CovarianceRoute::VanLoan);
        let oracle = simpson_covariance(&b, 0.5, 2000);
        assert!(max_abs(&(s - oracle)) < 1e-9, "{s} vs {oracle}");
    }

    #[test]
    fn small_step_limits() {
        let b = unit_block(2);
        let e = b.transition(1e-12);
        assert!(max_abs(&(e - Matrix2::identity())) < 1e-10);
        let (s, _) = b.step_covariance(1e-12);
        assert!(max_abs(&s) < 1e-10);
    }

    #[test]
    fn stationary_covariance_solves_lyapunov() {
        let m = ModelConfig::dirichlet(Exponents::new(1.2, 0.8, 0.9, 0.7), 8).unwrap();
        for b in mode_blocks(&m) {
            let r = b.lyapunov_residual(&b.stationary_covariance());
            assert!(max_abs(&r) <= 1e-12 * b.q.max(1e-300));
        }
    }

    #[test]
    fn transition_regimes_agree_with_series() {
        // complex, near-defective and real regimes against a plain Taylor sum
        for (a, bb, g) in [(1.0, 1.0, 0.5), (1.0, 1.0, 2.0), (1.0, 1.0, 2.0 + 1e-7), (0.3, 0.2, 5.0)] {
            let blk = ModeBlock {
                a,
                b: bb,
                gamma: g,
                q: 1.0,
                kick: 0.0,
                stationary: (1.0, 1.0),
            };
            let h = 0.3;
            let m = blk.drift() * h;
            let mut term = Matrix2::<f64>::identity();
            let mut sum = Matrix2::identity();
            for i in 1..40 {
                term = term * m / i as f64;
                sum += term;
            }
            assert!(max_abs(&(blk.transition(h) - sum)) < 1e-14, "{a} {bb} {g}");
        }
    }

    #[test]
    fn stiff_modes_use_fallback() {
        // β2 < α2 makes damping grow like k^{2(α2−β2)}
        let m = ModelConfig::dirichlet(Exponents::new(1.0, 1.0, 0.5, 0.1), 64).unwrap();
        let p = build_propagator(&m, 0.1).unwrap();
        assert_eq!(p.routes[0], CovarianceRoute::VanLoan);
        assert_eq!(*p.routes.last().unwrap(), CovarianceRoute::Lyapunov);
        for (blk, s) in p.blocks.iter().zip(&p.covariances) {
            assert!(s.iter().all(|x| x.is_finite()));
            let (vl, _) = (blk.lyapunov_difference(0.1), ());
            assert!(max_abs(&(vl - s)) <= 1e-8 * max_abs(&vl).max(1e-300) || blk.gamma * 0.1 > VAN_LOAN_MAX_DAMPING);
        }
    }

    #[test]
    fn composition_is_exact() {
        let m = ModelConfig::dirichlet(Exponents::unit(), 4).unwrap();
        let p1 = build_propagator(&m, 0.01).unwrap();
        let p2 = build_propagator(&m, 0.02).unwrap();
        for k in 0..4 {
            let (e, s) = (p1.transitions[k], p1.covariances[k]);
            let two = e * s * e.transpose() + s;
            assert!(max_abs(&(two - p2.covariances[k])) <= 1e-9 * max_abs(&p2.covariances[k]));
            assert!(max_abs(&(e * e - p2.transitions[k])) < 1e-13);
        }
    }

    #[test]
    fn noiseless_origin_is_fixed() {
        let m = ModelConfig::dirichlet(Exponents::unit(), 3).unwrap();
        let p = build_propagator(&m, 0.05).unwrap().noiseless();
        let pot = ScalarPotential::zero();
        let g = PhysicalGrid::for_modes(3);
        let mut x = StateVector::zeros(3);
        let mut rng = RngStream::new(0, 0);
        for _ in 0..100 {
            step(&mut x, &p, &pot, &g, &mut rng).unwrap();
        }
        assert_eq!(x.u, vec![0.0; 3]);
        assert_eq!(x.v, vec![0.0; 3]);
        assert!((x.t - 5.0).abs() < 1e-12);
    }

    #[test]
    fn noise_enters_only_velocity() {
        let m = ModelConfig::dirichlet(Exponents::unit(), 3).unwrap();
        let p = build_propagator(&m, 0.05).unwrap().noiseless();
        let pot = ScalarPotential::zero();
        let g = PhysicalGrid::for_modes(3);
        // u moves only if v is nonzero
        let mut x = StateVector::zeros(3);
        x.u[1] = 0.0;
        x.v[0] = 1.0;
        step(&mut x, &p, &pot, &g, &mut RngStream::new(0, 0)).unwrap();
        assert!(x.u[0] != 0.0);
        assert_eq!(x.u[1], 0.0);
        assert_eq!(x.u[2], 0.0);
        for f in &p.factors {
            // first row of the factor is driven only through the velocity
            assert!(f[(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn nan_reports_step_index() {
        let m = ModelConfig::dirichlet(Exponents::unit(), 2).unwrap();
        let p = build_propagator(&m, 0.1).unwrap();
        let pot = ScalarPotential::zero();
        let g = PhysicalGrid::for_modes(2);
        let mut x = StateVector::zeros(2);
        x.v[1] = f64::NAN;
        let mut integ = Integrator::new(&p, &pot, &g, Scheme::StrangExactOu);
        assert_eq!(integ.step(&mut x, &mut RngStream::new(0, 0)), Err(DynamicsError::NonFinite(1)));
    }

    #[test]
    fn simulate_grid_and_empty_observables() {
        let m = ModelConfig::dirichlet(Exponents::unit(), 2).unwrap();
        let p = build_propagator(&m, 0.1).unwrap();
        let pot = ScalarPotential::log_cosh(0.5).unwrap();
        let g = PhysicalGrid::for_modes(2);
        let none: [CylinderFunction; 0] = [];
        let spec = SimulationSpec {
            horizon: 1.0,
            stride: 5,
            observables: &none,
            keep_states: false,
            scheme: Scheme::StrangExactOu,
        };
        let tr = simulate(&StateVector::zeros(2), &spec, &p, &pot, &g, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(tr.times.len(), 3);
        assert!(tr.values.iter().all(|v| v.is_empty()));
        let bad = SimulationSpec { horizon: 1.05, ..spec };
        assert!(simulate(&StateVector::zeros(2), &bad, &p, &pot, &g, &mut RngStream::new(1, 0)).is_err());
    }

    proptest! {
        #[test]
        fn step_covariance_is_psd(
            a1 in 0.6f64..1.6, a2 in 0.6f64..1.6, b1 in 0.3f64..1.5, b2 in 0.3f64..1.5,
            h in 0.001f64..1.0,
        ) {
            let m = ModelConfig::dirichlet(Exponents::new(a1, a2, b1, b2), 12).unwrap();
            let p = build_propagator(&m, h).unwrap();
            for s in &p.covariances {
                prop_assert!((s[(0, 1)] - s[(1, 0)]).abs() <= 1e-15 * max_abs(s));
                prop_assert!(s[(0, 0)] >= 0.0 && s[(1, 1)] >= 0.0);
                let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
                prop_assert!(det >= -1e-12 * max_abs(s).powi(2));
            }
        }
    }
}
