//! Exact samplers for the truncated Gaussian measures μ1, μ2 and for the
//! perturbed measure `μ^Φ = e^{−Φ}μ1 ⊗ μ2`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dynamics::StateVector;
use crate::generator::GaussianSpec;
use crate::model::ModelConfig;
use crate::potential::{PhysicalGrid, PotentialError, ScalarPotential};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("rejection acceptance rate {rate:e} after {proposals} proposals is below {MIN_ACCEPTANCE:e}; potential too strong for rejection sampling")]
    LowAcceptance { rate: f64, proposals: u64 },
    #[error("potential lower bound must be finite")]
    UnboundedPotential,
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

pub const MIN_ACCEPTANCE: f64 = 1e-4;
pub const ACCEPTANCE_WINDOW: u64 = 100_000;

/// Stream tags keep the draws of different program parts disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Stationary = 1,
    Trajectory = 2,
    Verify = 3,
    Decay = 4,
    Ergodic = 5,
    Simulate = 6,
    Reference = 7,
}

/// A reproducible random stream: the same `(seed, id)` pair gives the same
/// draws on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(id);
        Self { seed, id, rng }
    }

    /// Stream `index` within the family `tag`.
    pub fn named(seed: u64, tag: StreamTag, index: u64) -> Self {
        debug_assert!(index < 1 << 40);
        Self::new(seed, ((tag as u64) << 40) | index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Independent `x_k ~ N(0, ν_k)` for the first `n` modes.
pub fn sample_gaussian(spec: &GaussianSpec, n: usize, rng: &mut RngStream) -> Vec<f64> {
    spec.variances[..n].iter().map(|nu| nu.sqrt() * rng.normal()).collect()
}

/// Rejection sampler for `μ1^Φ` with proposal μ1 and acceptance probability
/// `exp(−(Φ(u) − inf φ))`. Keeps running acceptance statistics.
#[derive(Debug, Clone)]
pub struct Mu1PhiSampler<'a> {
    mu1: GaussianSpec,
    potential: &'a ScalarPotential,
    grid: &'a PhysicalGrid,
    modes: usize,
    proposals: u64,
    accepted: u64,
}

impl<'a> Mu1PhiSampler<'a> {
    pub fn new(model: &ModelConfig, potential: &'a ScalarPotential, grid: &'a PhysicalGrid) -> Result<Self, SamplerError> {
        if !potential.lower_bound().is_finite() {
            return Err(SamplerError::UnboundedPotential);
        }
        if grid.modes() < model.modes {
            return Err(PotentialError::TooManyModes {
                len: model.modes,
                cap: grid.modes(),
            }
            .into());
        }
        Ok(Self {
            mu1: GaussianSpec::mu1(model),
            potential,
            grid,
            modes: model.modes,
            proposals: 0,
            accepted: 0,
        })
    }

    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    pub fn sample(&mut self, rng: &mut RngStream) -> Result<Vec<f64>, SamplerError> {
        loop {
            let u = sample_gaussian(&self.mu1, self.modes, rng);
            self.proposals += 1;
            // Φ ≥ inf φ because the quadrature weights sum to one.
            let log_accept = if self.potential.is_zero() {
                0.0
            } else {
                -(self.grid.phi(&u, self.potential)? - self.potential.lower_bound())
            };
            if log_accept >= 0.0 || rng.uniform() < log_accept.exp() {
                self.accepted += 1;
                return Ok(u);
            }
            if self.proposals >= ACCEPTANCE_WINDOW && self.acceptance_rate() < MIN_ACCEPTANCE {
                return Err(SamplerError::LowAcceptance {
                    rate: self.acceptance_rate(),
                    proposals: self.proposals,
                });
            }
        }
    }
}

/// One draw from `μ1^Φ`.
pub fn sample_mu1_phi(
    model: &ModelConfig,
    potential: &ScalarPotential,
    grid: &PhysicalGrid,
    rng: &mut RngStream,
) -> Result<Vec<f64>, SamplerError> {
    Mu1PhiSampler::new(model, potential, grid)?.sample(rng)
}

/// Draws from `μ^Φ = μ1^Φ ⊗ μ2` sharing one rejection sampler.
#[derive(Debug, Clone)]
pub struct MuPhiSampler<'a> {
    inner: Mu1PhiSampler<'a>,
    mu2: GaussianSpec,
}

impl<'a> MuPhiSampler<'a> {
    pub fn new(model: &ModelConfig, potential: &'a ScalarPotential, grid: &'a PhysicalGrid) -> Result<Self, SamplerError> {
        Ok(Self {
            inner: Mu1PhiSampler::new(model, potential, grid)?,
            mu2: GaussianSpec::mu2(model),
        })
    }

    pub fn sample(&mut self, rng: &mut RngStream) -> Result<StateVector, SamplerError> {
        let u = self.inner.sample(rng)?;
        let v = sample_gaussian(&self.mu2, u.len(), rng);
        Ok(StateVector { u, v, t: 0.0 })
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.inner.acceptance_rate()
    }
}

pub fn sample_mu_phi(
    model: &ModelConfig,
    potential: &ScalarPotential,
    grid: &PhysicalGrid,
    rng: &mut RngStream,
) -> Result<StateVector, SamplerError> {
    MuPhiSampler::new(model, potential, grid)?.sample(rng)
}
