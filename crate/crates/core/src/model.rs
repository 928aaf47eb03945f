//! Model parameters and the per-mode coefficient tables derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral_ops::{BaseSpectrum, SpectralError, SpectrumRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("exponent {name} = {value} must be finite")]
    NonFinite { name: &'static str, value: f64 },
    #[error("exponent {name} = {value} out of range ({range})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("mode count must be at least 1")]
    NoModes,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Exponents of `Q1 = Q^α1`, `Q2 = Q^α2`, `K12 = K21 = Q^β1`, `K22 = Q^β2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Exponents {
    pub const fn new(alpha1: f64, alpha2: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            alpha1,
            alpha2,
            beta1,
            beta2,
        }
    }

    /// All exponents equal to one.
    pub const fn unit() -> Self {
        Self::new(1.0, 1.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !value.is_finite() {
                return Err(ModelError::NonFinite { name, value });
            }
        }
        for (name, value) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if value <= 0.0 {
                return Err(ModelError::OutOfRange {
                    name,
                    value,
                    range: "(0, ∞)",
                });
            }
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if value < 0.0 {
                return Err(ModelError::OutOfRange {
                    name,
                    value,
                    range: "[0, ∞)",
                });
            }
        }
        Ok(())
    }
}

/// A validated Galerkin model: exponents, base spectrum and mode count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub exponents: Exponents,
    pub spectrum: BaseSpectrum,
    pub modes: usize,
    coeffs: Coefficients,
}

/// Per-mode eigenvalues of every operator that appears in the generator.
/// Entry `i` belongs to mode `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// `λ_k`
    pub lambda: Vec<f64>,
    /// `λ_k^{α1}`: covariance of μ1.
    pub q1: Vec<f64>,
    /// `λ_k^{α2}`: covariance of μ2.
    pub q2: Vec<f64>,
    /// `λ_k^{β1}`: `K12 = K21`.
    pub k12: Vec<f64>,
    /// `λ_k^{β2}`: `K22`.
    pub k22: Vec<f64>,
    /// `λ_k^{β2-α2}`: `Q2⁻¹K22`, velocity damping.
    pub damping: Vec<f64>,
    /// `λ_k^{β1-α2}`: `Q2⁻¹K12`, position transport.
    pub transport: Vec<f64>,
    /// `λ_k^{β1-α1}`: `Q1⁻¹K21`, restoring force.
    pub restoring: Vec<f64>,
    /// `λ_k^{2β1-α2}`: `C = K21 Q2⁻¹ K12`.
    pub c: Vec<f64>,
    /// `λ_k^{2β1-α1-α2}`: `Q1⁻¹C`.
    pub q1_inv_c: Vec<f64>,
}

impl Coefficients {
    fn new(lambda: Vec<f64>, e: &Exponents) -> Self {
        let pow = |g: f64| lambda.iter().map(|l| l.powf(g)).collect::<Vec<_>>();
        Self {
            q1: pow(e.alpha1),
            q2: pow(e.alpha2),
            k12: pow(e.beta1),
            k22: pow(e.beta2),
            damping: pow(e.beta2 - e.alpha2),
            transport: pow(e.beta1 - e.alpha2),
            restoring: pow(e.beta1 - e.alpha1),
            c: pow(2.0 * e.beta1 - e.alpha2),
            q1_inv_c: pow(2.0 * e.beta1 - e.alpha1 - e.alpha2),
            lambda,
        }
    }
}

impl ModelConfig {
    pub fn new(exponents: Exponents, spectrum: BaseSpectrum, modes: usize) -> Result<Self, ModelError> {
        exponents.validate()?;
        if modes == 0 {
            return Err(ModelError::NoModes);
        }
        let lambda = spectrum.first(modes)?;
        let coeffs = Coefficients::new(lambda, &exponents);
        Ok(Self {
            exponents,
            spectrum,
            modes,
            coeffs,
        })
    }

    /// Dirichlet spectrum truncated to `modes`.
    pub fn dirichlet(exponents: Exponents, modes: usize) -> Result<Self, ModelError> {
        Self::new(exponents, BaseSpectrum::dirichlet(modes.max(1)), modes)
    }

    pub fn from_rule(exponents: Exponents, rule: &SpectrumRule, modes: usize) -> Result<Self, ModelError> {
        let spectrum = BaseSpectrum::from_rule(rule, modes.max(1))?;
        Self::new(exponents, spectrum, modes)
    }

    pub fn coeffs(&self) -> &Coefficients {
        &self.coeffs
    }

    /// Same exponents and spectrum with a different truncation level.
    pub fn with_modes(&self, modes: usize) -> Result<Self, ModelError> {
        let spectrum = if self.spectrum.is_dirichlet() {
            BaseSpectrum::dirichlet(modes.max(self.spectrum.n_max()))
        } else {
            self.spectrum.clone()
        };
        Self::new(self.exponents, spectrum, modes)
    }
}
