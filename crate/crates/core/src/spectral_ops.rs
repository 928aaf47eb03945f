//! Diagonal operator algebra over the shared sine eigenbasis.
//!
//! Every operator in the model (`Q`, `Q1`, `Q2`, `K12`, `K22`, `C`, ...) is a
//! real power `Q^γ` of one base operator `Q` with strictly decreasing positive
//! eigenvalues `λ_1 > λ_2 > ...`, all below one.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("mode index {k} out of range 1..={n_max}")]
    IndexOutOfRange { k: usize, n_max: usize },
    #[error("vector of length {len} exceeds spectrum capacity {n_max}")]
    LengthMismatch { len: usize, n_max: usize },
    #[error("invalid eigenvalue list: {0}")]
    InvalidSpectrum(String),
    #[error("operator Q^{exponent} is not summable; trace undefined")]
    NotSummable { exponent: f64 },
    #[error("non-finite exponent {0}")]
    NonFiniteExponent(f64),
}

/// How the base eigenvalues are generated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumRule {
    #[default]
    /// `λ_k = 1/(k²π²)`, the inverse negative Dirichlet Laplacian on (0,1).
    Dirichlet,
    /// A finite explicit list, strictly decreasing and bounded by one.
    Explicit { eigenvalues: Vec<f64> },
}

/// Base spectrum `λ_1 > λ_2 > ... > 0` of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSpectrum {
    rule: Rule,
    n_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Dirichlet,
    Explicit(Arc<[f64]>),
}

impl BaseSpectrum {
    /// Dirichlet spectrum available for modes `1..=n_max`.
    pub fn dirichlet(n_max: usize) -> Self {
        Self {
            rule: Rule::Dirichlet,
            n_max,
        }
    }

    pub fn explicit(eigenvalues: Vec<f64>) -> Result<Self, SpectralError> {
        if eigenvalues.is_empty() {
            return Err(SpectralError::InvalidSpectrum("empty list".into()));
        }
        for (idx, &l) in eigenvalues.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(SpectralError::InvalidSpectrum(format!(
                    "λ_{} = {l} is not a positive finite number",
                    idx + 1
                )));
            }
        }
        if eigenvalues[0] >= 1.0 {
            return Err(SpectralError::InvalidSpectrum(format!(
                "λ_1 = {} must be < 1",
                eigenvalues[0]
            )));
        }
        if let Some(w) = eigenvalues.windows(2).position(|w| w[1] >= w[0]) {
            return Err(SpectralError::InvalidSpectrum(format!(
                "not strictly decreasing at λ_{} = {} ≤ λ_{} = {}",
                w + 1,
                eigenvalues[w],
                w + 2,
                eigenvalues[w + 1]
            )));
        }
        let n_max = eigenvalues.len();
        Ok(Self {
            rule: Rule::Explicit(eigenvalues.into()),
            n_max,
        })
    }

    pub fn from_rule(rule: &SpectrumRule, n_max: usize) -> Result<Self, SpectralError> {
        match rule {
            SpectrumRule::Dirichlet => Ok(Self::dirichlet(n_max)),
            SpectrumRule::Explicit { eigenvalues } => Self::explicit(eigenvalues.clone()),
        }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self.rule, Rule::Dirichlet)
    }

    /// `λ_k` for the 1-based mode number `k`.
    pub fn eigenvalue(&self, k: usize) -> Result<f64, SpectralError> {
        if k == 0 || k > self.n_max {
            return Err(SpectralError::IndexOutOfRange { k, n_max: self.n_max });
        }
        Ok(self.eigenvalue_unchecked(k))
    }

    fn eigenvalue_unchecked(&self, k: usize) -> f64 {
        match &self.rule {
            Rule::Dirichlet => {
                let kpi = k as f64 * PI;
                1.0 / (kpi * kpi)
            }
            Rule::Explicit(list) => list[k - 1],
        }
    }

    /// The first `n` eigenvalues.
    pub fn first(&self, n: usize) -> Result<Vec<f64>, SpectralError> {
        if n > self.n_max {
            return Err(SpectralError::LengthMismatch { len: n, n_max: self.n_max });
        }
        Ok((1..=n).map(|k| self.eigenvalue_unchecked(k)).collect())
    }

    /// Top eigenvalue `λ_1`.
    pub fn top(&self) -> f64 {
        self.eigenvalue_unchecked(1)
    }

    pub fn power(&self, exponent: f64) -> Result<DiagonalOperator, SpectralError> {
        DiagonalOperator::new(self.clone(), exponent)
    }
}

/// Verdict of a summability check for `(λ_k^γ)_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summability {
    pub summable: bool,
    /// `false` when the verdict comes from the partial-sum heuristic.
    pub rigorous: bool,
    /// Partial sum over the available terms, reported for heuristic verdicts.
    pub partial_sum: Option<f64>,
}

/// Partial trace plus a bound on the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEstimate {
    pub partial_sum: f64,
    pub n_terms: usize,
    /// Integral-test bound on `Σ_{k>n_terms} λ_k^γ`; `None` for explicit lists.
    pub tail_bound: Option<f64>,
}

impl TraceEstimate {
    pub fn upper(&self) -> f64 {
        self.partial_sum + self.tail_bound.unwrap_or(0.0)
    }
}

/// `Q^γ` acting diagonally on spectral coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalOperator {
    base: BaseSpectrum,
    exponent: f64,
}

/// Minimum number of explicit eigenvalues before the decay-slope heuristic
/// gives a verdict; shorter lists are reported as not summable.
pub const HEURISTIC_MIN_TERMS: usize = 8;

impl DiagonalOperator {
    pub fn new(base: BaseSpectrum, exponent: f64) -> Result<Self, SpectralError> {
        if !exponent.is_finite() {
            return Err(SpectralError::NonFiniteExponent(exponent));
        }
        Ok(Self { base, exponent })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn base(&self) -> &BaseSpectrum {
        &self.base
    }

    /// `λ_k^γ` for the 1-based mode number `k`.
    pub fn eigenvalue(&self, k: usize) -> Result<f64, SpectralError> {
        Ok(self.base.eigenvalue(k)?.powf(self.exponent))
    }

    /// The first `n` eigenvalues of `Q^γ`.
    pub fn diagonal(&self, n: usize) -> Result<Vec<f64>, SpectralError> {
        Ok(self
            .base
            .first(n)?
            .into_iter()
            .map(|l| l.powf(self.exponent))
            .collect())
    }

    /// Componentwise `λ_k^γ x_k`; `x` holds the leading coefficients.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, SpectralError> {
        if x.len() > self.base.n_max {
            return Err(SpectralError::LengthMismatch {
                len: x.len(),
                n_max: self.base.n_max,
            });
        }
        Ok(x.iter()
            .enumerate()
            .map(|(i, &xi)| self.base.eigenvalue_unchecked(i + 1).powf(self.exponent) * xi)
            .collect())
    }

    pub fn is_summable(&self) -> Summability {
        summability(&self.base, self.exponent)
    }

    /// `Σ_{k ≤ n_terms} λ_k^γ` with an integral-test tail bound.
    pub fn trace(&self, n_terms: usize) -> Result<TraceEstimate, SpectralError> {
        if !self.is_summable().summable {
            return Err(SpectralError::NotSummable { exponent: self.exponent });
        }
        let n_terms = match self.base.rule {
            Rule::Dirichlet => n_terms,
            Rule::Explicit(_) => n_terms.min(self.base.n_max),
        };
        // Sum smallest terms first.
        let partial_sum: f64 = (1..=n_terms)
            .rev()
            .map(|k| self.base.eigenvalue_unchecked(k).powf(self.exponent))
            .sum();
        let tail_bound = match self.base.rule {
            // Σ_{k>n} (kπ)^{-2γ} ≤ ∫_n^∞ (xπ)^{-2γ} dx = π^{-2γ} n^{1-2γ} / (2γ-1)
            Rule::Dirichlet => {
                let two_gamma = 2.0 * self.exponent;
                let n = (n_terms.max(1)) as f64;
                let bound = PI.powf(-two_gamma) * n.powf(1.0 - two_gamma) / (two_gamma - 1.0);
                Some(if n_terms == 0 { bound + PI.powf(-two_gamma) } else { bound })
            }
            Rule::Explicit(_) => None,
        };
        Ok(TraceEstimate {
            partial_sum,
            n_terms,
            tail_bound,
        })
    }
}

/// Summability of `(λ_k^γ)_k`.
///
/// Dirichlet: `λ_k^γ ~ k^{-2γ}`, summable iff `γ > 1/2`. Explicit lists use a
/// heuristic: the log-log decay slope `p` of the terms over the second half of
/// the list, summable iff `p > 1`.
pub fn summability(base: &BaseSpectrum, exponent: f64) -> Summability {
    match &base.rule {
        Rule::Dirichlet => Summability {
            summable: exponent > 0.5,
            rigorous: true,
            partial_sum: None,
        },
        Rule::Explicit(list) => {
            let terms: Vec<f64> = list.iter().map(|l| l.powf(exponent)).collect();
            let partial_sum = terms.iter().sum();
            let summable = if exponent <= 0.0 || terms.len() < HEURISTIC_MIN_TERMS {
                false
            } else {
                decay_slope(&terms) > 1.0
            };
            Summability {
                summable,
                rigorous: false,
                partial_sum: Some(partial_sum),
            }
        }
    }
}

/// Least-squares slope `p` of `log a_k = c - p log k` over the second half.
fn decay_slope(terms: &[f64]) -> f64 {
    let start = terms.len() / 2;
    let pts: Vec<(f64, f64)> = terms[start..]
        .iter()
        .enumerate()
        .map(|(i, &a)| (((start + i + 1) as f64).ln(), a.ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    -sxy / sxx
}
