//! Parameter conditions, hypocoercivity constants and the explicit rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::potential::ScalarPotential;
use crate::spectral_ops::summability;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("rate constants unavailable; failed conditions: {}", .0.join(", "))]
    Preconditions(Vec<String>),
    #[error("theta1 must exceed 1, got {0}")]
    Theta1(f64),
    #[error("certificate constants must be positive and finite")]
    BadConstants,
    #[error("theta2 must be positive, got {0}")]
    Theta2(f64),
    #[error("time must be positive, got {0}")]
    Time(f64),
}

/// One checked inequality. `requirement` is the inequality that must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub holds: bool,
    pub requirement: String,
    pub detail: String,
    /// Set when the verdict rests on the decay heuristic of an explicit
    /// spectrum.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub heuristic: bool,
}

impl Condition {
    fn exact(holds: bool, requirement: &str, detail: String) -> Self {
        Self {
            holds,
            requirement: requirement.to_owned(),
            detail,
            heuristic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `(λ_k^{α1}) ∈ l¹`
    pub summable_alpha1: Condition,
    /// `(λ_k^{α2}) ∈ l¹`
    pub summable_alpha2: Condition,
    /// `β2 ≤ 2β1`
    pub m_dissipative: Condition,
    /// `K22` trace class
    pub trace_class_k22: Condition,
    /// `α1 = α2`, or both `λ^{β1 ± (α2−α1)/2}` summable
    pub process_ok: Condition,
    /// `sup|φ′| < ½ λ1^{−α1/2}`
    pub gradient_bound: Condition,
    pub convex: Condition,
    /// `β2 − α2 ≤ 0` and `2β1 − α1 ≤ 2β2 − α2`
    pub hypo_ok: Condition,
    /// Implied by `hypo_ok`: `2β1 − α2 ≤ α1`.
    pub macroscopic: Condition,
    /// `sup_k λ_k^{2β1−β2}`; `None` when unbounded.
    pub c_k: Option<f64>,
}

impl ConditionReport {
    pub fn entries(&self) -> [(&'static str, &Condition); 9] {
        [
            ("summable_alpha1", &self.summable_alpha1),
            ("summable_alpha2", &self.summable_alpha2),
            ("m_dissipative", &self.m_dissipative),
            ("trace_class_k22", &self.trace_class_k22),
            ("process_ok", &self.process_ok),
            ("gradient_bound", &self.gradient_bound),
            ("convex", &self.convex),
            ("hypo_ok", &self.hypo_ok),
            ("macroscopic", &self.macroscopic),
        ]
    }

    pub fn all_pass(&self) -> bool {
        self.entries().iter().all(|(_, c)| c.holds)
    }

    pub fn failures(&self) -> Vec<String> {
        self.entries()
            .iter()
            .filter(|(_, c)| !c.holds)
            .map(|(name, c)| format!("{name}: {}", c.requirement))
            .collect()
    }

    /// Conditions the rate constants rest on.
    pub fn rate_failures(&self) -> Vec<String> {
        [
            ("summable_alpha1", &self.summable_alpha1),
            ("summable_alpha2", &self.summable_alpha2),
            ("m_dissipative", &self.m_dissipative),
            ("gradient_bound", &self.gradient_bound),
            ("convex", &self.convex),
            ("hypo_ok", &self.hypo_ok),
        ]
        .iter()
        .filter(|(_, c)| !c.holds)
        .map(|(name, c)| format!("{name}: {}", c.requirement))
        .collect()
    }
}

fn summable_condition(model: &ModelConfig, gamma: f64, requirement: &str, what: &str) -> Condition {
    let s = summability(&model.spectrum, gamma);
    Condition {
        holds: s.summable,
        requirement: requirement.to_owned(),
        detail: match s.partial_sum {
            Some(p) => format!("{what}: exponent {gamma}, partial sum {p:.6e}"),
            None => format!("{what}: exponent {gamma}"),
        },
        heuristic: !s.rigorous,
    }
}

/// Evaluate every parameter condition for `model` and `potential`.
pub fn check_conditions(model: &ModelConfig, potential: &ScalarPotential) -> ConditionReport {
    let e = model.exponents;
    let (a1, a2, b1, b2) = (e.alpha1, e.alpha2, e.beta1, e.beta2);
    let lambda1 = model.spectrum.top();

    let process_ok = if a1 == a2 {
        Condition::exact(true, "α_1 = α_2", "α_1 = α_2".into())
    } else {
        let plus = summable_condition(model, b1 + (a2 - a1) / 2.0, "", "");
        let minus = summable_condition(model, b1 + (a1 - a2) / 2.0, "", "");
        Condition {
            holds: plus.holds && minus.holds,
            requirement: "α_1 = α_2 or β_1 ± (α_2 − α_1)/2 > 1/2".into(),
            detail: format!(
                "β_1 + (α_2−α_1)/2 = {}, β_1 + (α_1−α_2)/2 = {}",
                b1 + (a2 - a1) / 2.0,
                b1 + (a1 - a2) / 2.0
            ),
            heuristic: plus.heuristic || minus.heuristic,
        }
    };

    let threshold = 0.5 * lambda1.powf(-a1 / 2.0);
    let sup = potential.derivative_sup();
    let c_k = if 2.0 * b1 >= b2 {
        // λ_k < 1 and exponent ≥ 0: the supremum sits at k = 1
        Some(lambda1.powf(2.0 * b1 - b2))
    } else {
        None
    };

    ConditionReport {
        summable_alpha1: summable_condition(model, a1, "α_1 > 1/2", "λ^{α_1}"),
        summable_alpha2: summable_condition(model, a2, "α_2 > 1/2", "λ^{α_2}"),
        m_dissipative: Condition::exact(b2 <= 2.0 * b1, "β_2 ≤ 2β_1", format!("β_2 = {b2}, 2β_1 = {}", 2.0 * b1)),
        trace_class_k22: summable_condition(model, b2, "β_2 > 1/2", "λ^{β_2}"),
        process_ok,
        gradient_bound: Condition::exact(
            sup < threshold,
            "sup|φ′| < (1/2)·λ_1^{−α_1/2}",
            format!("sup|φ′| = {sup}, bound = {threshold}"),
        ),
        convex: Condition::exact(potential.is_convex(), "φ convex", potential.name()),
        hypo_ok: Condition::exact(
            b2 - a2 <= 0.0 && 2.0 * b1 - a1 <= 2.0 * b2 - a2,
            "β_2 − α_2 ≤ 0 and 2β_1 − α_1 ≤ 2β_2 − α_2",
            format!("β_2 − α_2 = {}, 2β_1 − α_1 = {}, 2β_2 − α_2 = {}", b2 - a2, 2.0 * b1 - a1, 2.0 * b2 - a2),
        ),
        macroscopic: Condition::exact(
            2.0 * b1 - a2 <= a1,
            "2β_1 − α_2 ≤ α_1",
            format!("2β_1 − α_2 = {}, α_1 = {a1}", 2.0 * b1 - a2),
        ),
        c_k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RateVariant {
    /// Prefactor 1/4.
    #[default]
    #[serde(rename = "thm5_2")]
    Thm5_2,
    /// Prefactor 1/2.
    #[serde(rename = "thm6_10")]
    Thm6_10,
}

impl RateVariant {
    pub fn prefactor(self) -> f64 {
        match self {
            RateVariant::Thm5_2 => 0.25,
            RateVariant::Thm6_10 => 0.5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RateVariant::Thm5_2 => "thm5_2",
            RateVariant::Thm6_10 => "thm6_10",
        }
    }
}

impl std::str::FromStr for RateVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thm5_2" => Ok(Self::Thm5_2),
            "thm6_10" => Ok(Self::Thm6_10),
            other => Err(format!("unknown rate variant {other:?} (expected thm5_2 or thm6_10)")),
        }
    }
}

/// Constants feeding the rate formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    /// Microscopic coercivity `Λ_m`.
    pub omega1: f64,
    /// Macroscopic coercivity `Λ_M`.
    pub omega2: f64,
    /// Auxiliary bound `c_1`.
    #[serde(rename = "C1")]
    pub c1: f64,
    /// Auxiliary bound `c_2`.
    pub c2: f64,
}

pub const C2: f64 = 2.0 * std::f64::consts::SQRT_2;

impl RateConstants {
    pub fn new(omega1: f64, omega2: f64, c1: f64) -> Self {
        Self {
            omega1,
            omega2,
            c1,
            c2: C2,
        }
    }

    /// Constants for `K22 = αQ2` with `λ1` the top eigenvalue of `Q1`:
    /// `ω1 = αλ1`, `C1 = α`, `ω2 = λ1`.
    pub fn scaled_damping(alpha: f64, lambda1: f64) -> Self {
        Self::new(alpha * lambda1, lambda1, alpha)
    }

    fn valid(&self) -> bool {
        [self.omega1, self.omega2, self.c1, self.c2]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub conditions: ConditionReport,
    pub constants: RateConstants,
}

/// `ω1 = λ1^{β2−α2}`, `ω2 = λ1^{α1}`, `C1 = 2`, `c2 = 2√2`.
///
/// `ω1`: `K22 Q2⁻¹ = Q^{β2−α2}` has smallest eigenvalue `λ1^{β2−α2}` when
/// `β2 ≤ α2`, so the semigroup bound holds with `M1 = 1`.
/// `ω2`: Poincaré for `μ1^Φ` with the top eigenvalue of `Q1`, transferred
/// through `2β1 − α2 ≤ α1`.
/// `C1`: the regularity factor 4 bounds `C1²`, transferred through
/// `2β1 − α1 ≤ 2β2 − α2`.
pub fn derive_constants(model: &ModelConfig, report: &ConditionReport) -> Result<RateCertificate, CertError> {
    let failures = report.rate_failures();
    if !failures.is_empty() {
        return Err(CertError::Preconditions(failures));
    }
    let e = model.exponents;
    let lambda1 = model.spectrum.top();
    Ok(RateCertificate {
        conditions: report.clone(),
        constants: RateConstants::new(lambda1.powf(e.beta2 - e.alpha2), lambda1.powf(e.alpha1), 2.0),
    })
}

/// `θ2 = p·((θ1−1)/θ1)·min{Λ_m, c1}/(r + s)·Λ_M/(1+Λ_M)` with
/// `r = (1+c1+c2)(1 + (1+Λ_M)/(2Λ_M)·(1+c1+c2))`, `s = ½Λ_M/(1+Λ_M)` and
/// prefactor `p` from the variant.
pub fn compute_theta2(constants: &RateConstants, theta1: f64, variant: RateVariant) -> Result<f64, CertError> {
    if !(theta1 > 1.0 && theta1.is_finite()) {
        return Err(CertError::Theta1(theta1));
    }
    if !constants.valid() {
        return Err(CertError::BadConstants);
    }
    let RateConstants { omega1, omega2, c1, c2 } = *constants;
    let lm = omega1.min(c1);
    let big = omega2;
    let k = 1.0 + c1 + c2;
    let r = k * (1.0 + (1.0 + big) / (2.0 * big) * k);
    let s = 0.5 * big / (1.0 + big);
    Ok(variant.prefactor() * ((theta1 - 1.0) / theta1) * lm / (r + s) * big / (1.0 + big))
}

/// `(1/√t)·√((2θ1/θ2)(1 − (1 − e^{−x})/x))·base`, `x = tθ2`.
pub fn ergodic_bound(theta1: f64, theta2: f64, t: f64, base_norm: f64) -> Result<f64, CertError> {
    if !(theta2 > 0.0) {
        return Err(CertError::Theta2(theta2));
    }
    if !(t > 0.0) {
        return Err(CertError::Time(t));
    }
    let x = t * theta2;
    let bracket = if x < ERGODIC_SERIES_SWITCH {
        x / 2.0 - x * x / 6.0 + x * x * x / 24.0
    } else {
        1.0 - (-x).exp_m1() / -x
    };
    Ok((2.0 * theta1 / theta2 * bracket).sqrt() / t.sqrt() * base_norm)
}

pub const ERGODIC_SERIES_SWITCH: f64 = 1e-4;
