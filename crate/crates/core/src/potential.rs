//! The composite potential `Φ(u) = ∫₀¹ φ(u(ξ)) dξ` and its gradient
//! `DΦ(u) = φ′∘u`, evaluated through a midpoint grid on (0,1).

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("potential parameter {0} must be finite and non-negative")]
    BadParameter(f64),
    #[error("declared sup|φ′| = {declared} violated: |φ′({t})| = {observed}")]
    DerivativeBound { declared: f64, t: f64, observed: f64 },
    #[error("declared lower bound {declared} violated: φ({t}) = {observed}")]
    LowerBound { declared: f64, t: f64, observed: f64 },
    #[error("declared convex but midpoint convexity fails near t = {0}")]
    NotConvex(f64),
    #[error("grid needs at least one point")]
    EmptyGrid,
    #[error("coefficient vector of length {len} exceeds grid capacity {cap}")]
    TooManyModes { len: usize, cap: usize },
}

/// Potential as it appears in the JSON config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    Logcosh { c: f64 },
}

impl PotentialSpec {
    pub fn build(&self) -> Result<ScalarPotential, PotentialError> {
        match *self {
            PotentialSpec::Zero => Ok(ScalarPotential::zero()),
            PotentialSpec::Logcosh { c } => ScalarPotential::log_cosh(c),
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Zero,
    LogCosh(f64),
    Explicit { value: ScalarFn, derivative: ScalarFn },
}

/// Scalar function `φ: ℝ → ℝ`, bounded below with bounded derivative.
#[derive(Clone)]
pub struct ScalarPotential {
    kind: Kind,
    derivative_sup: f64,
    convex: bool,
    lower_bound: f64,
}

impl fmt::Debug for ScalarPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarPotential")
            .field("name", &self.name())
            .field("derivative_sup", &self.derivative_sup)
            .field("convex", &self.convex)
            .field("lower_bound", &self.lower_bound)
            .finish()
    }
}

/// `log cosh t` without overflow for large `|t|`.
fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Sampling window for validating declared bounds.
pub const VALIDATION_RANGE: f64 = 50.0;
const VALIDATION_POINTS: usize = 20_001;

impl ScalarPotential {
    pub fn zero() -> Self {
        Self {
            kind: Kind::Zero,
            derivative_sup: 0.0,
            convex: true,
            lower_bound: 0.0,
        }
    }

    /// `φ(t) = c·log cosh t`, `φ′(t) = c·tanh t`.
    pub fn log_cosh(c: f64) -> Result<Self, PotentialError> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(PotentialError::BadParameter(c));
        }
        Ok(Self {
            kind: Kind::LogCosh(c),
            derivative_sup: c,
            convex: true,
            lower_bound: 0.0,
        })
    }

    /// User-supplied pair `(φ, φ′)` with declared bounds. The declarations are
    /// checked by sampling `t ∈ [-50, 50]`; a failed check rejects the pair.
    pub fn explicit_pair<F, G>(
        value: F,
        derivative: G,
        derivative_sup: f64,
        convex: bool,
        lower_bound: f64,
    ) -> Result<Self, PotentialError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(derivative_sup.is_finite() && derivative_sup >= 0.0) {
            return Err(PotentialError::BadParameter(derivative_sup));
        }
        let pot = Self {
            kind: Kind::Explicit {
                value: Arc::new(value),
                derivative: Arc::new(derivative),
            },
            derivative_sup,
            convex,
            lower_bound,
        };
        pot.validate()?;
        Ok(pot)
    }

    pub fn name(&self) -> String {
        match self.kind {
            Kind::Zero => "zero".into(),
            Kind::LogCosh(c) => format!("logcosh({c})"),
            Kind::Explicit { .. } => "explicit".into(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self.kind {
            Kind::Zero => true,
            Kind::LogCosh(c) => c == 0.0,
            Kind::Explicit { .. } => false,
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::LogCosh(c) => c * log_cosh(t),
            Kind::Explicit { value, .. } => value(t),
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::LogCosh(c) => c * t.tanh(),
            Kind::Explicit { derivative, .. } => derivative(t),
        }
    }

    pub fn derivative_sup(&self) -> f64 {
        self.derivative_sup
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    /// Grid check of the declared derivative bound, lower bound and convexity.
    pub fn validate(&self) -> Result<(), PotentialError> {
        let step = 2.0 * VALIDATION_RANGE / (VALIDATION_POINTS - 1) as f64;
        let tol = 1e-12;
        let ts: Vec<f64> = (0..VALIDATION_POINTS)
            .map(|i| -VALIDATION_RANGE + i as f64 * step)
            .collect();
        let values: Vec<f64> = ts.iter().map(|&t| self.value(t)).collect();
        for (&t, &v) in ts.iter().zip(&values) {
            let d = self.derivative(t).abs();
            if !(d <= self.derivative_sup * (1.0 + tol) + tol) {
                return Err(PotentialError::DerivativeBound {
                    declared: self.derivative_sup,
                    t,
                    observed: d,
                });
            }
            if !(v >= self.lower_bound - tol * (1.0 + self.lower_bound.abs())) {
                return Err(PotentialError::LowerBound {
                    declared: self.lower_bound,
                    t,
                    observed: v,
                });
            }
        }
        if self.convex {
            for (i, w) in values.windows(3).enumerate() {
                if w[1] > 0.5 * (w[0] + w[2]) + tol * (1.0 + w[1].abs()) {
                    return Err(PotentialError::NotConvex(ts[i + 1]));
                }
            }
        }
        Ok(())
    }
}

/// Midpoint quadrature grid on (0,1) with the sine table `√2 sin(kπξ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalGrid {
    points: Vec<f64>,
    modes: usize,
    /// Row-major `modes × points`.
    sines: Vec<f64>,
}

impl PhysicalGrid {
    /// `m` midpoints `ξ_j = (j + 1/2)/m` supporting coefficient vectors of up to
    /// `modes` entries.
    pub fn new(m: usize, modes: usize) -> Result<Self, PotentialError> {
        if m == 0 {
            return Err(PotentialError::EmptyGrid);
        }
        let points: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect();
        let mut sines = Vec::with_capacity(m * modes);
        for k in 1..=modes {
            sines.extend(points.iter().map(|&xi| SQRT_2 * (k as f64 * PI * xi).sin()));
        }
        Ok(Self { points, modes, sines })
    }

    /// Default resolution: `m = 4n`.
    pub fn for_modes(modes: usize) -> Self {
        Self::new(4 * modes.max(1), modes).expect("non-empty grid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    fn check(&self, u: &[f64]) -> Result<(), PotentialError> {
        if u.len() > self.modes {
            return Err(PotentialError::TooManyModes {
                len: u.len(),
                cap: self.modes,
            });
        }
        Ok(())
    }

    /// `u(ξ_j) = Σ_k u_k √2 sin(kπξ_j)`.
    pub fn to_physical(&self, u: &[f64]) -> Result<Vec<f64>, PotentialError> {
        self.check(u)?;
        let mut out = vec![0.0; self.len()];
        self.synthesize(u, &mut out);
        Ok(out)
    }

    fn synthesize(&self, u: &[f64], out: &mut [f64]) {
        let m = self.len();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (k, &uk) in u.iter().enumerate() {
            if uk == 0.0 {
                continue;
            }
            let row = &self.sines[k * m..(k + 1) * m];
            for (o, s) in out.iter_mut().zip(row) {
                *o += uk * s;
            }
        }
    }

    /// `Φ(u)` by composite midpoint quadrature.
    pub fn phi(&self, u: &[f64], pot: &ScalarPotential) -> Result<f64, PotentialError> {
        self.check(u)?;
        if pot.is_zero() {
            return Ok(0.0);
        }
        let mut field = vec![0.0; self.len()];
        self.synthesize(u, &mut field);
        Ok(field.iter().map(|&x| pot.value(x)).sum::<f64>() * self.weight())
    }

    /// Spectral coefficients of `φ′∘u`; exactly the gradient of the quadrature
    /// value returned by [`PhysicalGrid::phi`].
    pub fn grad_phi(&self, u: &[f64], pot: &ScalarPotential) -> Result<Vec<f64>, PotentialError> {
        self.check(u)?;
        let mut out = vec![0.0; u.len()];
        let mut scratch = vec![0.0; self.len()];
        self.grad_phi_into(u, pot, &mut out, &mut scratch);
        Ok(out)
    }

    /// Allocation-free gradient for the integrator's inner loop. `out.len()`
    /// coefficients are produced; `scratch` must hold `self.len()` values.
    pub fn grad_phi_into(&self, u: &[f64], pot: &ScalarPotential, out: &mut [f64], scratch: &mut [f64]) {
        if pot.is_zero() {
            out.iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        self.synthesize(u, scratch);
        for x in scratch.iter_mut() {
            *x = pot.derivative(*x);
        }
        let m = self.len();
        let w = self.weight();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.sines[k * m..(k + 1) * m];
            *o = w * row.iter().zip(scratch.iter()).map(|(s, d)| s * d).sum::<f64>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lc(c: f64) -> ScalarPotential {
        ScalarPotential::log_cosh(c).unwrap()
    }

    #[test]
    fn log_cosh_is_stable() {
        assert_eq!(log_cosh(0.0), 0.0);
        assert!((log_cosh(1.0) - 1.0f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(800.0) - (800.0 - LN_2)).abs() < 1e-12);
        assert!(lc(0.5).validate().is_ok());
    }

    #[test]
    fn grid_weights_sum_to_one() {
        let g = PhysicalGrid::new(37, 4).unwrap();
        assert!((g.weight() * g.len() as f64 - 1.0).abs() < 1e-15);
        assert!(g.points().iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(PhysicalGrid::new(0, 1).is_err());
    }

    #[test]
    fn to_physical_examples() {
        // odd m puts a midpoint at ξ = 1/2
        let g = PhysicalGrid::new(33, 3).unwrap();
        let mid = 16;
        assert!((g.points()[mid] - 0.5).abs() < 1e-15);
        assert!(g.to_physical(&[0.0; 3]).unwrap().iter().all(|&x| x == 0.0));
        assert!((g.to_physical(&[1.0]).unwrap()[mid] - SQRT_2).abs() < 1e-15);
        assert!(g.to_physical(&[0.0, 1.0]).unwrap()[mid].abs() < 1e-15);
        assert!(g.to_physical(&[0.0; 4]).is_err());
    }

    #[test]
    fn phi_examples() {
        let g = PhysicalGrid::for_modes(4);
        assert_eq!(g.phi(&[0.0; 4], &ScalarPotential::zero()).unwrap(), 0.0);
        assert_eq!(g.phi(&[0.0; 4], &lc(1.0)).unwrap(), 0.0);
    }

    /// Oracle: the same integral on a 10× finer midpoint grid.
    #[test]
    fn phi_refinement() {
        let coarse = PhysicalGrid::new(100, 1).unwrap();
        let fine = PhysicalGrid::new(1000, 1).unwrap();
        let a = coarse.phi(&[1.0], &lc(1.0)).unwrap();
        let b = fine.phi(&[1.0], &lc(1.0)).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        assert!(a > 0.0);
    }

    #[test]
    fn grad_phi_examples() {
        let g = PhysicalGrid::for_modes(4);
        let u = [0.3, -0.2, 0.5, 0.1];
        assert!(g.grad_phi(&u, &ScalarPotential::zero()).unwrap().iter().all(|&x| x == 0.0));
        assert!(g.grad_phi(&[0.0; 4], &lc(1.0)).unwrap().iter().all(|&x| x == 0.0));
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let grad = g.grad_phi(&e1, &lc(1.0)).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let mut up = e1;
            let mut dn = e1;
            up[k] += h;
            dn[k] -= h;
            let fd = (g.phi(&up, &lc(1.0)).unwrap() - g.phi(&dn, &lc(1.0)).unwrap()) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-6, "mode {k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn explicit_pair_validation() {
        let ok = ScalarPotential::explicit_pair(|t| 0.3 * log_cosh(t), |t| 0.3 * t.tanh(), 0.3, true, 0.0);
        assert!(ok.is_ok());
        let bad_sup = ScalarPotential::explicit_pair(|t| 0.3 * log_cosh(t), |t| 0.3 * t.tanh(), 0.2, true, 0.0);
        assert!(matches!(bad_sup, Err(PotentialError::DerivativeBound { .. })));
        let bad_low = ScalarPotential::explicit_pair(|t| t.sin(), |t| t.cos(), 1.0, false, 0.0);
        assert!(matches!(bad_low, Err(PotentialError::LowerBound { .. })));
        let bad_cvx = ScalarPotential::explicit_pair(|t| t.sin(), |t| t.cos(), 1.0, true, -1.0);
        assert!(matches!(bad_cvx, Err(PotentialError::NotConvex(_))));
        assert!(ScalarPotential::log_cosh(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            u in proptest::collection::vec(-1.5f64..1.5, 1..=8), c in 0.1f64..1.5
        ) {
            let n = u.len();
            let g = PhysicalGrid::for_modes(n);
            let pot = lc(c);
            let grad = g.grad_phi(&u, &pot).unwrap();
            let h = 1e-5;
            for k in 0..n {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (g.phi(&up, &pot).unwrap() - g.phi(&dn, &pot).unwrap()) / (2.0 * h);
                let scale = grad[k].abs().max(1e-3);
                prop_assert!((grad[k] - fd).abs() <= 1e-5 * scale, "k={} {} vs {}", k, grad[k], fd);
            }
        }

        #[test]
        fn gradient_coefficients_bounded(
            u in proptest::collection::vec(-20.0f64..20.0, 1..=8), c in 0.0f64..2.0
        ) {
            let g = PhysicalGrid::for_modes(u.len());
            let pot = lc(c);
            for coef in g.grad_phi(&u, &pot).unwrap() {
                prop_assert!(coef.abs() <= pot.derivative_sup() * SQRT_2 + 1e-12);
            }
        }

        #[test]
        fn log_cosh_midpoint_convex(s in -30.0f64..30.0, t in -30.0f64..30.0) {
            let p = lc(0.7);
            prop_assert!(p.value(0.5 * (s + t)) <= 0.5 * (p.value(s) + p.value(t)) + 1e-12);
        }
    }
}
