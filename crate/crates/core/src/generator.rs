//! The Langevin generator `L_Φ = S − A_Φ` on cylinder functions, the
//! projections `P_S` and `P`, and the Gaussian moment identities used by the
//! hypocoercivity estimates.
//!
//! With all operators diagonal in the sine basis, for a cylinder function `f`
//! of the first `n` modes:
//!
//! ```text
//! S f   = Σ_k λ_k^{β2} ∂²_{k,2} f − Σ_k λ_k^{β2−α2} v_k ∂_{k,2} f
//! A_Φ f = Σ_k λ_k^{β1−α1} u_k ∂_{k,2} f + Σ_k λ_k^{β1} (DΦ(u))_k ∂_{k,2} f
//!         − Σ_k λ_k^{β1−α2} v_k ∂_{k,1} f
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::potential::{PhysicalGrid, ScalarPotential};
use crate::quadrature::GaussHermite;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("function touches mode index {index} but the model has {modes} modes")]
    ModeOutOfRange { index: usize, modes: usize },
    #[error("Hermite projection over {0} velocity modes is too expensive (max {MAX_HERMITE_MODES})")]
    TooManyVelocityModes(usize),
    #[error("Hermite order {order} insufficient: refinement changed the result by {change:e}")]
    QuadratureUnresolved { order: usize, change: f64 },
    #[error("Isserlis moment needs 2 or 4 vectors, got {0}")]
    BadMomentOrder(usize),
    #[error("vector lengths differ from the variance table ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("second u-derivatives unavailable for this function")]
    NoHessian,
}

/// Order of the per-mode Gauss–Hermite rule used for generic projections.
pub const HERMITE_ORDER: usize = 20;
/// Order of the refinement rule compared against [`HERMITE_ORDER`].
pub const HERMITE_REFINED_ORDER: usize = 24;
/// Refinement tolerance for generic projections.
pub const HERMITE_TOLERANCE: f64 = 1e-8;
pub const MAX_HERMITE_MODES: usize = 3;

/// A smooth function of finitely many spectral coordinates with analytic
/// first and second partial derivatives. Mode indices are 0-based positions in
/// the coefficient vectors.
pub trait CylinderFn {
    /// One past the largest mode index the function reads.
    fn active_modes(&self) -> usize;
    /// Velocity modes the function depends on.
    fn v_modes(&self) -> BTreeSet<usize>;
    fn value(&self, u: &[f64], v: &[f64]) -> f64;
    fn grad_u(&self, u: &[f64], v: &[f64]) -> Vec<f64>;
    fn grad_v(&self, u: &[f64], v: &[f64]) -> Vec<f64>;
    /// Row-major `n × n` Hessian in `u`, `n = u.len()`.
    fn hess_u(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>>;
    /// Row-major `n × n` Hessian in `v`, `n = v.len()`.
    fn hess_v(&self, u: &[f64], v: &[f64]) -> Vec<f64>;

    fn depends_on_v(&self) -> bool {
        !self.v_modes().is_empty()
    }
}

/// `½ zᵀ M z + bᵀ z + c` split into `(u, v)` blocks: the value is
/// `uᵀ UU u + vᵀ VV v + uᵀ UV v + bu·u + bv·v + c` for row-major `n × n`
/// blocks (not necessarily symmetric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub n: usize,
    pub uu: Vec<f64>,
    pub vv: Vec<f64>,
    pub uv: Vec<f64>,
    pub bu: Vec<f64>,
    pub bv: Vec<f64>,
    pub c: f64,
}

impl QuadraticForm {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            uu: vec![0.0; n * n],
            vv: vec![0.0; n * n],
            uv: vec![0.0; n * n],
            bu: vec![0.0; n],
            bv: vec![0.0; n],
            c: 0.0,
        }
    }

    fn has_v(&self) -> BTreeSet<usize> {
        let n = self.n;
        let mut set = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                if self.vv[i * n + j] != 0.0 {
                    set.insert(i);
                    set.insert(j);
                }
                if self.uv[i * n + j] != 0.0 {
                    set.insert(j);
                }
            }
            if self.bv[i] != 0.0 {
                set.insert(i);
            }
        }
        set
    }
}

/// Catalog of cylinder functions with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CylinderFunction {
    Constant { value: f64 },
    /// `f_i(u, v) = u_i`
    CoordinateU { i: usize },
    /// `g_i(u, v) = v_i`
    CoordinateV { i: usize },
    ProductUu { i: usize, j: usize },
    ProductVv { i: usize, j: usize },
    ProductUv { i: usize, j: usize },
    QuadraticForm(QuadraticForm),
    /// `tanh(wu·u + wv·v)`; missing weights count as zero.
    TanhLinearForm { wu: Vec<f64>, wv: Vec<f64> },
    Product { left: Box<CylinderFunction>, right: Box<CylinderFunction> },
}

fn zeros(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

fn dot_prefix(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

impl CylinderFunction {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }
    pub fn u(i: usize) -> Self {
        Self::CoordinateU { i }
    }
    pub fn v(i: usize) -> Self {
        Self::CoordinateV { i }
    }
    pub fn uu(i: usize, j: usize) -> Self {
        Self::ProductUu { i, j }
    }
    pub fn vv(i: usize, j: usize) -> Self {
        Self::ProductVv { i, j }
    }
    pub fn uv(i: usize, j: usize) -> Self {
        Self::ProductUv { i, j }
    }
    pub fn tanh_u(wu: Vec<f64>) -> Self {
        Self::TanhLinearForm { wu, wv: vec![] }
    }
    pub fn product(left: Self, right: Self) -> Self {
        Self::Product {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Short label for tables and CSV headers.
    pub fn label(&self) -> String {
        match self {
            Self::Constant { value } => format!("const({value})"),
            Self::CoordinateU { i } => format!("u{i}"),
            Self::CoordinateV { i } => format!("v{i}"),
            Self::ProductUu { i, j } => format!("u{i}*u{j}"),
            Self::ProductVv { i, j } => format!("v{i}*v{j}"),
            Self::ProductUv { i, j } => format!("u{i}*v{j}"),
            Self::QuadraticForm(q) => format!("quadratic(n={})", q.n),
            Self::TanhLinearForm { wv, .. } if wv.iter().all(|w| *w == 0.0) => "tanh(a.u)".into(),
            Self::TanhLinearForm { .. } => "tanh(a.u+b.v)".into(),
            Self::Product { left, right } => format!("({})*({})", left.label(), right.label()),
        }
    }

    /// Fails when the function reads a mode beyond `modes`.
    pub fn check_modes(&self, modes: usize) -> Result<(), GeneratorError> {
        let needed = self.active_modes();
        if needed > modes {
            return Err(GeneratorError::ModeOutOfRange {
                index: needed - 1,
                modes,
            });
        }
        Ok(())
    }

    /// Closed-form `P_S f = ∫ f(·, v) dμ2(v)` when available. `var_v` holds the
    /// μ2 variances `λ_k^{α2}`.
    pub fn project_s_closed(&self, var_v: &[f64]) -> Option<CylinderFunction> {
        use CylinderFunction as F;
        Some(match self {
            F::Constant { .. } | F::CoordinateU { .. } | F::ProductUu { .. } => self.clone(),
            F::CoordinateV { .. } | F::ProductUv { .. } => F::constant(0.0),
            F::ProductVv { i, j } => F::constant(if i == j { var_v[*i] } else { 0.0 }),
            F::QuadraticForm(q) => {
                let n = q.n;
                let mut out = QuadraticForm::zeros(n);
                out.uu.clone_from(&q.uu);
                out.bu.clone_from(&q.bu);
                out.c = q.c + (0..n).map(|k| q.vv[k * n + k] * var_v[k]).sum::<f64>();
                F::QuadraticForm(out)
            }
            F::TanhLinearForm { wv, .. } => {
                if wv.iter().all(|&w| w == 0.0) {
                    self.clone()
                } else {
                    return None;
                }
            }
            F::Product { left, right } => match (left.depends_on_v(), right.depends_on_v()) {
                (false, false) => self.clone(),
                (false, true) => F::product((**left).clone(), right.project_s_closed(var_v)?),
                (true, false) => F::product(left.project_s_closed(var_v)?, (**right).clone()),
                (true, true) => return None,
            },
        })
    }
}

impl CylinderFn for CylinderFunction {
    fn active_modes(&self) -> usize {
        use CylinderFunction as F;
        match self {
            F::Constant { .. } => 0,
            F::CoordinateU { i } | F::CoordinateV { i } => i + 1,
            F::ProductUu { i, j } | F::ProductVv { i, j } | F::ProductUv { i, j } => i.max(j) + 1,
            F::QuadraticForm(q) => q.n,
            F::TanhLinearForm { wu, wv } => wu.len().max(wv.len()),
            F::Product { left, right } => left.active_modes().max(right.active_modes()),
        }
    }

    fn v_modes(&self) -> BTreeSet<usize> {
        use CylinderFunction as F;
        match self {
            F::Constant { .. } | F::CoordinateU { .. } | F::ProductUu { .. } => BTreeSet::new(),
            F::CoordinateV { i } => [*i].into(),
            F::ProductVv { i, j } => [*i, *j].into(),
            F::ProductUv { j, .. } => [*j].into(),
            F::QuadraticForm(q) => q.has_v(),
            F::TanhLinearForm { wv, .. } => wv
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(k, _)| k)
                .collect(),
            F::Product { left, right } => left.v_modes().union(&right.v_modes()).copied().collect(),
        }
    }

    fn value(&self, u: &[f64], v: &[f64]) -> f64 {
        use CylinderFunction as F;
        match self {
            F::Constant { value } => *value,
            F::CoordinateU { i } => u[*i],
            F::CoordinateV { i } => v[*i],
            F::ProductUu { i, j } => u[*i] * u[*j],
            F::ProductVv { i, j } => v[*i] * v[*j],
            F::ProductUv { i, j } => u[*i] * v[*j],
            F::QuadraticForm(q) => {
                let n = q.n;
                let mut acc = q.c + dot_prefix(&q.bu, u) + dot_prefix(&q.bv, v);
                for i in 0..n {
                    for j in 0..n {
                        acc += q.uu[i * n + j] * u[i] * u[j]
                            + q.vv[i * n + j] * v[i] * v[j]
                            + q.uv[i * n + j] * u[i] * v[j];
                    }
                }
                acc
            }
            F::TanhLinearForm { wu, wv } => (dot_prefix(wu, u) + dot_prefix(wv, v)).tanh(),
            F::Product { left, right } => left.value(u, v) * right.value(u, v),
        }
    }

    fn grad_u(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        use CylinderFunction as F;
        let n = u.len();
        let mut g = zeros(n);
        match self {
            F::Constant { .. } | F::CoordinateV { .. } | F::ProductVv { .. } => {}
            F::CoordinateU { i } => g[*i] = 1.0,
            F::ProductUu { i, j } => {
                g[*i] += u[*j];
                g[*j] += u[*i];
            }
            F::ProductUv { i, j } => g[*i] = v[*j],
            F::QuadraticForm(q) => {
                let m = q.n;
                for i in 0..m {
                    let mut acc = q.bu[i];
                    for j in 0..m {
                        acc += (q.uu[i * m + j] + q.uu[j * m + i]) * u[j] + q.uv[i * m + j] * v[j];
                    }
                    g[i] = acc;
                }
            }
            F::TanhLinearForm { wu, wv } => {
                let t = (dot_prefix(wu, u) + dot_prefix(wv, v)).tanh();
                let d = 1.0 - t * t;
                for (k, w) in wu.iter().enumerate() {
                    g[k] = d * w;
                }
            }
            F::Product { left, right } => {
                let (a, b) = (left.value(u, v), right.value(u, v));
                let (ga, gb) = (left.grad_u(u, v), right.grad_u(u, v));
                for k in 0..n {
                    g[k] = ga[k] * b + a * gb[k];
                }
            }
        }
        g
    }

    fn grad_v(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        use CylinderFunction as F;
        let n = v.len();
        let mut g = zeros(n);
        match self {
            F::Constant { .. } | F::CoordinateU { .. } | F::ProductUu { .. } => {}
            F::CoordinateV { i } => g[*i] = 1.0,
            F::ProductVv { i, j } => {
                g[*i] += v[*j];
                g[*j] += v[*i];
            }
            F::ProductUv { i, j } => g[*j] = u[*i],
            F::QuadraticForm(q) => {
                let m = q.n;
                for j in 0..m {
                    let mut acc = q.bv[j];
                    for i in 0..m {
                        acc += (q.vv[j * m + i] + q.vv[i * m + j]) * v[i] + q.uv[i * m + j] * u[i];
                    }
                    g[j] = acc;
                }
            }
            F::TanhLinearForm { wu, wv } => {
                let t = (dot_prefix(wu, u) + dot_prefix(wv, v)).tanh();
                let d = 1.0 - t * t;
                for (k, w) in wv.iter().enumerate() {
                    g[k] = d * w;
                }
            }
            F::Product { left, right } => {
                let (a, b) = (left.value(u, v), right.value(u, v));
                let (ga, gb) = (left.grad_v(u, v), right.grad_v(u, v));
                for k in 0..n {
                    g[k] = ga[k] * b + a * gb[k];
                }
            }
        }
        g
    }

    fn hess_u(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        use CylinderFunction as F;
        let n = u.len();
        let mut h = zeros(n * n);
        match self {
            F::Constant { .. }
            | F::CoordinateU { .. }
            | F::CoordinateV { .. }
            | F::ProductVv { .. }
            | F::ProductUv { .. } => {}
            F::ProductUu { i, j } => {
                h[i * n + j] += 1.0;
                h[j * n + i] += 1.0;
            }
            F::QuadraticForm(q) => {
                let m = q.n;
                for i in 0..m {
                    for j in 0..m {
                        h[i * n + j] = q.uu[i * m + j] + q.uu[j * m + i];
                    }
                }
            }
            F::TanhLinearForm { wu, wv } => {
                let t = (dot_prefix(wu, u) + dot_prefix(wv, v)).tanh();
                let s = -2.0 * t * (1.0 - t * t);
                for (i, a) in wu.iter().enumerate() {
                    for (j, b) in wu.iter().enumerate() {
                        h[i * n + j] = s * a * b;
                    }
                }
            }
            F::Product { left, right } => {
                let (a, b) = (left.value(u, v), right.value(u, v));
                let (ga, gb) = (left.grad_u(u, v), right.grad_u(u, v));
                let (ha, hb) = (left.hess_u(u, v)?, right.hess_u(u, v)?);
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] =
                            ha[i * n + j] * b + ga[i] * gb[j] + gb[i] * ga[j] + a * hb[i * n + j];
                    }
                }
            }
        }
        Some(h)
    }

    fn hess_v(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        use CylinderFunction as F;
        let n = v.len();
        let mut h = zeros(n * n);
        match self {
            F::Constant { .. }
            | F::CoordinateU { .. }
            | F::CoordinateV { .. }
            | F::ProductUu { .. }
            | F::ProductUv { .. } => {}
            F::ProductVv { i, j } => {
                h[i * n + j] += 1.0;
                h[j * n + i] += 1.0;
            }
            F::QuadraticForm(q) => {
                let m = q.n;
                for i in 0..m {
                    for j in 0..m {
                        h[i * n + j] = q.vv[i * m + j] + q.vv[j * m + i];
                    }
                }
            }
            F::TanhLinearForm { wu, wv } => {
                let t = (dot_prefix(wu, u) + dot_prefix(wv, v)).tanh();
                let s = -2.0 * t * (1.0 - t * t);
                for (i, a) in wv.iter().enumerate() {
                    for (j, b) in wv.iter().enumerate() {
                        h[i * n + j] = s * a * b;
                    }
                }
            }
            F::Product { left, right } => {
                let (a, b) = (left.value(u, v), right.value(u, v));
                let (ga, gb) = (left.grad_v(u, v), right.grad_v(u, v));
                let (ha, hb) = (left.hess_v(u, v), right.hess_v(u, v));
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] =
                            ha[i * n + j] * b + ga[i] * gb[j] + gb[i] * ga[j] + a * hb[i * n + j];
                    }
                }
            }
        }
        h
    }
}

/// Variances of a centered product Gaussian, one per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub variances: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(variances: Vec<f64>) -> Self {
        debug_assert!(variances.iter().all(|&x| x > 0.0));
        Self { variances }
    }

    /// μ1 with covariance `Q1 = Q^{α1}`.
    pub fn mu1(model: &ModelConfig) -> Self {
        Self::new(model.coeffs().q1.clone())
    }

    /// μ2 with covariance `Q2 = Q^{α2}`.
    pub fn mu2(model: &ModelConfig) -> Self {
        Self::new(model.coeffs().q2.clone())
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    /// `q_ij = (Q l_i, l_j) = Σ_k ν_k l_i,k l_j,k`.
    pub fn covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.variances
            .iter()
            .zip(a.iter().zip(b))
            .map(|(nu, (x, y))| nu * x * y)
            .sum()
    }
}

/// `∫ Π_i (x, l_i) dN(0, Q)` for two or four vectors via pair products:
/// `q12` or `q12 q34 + q13 q24 + q14 q23`.
pub fn isserlis_moment(ls: &[&[f64]], spec: &GaussianSpec) -> Result<f64, GeneratorError> {
    for l in ls {
        if l.len() != spec.len() {
            return Err(GeneratorError::LengthMismatch(l.len(), spec.len()));
        }
    }
    let q = |a: usize, b: usize| spec.covariance(ls[a], ls[b]);
    match ls.len() {
        2 => Ok(q(0, 1)),
        4 => Ok(q(0, 1) * q(2, 3) + q(0, 2) * q(1, 3) + q(0, 3) * q(1, 2)),
        k => Err(GeneratorError::BadMomentOrder(k)),
    }
}

/// The same moment by full index expansion: `Σ_{a,b,c,d} l1_a l2_b l3_c l4_d
/// E[x_a x_b x_c x_d]` with per-coordinate moments `E x² = ν`, `E x⁴ = 3ν²`.
pub fn gaussian_moment_expansion(ls: &[&[f64]], variances: &[f64]) -> f64 {
    let n = variances.len();
    let order = ls.len();
    let mut idx = vec![0usize; order];
    let mut total = 0.0;
    loop {
        let coeff: f64 = idx.iter().zip(ls).map(|(&k, l)| l[k]).product();
        if coeff != 0.0 {
            let mut counts = vec![0u32; n];
            for &k in &idx {
                counts[k] += 1;
            }
            let mut moment = 1.0;
            for (k, &c) in counts.iter().enumerate() {
                moment *= match c {
                    0 => 1.0,
                    c if c % 2 == 1 => 0.0,
                    // (c-1)!! ν^{c/2}
                    c => (1..c).step_by(2).map(|m| m as f64).product::<f64>() * variances[k].powi(c as i32 / 2),
                };
            }
            total += coeff * moment;
        }
        let mut pos = 0;
        loop {
            if pos == order {
                return total;
            }
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// `P_S f` as a function of `u`: closed form from the catalog, or tensor
/// Gauss–Hermite over the velocity modes `f` depends on.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Closed(CylinderFunction),
    Hermite(HermiteProjection),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermiteProjection {
    f: CylinderFunction,
    modes: Vec<usize>,
    std: Vec<f64>,
    rule: GaussHermite,
    refined: GaussHermite,
}

impl HermiteProjection {
    pub fn new(f: CylinderFunction, var_v: &[f64]) -> Result<Self, GeneratorError> {
        let modes: Vec<usize> = f.v_modes().into_iter().collect();
        if modes.len() > MAX_HERMITE_MODES {
            return Err(GeneratorError::TooManyVelocityModes(modes.len()));
        }
        let std = modes.iter().map(|&k| var_v[k].sqrt()).collect();
        Ok(Self {
            f,
            modes,
            std,
            rule: GaussHermite::new(HERMITE_ORDER),
            refined: GaussHermite::new(HERMITE_REFINED_ORDER),
        })
    }

    fn integrate<H>(&self, rule: &GaussHermite, nv: usize, h: H, acc: &mut [f64])
    where
        H: FnMut(&[f64]) -> Vec<f64>,
    {
        tensor_expectation(rule, &self.modes, &self.std, nv, h, acc);
    }

    fn value_with(&self, rule: &GaussHermite, u: &[f64], nv: usize) -> f64 {
        let mut acc = [0.0];
        self.integrate(rule, nv, |v| vec![self.f.value(u, v)], &mut acc);
        acc[0]
    }

    /// Value with the refinement check.
    pub fn value_checked(&self, u: &[f64], nv: usize) -> Result<f64, GeneratorError> {
        let a = self.value_with(&self.rule, u, nv);
        let b = self.value_with(&self.refined, u, nv);
        let change = (a - b).abs();
        if change > HERMITE_TOLERANCE {
            return Err(GeneratorError::QuadratureUnresolved {
                order: self.rule.order(),
                change,
            });
        }
        Ok(a)
    }
}

/// `Σ_p w_p h(v_p)` over the tensor Gauss–Hermite grid on the listed modes
/// (standard deviations `std`), other entries of `v` held at zero. Each point
/// is paired with its antipode so that odd integrands cancel exactly.
pub fn tensor_expectation<H>(rule: &GaussHermite, modes: &[usize], std: &[f64], nv: usize, mut h: H, acc: &mut [f64])
where
    H: FnMut(&[f64]) -> Vec<f64>,
{
    let m = rule.order();
    let total = m.pow(modes.len() as u32);
    let mut v = vec![0.0; nv];
    let mut vneg = vec![0.0; nv];
    let point = |p: usize, v: &mut [f64]| -> f64 {
        let mut rem = p;
        let mut w = 1.0;
        for (slot, &k) in modes.iter().enumerate() {
            let digit = rem % m;
            rem /= m;
            v[k] = std[slot] * rule.nodes[digit];
            w *= rule.weights[digit];
        }
        w
    };
    for p in 0..total / 2 {
        let w = point(p, &mut v);
        point(total - 1 - p, &mut vneg);
        let a = h(&v);
        let b = h(&vneg);
        for (o, (x, y)) in acc.iter_mut().zip(a.iter().zip(&b)) {
            *o += w * (x + y);
        }
    }
    if total % 2 == 1 {
        let w = point(total / 2, &mut v);
        for (o, x) in acc.iter_mut().zip(h(&v)) {
            *o += w * x;
        }
    }
}

/// Scalar version of [`tensor_expectation`] over all `var.len()` modes.
pub fn velocity_expectation<H>(var: &[f64], order: usize, mut h: H) -> f64
where
    H: FnMut(&[f64]) -> f64,
{
    let modes: Vec<usize> = (0..var.len()).collect();
    let std: Vec<f64> = var.iter().map(|x| x.sqrt()).collect();
    let mut acc = [0.0];
    tensor_expectation(&GaussHermite::new(order), &modes, &std, var.len(), |v| vec![h(v)], &mut acc);
    acc[0]
}

impl CylinderFn for HermiteProjection {
    fn active_modes(&self) -> usize {
        self.f.active_modes()
    }
    fn v_modes(&self) -> BTreeSet<usize> {
        BTreeSet::new()
    }
    fn value(&self, u: &[f64], v: &[f64]) -> f64 {
        self.value_with(&self.rule, u, v.len().max(self.f.active_modes()))
    }
    fn grad_u(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut acc = zeros(u.len());
        let nv = v.len().max(self.f.active_modes());
        self.integrate(&self.rule, nv, |w| self.f.grad_u(u, w), &mut acc);
        acc
    }
    fn grad_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        zeros(v.len())
    }
    fn hess_u(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let n = u.len();
        let mut acc = zeros(n * n);
        let nv = v.len().max(self.f.active_modes());
        let mut missing = false;
        self.integrate(
            &self.rule,
            nv,
            |w| match self.f.hess_u(u, w) {
                Some(h) => h,
                None => {
                    missing = true;
                    zeros(n * n)
                }
            },
            &mut acc,
        );
        (!missing).then_some(acc)
    }
    fn hess_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        zeros(v.len() * v.len())
    }
}

impl CylinderFn for Projection {
    fn active_modes(&self) -> usize {
        match self {
            Projection::Closed(f) => f.active_modes(),
            Projection::Hermite(h) => h.active_modes(),
        }
    }
    fn v_modes(&self) -> BTreeSet<usize> {
        BTreeSet::new()
    }
    fn value(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Projection::Closed(f) => f.value(u, v),
            Projection::Hermite(h) => h.value(u, v),
        }
    }
    fn grad_u(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            Projection::Closed(f) => f.grad_u(u, v),
            Projection::Hermite(h) => h.grad_u(u, v),
        }
    }
    fn grad_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        zeros(v.len())
    }
    fn hess_u(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        match self {
            Projection::Closed(f) => f.hess_u(u, v),
            Projection::Hermite(h) => h.hess_u(u, v),
        }
    }
    fn hess_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        zeros(v.len() * v.len())
    }
}

impl Projection {
    /// Evaluate at `u` only (velocity argument irrelevant).
    pub fn at(&self, u: &[f64]) -> f64 {
        let v = zeros(u.len());
        self.value(u, &v)
    }

    /// Value with the Hermite refinement check where applicable.
    pub fn at_checked(&self, u: &[f64]) -> Result<f64, GeneratorError> {
        match self {
            Projection::Closed(f) => Ok(f.value(u, &zeros(u.len()))),
            Projection::Hermite(h) => h.value_checked(u, u.len()),
        }
    }
}

/// `P f = P_S f − (f, 1)_{L²(μ^Φ)}` with the mean supplied by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredProjection {
    pub f_s: Projection,
    pub mean: f64,
}

impl CylinderFn for CenteredProjection {
    fn active_modes(&self) -> usize {
        self.f_s.active_modes()
    }
    fn v_modes(&self) -> BTreeSet<usize> {
        BTreeSet::new()
    }
    fn value(&self, u: &[f64], v: &[f64]) -> f64 {
        self.f_s.value(u, v) - self.mean
    }
    fn grad_u(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        self.f_s.grad_u(u, v)
    }
    fn grad_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        zeros(v.len())
    }
    fn hess_u(&self, u: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        self.f_s.hess_u(u, v)
    }
    fn hess_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        zeros(v.len() * v.len())
    }
}

/// The velocity-linear function `A_Φ P f = −(v, Q2⁻¹K12 D_1 f_S(u))`, built by
/// differentiating `f_S` directly. Its `u`-Hessian would need third
/// derivatives and is not provided.
#[derive(Debug, Clone)]
pub struct AppliedAP<'a> {
    f_s: &'a Projection,
    transport: &'a [f64],
}

impl<'a> AppliedAP<'a> {
    pub fn new(f_s: &'a Projection, model: &'a ModelConfig) -> Self {
        Self {
            f_s,
            transport: &model.coeffs().transport,
        }
    }
}

impl CylinderFn for AppliedAP<'_> {
    fn active_modes(&self) -> usize {
        self.f_s.active_modes()
    }
    fn v_modes(&self) -> BTreeSet<usize> {
        (0..self.f_s.active_modes()).collect()
    }
    fn value(&self, u: &[f64], v: &[f64]) -> f64 {
        let g = self.f_s.grad_u(u, v);
        -(0..u.len()).map(|k| self.transport[k] * v[k] * g[k]).sum::<f64>()
    }
    fn grad_u(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = u.len();
        let h = self.f_s.hess_u(u, v).expect("f_S Hessian");
        (0..n)
            .map(|k| -(0..n).map(|j| self.transport[j] * v[j] * h[j * n + k]).sum::<f64>())
            .collect()
    }
    fn grad_v(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let g = self.f_s.grad_u(u, v);
        (0..v.len()).map(|k| -self.transport[k] * g[k]).collect()
    }
    fn hess_u(&self, _u: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn hess_v(&self, _u: &[f64], v: &[f64]) -> Vec<f64> {
        zeros(v.len() * v.len())
    }
}

/// Generator of the truncated dynamics for one model and potential.
#[derive(Debug, Clone, Copy)]
pub struct Generator<'a> {
    pub model: &'a ModelConfig,
    pub potential: &'a ScalarPotential,
    pub grid: &'a PhysicalGrid,
}

impl<'a> Generator<'a> {
    pub fn new(model: &'a ModelConfig, potential: &'a ScalarPotential, grid: &'a PhysicalGrid) -> Self {
        assert!(grid.modes() >= model.modes, "grid supports fewer modes than the model");
        Self {
            model,
            potential,
            grid,
        }
    }

    fn n(&self) -> usize {
        self.model.modes
    }

    /// `DΦ(u)` on the model's modes.
    pub fn grad_phi(&self, u: &[f64]) -> Vec<f64> {
        let mut out = zeros(self.n());
        let mut scratch = zeros(self.grid.len());
        self.grid.grad_phi_into(&u[..self.n()], self.potential, &mut out, &mut scratch);
        out
    }

    /// `S f = tr[K22 D²_2 f] − (v, Q2⁻¹K22 D_2 f)`.
    pub fn apply_s<F: CylinderFn + ?Sized>(&self, f: &F, u: &[f64], v: &[f64]) -> f64 {
        let c = self.model.coeffs();
        let n = self.n();
        let g = f.grad_v(u, v);
        let h = f.hess_v(u, v);
        (0..n)
            .map(|k| c.k22[k] * h[k * n + k] - c.damping[k] * v[k] * g[k])
            .sum()
    }

    /// `A_Φ f` with a precomputed `DΦ(u)`.
    pub fn apply_a_with<F: CylinderFn + ?Sized>(&self, f: &F, u: &[f64], v: &[f64], dphi: &[f64]) -> f64 {
        let c = self.model.coeffs();
        let gu = f.grad_u(u, v);
        let gv = f.grad_v(u, v);
        (0..self.n())
            .map(|k| {
                (c.restoring[k] * u[k] + c.k12[k] * dphi[k]) * gv[k] - c.transport[k] * v[k] * gu[k]
            })
            .sum()
    }

    /// `A_Φ f = (u, Q1⁻¹K21 D_2 f) + (DΦ(u), K21 D_2 f) − (v, Q2⁻¹K12 D_1 f)`.
    pub fn apply_a<F: CylinderFn + ?Sized>(&self, f: &F, u: &[f64], v: &[f64]) -> f64 {
        let dphi = self.grad_phi(u);
        self.apply_a_with(f, u, v, &dphi)
    }

    /// `L_Φ f = S f − A_Φ f`.
    pub fn apply_l<F: CylinderFn + ?Sized>(&self, f: &F, u: &[f64], v: &[f64]) -> f64 {
        self.apply_s(f, u, v) - self.apply_a(f, u, v)
    }

    pub fn apply_l_with<F: CylinderFn + ?Sized>(&self, f: &F, u: &[f64], v: &[f64], dphi: &[f64]) -> f64 {
        self.apply_s(f, u, v) - self.apply_a_with(f, u, v, dphi)
    }

    /// `(K22 D_2 f, D_2 f)`, the integrand of `−(Sf, f)`.
    pub fn velocity_energy<F: CylinderFn + ?Sized>(&self, f: &F, u: &[f64], v: &[f64]) -> f64 {
        let c = self.model.coeffs();
        f.grad_v(u, v)
            .iter()
            .zip(&c.k22)
            .map(|(g, k)| k * g * g)
            .sum()
    }

    /// `(Q1 D f, D f)` for a function of `u`, the Poincaré integrand.
    pub fn position_energy<F: CylinderFn + ?Sized>(&self, f: &F, u: &[f64], v: &[f64]) -> f64 {
        let c = self.model.coeffs();
        f.grad_u(u, v)
            .iter()
            .zip(&c.q1)
            .map(|(g, q)| q * g * g)
            .sum()
    }

    /// `P_S f = ∫ f dμ2`.
    pub fn project_s(&self, f: &CylinderFunction) -> Result<Projection, GeneratorError> {
        f.check_modes(self.n())?;
        let var_v = &self.model.coeffs().q2;
        match f.project_s_closed(var_v) {
            Some(closed) => Ok(Projection::Closed(closed)),
            None => Ok(Projection::Hermite(HermiteProjection::new(f.clone(), var_v)?)),
        }
    }

    /// `A_Φ² P f = Σ_ij (v, Q2⁻¹K12 d_i)(v, Q2⁻¹K12 d_j) ∂_ij f_S
    /// − (u, Q1⁻¹C D f_S) − (DΦ(u), C D f_S)`.
    pub fn a_squared_p<F: CylinderFn + ?Sized>(&self, f_s: &F, u: &[f64], v: &[f64]) -> Result<f64, GeneratorError> {
        let dphi = self.grad_phi(u);
        self.a_squared_p_with(f_s, u, v, &dphi)
    }

    pub fn a_squared_p_with<F: CylinderFn + ?Sized>(
        &self,
        f_s: &F,
        u: &[f64],
        v: &[f64],
        dphi: &[f64],
    ) -> Result<f64, GeneratorError> {
        let c = self.model.coeffs();
        let n = self.n();
        let g = f_s.grad_u(u, v);
        let h = f_s.hess_u(u, v).ok_or(GeneratorError::NoHessian)?;
        let mut acc = 0.0;
        for i in 0..n {
            let ti = c.transport[i] * v[i];
            for j in 0..n {
                acc += ti * c.transport[j] * v[j] * h[i * n + j];
            }
        }
        for k in 0..n {
            acc -= (c.q1_inv_c[k] * u[k] + c.c[k] * dphi[k]) * g[k];
        }
        Ok(acc)
    }

    /// `P_S A_Φ² P f = N f_S = tr[C D² f_S] − (u, Q1⁻¹C D f_S) − (DΦ(u), C D f_S)`.
    pub fn ps_a_squared_p<F: CylinderFn + ?Sized>(&self, f_s: &F, u: &[f64]) -> Result<f64, GeneratorError> {
        let c = self.model.coeffs();
        let n = self.n();
        let v = zeros(n);
        let dphi = self.grad_phi(u);
        let g = f_s.grad_u(u, &v);
        let h = f_s.hess_u(u, &v).ok_or(GeneratorError::NoHessian)?;
        Ok((0..n)
            .map(|k| c.c[k] * h[k * n + k] - (c.q1_inv_c[k] * u[k] + c.c[k] * dphi[k]) * g[k])
            .sum())
    }
}

/// Functions exercised by the invariance, identity and decay suites.
pub fn default_catalog(modes: usize) -> Vec<CylinderFunction> {
    use CylinderFunction as F;
    let second = 1.min(modes - 1);
    let mut q = QuadraticForm::zeros(modes.min(3));
    let m = q.n;
    for i in 0..m {
        q.uu[i * m + i] = 0.5 + i as f64;
        q.vv[i * m + i] = 1.0 - 0.2 * i as f64;
        q.bu[i] = 0.1;
        q.bv[i] = -0.2;
    }
    if m > 1 {
        q.uv[1] = 0.7;
        q.vv[1] = -0.3;
        q.uu[m] = 0.25;
    }
    q.c = 0.3;
    vec![
        F::constant(1.0),
        F::u(0),
        F::v(0),
        F::uu(0, 0),
        F::vv(0, 0),
        F::uu(0, second),
        F::vv(0, second),
        F::uv(0, 0),
        F::uv(second, 0),
        F::QuadraticForm(q),
        F::tanh_u((0..modes.min(4)).map(|k| 3.0 / (k + 1) as f64).collect()),
        F::TanhLinearForm {
            wu: vec![2.0, -1.0],
            wv: vec![0.8, 0.4],
        },
        F::product(F::vv(0, 0), F::tanh_u(vec![2.0])),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Exponents;
    use proptest::prelude::*;

    fn setup(e: Exponents, n: usize) -> (ModelConfig, ScalarPotential, PhysicalGrid) {
        (
            ModelConfig::dirichlet(e, n).unwrap(),
            ScalarPotential::log_cosh(0.5).unwrap(),
            PhysicalGrid::for_modes(n),
        )
    }

    fn fd_check(f: &CylinderFunction, u: &[f64], v: &[f64]) {
        let n = u.len();
        let h = 1e-5;
        let gu = f.grad_u(u, v);
        let gv = f.grad_v(u, v);
        let hu = f.hess_u(u, v).unwrap();
        let hv = f.hess_v(u, v);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-2);
        for k in 0..n {
            let (mut up, mut dn) = (u.to_vec(), u.to_vec());
            up[k] += h;
            dn[k] -= h;
            let fd = (f.value(&up, v) - f.value(&dn, v)) / (2.0 * h);
            assert!(close(gu[k], fd), "{}: ∂u{k} {} vs {fd}", f.label(), gu[k]);
            let gup = f.grad_u(&up, v);
            let gdn = f.grad_u(&dn, v);
            for j in 0..n {
                let fd2 = (gup[j] - gdn[j]) / (2.0 * h);
                assert!(close(hu[k * n + j], fd2), "{}: ∂u{k}u{j}", f.label());
            }
            let (mut vp, mut vm) = (v.to_vec(), v.to_vec());
            vp[k] += h;
            vm[k] -= h;
            let fd = (f.value(u, &vp) - f.value(u, &vm)) / (2.0 * h);
            assert!(close(gv[k], fd), "{}: ∂v{k} {} vs {fd}", f.label(), gv[k]);
            let gvp = f.grad_v(u, &vp);
            let gvm = f.grad_v(u, &vm);
            for j in 0..n {
                let fd2 = (gvp[j] - gvm[j]) / (2.0 * h);
                assert!(close(hv[k * n + j], fd2), "{}: ∂v{k}v{j}", f.label());
            }
        }
    }

    #[test]
    fn catalog_derivatives_match_finite_differences() {
        let u = [0.3, -0.7, 0.2, 0.9];
        let v = [-0.4, 0.1, 0.8, -0.6];
        for f in default_catalog(4) {
            fd_check(&f, &u, &v);
        }
    }

    #[test]
    fn apply_s_examples() {
        let (m, p, g) = setup(Exponents::new(1.0, 1.5, 0.8, 1.2), 3);
        let gen = Generator::new(&m, &p, &g);
        let c = m.coeffs();
        let u = [0.2, 0.4, -0.1];
        let v = [0.5, -1.0, 2.0];
        assert_eq!(gen.apply_s(&CylinderFunction::uu(0, 1), &u, &v), 0.0);
        let s = gen.apply_s(&CylinderFunction::v(1), &u, &v);
        assert!((s - (-c.damping[1] * v[1])).abs() < 1e-15);
        let s = gen.apply_s(&CylinderFunction::vv(2, 2), &u, &v);
        let expect = 2.0 * c.k22[2] - 2.0 * c.damping[2] * v[2] * v[2];
        assert!((s - expect).abs() < 1e-13 * expect.abs());
    }

    #[test]
    fn apply_a_examples() {
        let (m, _, g) = setup(Exponents::new(1.0, 1.5, 0.8, 1.2), 3);
        let zero = ScalarPotential::zero();
        let gen = Generator::new(&m, &zero, &g);
        let c = m.coeffs();
        let u = [0.2, 0.4, -0.1];
        let v = [0.5, -1.0, 2.0];
        assert_eq!(gen.apply_a(&CylinderFunction::constant(3.0), &u, &v), 0.0);
        let a = gen.apply_a(&CylinderFunction::u(1), &u, &v);
        assert!((a + c.transport[1] * v[1]).abs() < 1e-15);
        let a = gen.apply_a(&CylinderFunction::v(2), &u, &v);
        assert!((a - c.restoring[2] * u[2]).abs() < 1e-15);
    }

    /// Closed-form generator actions on coordinate functions and their
    /// products, written out independently of `apply_l`.
    #[test]
    fn coordinate_actions_and_products() {
        let (m, p, g) = setup(Exponents::new(1.2, 0.9, 0.7, 0.8), 4);
        let gen = Generator::new(&m, &p, &g);
        let c = m.coeffs();
        let u = [0.3, -0.2, 0.6, 0.1];
        let v = [-0.5, 0.9, 0.2, -1.1];
        let dphi = gen.grad_phi(&u);
        let lf = |i: usize| c.transport[i] * v[i];
        let lg = |i: usize| -c.damping[i] * v[i] - c.restoring[i] * u[i] - c.k12[i] * dphi[i];
        for i in 0..4 {
            assert!((gen.apply_l(&CylinderFunction::u(i), &u, &v) - lf(i)).abs() < 1e-14);
            assert!((gen.apply_l(&CylinderFunction::v(i), &u, &v) - lg(i)).abs() < 1e-14);
            for j in 0..4 {
                let lff = gen.apply_l(&CylinderFunction::uu(i, j), &u, &v);
                assert!((lff - (u[j] * lf(i) + u[i] * lf(j))).abs() < 1e-13);
                let lgg = gen.apply_l(&CylinderFunction::vv(i, j), &u, &v);
                let trace = if i == j { 2.0 * c.k22[i] } else { 0.0 };
                assert!((lgg - (trace + v[j] * lg(i) + v[i] * lg(j))).abs() < 1e-13);
            }
        }
        let origin = [0.0; 4];
        let l = gen.apply_l(&CylinderFunction::vv(1, 1), &origin, &origin);
        assert!((l - 2.0 * c.k22[1]).abs() < 1e-16);
        assert_eq!(gen.apply_l(&CylinderFunction::constant(2.0), &u, &v), 0.0);
    }

    #[test]
    fn isserlis_examples() {
        let spec = GaussianSpec::new(vec![0.5, 0.25, 0.1]);
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert_eq!(isserlis_moment(&[&e1, &e2], &spec).unwrap(), 0.0);
        assert!((isserlis_moment(&[&e1, &e1, &e1, &e1], &spec).unwrap() - 0.75).abs() < 1e-15);
        assert!((isserlis_moment(&[&e1, &e1, &e2, &e2], &spec).unwrap() - 0.125).abs() < 1e-16);
        assert!(isserlis_moment(&[&e1, &e1, &e2], &spec).is_err());
        assert!(isserlis_moment(&[&e1, &[1.0]], &spec).is_err());
    }

    #[test]
    fn projection_examples() {
        let (m, p, g) = setup(Exponents::new(1.0, 1.3, 1.0, 1.0), 3);
        let gen = Generator::new(&m, &p, &g);
        let u = [0.4, -0.3, 0.2];
        let f = CylinderFunction::uu(0, 1);
        assert_eq!(gen.project_s(&f).unwrap(), Projection::Closed(f.clone()));
        assert_eq!(gen.project_s(&CylinderFunction::v(2)).unwrap().at(&u), 0.0);
        let h = CylinderFunction::tanh_u(vec![1.0, 2.0]);
        let fv = CylinderFunction::product(CylinderFunction::vv(1, 1), h.clone());
        let ps = gen.project_s(&fv).unwrap();
        let expect = m.coeffs().q2[1] * h.value(&u, &[0.0; 3]);
        assert!((ps.at(&u) - expect).abs() < 1e-15);
        assert!(gen.project_s(&CylinderFunction::u(3)).is_err());
    }

    #[test]
    fn hermite_projection_matches_closed_forms() {
        let (m, p, g) = setup(Exponents::new(1.0, 0.8, 1.0, 1.0), 3);
        let gen = Generator::new(&m, &p, &g);
        let var = &m.coeffs().q2;
        let u = [0.4, -0.3, 0.2];
        let cases = [
            CylinderFunction::vv(0, 0),
            CylinderFunction::vv(0, 1),
            CylinderFunction::uv(2, 1),
            default_catalog(3)[9].clone(),
        ];
        for f in cases {
            let closed = Projection::Closed(f.project_s_closed(var).unwrap());
            let herm = HermiteProjection::new(f.clone(), var).unwrap();
            let a = closed.at(&u);
            let b = herm.value_checked(&u, 3).unwrap();
            assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", f.label());
            let ga = closed.grad_u(&u, &[0.0; 3]);
            let gb = herm.grad_u(&u, &[0.0; 3]);
            for (x, y) in ga.iter().zip(&gb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // generic path: tanh with velocity weights
        let f = CylinderFunction::TanhLinearForm {
            wu: vec![1.0],
            wv: vec![0.5, 0.3],
        };
        let ps = gen.project_s(&f).unwrap();
        assert!(matches!(ps, Projection::Hermite(_)));
        assert!(ps.at_checked(&u).is_ok());
    }

    #[test]
    fn hermite_refinement_flags_rough_integrands() {
        let var = vec![1.0];
        let f = CylinderFunction::TanhLinearForm {
            wu: vec![1.0],
            wv: vec![3.0],
        };
        let herm = HermiteProjection::new(f, &var).unwrap();
        assert!(matches!(
            herm.value_checked(&[0.4], 1),
            Err(GeneratorError::QuadratureUnresolved { .. })
        ));
    }

    #[test]
    fn projections_are_idempotent() {
        let (m, p, g) = setup(Exponents::unit(), 3);
        let gen = Generator::new(&m, &p, &g);
        let var = &m.coeffs().q2;
        let u = [0.4, -0.3, 0.2];
        for f in default_catalog(3) {
            let ps = gen.project_s(&f).unwrap();
            if let Projection::Closed(inner) = &ps {
                let pps = gen.project_s(inner).unwrap();
                assert_eq!(pps, ps);
            } else {
                // P_S of a u-only Hermite projection is the identity
                assert!(!ps.depends_on_v());
                let _ = var;
            }
            let _ = ps.at(&u);
        }
    }

    #[test]
    fn algebraic_relation_is_exact() {
        let (m, p, g) = setup(Exponents::new(1.0, 1.2, 0.9, 1.0), 3);
        let gen = Generator::new(&m, &p, &g);
        let u = [0.4, -0.3, 0.2];
        for f in default_catalog(3) {
            let ps = gen.project_s(&f).unwrap();
            let ap = AppliedAP::new(&ps, &m);
            let herm = HermiteProjection {
                f: CylinderFunction::constant(0.0),
                modes: (0..3).collect(),
                std: m.coeffs().q2.iter().map(|x| x.sqrt()).collect(),
                rule: GaussHermite::new(HERMITE_ORDER),
                refined: GaussHermite::new(HERMITE_REFINED_ORDER),
            };
            let mut acc = [0.0];
            herm.integrate(&herm.rule, 3, |v| vec![ap.value(&u, v)], &mut acc);
            assert_eq!(acc[0], 0.0, "{}", f.label());
        }
    }

    #[test]
    fn a_squared_p_examples() {
        let (m, _, g) = setup(Exponents::new(1.0, 1.2, 0.9, 1.0), 3);
        let zero = ScalarPotential::zero();
        let gen = Generator::new(&m, &zero, &g);
        let c = m.coeffs();
        let u = [0.4, -0.3, 0.2];
        let v = [0.1, 0.5, -0.7];
        let vonly = gen.project_s(&CylinderFunction::vv(1, 1)).unwrap();
        assert_eq!(gen.a_squared_p(&vonly, &u, &v).unwrap(), 0.0);
        let fs = gen.project_s(&CylinderFunction::u(0)).unwrap();
        let a2 = gen.a_squared_p(&fs, &u, &v).unwrap();
        assert!((a2 + c.q1_inv_c[0] * u[0]).abs() < 1e-15);
        let fs = gen.project_s(&CylinderFunction::uu(0, 0)).unwrap();
        let n = gen.ps_a_squared_p(&fs, &u).unwrap();
        let expect = 2.0 * c.c[0] - 2.0 * c.q1_inv_c[0] * u[0] * u[0];
        assert!((n - expect).abs() < 1e-13);
        assert_eq!(
            gen.ps_a_squared_p(&gen.project_s(&CylinderFunction::constant(1.0)).unwrap(), &u).unwrap(),
            0.0
        );
    }

    proptest! {
        #[test]
        fn nested_application_matches_formula(
            u in proptest::collection::vec(-1.0f64..1.0, 4),
            v in proptest::collection::vec(-1.0f64..1.0, 4),
            idx in 0usize..13,
        ) {
            let (m, p, g) = setup(Exponents::new(1.0, 1.2, 0.9, 1.0), 4);
            let gen = Generator::new(&m, &p, &g);
            let f = default_catalog(4)[idx].clone();
            let fs = gen.project_s(&f).unwrap();
            let ap = AppliedAP::new(&fs, &m);
            let nested = gen.apply_a(&ap, &u, &v);
            let formula = gen.a_squared_p(&fs, &u, &v).unwrap();
            prop_assert!((nested - formula).abs() <= 1e-10 * (1.0 + formula.abs()));
        }
    }
}
