//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

use std::process::ExitCode;

use hypolang::certifier::{check_conditions, compute_theta2, derive_constants, RateConstants, RateVariant};
use hypolang::cli::decay_observables;
use hypolang::dynamics::{build_propagator, mode_blocks, whole_steps};
use hypolang::experiments::{
    centering_check, ergodic_average_test, estimate_decay, generator_means, identity_suite, poincare_catalog,
    poincare_check, propagator_suite, simpson_step_covariance, within_three_se, CheckRow, FaultInjection, McParams,
    Setup,
};
use hypolang::generator::{default_catalog, CylinderFunction};
use hypolang::model::{Exponents, ModelConfig};
use hypolang::potential::{PhysicalGrid, ScalarPotential};
use nalgebra::Matrix2;
use serde::Deserialize;

const SEED: u64 = 20_240_611;
const MODES: usize = 8;

struct Fixture {
    model: ModelConfig,
    potential: ScalarPotential,
    grid: PhysicalGrid,
}

impl Fixture {
    fn new(potential: ScalarPotential) -> Self {
        Self {
            model: ModelConfig::dirichlet(Exponents::unit(), MODES).unwrap(),
            potential,
            grid: PhysicalGrid::for_modes(MODES),
        }
    }

    fn default_config() -> Self {
        Self::new(ScalarPotential::log_cosh(0.5).unwrap())
    }

    fn setup(&self) -> Setup<'_> {
        Setup {
            model: &self.model,
            potential: &self.potential,
            grid: &self.grid,
            seed: SEED,
        }
    }

    fn theta2(&self, theta1: f64) -> f64 {
        let report = check_conditions(&self.model, &self.potential);
        let cert = derive_constants(&self.model, &report).unwrap();
        compute_theta2(&cert.constants, theta1, RateVariant::Thm5_2).unwrap()
    }
}

/// Outcome of one criterion: verdict plus a short account of the evidence.
struct Verdict {
    pass: bool,
    detail: String,
    failures: Vec<String>,
}

impl Verdict {
    fn from_checks(checks: Vec<(String, bool)>, detail: String) -> Self {
        let failures: Vec<String> = checks.iter().filter(|c| !c.1).map(|c| c.0.clone()).collect();
        Self {
            pass: failures.is_empty(),
            detail,
            failures,
        }
    }
}

fn row<'a>(rows: &'a [CheckRow], name: &str) -> &'a CheckRow {
    rows.iter().find(|r| r.name == name).unwrap_or_else(|| panic!("missing check {name}"))
}

fn criterion_identities() -> Verdict {
    let fx = Fixture::default_config();
    let rows = identity_suite(&fx.setup(), &FaultInjection::default()).unwrap();
    let pinned = [
        ("isserlis order 2", 1e-12),
        ("isserlis order 4", 1e-12),
        ("L f_i", 1e-10),
        ("L g_i", 1e-10),
        ("L (g_i g_j)", 1e-10),
        ("A^2 P f formula vs nested application", 1e-8),
        ("P_S A^2 P f formula vs Hermite projection", 1e-8),
    ];
    let mut checks: Vec<(String, bool)> = pinned
        .iter()
        .map(|(name, tol)| {
            let r = row(&rows, name);
            (format!("{name}: {:e} > {tol:e}", r.value), r.value <= *tol)
        })
        .collect();
    checks.push(("P A P f = 0".into(), row(&rows, "P A P f = 0").pass));
    let pp = centering_check(&fx.setup(), 10_000).unwrap();
    checks.push((format!("P P = P: {:e}", pp.value), pp.pass));
    let worst = pinned.iter().map(|(n, _)| row(&rows, n).value).fold(0.0, f64::max);
    Verdict::from_checks(checks, format!("{} checks, worst discrepancy {worst:.2e}", pinned.len() + 2))
}

fn criterion_invariance() -> Verdict {
    let fx = Fixture::default_config();
    let catalog = default_catalog(MODES);
    let means = generator_means(&fx.setup(), &catalog, 100_000).unwrap();
    let mut worst: f64 = 0.0;
    let checks = catalog
        .iter()
        .zip(&means)
        .map(|(f, w)| {
            if w.se() > 0.0 {
                worst = worst.max(w.mean().abs() / w.se());
            }
            (format!("{}: mean {:e}, SE {:e}", f.label(), w.mean(), w.se()), within_three_se(w.mean(), w.se()))
        })
        .collect();
    Verdict::from_checks(checks, format!("{} observables, 1e5 samples, worst |mean|/SE {worst:.2}", catalog.len()))
}

fn max_abs(m: &Matrix2<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn criterion_propagator() -> Verdict {
    let model = ModelConfig::dirichlet(Exponents::unit(), MODES).unwrap();
    let rows = propagator_suite(&model, 0.01).unwrap();
    let mut checks: Vec<(String, bool)> = rows
        .iter()
        .map(|r| (format!("{}: {:e}", r.name, r.value), r.pass))
        .collect();

    // composed steps against direct quadrature of the time-1 covariance
    let h = 0.01;
    let prop = build_propagator(&model, h).unwrap();
    let steps = whole_steps(1.0, h).unwrap();
    let mut quad_err: f64 = 0.0;
    let mut stat_err: f64 = 0.0;
    for (k, b) in mode_blocks(&model).iter().enumerate() {
        let (e, s) = (prop.transitions[k], prop.covariances[k]);
        let mut sn = Matrix2::<f64>::zeros();
        for _ in 0..steps {
            sn = e * sn * e.transpose() + s;
        }
        let quad = simpson_step_covariance(b, 1.0, 4000);
        quad_err = quad_err.max(max_abs(&(sn - quad)) / max_abs(&quad));
        let lambda = 1.0 / (((k + 1) as f64) * std::f64::consts::PI).powi(2);
        let expected = Matrix2::new(lambda, 0.0, 0.0, lambda);
        stat_err = stat_err.max(max_abs(&(b.stationary_covariance() - expected)) / lambda);
    }
    checks.push((format!("composed covariance vs quadrature: {quad_err:e}"), quad_err <= 1e-8));
    checks.push((format!("stationary covariance vs diag(λ^α1, λ^α2): {stat_err:e}"), stat_err <= 1e-10));
    Verdict::from_checks(checks, format!("quadrature {quad_err:.1e}, stationary {stat_err:.1e}"))
}

#[derive(Deserialize)]
struct RateCase {
    name: String,
    omega1: f64,
    omega2: f64,
    #[serde(rename = "C1")]
    c1: f64,
    theta1: f64,
    thm5_2: f64,
    thm6_10: f64,
}

fn criterion_rate() -> Verdict {
    let cases: Vec<RateCase> = serde_json::from_str(include_str!("data/rate_regression.json")).unwrap();
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;
    for c in &cases {
        let k = RateConstants::new(c.omega1, c.omega2, c.c1);
        let a = compute_theta2(&k, c.theta1, RateVariant::Thm5_2).unwrap();
        let b = compute_theta2(&k, c.theta1, RateVariant::Thm6_10).unwrap();
        let ea = (a - c.thm5_2).abs() / c.thm5_2;
        let eb = (b - c.thm6_10).abs() / c.thm6_10;
        worst = worst.max(ea).max(eb);
        checks.push((format!("{}: relative error {ea:e}, {eb:e}", c.name), ea <= 1e-12 && eb <= 1e-12));
        checks.push((format!("{}: thm6_10 = 2·thm5_2", c.name), b == 2.0 * a));
    }
    let mut positive = true;
    for p in condition_grid().iter().filter(|p| p.expected.iter().all(|&e| e)) {
        let (model, pot) = p.build();
        let cert = derive_constants(&model, &check_conditions(&model, &pot)).unwrap();
        for theta1 in [1.0 + 1e-9, 1.001, 1.5, 2.0, 10.0, 1e6] {
            for v in [RateVariant::Thm5_2, RateVariant::Thm6_10] {
                positive &= compute_theta2(&cert.constants, theta1, v).unwrap() > 0.0;
            }
        }
    }
    checks.push(("θ2 > 0 on passing configs".into(), positive));
    Verdict::from_checks(checks, format!("{} constant sets, worst relative error {worst:.1e}", cases.len()))
}

fn criterion_envelope() -> Verdict {
    let fx = Fixture::default_config();
    let theta1 = 2.0;
    let theta2 = fx.theta2(theta1);
    let times = [0.0, 0.5, 1.0, 2.0, 5.0];
    let curves = estimate_decay(
        &fx.setup(),
        &decay_observables(MODES),
        &times,
        &McParams::default(),
        theta1,
        theta2,
    )
    .unwrap();
    let mut checks = Vec::new();
    let mut rates = Vec::new();
    for c in &curves {
        for j in 0..times.len() {
            checks.push((
                format!(
                    "{} t={}: D̂ {:e} vs envelope {:e} + 3·{:e}",
                    c.observable, c.times[j], c.d_hat[j], c.envelope[j], c.se[j]
                ),
                c.within_envelope[j] && !c.under_resolved[j],
            ));
        }
        rates.push(format!("{} {}", c.observable, c.fitted_rate.map_or("n/a".into(), |r| format!("{r:.3}"))));
    }
    Verdict::from_checks(checks, format!("θ2 = {theta2:.3e}; fitted rates: {}", rates.join(", ")))
}

fn criterion_ergodic() -> Verdict {
    let horizons = [1.0, 2.0, 5.0, 10.0];
    let mc = McParams::default();
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for (name, fx) in [
        ("logcosh", Fixture::default_config()),
        ("zero", Fixture::new(ScalarPotential::zero())),
    ] {
        let theta1 = 2.0;
        let theta2 = fx.theta2(theta1);
        let report = ergodic_average_test(&fx.setup(), &CylinderFunction::v(0), &horizons, &mc, theta1, theta2).unwrap();
        for r in &report.rows {
            checks.push((
                format!("{name} T={}: error {:e} vs bound {:e} + 3·{:e}", r.horizon, r.error, r.bound, r.se),
                r.pass,
            ));
            if let Some(o) = r.oracle {
                checks.push((
                    format!("{name} T={}: error {:e} vs closed form {o:e} ± 3·{:e}", r.horizon, r.error, r.se),
                    r.oracle_pass == Some(true),
                ));
            }
        }
        if name == "zero" && report.rows.iter().any(|r| r.oracle.is_none()) {
            checks.push(("closed form available for Φ = 0".into(), false));
        }
        let last = report.rows.last().unwrap();
        details.push(format!("{name}: T=10 error {:.3e}, bound {:.3e}", last.error, last.bound));
    }
    Verdict::from_checks(checks, details.join("; "))
}

/// One point of the parameter grid with the hand-derived verdicts for
/// `[α > 1/2, β2 ≤ 2β1, β2 > 1/2, α1 = α2 or both shifted β1 > 1/2,
/// gradient bound, hypocoercivity exponents]`.
struct GridPoint {
    exponents: [f64; 4],
    /// `None` is the zero potential.
    c: Option<f64>,
    expected: [bool; 6],
}

impl GridPoint {
    fn build(&self) -> (ModelConfig, ScalarPotential) {
        let [a1, a2, b1, b2] = self.exponents;
        let model = ModelConfig::dirichlet(Exponents::new(a1, a2, b1, b2), 4).unwrap();
        let pot = match self.c {
            Some(c) => ScalarPotential::log_cosh(c).unwrap(),
            None => ScalarPotential::zero(),
        };
        (model, pot)
    }
}

// 1.5707 and 1.5708 straddle the π/2 threshold on purpose
#[allow(clippy::approx_constant)]
fn condition_grid() -> Vec<GridPoint> {
    const T: bool = true;
    const F: bool = false;
    let p = |exponents, c, expected| GridPoint { exponents, c, expected };
    vec![
        p([1.0, 1.0, 1.0, 1.0], Some(0.5), [T, T, T, T, T, T]),
        p([1.0, 1.0, 1.0, 0.4], Some(0.5), [T, T, F, T, T, F]),
        p([1.0, 1.0, 1.0, 0.5], Some(0.5), [T, T, F, T, T, F]),
        p([1.0, 1.0, 0.5, 1.0], Some(0.5), [T, T, T, T, T, T]),
        p([1.0, 1.0, 0.4, 1.0], Some(0.5), [T, F, T, T, T, T]),
        p([1.0, 1.0, 1.0, 1.2], Some(0.5), [T, T, T, T, T, F]),
        p([2.0, 1.0, 1.0, 1.0], Some(0.5), [T, T, T, F, T, T]),
        p([2.0, 1.0, 1.5, 1.0], Some(0.5), [T, T, T, T, T, T]),
        p([1.0, 2.0, 1.0, 1.0], Some(0.5), [T, T, T, F, T, F]),
        p([1.0, 1.0, 1.0, 1.0], Some(2.0), [T, T, T, T, F, T]),
        p([1.0, 1.0, 1.0, 1.0], None, [T, T, T, T, T, T]),
        p([1.0, 1.0, 1.0, 1.0], Some(1.5708), [T, T, T, T, F, T]),
        p([1.0, 1.0, 1.0, 1.0], Some(1.5707), [T, T, T, T, T, T]),
        p([0.5, 1.0, 1.0, 1.0], Some(0.5), [F, T, T, T, T, F]),
        p([1.0, 0.4, 1.0, 0.4], Some(0.5), [F, T, F, T, T, F]),
        p([1.5, 1.5, 1.0, 1.2], Some(0.5), [T, T, T, T, T, T]),
        p([1.0, 1.0, 0.75, 0.75], Some(0.5), [T, T, T, T, T, T]),
        p([1.0, 1.0, 0.8, 0.6], Some(0.5), [T, T, T, T, T, F]),
        p([1.0, 1.0, 2.0, 1.0], Some(0.5), [T, T, T, T, T, F]),
        p([1.2, 0.8, 0.6, 0.7], Some(0.5), [T, T, T, F, T, T]),
    ]
}

fn criterion_conditions() -> Verdict {
    let grid = condition_grid();
    let mut checks = Vec::new();
    for p in &grid {
        let (model, pot) = p.build();
        let r = check_conditions(&model, &pot);
        let got = [
            r.summable_alpha1.holds && r.summable_alpha2.holds,
            r.m_dissipative.holds,
            r.trace_class_k22.holds,
            r.process_ok.holds,
            r.gradient_bound.holds,
            r.hypo_ok.holds,
        ];
        let mut ok = got == p.expected;
        // failing points name their requirement
        if !p.expected[2] {
            ok &= r.failures().iter().any(|f| f.contains("β_2 > 1/2"));
        }
        if !p.expected[1] {
            ok &= r.failures().iter().any(|f| f.contains("β_2 ≤ 2β_1"));
        }
        checks.push((format!("{:?} c={:?}: got {got:?}, expected {:?}", p.exponents, p.c, p.expected), ok));
    }
    Verdict::from_checks(checks, format!("{} grid points", grid.len()))
}

fn criterion_poincare() -> Verdict {
    let fx = Fixture::default_config();
    let rows = poincare_check(&fx.setup(), &poincare_catalog(MODES), 100_000).unwrap();
    let checks = rows
        .iter()
        .map(|r| {
            (
                format!("{}: form {:e}, λ1·Var {:e}, SE {:e}", r.observable, r.dirichlet_form, r.variance / std::f64::consts::PI.powi(2), r.se),
                r.pass,
            )
        })
        .collect();
    let min_ratio = rows
        .iter()
        .map(|r| r.dirichlet_form * std::f64::consts::PI.powi(2) / r.variance)
        .fold(f64::INFINITY, f64::min);
    Verdict::from_checks(checks, format!("{} functions, smallest form/(λ1·Var) {min_ratio:.3}", rows.len()))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 operator identities", criterion_identities),
        ("2 invariance", criterion_invariance),
        ("3 propagator exactness", criterion_propagator),
        ("4 rate formula regression", criterion_rate),
        ("5 hypocoercivity envelope", criterion_envelope),
        ("6 ergodic bound", criterion_ergodic),
        ("7 condition checker", criterion_conditions),
        ("8 Poincaré inequality", criterion_poincare),
    ];
    let mut all = true;
    for (name, run) in criteria {
        let start = std::time::Instant::now();
        let v = run();
        all &= v.pass;
        println!(
            "{} criterion {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
        for f in &v.failures {
            println!("    failed: {f}");
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
