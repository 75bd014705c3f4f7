//! Builtin systems with closed-form conjugacies, used as oracles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjugacy::{ConjugacyProblem, ConjugacySettings};
use crate::dichotomy::DichotomyData;
use crate::error::{invalid, Error, Result};
use crate::flows::{
    integrate, radial_extend, FieldBuiltin, MatrixField, ModulusKind, NonlinearField, ScalarModulus, Window,
};

/// Linear part, perturbation and dichotomy data of a builtin example.
#[derive(Debug, Clone)]
pub struct ExampleSystem {
    pub matrix: MatrixField,
    pub field: NonlinearField,
    pub dichotomy: DichotomyData,
}

impl ExampleSystem {
    pub fn problem(&self, settings: ConjugacySettings) -> Result<ConjugacyProblem> {
        ConjugacyProblem::new(
            self.matrix.clone(),
            self.field.clone(),
            self.dichotomy.clone(),
            settings,
        )
    }
}

fn saddle_dichotomy() -> DichotomyData {
    let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    DichotomyData::new(0.0, p0, 1.0, 1.0, 0.5).expect("valid saddle dichotomy")
}

fn saddle(window: Window) -> MatrixField {
    MatrixField::diagonal(&[-1.0, 1.0], window).expect("valid saddle")
}

/// `H1` of the unit-ball example: `(1-ε) x^{1/(1-ε)}` for `x > 0` and
/// `-(1-ε)^{3/2} (x^{-2} - ε)^{-1/2}` for `x < 0`.
pub fn unit_ball_h1(eps: f64, x: f64) -> f64 {
    if x > 0.0 {
        (1.0 - eps) * x.powf(1.0 / (1.0 - eps))
    } else if x < 0.0 {
        -(1.0 - eps).powf(1.5) / (x.powi(-2) - eps).sqrt()
    } else {
        0.0
    }
}

/// Inverse of [`unit_ball_h1`]: `(y/(1-ε))^{1-ε}` for `y > 0` and
/// `-((1-ε)^3 y^{-2} + ε)^{-1/2}` for `y < 0`.
pub fn unit_ball_g1(eps: f64, y: f64) -> f64 {
    if y > 0.0 {
        (y / (1.0 - eps)).powf(1.0 - eps)
    } else if y < 0.0 {
        -1.0 / ((1.0 - eps).powi(3) * y.powi(-2) + eps).sqrt()
    } else {
        0.0
    }
}

/// Conjugacies known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum ClosedFormConjugacy {
    /// Componentwise `H = (H1(x1), H1(x2))`; the second component follows
    /// from the first by reversing time, which swaps the two equations.
    UnitBall { eps: f64 },
    /// `H(t, x) = 1/x - e^t/2`, `G(t, y) = 2/(e^t + 2y)`, valid for
    /// `|x| >= delta`.
    ScalarTime { eps: f64, delta: f64 },
}

impl ClosedFormConjugacy {
    pub fn h(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match *self {
            ClosedFormConjugacy::UnitBall { eps } => x.map(|v| unit_ball_h1(eps, v)),
            ClosedFormConjugacy::ScalarTime { .. } => x.map(|v| 1.0 / v - 0.5 * t.exp()),
        }
    }

    pub fn g(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        match *self {
            ClosedFormConjugacy::UnitBall { eps } => y.map(|v| unit_ball_g1(eps, v)),
            ClosedFormConjugacy::ScalarTime { .. } => y.map(|v| 2.0 / (t.exp() + 2.0 * v)),
        }
    }

    /// Whether `x` lies where the closed form is claimed.
    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        match *self {
            ClosedFormConjugacy::UnitBall { .. } => x.iter().all(|v| v.abs() <= 1.0),
            ClosedFormConjugacy::ScalarTime { delta, .. } => x.iter().all(|v| v.abs() >= delta),
        }
    }
}

fn check_unit_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("eps must lie in (0, 1), got {eps}")))
    }
}

/// Saddle `diag(-1, 1)` perturbed by the piecewise linear/cubic field on the
/// unit ball, radially extended to the plane.
pub fn unit_ball_example(eps: f64) -> Result<(ExampleSystem, ClosedFormConjugacy)> {
    check_unit_eps(eps)?;
    let w = Window::default();
    let local = NonlinearField::builtin(FieldBuiltin::UnitBall { eps }, w)?;
    let field = radial_extend(&local, 1.0)?;
    Ok((
        ExampleSystem {
            matrix: saddle(w),
            field,
            dichotomy: saddle_dichotomy(),
        },
        ClosedFormConjugacy::UnitBall { eps },
    ))
}

/// Closed-form solutions of the first component of the unit-ball example and
/// their images under `H1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOracles {
    pub eps: f64,
}

impl TrajectoryOracles {
    /// `e^{(-1+ε)t}`, through 1 at `t = 0`.
    pub fn positive(&self, t: f64) -> f64 {
        ((-1.0 + self.eps) * t).exp()
    }

    /// `-((1-ε)e^{2t} + ε)^{-1/2}`, through -1 at `t = 0`.
    pub fn negative(&self, t: f64) -> f64 {
        -1.0 / ((1.0 - self.eps) * (2.0 * t).exp() + self.eps).sqrt()
    }

    pub fn pushed_positive(&self, t: f64) -> f64 {
        (1.0 - self.eps) * (-t).exp()
    }

    pub fn pushed_negative(&self, t: f64) -> f64 {
        (self.eps - 1.0) * (-t).exp()
    }
}

pub fn trajectory_oracles(eps: f64) -> Result<TrajectoryOracles> {
    check_unit_eps(eps)?;
    Ok(TrajectoryOracles { eps })
}

/// `max |H1(x1(t)) - y1(t)|` over `times` for both oracle branches.
pub fn closed_form_mapping_residual(eps: f64, times: &[f64]) -> Result<f64> {
    let o = trajectory_oracles(eps)?;
    Ok(times
        .iter()
        .map(|&t| {
            let a = (unit_ball_h1(eps, o.positive(t)) - o.pushed_positive(t)).abs();
            let b = (unit_ball_h1(eps, o.negative(t)) - o.pushed_negative(t)).abs();
            a.max(b)
        })
        .fold(0.0, f64::max))
}

/// Reference solution `2/(e^t + e^{-t})` of the scalar time-dependent example.
pub fn scalar_time_reference(t: f64) -> f64 {
    1.0 / t.cosh()
}

/// `x' = -x + f(t, x)` with `f` zero near the origin and
/// `2e^{-t}/(e^t + e^{-t}) x` for `|x| >= delta`.
pub fn scalar_time_example(eps: f64, delta: f64) -> Result<(ExampleSystem, ClosedFormConjugacy)> {
    if !(eps > 0.0 && eps < delta && delta.is_finite()) {
        return Err(invalid(format!("need 0 < eps < delta, got eps={eps}, delta={delta}")));
    }
    let w = Window::default();
    let matrix = MatrixField::diagonal(&[-1.0], w)?;
    let field = NonlinearField::builtin(FieldBuiltin::ScalarTime { eps, delta }, w)?;
    let dichotomy = DichotomyData::new(0.0, DMatrix::identity(1, 1), 1.0, 1.0, 0.5)?;
    Ok((
        ExampleSystem {
            matrix,
            field,
            dichotomy,
        },
        ClosedFormConjugacy::ScalarTime { eps, delta },
    ))
}

/// Sawtooth modulus: locally integrable with unit-window integrals at most
/// `c`, but unbounded.
pub fn sawtooth_modulus(c: f64, window: Window) -> Result<ScalarModulus> {
    ScalarModulus::new(ModulusKind::Sawtooth { c }, window)
}

/// Saddle perturbed by `sawtooth_c(t) (sin x1, sin x2)`.
pub fn sawtooth_example(c: f64) -> Result<ExampleSystem> {
    let w = Window::default();
    Ok(ExampleSystem {
        matrix: saddle(w),
        field: NonlinearField::builtin(FieldBuiltin::SawtoothSine { c, dim: 2 }, w)?,
        dichotomy: saddle_dichotomy(),
    })
}

/// Concrete perturbation of the planar saddle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanarRealization {
    /// `σ (tanh x2, tanh x1)`.
    #[default]
    Tanh,
    /// `σ (sin x2, sin x1)`.
    Sine,
}

/// Saddle `diag(-1, 1)` with a perturbation of bound `σ√2` and Lipschitz
/// constant `σ`, so `θ = 2σ`.
pub fn planar_example(sigma: f64, realization: PlanarRealization) -> Result<ExampleSystem> {
    if sigma >= 0.5 {
        return Err(Error::HypothesisViolated {
            what: "planar Lipschitz constant r < 1/2".into(),
            value: sigma,
        });
    }
    planar_system(sigma, realization)
}

/// [`planar_example`] without the smallness guard, for reporting on
/// instances that violate it.
pub fn planar_system(sigma: f64, realization: PlanarRealization) -> Result<ExampleSystem> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let w = Window::default();
    let b = match realization {
        PlanarRealization::Tanh => FieldBuiltin::PlanarTanh { sigma },
        PlanarRealization::Sine => FieldBuiltin::PlanarSine { sigma },
    };
    Ok(ExampleSystem {
        matrix: saddle(w),
        field: NonlinearField::builtin(b, w)?,
        dichotomy: saddle_dichotomy(),
    })
}

/// One oracle comparison: `value` must not exceed `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub example: String,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    fn new(example: &str) -> Self {
        Self {
            example: example.into(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, value: f64, tolerance: f64) {
        self.checks.push(OracleCheck {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&OracleCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| a + (b - a) * i as f64 / (n - 1) as f64)
}

/// One-sided difference quotients of `H1` at 0 at the smallest step.
pub fn unit_ball_one_sided_slopes(eps: f64, step: f64) -> (f64, f64) {
    let right = unit_ball_h1(eps, step) / step;
    let left = unit_ball_h1(eps, -step) / -step;
    (right, left)
}

pub fn unit_ball_self_test(eps: f64) -> Result<OracleReport> {
    let (sys, cf) = unit_ball_example(eps)?;
    let mut r = OracleReport::new("unit_ball");
    let gh = linspace(-1.0, 1.0, 2001)
        .map(|x| (unit_ball_g1(eps, unit_ball_h1(eps, x)) - x).abs())
        .fold(0.0, f64::max);
    r.check("g_after_h_on_grid", gh, 1e-10);
    let (ylo, yhi) = (unit_ball_h1(eps, -1.0), unit_ball_h1(eps, 1.0));
    let hg = linspace(ylo, yhi, 2001)
        .map(|y| (unit_ball_h1(eps, unit_ball_g1(eps, y)) - y).abs())
        .fold(0.0, f64::max);
    r.check("h_after_g_on_grid", hg, 1e-10);
    r.check("h1_at_one", (unit_ball_h1(eps, 1.0) - (1.0 - eps)).abs(), 0.0);
    r.check("h1_at_zero", unit_ball_h1(eps, 0.0).abs(), 0.0);
    r.check(
        "g1_inverts_h1_at_one",
        (unit_ball_g1(eps, 1.0 - eps) - 1.0).abs(),
        1e-15,
    );
    let (right, left) = unit_ball_one_sided_slopes(eps, 1e-12);
    r.check("right_slope_at_zero", right.abs(), 1e-3);
    r.check("left_slope_at_zero", (left - (1.0 - eps).powf(1.5)).abs(), 1e-3);
    let times: Vec<f64> = linspace(0.0, 10.0, 1001).collect();
    r.check("pushed_trajectories", closed_form_mapping_residual(eps, &times)?, 1e-10);
    // The oracle curves stay in the unit ball, where the extension is inactive.
    let o = trajectory_oracles(eps)?;
    let tol = crate::flows::Tolerance::new(1e-12, 1e-12)?;
    let mut ode = 0.0f64;
    for (x0, oracle) in [(1.0, true), (-1.0, false)] {
        let start = DVector::from_vec(vec![x0, 0.0]);
        let traj = integrate(&sys.matrix, &sys.field, 0.0, &start, (0.0, 5.0), tol)?;
        for t in linspace(0.0, 5.0, 51) {
            let exact = if oracle { o.positive(t) } else { o.negative(t) };
            ode = ode.max((traj.eval(t)?[0] - exact).abs());
        }
    }
    r.check("field_reproduces_oracle_trajectories", ode, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut second = 0.0f64;
    for _ in 0..200 {
        let x = DVector::from_vec(vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]);
        second = second.max((cf.g(0.0, &cf.h(0.0, &x)) - x).norm());
    }
    r.check("planar_roundtrip", second, 1e-10);
    Ok(r)
}

pub fn scalar_time_self_test(eps: f64, delta: f64) -> Result<OracleReport> {
    let (sys, cf) = scalar_time_example(eps, delta)?;
    let mut r = OracleReport::new("scalar_time");
    let one = DVector::from_element(1, 1.0);
    r.check("h_at_reference_start", (cf.h(0.0, &one)[0] - 0.5).abs(), 1e-15);
    // d/dt H(t, x(t)) + H(t, x(t)) with analytic derivatives along x = 1/cosh t.
    let pushed = linspace(-5.0, 5.0, 1001)
        .map(|t| {
            let x = scalar_time_reference(t);
            let dx = -t.tanh() / t.cosh();
            let y = cf.h(t, &DVector::from_element(1, x))[0];
            let dy = -0.5 * t.exp() - dx / (x * x);
            (dy + y).abs()
        })
        .fold(0.0, f64::max);
    r.check("pushed_curve_residual", pushed, 1e-10);
    let mut lip = 0.0f64;
    let pts: Vec<f64> = linspace(delta, 10.0, 400).flat_map(|x| [x, -x]).collect();
    for (i, &a) in pts.iter().enumerate() {
        for &b in &pts[i + 1..] {
            let ha = cf.h(0.0, &DVector::from_element(1, a))[0];
            let hb = cf.h(0.0, &DVector::from_element(1, b))[0];
            lip = lip.max((ha - hb).abs() / (a - b).abs());
        }
    }
    r.check(
        "lipschitz_excess_over_inverse_delta_squared",
        (lip - 1.0 / (delta * delta)).max(0.0),
        1e-6,
    );
    let gh = pts
        .iter()
        .map(|&x| {
            let v = DVector::from_element(1, x);
            (cf.g(0.3, &cf.h(0.3, &v))[0] - x).abs()
        })
        .fold(0.0, f64::max);
    r.check("g_after_h", gh, 1e-10);
    // The reference curve solves the system while it stays outside the blend.
    let t_end = (1.0 / delta).acosh();
    let tol = crate::flows::Tolerance::new(1e-12, 1e-12)?;
    let traj = integrate(&sys.matrix, &sys.field, 0.0, &one, (-t_end, t_end), tol)?;
    let ode = linspace(-t_end, t_end, 101)
        .map(|t| Ok((traj.eval(t)?[0] - scalar_time_reference(t)).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    r.check("field_reproduces_reference", ode, 1e-8);
    Ok(r)
}

pub fn sawtooth_self_test(c: f64) -> Result<OracleReport> {
    let m = sawtooth_modulus(c, Window::symmetric(60.0))?;
    let mut r = OracleReport::new("sawtooth");
    let first = linspace(0.0, 0.999, 100).map(|t| m.value(t)).fold(0.0, f64::max);
    r.check("zero_on_first_unit", first, 0.0);
    r.check("peak_at_four", (m.value(4.0 + 1.0 / 8.0) - 2.0 * c).abs(), 1e-12 * c);
    let worst = linspace(-51.0, 50.0, 10101)
        .map(|t| m.integral(t, t + 1.0))
        .fold(0.0, f64::max);
    r.check("unit_window_integral_excess", (worst - c).max(0.0), 1e-12);
    let peak = m.value(50.0 + 1.0 / 100.0);
    r.check("peak_shortfall_below_ten_c", (10.0 * c - peak).max(0.0), 0.0);
    let sys = sawtooth_example(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut excess = 0.0f64;
    for _ in 0..500 {
        let t = rng.gen_range(-20.0..20.0);
        let x = DVector::from_vec(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        excess = excess.max(sys.field.eval(t, &x).norm() - sys.field.mu().value(t));
    }
    r.check("field_within_bound_modulus", excess.max(0.0), 1e-12);
    Ok(r)
}

pub fn planar_self_test(sigma: f64, realization: PlanarRealization) -> Result<OracleReport> {
    let sys = planar_example(sigma, realization)?;
    let problem = sys.problem(ConjugacySettings::default())?;
    let h = problem.hypotheses()?;
    let mut r = OracleReport::new("planar");
    r.check("theta_is_two_sigma", (h.theta - 2.0 * sigma).abs(), 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut lip, mut bound) = (0.0f64, 0.0f64);
    for _ in 0..2000 {
        let x = DVector::from_vec(vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]);
        let y = DVector::from_vec(vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]);
        let (fx, fy) = (sys.field.eval(0.0, &x), sys.field.eval(0.0, &y));
        lip = lip.max((fx.clone() - fy).norm() / (x - y).norm());
        bound = bound.max(fx.norm());
    }
    r.check("lipschitz_excess_over_sigma", (lip - sigma).max(0.0), 1e-12);
    r.check(
        "bound_excess_over_sigma_sqrt2",
        (bound - sigma * 2f64.sqrt()).max(0.0),
        1e-12,
    );
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_ball_anchor_values() {
        assert_eq!(unit_ball_h1(0.25, 1.0), 0.75);
        assert_eq!(unit_ball_h1(0.25, 0.0), 0.0);
        assert!((unit_ball_g1(0.25, 0.75) - 1.0).abs() < 1e-15);
        assert!(unit_ball_example(0.0).is_err());
        assert!(unit_ball_example(1.0).is_err());
    }

    #[test]
    fn oracle_branches_start_at_plus_minus_one() {
        let o = trajectory_oracles(0.25).unwrap();
        assert_eq!(o.positive(0.0), 1.0);
        assert_eq!(o.negative(0.0), -1.0);
        assert!(o.positive(50.0).abs() < 1e-15 && o.negative(50.0).abs() < 1e-15);
    }

    #[test]
    fn self_tests_pass() {
        for r in [
            unit_ball_self_test(0.25).unwrap(),
            scalar_time_self_test(0.1, 0.5).unwrap(),
            sawtooth_self_test(1.0).unwrap(),
            planar_self_test(0.1, PlanarRealization::Tanh).unwrap(),
            planar_self_test(0.1, PlanarRealization::Sine).unwrap(),
        ] {
            assert!(r.passed(), "{r:#?}");
        }
    }

    #[test]
    fn planar_rejects_large_sigma() {
        assert!(matches!(
            planar_example(0.5, PlanarRealization::Tanh),
            Err(Error::HypothesisViolated { .. })
        ));
        assert!(planar_example(0.0, PlanarRealization::Sine).is_err());
    }

    #[test]
    fn scalar_time_rejects_bad_order() {
        assert!(scalar_time_example(0.5, 0.5).is_err());
        assert!(scalar_time_example(0.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn h1_is_increasing_and_inverted(eps in 0.05f64..0.95, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(unit_ball_h1(eps, lo) < unit_ball_h1(eps, hi));
            prop_assert!((unit_ball_g1(eps, unit_ball_h1(eps, a)) - a).abs() < 1e-10);
        }

        #[test]
        fn scalar_time_maps_are_inverse(t in -3.0f64..3.0, x in 0.5f64..10.0, sign in proptest::bool::ANY) {
            let x = if sign { x } else { -x };
            let cf = ClosedFormConjugacy::ScalarTime { eps: 0.1, delta: 0.5 };
            let v = DVector::from_element(1, x);
            prop_assert!((cf.g(t, &cf.h(t, &v))[0] - x).abs() < 1e-10 * x.abs().max(1.0));
        }
    }
}
