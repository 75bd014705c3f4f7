//! Construction of the conjugating maps `H(t, x) = x + h(t, (t, x))` and
//! `G(t, y) = y + g(t, (t, y))` between `x' = A(t)x + f(t, x)` and
//! `y' = A(t)y`, bounded half-line solutions, and their checks.

mod bounded;
mod verify;
mod window;

pub use bounded::{
    decay_check, solve_bounded_backward, solve_bounded_forward, zero_uniqueness_probe, BoundedSolution, DecayDirection,
    DecayReport, ProbeReport,
};
pub use verify::{verify_conjugacy, ConjugacyReport, MapSample, SampleSpec};

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::DVector;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::dichotomy::{horizon_for_tail, sup_l_alpha, DichotomyData, GreenKernel, SupKernel};
use crate::error::{invalid, Error, Result};
use crate::flows::{integrate, MatrixField, NonlinearField, ScalarModulus, Tolerance};
use crate::quadrature::QuadTol;
use window::{Panel, WindowOps};

/// Numerical configuration of a conjugacy problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugacySettings {
    /// Truncation horizon `T`; derived from `tail_target` when absent.
    pub horizon: Option<f64>,
    /// Target for the analytic tail bound when deriving `T`.
    pub tail_target: f64,
    pub picard_tol: f64,
    pub max_picard: usize,
    pub ode_tol: Tolerance,
    pub quad_tol: f64,
    /// Node spacing of the Green-operator grids.
    pub grid_step: f64,
    /// Relative slack in bound checks.
    pub slack: f64,
    /// Spacing of the grid on which `sup L_α` is sampled.
    pub hypothesis_step: f64,
}

impl Default for ConjugacySettings {
    fn default() -> Self {
        Self {
            horizon: None,
            tail_target: 1e-6,
            picard_tol: 1e-6,
            max_picard: 200,
            ode_tol: Tolerance::default(),
            quad_tol: 1e-8,
            grid_step: 0.05,
            slack: 1e-3,
            hypothesis_step: 0.1,
        }
    }
}

impl ConjugacySettings {
    fn validate(&self) -> Result<()> {
        self.ode_tol.validate()?;
        let positive = [
            ("tail_target", self.tail_target),
            ("picard_tol", self.picard_tol),
            ("quad_tol", self.quad_tol),
            ("grid_step", self.grid_step),
            ("hypothesis_step", self.hypothesis_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.slack >= 0.0) {
            return Err(invalid(format!("slack must be nonnegative, got {}", self.slack)));
        }
        if self.max_picard == 0 {
            return Err(invalid("max_picard must be at least 1"));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Smallness conditions of the linearization theorems, sampled on the
/// problem window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub k: f64,
    pub alpha: f64,
    pub alpha1: f64,
    /// `sup_t L_α(μ)(t)`.
    pub sup_l_alpha_mu: f64,
    pub mu_finite: bool,
    /// `θ = sup_t L_α(r)(t)`.
    pub theta: f64,
    pub k_theta: f64,
    pub theta_ok: bool,
    /// `θ̃ = sup_t L_{α1}(r)(t)`.
    pub theta_tilde: f64,
    pub k_theta_tilde: f64,
    pub theta_tilde_ok: bool,
    /// `2 r K / α` when both `A` and `r` are constant.
    pub autonomous_shortcut: Option<f64>,
    /// Whether each supremum above is the closed form of a constant modulus.
    pub closed_form: bool,
    pub grid_start: f64,
    pub grid_end: f64,
    pub grid_step: f64,
    pub grid_points: usize,
    pub horizon: f64,
}

impl HypothesisReport {
    /// Conditions needed to construct `H` and `G`.
    pub fn conjugacy_ok(&self) -> bool {
        self.mu_finite && self.theta_ok
    }

    /// All flags, including the one for the regularity statements.
    pub fn all_ok(&self) -> bool {
        self.conjugacy_ok() && self.theta_tilde_ok
    }
}

/// Linear system, perturbation, dichotomy data and numerical settings.
#[derive(Debug)]
pub struct ConjugacyProblem {
    matrix: MatrixField,
    field: NonlinearField,
    dichotomy: DichotomyData,
    settings: ConjugacySettings,
    kernel: GreenKernel,
    hypotheses: OnceLock<HypothesisReport>,
}

/// Default horizon: the Green tail bound `2 K C_μ e^{-αT} / (1 - e^{-α})`
/// falls below `target`, clamped to `[5, 40]`.
pub fn default_horizon(k: f64, alpha: f64, window_sup_mu: f64, target: f64) -> f64 {
    if !(window_sup_mu > 0.0) {
        return 5.0;
    }
    if !window_sup_mu.is_finite() {
        return 40.0;
    }
    horizon_for_tail(k * window_sup_mu, alpha, target).clamp(5.0, 40.0)
}

impl ConjugacyProblem {
    pub fn new(
        matrix: MatrixField,
        field: NonlinearField,
        dichotomy: DichotomyData,
        settings: ConjugacySettings,
    ) -> Result<Self> {
        settings.validate()?;
        if matrix.dim() != field.dim() || matrix.dim() != dichotomy.dim() {
            return Err(invalid(format!(
                "dimension mismatch: matrix {}, field {}, projection {}",
                matrix.dim(),
                field.dim(),
                dichotomy.dim()
            )));
        }
        let horizon = settings.horizon.unwrap_or_else(|| {
            default_horizon(
                dichotomy.k(),
                dichotomy.alpha(),
                field.mu().window_sup(),
                settings.tail_target,
            )
        });
        let kernel = GreenKernel::new(dichotomy.clone(), matrix.clone(), horizon, settings.ode_tol)?
            .with_quad_tol(QuadTol::new(settings.quad_tol * 1e-2, settings.quad_tol));
        Ok(Self {
            matrix,
            field,
            dichotomy,
            settings,
            kernel,
            hypotheses: OnceLock::new(),
        })
    }

    pub fn matrix(&self) -> &MatrixField {
        &self.matrix
    }

    pub fn field(&self) -> &NonlinearField {
        &self.field
    }

    pub fn dichotomy(&self) -> &DichotomyData {
        &self.dichotomy
    }

    pub fn settings(&self) -> &ConjugacySettings {
        &self.settings
    }

    pub fn kernel(&self) -> &GreenKernel {
        &self.kernel
    }

    pub fn horizon(&self) -> f64 {
        self.kernel.horizon()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Cached hypothesis report.
    pub fn hypotheses(&self) -> Result<&HypothesisReport> {
        if let Some(r) = self.hypotheses.get() {
            return Ok(r);
        }
        let r = compute_hypotheses(self)?;
        Ok(self.hypotheses.get_or_init(|| r))
    }

    fn require_theta(&self) -> Result<&HypothesisReport> {
        let h = self.hypotheses()?;
        if !h.mu_finite {
            return Err(Error::HypothesisViolated {
                what: "sup L_alpha(mu)".into(),
                value: h.sup_l_alpha_mu,
            });
        }
        if !h.theta_ok {
            return Err(Error::HypothesisViolated {
                what: "K*theta".into(),
                value: h.k_theta,
            });
        }
        Ok(h)
    }

    fn require_theta_tilde(&self) -> Result<&HypothesisReport> {
        let h = self.require_theta()?;
        if !h.theta_tilde_ok {
            return Err(Error::HypothesisViolated {
                what: "K*theta_tilde".into(),
                value: h.k_theta_tilde,
            });
        }
        Ok(h)
    }

    fn centered_ops(&self, t: f64) -> Result<WindowOps> {
        WindowOps::centered(&self.kernel, t, self.horizon(), self.settings.grid_step)
    }
}

fn sup_kernel(b: &ScalarModulus, alpha: f64, grid: &[f64]) -> Result<(f64, bool)> {
    if let Some(v) = b.as_constant() {
        return Ok((2.0 * v / alpha, true));
    }
    if !b.window_sup().is_finite() {
        return Ok((f64::INFINITY, false));
    }
    let horizon = horizon_for_tail(b.window_sup(), alpha, 1e-10);
    let SupKernel { value, .. } = sup_l_alpha(b, alpha, grid, horizon)?;
    Ok((value, false))
}

fn compute_hypotheses(p: &ConjugacyProblem) -> Result<HypothesisReport> {
    let d = &p.dichotomy;
    let window = p.matrix.window();
    let step = p.settings.hypothesis_step;
    let grid = crate::flows::uniform_grid(window.start, window.end, step);
    let (sup_mu, c1) = sup_kernel(p.field.mu(), d.alpha(), &grid)?;
    let (theta, c2) = sup_kernel(p.field.r(), d.alpha(), &grid)?;
    let (theta_tilde, c3) = sup_kernel(p.field.r(), d.alpha1(), &grid)?;
    let autonomous_shortcut = match (p.matrix.is_constant(), p.field.r().as_constant()) {
        (true, Some(r)) => Some(2.0 * r * d.k() / d.alpha()),
        _ => None,
    };
    Ok(HypothesisReport {
        k: d.k(),
        alpha: d.alpha(),
        alpha1: d.alpha1(),
        sup_l_alpha_mu: sup_mu,
        mu_finite: sup_mu.is_finite(),
        theta,
        k_theta: d.k() * theta,
        theta_ok: d.k() * theta < 1.0,
        theta_tilde,
        k_theta_tilde: d.k() * theta_tilde,
        theta_tilde_ok: d.k() * theta_tilde < 1.0,
        autonomous_shortcut,
        closed_form: c1 && c2 && c3,
        grid_start: window.start,
        grid_end: window.end,
        grid_step: step,
        grid_points: grid.len(),
        horizon: p.horizon(),
    })
}

/// Hypothesis check of the linearization theorem (see [`HypothesisReport`]).
pub fn check_hypotheses(problem: &ConjugacyProblem) -> Result<HypothesisReport> {
    problem.hypotheses().cloned()
}

/// Result of a Picard iteration on a Green-operator grid.
#[derive(Debug, Clone)]
pub(crate) struct PicardRun {
    pub values: Vec<DVector<f64>>,
    pub iterations: usize,
    pub changes: Vec<f64>,
}

/// Iterates `Z ← 𝒦(rhs(u, base(u), Z(u)))` on `ops` from `z0` until the
/// sup-norm change drops below `tol`.
pub(crate) fn picard<F>(
    ops: &WindowOps,
    base: &[Panel<DVector<f64>>],
    z0: Vec<DVector<f64>>,
    rhs: F,
    tol: f64,
    max_iter: usize,
) -> Result<PicardRun>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let mut z = z0;
    let mut changes = Vec::new();
    for it in 1..=max_iter {
        let inputs: Vec<Panel<DVector<f64>>> = (0..ops.panels())
            .map(|j| {
                let zi = ops.interpolate(&z, j);
                let u = ops.gauss(j);
                std::array::from_fn(|k| rhs(u[k], &base[j][k], &zi[k]))
            })
            .collect();
        let next = ops.apply(&inputs);
        let change = next.iter().zip(&z).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::NumericOverflow { t: ops.nodes()[0] });
        }
        changes.push(change);
        z = next;
        if change < tol {
            return Ok(PicardRun {
                values: z,
                iterations: it,
                changes,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        last_change: changes.last().copied().unwrap_or(f64::NAN),
    })
}

/// Largest ratio of successive Picard changes after the first step, ignoring
/// changes already at rounding level.
pub fn contraction_ratio(changes: &[f64]) -> f64 {
    changes
        .windows(2)
        .skip(1)
        .filter(|w| w[0] > 1e-12)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

/// `h(t, (τ, ξ)) = -𝒦(f(·, X(·, τ, ξ)))(t)`.
pub fn solve_h(problem: &ConjugacyProblem, t: f64, tau: f64, xi: &DVector<f64>) -> Result<DVector<f64>> {
    check_point(problem, xi)?;
    if problem.field.is_zero() {
        return Ok(DVector::zeros(problem.dim()));
    }
    let horizon = problem.horizon();
    let span = (tau.min(t - horizon), tau.max(t + horizon));
    let traj = integrate(&problem.matrix, &problem.field, tau, xi, span, problem.settings.ode_tol)?;
    let ops = problem.centered_ops(t)?;
    let inputs: Vec<Panel<DVector<f64>>> = (0..ops.panels())
        .map(|j| {
            let u = ops.gauss(j);
            let mut out: [Option<DVector<f64>>; 4] = Default::default();
            for k in 0..4 {
                out[k] = Some(problem.field.eval(u[k], &traj.eval(u[k])?));
            }
            Ok(out.map(|v| v.expect("filled")))
        })
        .collect::<Result<_>>()?;
    Ok(-ops.apply_at(&inputs, ops.node_index(t)))
}

/// Value of `g(t, (τ, ξ))` with the Picard history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GSolution {
    #[serde(skip)]
    pub value: DVector<f64>,
    pub iterations: usize,
    pub changes: Vec<f64>,
    pub last_change: f64,
}

/// `g(t, (τ, ξ))`: fixed point of `Z ↦ 𝒦(f(·, Y + Z))` with
/// `Y(s) = U(s, τ) ξ`, evaluated at `t`.
pub fn solve_g(problem: &ConjugacyProblem, t: f64, tau: f64, xi: &DVector<f64>) -> Result<GSolution> {
    check_point(problem, xi)?;
    problem.require_theta()?;
    let n = problem.dim();
    if problem.field.is_zero() {
        return Ok(GSolution {
            value: DVector::zeros(n),
            iterations: 1,
            changes: vec![0.0],
            last_change: 0.0,
        });
    }
    let ops = problem.centered_ops(t)?;
    let base: Vec<Panel<DVector<f64>>> = (0..ops.panels())
        .map(|j| {
            let u = ops.gauss(j);
            let mut out: [Option<DVector<f64>>; 4] = Default::default();
            for k in 0..4 {
                out[k] = Some(problem.kernel.evolution(u[k], tau)? * xi);
            }
            Ok(out.map(|v| v.expect("filled")))
        })
        .collect::<Result<_>>()?;
    let z0 = vec![DVector::zeros(n); ops.nodes().len()];
    let f = &problem.field;
    let run = picard(
        &ops,
        &base,
        z0,
        |u, y, z| f.eval(u, &(y + z)),
        problem.settings.picard_tol,
        problem.settings.max_picard,
    )?;
    let idx = ops.node_index(t);
    Ok(GSolution {
        value: run.values[idx].clone(),
        iterations: run.iterations,
        last_change: *run.changes.last().expect("at least one iteration"),
        changes: run.changes,
    })
}

fn check_point(problem: &ConjugacyProblem, x: &DVector<f64>) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(invalid(format!(
            "point has dimension {}, system has {}",
            x.len(),
            problem.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("point has non-finite coordinates"));
    }
    Ok(())
}

/// `H(t, x) = x + h(t, (t, x))`.
pub fn h_eval(problem: &ConjugacyProblem, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(x + solve_h(problem, t, t, x)?)
}

/// `G(t, y) = y + g(t, (t, y))`.
pub fn g_eval(problem: &ConjugacyProblem, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(y + solve_g(problem, t, t, y)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    H,
    G,
}

// Bit patterns of `t` and `x`.
type MemoKey = (u64, Vec<u64>);

/// Memoizing evaluator of `H` or `G`; safe for concurrent use.
#[derive(Debug)]
pub struct MapEvaluator<'a> {
    problem: &'a ConjugacyProblem,
    mode: MapMode,
    memo: RwLock<HashMap<MemoKey, DVector<f64>>>,
}

impl<'a> MapEvaluator<'a> {
    pub fn new(problem: &'a ConjugacyProblem, mode: MapMode) -> Result<Self> {
        if mode == MapMode::G {
            problem.require_theta()?;
        }
        Ok(Self {
            problem,
            mode,
            memo: RwLock::new(HashMap::new()),
        })
    }

    pub fn mode(&self) -> MapMode {
        self.mode
    }

    pub fn problem(&self) -> &ConjugacyProblem {
        self.problem
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let key = (t.to_bits(), x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if let Some(v) = self.memo.read().get(&key) {
            return Ok(v.clone());
        }
        let v = match self.mode {
            MapMode::H => h_eval(self.problem, t, x)?,
            MapMode::G => g_eval(self.problem, t, x)?,
        };
        self.memo.write().insert(key, v.clone());
        Ok(v)
    }

    pub fn memo_len(&self) -> usize {
        self.memo.read().len()
    }
}

#[cfg(test)]
mod tests;
