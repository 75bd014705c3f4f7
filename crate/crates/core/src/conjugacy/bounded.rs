//! Solutions bounded on a half-line, their decay estimates, and the
//! uniqueness probe for the variational equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::window::{Panel, WindowOps};
use super::{picard, ConjugacyProblem, PicardRun};
use crate::error::{invalid, Error, Result};
use crate::flows::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayDirection {
    /// Solutions bounded on `[t0, ∞)`, parametrized by `P(t0)x`.
    Forward,
    /// Solutions bounded on `(-∞, t0]`, parametrized by `(I - P(t0))x`.
    Backward,
}

#[derive(Debug, Clone)]
pub struct BoundedSolution {
    pub trajectory: Trajectory,
    pub iterations: usize,
    pub last_change: f64,
    pub changes: Vec<f64>,
}

/// Nodes from `t0` in steps of about `step`, with `t0 ± length` hit exactly,
/// continued for `extra` beyond it. Returned increasing, with the index range
/// of the `[t0, t0 ± length]` part.
fn half_line_nodes(t0: f64, length: f64, extra: f64, step: f64, dir: DecayDirection) -> (Vec<f64>, usize, usize) {
    let m = ((length / step).ceil() as usize).max(3);
    let h = length / m as f64;
    let e = (extra / h).ceil() as usize;
    match dir {
        DecayDirection::Forward => {
            let nodes = (0..=m + e).map(|j| t0 + h * j as f64).collect();
            (nodes, 0, m)
        }
        DecayDirection::Backward => {
            let total = m + e;
            let nodes = (0..=total).map(|j| t0 - h * (total - j) as f64).collect();
            (nodes, e, total)
        }
    }
}

fn check_projected(
    problem: &ConjugacyProblem,
    t0: f64,
    xi: &DVector<f64>,
    dir: DecayDirection,
) -> Result<DMatrix<f64>> {
    let n = problem.dim();
    if xi.len() != n {
        return Err(invalid(format!(
            "initial datum has dimension {}, system has {n}",
            xi.len()
        )));
    }
    let p = problem.kernel().projection(t0)?;
    let proj = match dir {
        DecayDirection::Forward => p,
        DecayDirection::Backward => DMatrix::identity(n, n) - p,
    };
    let off = (&proj * xi - xi).norm();
    if off > 1e-9 * (1.0 + xi.norm()) {
        return Err(invalid(format!(
            "initial datum is off the required projection range by {off:e}"
        )));
    }
    Ok(proj)
}

fn solve_bounded(
    problem: &ConjugacyProblem,
    t0: f64,
    xi: &DVector<f64>,
    length: f64,
    tol: f64,
    dir: DecayDirection,
) -> Result<BoundedSolution> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(invalid(format!("length must be positive, got {length}")));
    }
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    problem.require_theta()?;
    check_projected(problem, t0, xi, dir)?;
    let kernel = problem.kernel();
    let n = problem.dim();
    // The far end is truncated; extending the window by the horizon keeps the
    // truncation error out of the returned range.
    let (nodes, lo, hi) = half_line_nodes(t0, length, problem.horizon(), problem.settings().grid_step, dir);
    let ops = WindowOps::from_nodes(kernel, nodes)?;
    let base_at = |u: f64| -> Result<DVector<f64>> { Ok(kernel.evolution(u, t0)? * xi) };
    let base: Vec<Panel<DVector<f64>>> = (0..ops.panels())
        .map(|j| {
            let u = ops.gauss(j);
            Ok([base_at(u[0])?, base_at(u[1])?, base_at(u[2])?, base_at(u[3])?])
        })
        .collect::<Result<_>>()?;
    let f = problem.field();
    let PicardRun {
        values,
        iterations,
        changes,
    } = if f.is_zero() {
        PicardRun {
            values: vec![DVector::zeros(n); ops.nodes().len()],
            iterations: 1,
            changes: vec![0.0],
        }
    } else {
        picard(
            &ops,
            &base,
            vec![DVector::zeros(n); ops.nodes().len()],
            |u, y, z| f.eval(u, &(y + z)),
            tol,
            problem.settings().max_picard,
        )?
    };
    let a = problem.matrix();
    let mut times = Vec::with_capacity(hi - lo + 1);
    let mut states = Vec::with_capacity(hi - lo + 1);
    let mut derivs = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let t = ops.nodes()[i];
        let x = base_at(t)? + &values[i];
        let mut dx = DVector::zeros(n);
        a.apply_into(t, &x, &mut dx);
        dx += f.eval(t, &x);
        times.push(t);
        states.push(x);
        derivs.push(dx);
    }
    Ok(BoundedSolution {
        trajectory: Trajectory::from_samples(times, states, derivs, problem.settings().ode_tol)?,
        iterations,
        last_change: *changes.last().expect("at least one iteration"),
        changes,
    })
}

/// Solution on `[t0, t0 + length]` that stays bounded forward in time, with
/// `P(t0) x(t0) = ξ1`; Picard iteration of its integral representation.
pub fn solve_bounded_forward(
    problem: &ConjugacyProblem,
    t0: f64,
    xi1: &DVector<f64>,
    length: f64,
    tol: f64,
) -> Result<BoundedSolution> {
    solve_bounded(problem, t0, xi1, length, tol, DecayDirection::Forward)
}

/// Solution on `[t0 - length, t0]` that stays bounded backward in time, with
/// `(I - P(t0)) x(t0) = ξ2`.
pub fn solve_bounded_backward(
    problem: &ConjugacyProblem,
    t0: f64,
    xi2: &DVector<f64>,
    length: f64,
    tol: f64,
) -> Result<BoundedSolution> {
    solve_bounded(problem, t0, xi2, length, tol, DecayDirection::Backward)
}

/// Comparison of two bounded solutions against
/// `K/(1 - Kθ̃) ‖ξ - ξ̄‖ e^{-α2 |t - t0|}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub direction: DecayDirection,
    pub theta_tilde: f64,
    pub factor: f64,
    pub alpha2: f64,
    pub initial_distance: f64,
    /// Smallest `bound (1 + slack) - ‖X - X̄‖` over the samples.
    pub min_margin: f64,
    pub worst_t: f64,
    pub samples: usize,
    pub passed: bool,
}

pub fn decay_check(
    problem: &ConjugacyProblem,
    t0: f64,
    xi: &DVector<f64>,
    xi_bar: &DVector<f64>,
    length: f64,
    direction: DecayDirection,
) -> Result<DecayReport> {
    let hyp = problem.require_theta_tilde()?.clone();
    let tol = problem.settings().picard_tol;
    let (x, xb) = match direction {
        DecayDirection::Forward => (
            solve_bounded_forward(problem, t0, xi, length, tol)?,
            solve_bounded_forward(problem, t0, xi_bar, length, tol)?,
        ),
        DecayDirection::Backward => (
            solve_bounded_backward(problem, t0, xi, length, tol)?,
            solve_bounded_backward(problem, t0, xi_bar, length, tol)?,
        ),
    };
    let d = problem.dichotomy();
    let factor = d.k() / (1.0 - hyp.k_theta_tilde);
    let dist = (xi - xi_bar).norm();
    let slack = problem.settings().slack;
    let mut min_margin = f64::INFINITY;
    let mut worst_t = t0;
    let traj = &x.trajectory;
    for (i, &t) in traj.times().iter().enumerate() {
        let diff = (&traj.states()[i] - &xb.trajectory.states()[i]).norm();
        let bound = factor * dist * (-d.alpha2() * (t - t0).abs()).exp();
        let margin = bound * (1.0 + slack) - diff;
        if margin < min_margin {
            min_margin = margin;
            worst_t = t;
        }
    }
    Ok(DecayReport {
        direction,
        theta_tilde: hyp.theta_tilde,
        factor,
        alpha2: d.alpha2(),
        initial_distance: dist,
        min_margin,
        worst_t,
        samples: traj.len(),
        passed: min_margin >= 0.0,
    })
}

/// Picard history of `Z ↦ 𝒦(f(·, x + Z) - f(·, x))` started at a constant
/// perturbation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub iterations: usize,
    /// Sup norm of each iterate, starting with the initial one.
    pub norms: Vec<f64>,
    /// Largest ratio of successive norms.
    pub max_ratio: f64,
    pub final_norm: f64,
    pub converged: bool,
}

/// Checks that the only bounded solution of the variational equation along
/// `reference` is zero, by iterating from the constant perturbation `z0` on
/// the reference's time span.
pub fn zero_uniqueness_probe(
    problem: &ConjugacyProblem,
    reference: &Trajectory,
    z0: &DVector<f64>,
    tol: f64,
) -> Result<ProbeReport> {
    problem.require_theta()?;
    if z0.len() != problem.dim() || reference.dim() != problem.dim() {
        return Err(invalid("probe dimensions do not match the system"));
    }
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let ops = WindowOps::new(
        problem.kernel(),
        reference.start(),
        reference.end(),
        problem.settings().grid_step,
    )?;
    let base: Vec<Panel<DVector<f64>>> = (0..ops.panels())
        .map(|j| {
            let u = ops.gauss(j);
            Ok([
                reference.eval(u[0])?,
                reference.eval(u[1])?,
                reference.eval(u[2])?,
                reference.eval(u[3])?,
            ])
        })
        .collect::<Result<_>>()?;
    let f = problem.field();
    let mut z = vec![z0.clone(); ops.nodes().len()];
    let mut norms = vec![z0.norm()];
    let max_iter = problem.settings().max_picard;
    while *norms.last().expect("nonempty") >= tol {
        if norms.len() > max_iter {
            return Err(Error::ConvergenceFailure {
                iterations: max_iter,
                last_change: *norms.last().expect("nonempty"),
            });
        }
        let inputs: Vec<Panel<DVector<f64>>> = (0..ops.panels())
            .map(|j| {
                let zi = ops.interpolate(&z, j);
                let u = ops.gauss(j);
                std::array::from_fn(|k| f.eval(u[k], &(&base[j][k] + &zi[k])) - f.eval(u[k], &base[j][k]))
            })
            .collect();
        z = ops.apply(&inputs);
        norms.push(z.iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    let max_ratio = norms
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    let final_norm = *norms.last().expect("nonempty");
    Ok(ProbeReport {
        iterations: norms.len() - 1,
        max_ratio,
        final_norm,
        converged: final_norm < tol,
        norms,
    })
}
