//! Sampled verification of the conjugacy identities.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{contraction_ratio, solve_g, ConjugacyProblem, HypothesisReport, MapEvaluator, MapMode};
use crate::error::{invalid, Error, Result};
use crate::flows::integrate;

/// Where and how densely to sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub seed: u64,
    pub points: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Points are drawn uniformly from the ball of this radius.
    pub radius: f64,
    pub trajectories: usize,
    /// Length of each sampled trajectory.
    pub horizon: f64,
    /// Times per trajectory at which the mapping identity is checked.
    pub checkpoints: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 100,
            t_min: -2.0,
            t_max: 2.0,
            radius: 2.0,
            trajectories: 20,
            horizon: 3.0,
            checkpoints: 6,
        }
    }
}

impl SampleSpec {
    fn validate(&self) -> Result<()> {
        if !(self.t_min <= self.t_max && self.t_min.is_finite() && self.t_max.is_finite()) {
            return Err(invalid(format!("bad time range [{}, {}]", self.t_min, self.t_max)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(invalid(format!("radius must be nonnegative, got {}", self.radius)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!(
                "trajectory horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.trajectories > 0 && self.checkpoints == 0 {
            return Err(invalid("checkpoints must be at least 1"));
        }
        Ok(())
    }
}

/// Maps evaluated at one sampled point `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSample {
    pub t: f64,
    pub x: DVector<f64>,
    pub h: DVector<f64>,
    pub g: DVector<f64>,
    /// `‖H(t, G(t, x)) - x‖`.
    pub hg_residual: f64,
    /// `‖G(t, H(t, x)) - x‖`.
    pub gh_residual: f64,
    pub picard_iterations: usize,
    pub picard_ratio: f64,
}

/// Mapping residuals at one checkpoint of one sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub index: usize,
    pub t0: f64,
    pub t1: f64,
    /// `‖H(t1, X(t1, t0, x0)) - U(t1, t0) H(t0, x0)‖`.
    pub h_residual: f64,
    /// `‖G(t1, U(t1, t0) y0) - X(t1, t0, G(t0, y0))‖`.
    pub g_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugacyReport {
    pub spec: SampleSpec,
    pub hypotheses: HypothesisReport,
    pub max_hg_residual: f64,
    pub max_gh_residual: f64,
    pub max_h_mapping_residual: f64,
    pub max_g_mapping_residual: f64,
    pub max_h_offset: f64,
    pub max_g_offset: f64,
    /// `K sup L_α(μ)`.
    pub offset_bound: f64,
    pub h_bound_margin: f64,
    pub g_bound_margin: f64,
    pub max_picard_ratio: f64,
    pub max_picard_iterations: usize,
    #[serde(skip)]
    pub samples: Vec<MapSample>,
    #[serde(skip)]
    pub trajectory_samples: Vec<TrajectorySample>,
}

impl ConjugacyReport {
    /// Largest identity or mapping residual.
    pub fn max_residual(&self) -> f64 {
        [
            self.max_hg_residual,
            self.max_gh_residual,
            self.max_h_mapping_residual,
            self.max_g_mapping_residual,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Residuals within `budget` and offsets within the bound plus `budget`.
    pub fn within(&self, budget: f64) -> bool {
        self.max_residual() <= budget && self.h_bound_margin >= -budget && self.g_bound_margin >= -budget
    }
}

fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    if radius == 0.0 {
        return DVector::zeros(dim);
    }
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..=1.0));
        if v.norm() <= 1.0 {
            return v * radius;
        }
    }
}

fn sample_time(rng: &mut ChaCha8Rng, spec: &SampleSpec) -> f64 {
    if spec.t_min == spec.t_max {
        spec.t_min
    } else {
        rng.gen_range(spec.t_min..spec.t_max)
    }
}

pub fn verify_conjugacy(problem: &ConjugacyProblem, spec: &SampleSpec) -> Result<ConjugacyReport> {
    spec.validate()?;
    let hyp = problem.require_theta()?.clone();
    let n = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points: Vec<(f64, DVector<f64>)> = (0..spec.points)
        .map(|_| {
            let t = sample_time(&mut rng, spec);
            (t, sample_ball(&mut rng, n, spec.radius))
        })
        .collect();
    let starts: Vec<(f64, DVector<f64>, DVector<f64>)> = (0..spec.trajectories)
        .map(|_| {
            let t = sample_time(&mut rng, spec);
            let x = sample_ball(&mut rng, n, spec.radius);
            let y = sample_ball(&mut rng, n, spec.radius);
            (t, x, y)
        })
        .collect();

    let h_map = MapEvaluator::new(problem, MapMode::H)?;
    let g_map = MapEvaluator::new(problem, MapMode::G)?;

    let samples: Vec<MapSample> = points
        .par_iter()
        .map(|(t, x)| {
            let h = h_map.eval(*t, x)?;
            let gs = solve_g(problem, *t, *t, x)?;
            let g = x + &gs.value;
            let hg = h_map.eval(*t, &g)?;
            let gh = g_map.eval(*t, &h)?;
            Ok(MapSample {
                t: *t,
                hg_residual: (hg - x).norm(),
                gh_residual: (gh - x).norm(),
                picard_iterations: gs.iterations,
                picard_ratio: contraction_ratio(&gs.changes),
                x: x.clone(),
                h,
                g,
            })
        })
        .collect::<Result<_>>()?;

    let checkpoints = spec.checkpoints.max(1);
    let trajectory_samples: Vec<Vec<TrajectorySample>> = starts
        .par_iter()
        .enumerate()
        .map(|(index, (t0, x0, y0))| {
            let t0 = *t0;
            let end = t0 + spec.horizon;
            let tol = problem.settings().ode_tol;
            let h0 = h_map.eval(t0, x0)?;
            let g0 = g_map.eval(t0, y0)?;
            // Without a perturbation both flows are the linear one.
            let (xs, xg) = if problem.field().is_zero() {
                (None, None)
            } else {
                let m = problem.matrix();
                let f = problem.field();
                (
                    Some(integrate(m, f, t0, x0, (t0, end), tol)?),
                    Some(integrate(m, f, t0, &g0, (t0, end), tol)?),
                )
            };
            (1..=checkpoints)
                .map(|m| {
                    let t1 = t0 + spec.horizon * m as f64 / checkpoints as f64;
                    let u = problem.kernel().evolution(t1, t0)?;
                    let x1 = match &xs {
                        Some(tr) => tr.eval(t1)?,
                        None => &u * x0,
                    };
                    let xg1 = match &xg {
                        Some(tr) => tr.eval(t1)?,
                        None => &u * &g0,
                    };
                    let lhs = h_map.eval(t1, &x1)?;
                    let glhs = g_map.eval(t1, &(&u * y0))?;
                    Ok(TrajectorySample {
                        index,
                        t0,
                        t1,
                        h_residual: (lhs - &u * &h0).norm(),
                        g_residual: (glhs - xg1).norm(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let trajectory_samples: Vec<TrajectorySample> = trajectory_samples.into_iter().flatten().collect();

    let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
    let max_h_offset = fmax(&mut samples.iter().map(|s| (&s.h - &s.x).norm()));
    let max_g_offset = fmax(&mut samples.iter().map(|s| (&s.g - &s.x).norm()));
    let offset_bound = problem.dichotomy().k() * hyp.sup_l_alpha_mu;
    let report = ConjugacyReport {
        spec: spec.clone(),
        max_hg_residual: fmax(&mut samples.iter().map(|s| s.hg_residual)),
        max_gh_residual: fmax(&mut samples.iter().map(|s| s.gh_residual)),
        max_h_mapping_residual: fmax(&mut trajectory_samples.iter().map(|s| s.h_residual)),
        max_g_mapping_residual: fmax(&mut trajectory_samples.iter().map(|s| s.g_residual)),
        max_h_offset,
        max_g_offset,
        offset_bound,
        h_bound_margin: offset_bound - max_h_offset,
        g_bound_margin: offset_bound - max_g_offset,
        max_picard_ratio: fmax(&mut samples.iter().map(|s| s.picard_ratio)),
        max_picard_iterations: samples.iter().map(|s| s.picard_iterations).max().unwrap_or(0),
        hypotheses: hyp,
        samples,
        trajectory_samples,
    };
    let all = [report.max_residual(), report.max_h_offset, report.max_g_offset];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow { t: spec.t_max });
    }
    Ok(report)
}
