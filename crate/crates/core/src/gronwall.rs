//! Dichotomic (Gronwall-type) integral inequalities with forward and
//! backward exponential kernels.
//!
//! On `[t0, s]` the first inequality reads
//! `u(t) <= c e^{-α(t-t0)} + c1 ∫_{t0}^t e^{-α(t-τ)} b u dτ + c2 ∫_t^s e^{-α(τ-t)} b u dτ`
//! and concludes `u(t) <= c/(1-θ1) e^{-α2(t-t0)}`; the second replaces the
//! forcing by `c e^{-α(s-t)}` and concludes `u(t) <= c/(1-θ1) e^{-α2(s-t)}`.
//! Here `θ1` is the supremum over `(t0, s)` of the same kernel operator at
//! rate `α1` applied to `b`, and `α2 = α - α1`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::flows::{uniform_grid, ModulusKind, ScalarModulus, Window};
use crate::quadrature::{integrate_with_breaks, QuadTol};

pub const DEFAULT_GRID_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityKind {
    /// Forcing `c e^{-α(t-t0)}`, decay away from `t0`.
    First,
    /// Forcing `c e^{-α(s-t)}`, decay away from `s`.
    Second,
}

/// Inequality data without the candidate function `u`.
#[derive(Debug, Clone)]
pub struct IneqTemplate {
    t0: f64,
    s: f64,
    c: f64,
    c1: f64,
    c2: f64,
    alpha: f64,
    alpha1: f64,
    b: ScalarModulus,
    grid_points: usize,
}

impl IneqTemplate {
    #[allow(clippy::too_many_arguments)]
    pub fn new(t0: f64, s: f64, c: f64, c1: f64, c2: f64, alpha: f64, alpha1: f64, b: ScalarModulus) -> Result<Self> {
        if !(t0.is_finite() && s.is_finite() && s > t0) {
            return Err(invalid(format!("window [{t0}, {s}] must be finite with s > t0")));
        }
        for (name, v) in [("c", c), ("c1", c1), ("c2", c2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(alpha1 > 0.0 && alpha1 < alpha) {
            return Err(invalid(format!("alpha1 must lie in (0, {alpha}), got {alpha1}")));
        }
        Ok(Self {
            t0,
            s,
            c,
            c1,
            c2,
            alpha,
            alpha1,
            b,
            grid_points: DEFAULT_GRID_POINTS,
        })
    }

    pub fn with_grid_points(mut self, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(invalid("inequality grid needs at least 3 points"));
        }
        self.grid_points = n;
        Ok(self)
    }

    pub fn with_c(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("c must be positive, got {c}")));
        }
        self.c = c;
        Ok(self)
    }

    pub fn with_b(mut self, b: ScalarModulus) -> Self {
        self.b = b;
        self
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn c1(&self) -> f64 {
        self.c1
    }
    pub fn c2(&self) -> f64 {
        self.c2
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }
    pub fn alpha2(&self) -> f64 {
        self.alpha - self.alpha1
    }
    pub fn b(&self) -> &ScalarModulus {
        &self.b
    }

    /// Uniform sample grid on `[t0, s]` with `grid_points` nodes.
    pub fn grid(&self) -> Vec<f64> {
        let h = (self.s - self.t0) / (self.grid_points - 1) as f64;
        uniform_grid(self.t0, self.s, h * (1.0 + 1e-12))
    }

    fn forcing(&self, kind: InequalityKind, t: f64) -> f64 {
        match kind {
            InequalityKind::First => self.c * (-self.alpha * (t - self.t0)).exp(),
            InequalityKind::Second => self.c * (-self.alpha * (self.s - t)).exp(),
        }
    }

    /// Right side of the lemma's conclusion at `t`.
    pub fn conclusion_bound(&self, kind: InequalityKind, theta1: f64, t: f64) -> f64 {
        let decay = match kind {
            InequalityKind::First => t - self.t0,
            InequalityKind::Second => self.s - t,
        };
        self.c / (1.0 - theta1) * (-self.alpha2() * decay).exp()
    }
}

/// A template together with a tabulated candidate `u` on its grid.
#[derive(Debug, Clone)]
pub struct IneqInstance {
    template: IneqTemplate,
    u: Vec<f64>,
}

impl IneqInstance {
    pub fn new(template: IneqTemplate, u: Vec<f64>) -> Result<Self> {
        if u.len() != template.grid().len() {
            return Err(invalid(format!(
                "u has {} samples, the grid has {}",
                u.len(),
                template.grid().len()
            )));
        }
        if u.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("u must be finite and nonnegative at every sample"));
        }
        Ok(Self { template, u })
    }

    pub fn template(&self) -> &IneqTemplate {
        &self.template
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }
}

/// Quadrature weights for the two windowed kernel integrals at one rate,
/// with `u` interpolated piecewise linearly between grid nodes.
struct Sweeps {
    decay: f64,
    // forward panel weights (left node, right node)
    fl: Vec<f64>,
    fr: Vec<f64>,
    // backward panel weights
    bl: Vec<f64>,
    br: Vec<f64>,
    c1: f64,
    c2: f64,
}

impl Sweeps {
    fn new(tpl: &IneqTemplate, grid: &[f64], rate: f64) -> Result<Self> {
        let panels = grid.len() - 1;
        let tol = QuadTol::new(1e-15, 1e-12);
        let weights: Vec<[f64; 4]> = (0..panels)
            .into_par_iter()
            .map(|j| {
                let (a, b) = (grid[j], grid[j + 1]);
                let h = b - a;
                if tpl.b.is_zero() {
                    return Ok([0.0; 4]);
                }
                let breaks = tpl.b.breakpoints(a, b);
                let q = integrate_with_breaks(
                    |tau| {
                        let bv = tpl.b.value(tau);
                        let (l, r) = ((b - tau) / h, (tau - a) / h);
                        let ef = (-rate * (b - tau)).exp() * bv;
                        let eb = (-rate * (tau - a)).exp() * bv;
                        DVector::from_vec(vec![ef * l, ef * r, eb * l, eb * r])
                    },
                    a,
                    b,
                    &breaks,
                    tol,
                )?;
                Ok([q.value[0], q.value[1], q.value[2], q.value[3]])
            })
            .collect::<Result<_>>()?;
        let h = grid[1] - grid[0];
        Ok(Self {
            decay: (-rate * h).exp(),
            fl: weights.iter().map(|w| w[0]).collect(),
            fr: weights.iter().map(|w| w[1]).collect(),
            bl: weights.iter().map(|w| w[2]).collect(),
            br: weights.iter().map(|w| w[3]).collect(),
            c1: tpl.c1,
            c2: tpl.c2,
        })
    }

    /// `c1 ∫_{t0}^{t_k} e^{-rate(t_k-τ)} b u + c2 ∫_{t_k}^s e^{-rate(τ-t_k)} b u` at every node.
    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut fwd = vec![0.0; n];
        for j in 0..n - 1 {
            fwd[j + 1] = self.decay * fwd[j] + self.fl[j] * u[j] + self.fr[j] * u[j + 1];
        }
        let mut bwd = vec![0.0; n];
        for j in (0..n - 1).rev() {
            bwd[j] = self.decay * bwd[j + 1] + self.bl[j] * u[j] + self.br[j] * u[j + 1];
        }
        fwd.iter().zip(&bwd).map(|(f, b)| self.c1 * f + self.c2 * b).collect()
    }
}

/// `c1 ∫_{t0}^t e^{-α1(t-τ)} b dτ + c2 ∫_t^s e^{-α1(τ-t)} b dτ` by adaptive
/// quadrature.
pub fn l_alpha1_windowed(tpl: &IneqTemplate, t: f64) -> Result<f64> {
    if !(t >= tpl.t0 && t <= tpl.s) {
        return Err(invalid(format!("t = {t} outside [{}, {}]", tpl.t0, tpl.s)));
    }
    if tpl.b.is_zero() {
        return Ok(0.0);
    }
    let tol = QuadTol::new(1e-14, 1e-12);
    let a1 = tpl.alpha1;
    let left = integrate_with_breaks(
        |tau| (-a1 * (t - tau)).exp() * tpl.b.value(tau),
        tpl.t0,
        t,
        &tpl.b.breakpoints(tpl.t0, t),
        tol,
    )?;
    let right = integrate_with_breaks(
        |tau| (-a1 * (tau - t)).exp() * tpl.b.value(tau),
        t,
        tpl.s,
        &tpl.b.breakpoints(t, tpl.s),
        tol,
    )?;
    Ok(tpl.c1 * left.value + tpl.c2 * right.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theta1 {
    pub value: f64,
    pub argmax: f64,
    pub below_one: bool,
    pub grid_points: usize,
}

/// `θ1`: the supremum of [`l_alpha1_windowed`] over the interior grid nodes.
pub fn theta1(tpl: &IneqTemplate) -> Result<Theta1> {
    let grid = tpl.grid();
    let ones = vec![1.0; grid.len()];
    let vals = Sweeps::new(tpl, &grid, tpl.alpha1)?.apply(&ones);
    let interior = 1..grid.len() - 1;
    let (k, value) = interior
        .map(|k| (k, vals[k]))
        .fold((1, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    Ok(Theta1 {
        value,
        argmax: grid[k],
        below_one: value < 1.0,
        grid_points: grid.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    /// Hypothesis holds and so does the conclusion.
    Pass,
    /// Hypothesis holds but the conclusion fails somewhere.
    LemmaViolated,
    /// The hypothesis fails, so the lemma says nothing (vacuous).
    HypothesisNotSatisfied,
}

/// Outcome of checking one inequality on a tabulated `u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub kind: InequalityKind,
    pub hypothesis_ok: bool,
    /// Largest `u - rhs` over the grid (positive when the hypothesis fails).
    pub hypothesis_excess: f64,
    pub theta1: f64,
    /// `min_k (bound_k - u_k) / bound_k`.
    pub bound_margin: f64,
    pub worst_t: f64,
    pub status: CertificateStatus,
}

// Allowance for rounding in the hypothesis comparison.
const HYPOTHESIS_RTOL: f64 = 1e-9;

fn check(inst: &IneqInstance, kind: InequalityKind, slack: f64) -> Result<Certificate> {
    if !(slack >= 0.0) {
        return Err(invalid(format!("slack must be nonnegative, got {slack}")));
    }
    let tpl = &inst.template;
    let th = theta1(tpl)?;
    if !th.below_one {
        return Err(Error::ContractionViolated { theta1: th.value });
    }
    let grid = tpl.grid();
    let op = Sweeps::new(tpl, &grid, tpl.alpha)?.apply(&inst.u);
    let mut hypothesis_ok = true;
    let mut excess = f64::NEG_INFINITY;
    for (k, &t) in grid.iter().enumerate() {
        let rhs = tpl.forcing(kind, t) + op[k];
        let e = inst.u[k] - rhs;
        excess = excess.max(e);
        if e > HYPOTHESIS_RTOL * rhs.max(1.0) {
            hypothesis_ok = false;
        }
    }
    let (mut margin, mut worst_t) = (f64::INFINITY, grid[0]);
    for (k, &t) in grid.iter().enumerate() {
        let bound = tpl.conclusion_bound(kind, th.value, t);
        let m = (bound - inst.u[k]) / bound;
        if m < margin {
            margin = m;
            worst_t = t;
        }
    }
    let status = if !hypothesis_ok {
        CertificateStatus::HypothesisNotSatisfied
    } else if margin >= -slack {
        CertificateStatus::Pass
    } else {
        CertificateStatus::LemmaViolated
    };
    Ok(Certificate {
        kind,
        hypothesis_ok,
        hypothesis_excess: excess,
        theta1: th.value,
        bound_margin: margin,
        worst_t,
        status,
    })
}

/// Checks the first inequality's hypothesis and, if it holds, its
/// conclusion `u <= c/(1-θ1) e^{-α2(t-t0)} (1 + slack)`.
pub fn check_first_inequality(inst: &IneqInstance, slack: f64) -> Result<Certificate> {
    check(inst, InequalityKind::First, slack)
}

/// Mirror of [`check_first_inequality`] with decay toward `s`.
pub fn check_second_inequality(inst: &IneqInstance, slack: f64) -> Result<Certificate> {
    check(inst, InequalityKind::Second, slack)
}

/// Maximal solution of the inequality taken as an equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    pub kind: InequalityKind,
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub last_change: f64,
}

const MAX_PICARD: usize = 100_000;

/// Picard iteration `u_{k+1} = forcing + Op_α(u_k)` from `u_0 = forcing`
/// until the sup-norm change drops below `tol`.
pub fn worst_case_u(tpl: &IneqTemplate, kind: InequalityKind, tol: f64) -> Result<WorstCase> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let th = theta1(tpl)?;
    if !th.below_one {
        return Err(Error::ContractionViolated { theta1: th.value });
    }
    let grid = tpl.grid();
    let op = Sweeps::new(tpl, &grid, tpl.alpha)?;
    let forcing: Vec<f64> = grid.iter().map(|&t| tpl.forcing(kind, t)).collect();
    let mut u = forcing.clone();
    let mut change = f64::INFINITY;
    for it in 1..=MAX_PICARD {
        let next: Vec<f64> = op.apply(&u).iter().zip(&forcing).map(|(a, f)| a + f).collect();
        change = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        u = next;
        if change < tol {
            return Ok(WorstCase {
                kind,
                times: grid,
                u,
                iterations: it,
                last_change: change,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: MAX_PICARD,
        last_change: change,
    })
}

/// Randomized family: `c, c1, c2 ∈ [0.1, 3]`, `α ∈ [0.5, 2]`,
/// `α1 ∈ [0.1α, 0.9α]`, windows of length 2 to 10, with constant or
/// tabulated `b` rescaled so that `θ1` equals a drawn target in `[0.05, 0.9]`.
pub fn random_family(seed: u64, count: usize) -> Result<Vec<IneqTemplate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let t0 = rng.gen_range(-2.0..2.0);
            let s = t0 + rng.gen_range(2.0..10.0);
            let c = rng.gen_range(0.1..3.0);
            let c1 = rng.gen_range(0.1..3.0);
            let c2 = rng.gen_range(0.1..3.0);
            let alpha = rng.gen_range(0.5..2.0);
            let alpha1 = alpha * rng.gen_range(0.1..0.9);
            let target = rng.gen_range(0.05..0.9);
            let window = Window::new(t0, s);
            let kind = if i % 2 == 0 {
                ModulusKind::Constant(1.0)
            } else {
                let n = rng.gen_range(3..12);
                let times = uniform_grid(t0, s, (s - t0) / (n - 1) as f64);
                let values = times.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
                ModulusKind::Table { times, values }
            };
            let b = ScalarModulus::new(kind, window)?;
            let tpl = IneqTemplate::new(t0, s, c, c1, c2, alpha, alpha1, b.clone())?;
            let th = theta1(&tpl)?.value;
            let scale = if th > 0.0 { target / th } else { 0.0 };
            Ok(tpl.with_b(b.scaled(scale)?))
        })
        .collect()
}
