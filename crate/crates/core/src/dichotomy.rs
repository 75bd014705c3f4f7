//! Exponential dichotomies: projections, verification and estimation of the
//! constants, the kernel transform `L_α`, and the Green operator.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use parking_lot::RwLock;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::flows::{MatrixField, ModulusKind, ScalarModulus, Tolerance, Window};
use crate::linalg::{max_abs, op_norm, rank};
use crate::quadrature::{integrate_with_breaks, QuadTol};

/// Anchor projection `P(t0)`, constants `K`, `α` and the rate split
/// `α = α1 + α2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyData {
    t0: f64,
    p0: DMatrix<f64>,
    k: f64,
    alpha: f64,
    alpha1: f64,
}

impl DichotomyData {
    pub fn new(t0: f64, p0: DMatrix<f64>, k: f64, alpha: f64, alpha1: f64) -> Result<Self> {
        if !t0.is_finite() {
            return Err(invalid("dichotomy anchor time must be finite"));
        }
        if p0.nrows() == 0 || !p0.is_square() {
            return Err(invalid("projection must be a nonempty square matrix"));
        }
        let n = p0.nrows();
        let defect = max_abs(&(&p0 * &p0 - &p0));
        if !(defect <= 1e-12 * max_abs(&p0).max(1.0)) {
            return Err(invalid(format!("P0 is not idempotent (|P0^2 - P0| = {defect:e})")));
        }
        let id = DMatrix::<f64>::identity(n, n);
        if rank(&p0, 1e-10) + rank(&(&id - &p0), 1e-10) != n {
            return Err(invalid("rank(P0) + rank(I - P0) differs from the dimension"));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(invalid(format!("K must be positive, got {k}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(alpha1 > 0.0 && alpha1 < alpha) {
            return Err(invalid(format!(
                "alpha1 must lie in (0, alpha) = (0, {alpha}), got {alpha1}"
            )));
        }
        Ok(Self {
            t0,
            p0,
            k,
            alpha,
            alpha1,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn k(&self) -> f64 {
        self.k
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

    pub fn dim(&self) -> usize {
        self.p0.nrows()
    }

    pub fn with_alpha1(&self, alpha1: f64) -> Result<Self> {
        Self::new(self.t0, self.p0.clone(), self.k, self.alpha, alpha1)
    }
}

/// `P(s) = U(s, t0) P0 U(t0, s)`.
pub fn project(d: &DichotomyData, a: &MatrixField, s: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
    check_dims(d, a)?;
    if s == d.t0 || a.commutes_with(&d.p0) {
        return Ok(d.p0.clone());
    }
    let fwd = a.evolution(s, d.t0, tol)?;
    let back = a.evolution(d.t0, s, tol)?;
    Ok(fwd * &d.p0 * back)
}

fn check_dims(d: &DichotomyData, a: &MatrixField) -> Result<()> {
    if d.dim() != a.dim() {
        return Err(invalid(format!(
            "projection dimension {} does not match matrix dimension {}",
            d.dim(),
            a.dim()
        )));
    }
    Ok(())
}

/// Outcome of checking the dichotomy estimates on a set of `(t, s)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomyReport {
    pub pairs_checked: usize,
    pub violations: usize,
    /// Largest `‖U(t,s)P(s)‖ / (K e^{-α(t-s)})` (or the unstable analogue).
    pub worst_ratio: f64,
    pub worst_pair: Option<(f64, f64)>,
    /// First pair exceeding the bound, if any.
    pub offending_pair: Option<(f64, f64)>,
}

impl DichotomyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

// Relative floating-point allowance on top of the user slack.
const RATIO_ROUNDING: f64 = 1e-12;

struct PairNorms {
    t: f64,
    s: f64,
    stable: Option<f64>,
    unstable: Option<f64>,
}

fn pair_norms(
    a: &MatrixField,
    t0: f64,
    p0: &DMatrix<f64>,
    pairs: &[(f64, f64)],
    tol: Tolerance,
) -> Result<Vec<PairNorms>> {
    let n = p0.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let invariant = a.commutes_with(p0);
    let mut times: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let projections: HashMap<u64, DMatrix<f64>> = times
        .par_iter()
        .map(|&s| {
            let p = if s == t0 || invariant {
                p0.clone()
            } else {
                a.evolution(s, t0, tol)? * p0 * a.evolution(t0, s, tol)?
            };
            Ok((s.to_bits(), p))
        })
        .collect::<Result<_>>()?;
    pairs
        .par_iter()
        .map(|&(t, s)| {
            let p = &projections[&s.to_bits()];
            let u = a.evolution(t, s, tol)?;
            let stable = (t >= s).then(|| op_norm(&(&u * p)));
            let unstable = (t <= s).then(|| op_norm(&(&u * (&id - p))));
            Ok(PairNorms { t, s, stable, unstable })
        })
        .collect()
}

/// Checks `‖U(t,s)P(s)‖ <= K e^{-α(t-s)}` for `t >= s` and
/// `‖U(t,s)(I-P(s))‖ <= K e^{-α(s-t)}` for `t <= s` on every pair, with
/// multiplicative allowance `1 + slack`.
pub fn verify_dichotomy(
    d: &DichotomyData,
    a: &MatrixField,
    pairs: &[(f64, f64)],
    slack: f64,
    tol: Tolerance,
) -> Result<DichotomyReport> {
    check_dims(d, a)?;
    if pairs.is_empty() {
        return Err(invalid("dichotomy verification needs at least one (t, s) pair"));
    }
    if !(slack >= 0.0) {
        return Err(invalid(format!("slack must be nonnegative, got {slack}")));
    }
    let norms = pair_norms(a, d.t0, &d.p0, pairs, tol)?;
    let limit = (1.0 + slack) * (1.0 + RATIO_ROUNDING);
    let mut report = DichotomyReport {
        pairs_checked: pairs.len(),
        violations: 0,
        worst_ratio: 0.0,
        worst_pair: None,
        offending_pair: None,
    };
    for pn in &norms {
        let gap = (pn.t - pn.s).abs();
        let env = d.k * (-d.alpha * gap).exp();
        for norm in [pn.stable, pn.unstable].into_iter().flatten() {
            let ratio = norm / env;
            if ratio > report.worst_ratio || report.worst_pair.is_none() {
                report.worst_ratio = ratio;
                report.worst_pair = Some((pn.t, pn.s));
            }
            if !(ratio <= limit) {
                report.violations += 1;
                report.offending_pair.get_or_insert((pn.t, pn.s));
            }
        }
    }
    Ok(report)
}

/// Estimated dichotomy constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DichotomyEstimate {
    pub k: f64,
    pub alpha: f64,
}

/// Geometric grid `10^{-2 + 0.1 k}`, `k = 0..=40`, covering `[1e-2, 1e2]`.
pub fn default_alpha_candidates() -> Vec<f64> {
    (0..=40).map(|k| 10f64.powf(-2.0 + 0.1 * k as f64)).collect()
}

/// All pairs `(t, s)` drawn from a uniform grid on `[a, b]`.
pub fn pair_grid(a: f64, b: f64, step: f64) -> Vec<(f64, f64)> {
    let g = crate::flows::uniform_grid(a, b, step);
    g.iter().flat_map(|&t| g.iter().map(move |&s| (t, s))).collect()
}

/// Relative tolerance under which two candidate `K̂` values count as equal.
pub const ESTIMATE_TIE_RTOL: f64 = 1e-6;

/// For each candidate `α̂`, the smallest `K̂` passing [`verify_dichotomy`] with
/// zero slack is the largest sampled `‖U(t,s)P(s)‖ e^{α̂(t-s)}` (and unstable
/// analogue). Returns the candidate with the least `K̂`; candidates within
/// [`ESTIMATE_TIE_RTOL`] of the least are ties, resolved by the larger `α̂`.
pub fn estimate_dichotomy_constants(
    a: &MatrixField,
    p0: &DMatrix<f64>,
    t0: f64,
    pairs: &[(f64, f64)],
    candidates: &[f64],
    tol: Tolerance,
) -> Result<DichotomyEstimate> {
    if p0.nrows() != a.dim() || !p0.is_square() {
        return Err(invalid("projection dimension does not match the matrix field"));
    }
    if !pairs.iter().any(|p| p.0 > p.1) || !pairs.iter().any(|p| p.0 < p.1) {
        return Err(invalid("estimation grid needs pairs with t > s and with t < s"));
    }
    let norms = pair_norms(a, t0, p0, pairs, tol)?;
    let k_hat = |alpha: f64| {
        norms.iter().fold(0.0_f64, |acc, pn| {
            let grow = (alpha * (pn.t - pn.s).abs()).exp();
            [pn.stable, pn.unstable]
                .into_iter()
                .flatten()
                .fold(acc, |acc, v| acc.max(v * grow))
        })
    };
    let scored: Vec<(f64, f64)> = candidates
        .iter()
        .filter(|&&al| al > 0.0 && al.is_finite())
        .map(|&al| (al, k_hat(al)))
        .filter(|&(_, k)| k.is_finite() && k > 0.0)
        .collect();
    let kmin = scored.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    scored
        .iter()
        .filter(|&&(_, k)| k <= kmin * (1.0 + ESTIMATE_TIE_RTOL))
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .map(|&(alpha, k)| DichotomyEstimate { k, alpha })
        .ok_or_else(|| Error::EstimationFailure("no candidate rate admits a finite constant".into()))
}

/// Kernel-transform value with its error accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    pub value: f64,
    pub quad_error: f64,
    /// Bound on the neglected `|t - s| > T` part.
    pub tail_bound: f64,
}

impl KernelValue {
    pub fn error(&self) -> f64 {
        self.quad_error + self.tail_bound
    }
}

fn kernel_quad_tol() -> QuadTol {
    QuadTol::new(1e-13, 1e-12)
}

/// `L_α(b)(t) = ∫ e^{-α|t-s|} b(s) ds`, truncated to `|t - s| <= T`.
pub fn l_alpha(b: &ScalarModulus, alpha: f64, t: f64, horizon: f64) -> Result<KernelValue> {
    if !(alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let tail_bound = 2.0 * b.window_sup() * (-alpha * horizon).exp() / (1.0 - (-alpha).exp());
    if !b.window_sup().is_finite() {
        return Ok(KernelValue {
            value: f64::INFINITY,
            quad_error: 0.0,
            tail_bound,
        });
    }
    if b.is_zero() {
        return Ok(KernelValue {
            value: 0.0,
            quad_error: 0.0,
            tail_bound: 0.0,
        });
    }
    let (lo, hi) = (t - horizon, t + horizon);
    let mut breaks = b.breakpoints(lo, hi);
    breaks.push(t);
    let q = integrate_with_breaks(
        |s| (-alpha * (t - s).abs()).exp() * b.value(s),
        lo,
        hi,
        &breaks,
        kernel_quad_tol(),
    )?;
    Ok(KernelValue {
        value: q.value,
        quad_error: q.error,
        tail_bound,
    })
}

/// Maximum of [`l_alpha`] over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupKernel {
    pub value: f64,
    pub argmax: f64,
    pub grid_start: f64,
    pub grid_end: f64,
    pub grid_points: usize,
    /// Largest quadrature-plus-tail error over the grid.
    pub max_error: f64,
}

pub fn sup_l_alpha(b: &ScalarModulus, alpha: f64, grid: &[f64], horizon: f64) -> Result<SupKernel> {
    if grid.is_empty() {
        return Err(invalid("sup over an empty grid"));
    }
    let vals: Vec<(f64, KernelValue)> = grid
        .par_iter()
        .map(|&t| l_alpha(b, alpha, t, horizon).map(|v| (t, v)))
        .collect::<Result<_>>()?;
    let (argmax, best) = vals.iter().fold(
        (grid[0], vals[0].1),
        |acc, &(t, v)| if v.value > acc.1.value { (t, v) } else { acc },
    );
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
    Ok(SupKernel {
        value: best.value,
        argmax,
        grid_start: lo,
        grid_end: hi,
        grid_points: grid.len(),
        max_error: vals.iter().map(|v| v.1.error()).fold(0.0, f64::max),
    })
}

/// `2 (1 - e^{-α})^{-1} C_b`, an upper bound for `sup_t L_α(b)(t)`.
pub fn coppel_bound(b: &ScalarModulus, alpha: f64) -> f64 {
    2.0 * b.window_sup() / (1.0 - (-alpha).exp())
}

/// Horizon `T` at which the [`l_alpha`] tail bound drops below `target`.
pub fn horizon_for_tail(window_sup: f64, alpha: f64, target: f64) -> f64 {
    if window_sup <= 0.0 {
        return 1.0;
    }
    let t = (2.0 * window_sup / ((1.0 - (-alpha).exp()) * target)).ln() / alpha;
    t.max(1.0)
}

/// `b(t) e^{-ε|t|}`.
pub fn nonuniform_reduce(b: &ScalarModulus, eps: f64) -> Result<ScalarModulus> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("reduction exponent must be nonnegative, got {eps}")));
    }
    if eps == 0.0 || b.is_zero() {
        return Ok(b.clone());
    }
    ScalarModulus::new(
        ModulusKind::Weighted {
            inner: Box::new(b.kind().clone()),
            eps,
        },
        b.window(),
    )
}

/// `∫ e^{-α|t-s| + ε|s|} b̃(s) ds` over `|t - s| <= T`. For `b̃` produced by
/// [`nonuniform_reduce`] with the same `ε` this equals `L_α(b)(t)`.
pub fn weighted_kernel_integral(reduced: &ScalarModulus, eps: f64, alpha: f64, t: f64, horizon: f64) -> Result<f64> {
    let (lo, hi) = (t - horizon, t + horizon);
    let mut breaks = reduced.breakpoints(lo, hi);
    breaks.extend([t, 0.0]);
    Ok(integrate_with_breaks(
        |s| (-alpha * (t - s).abs() + eps * s.abs()).exp() * reduced.value(s),
        lo,
        hi,
        &breaks,
        kernel_quad_tol(),
    )?
    .value)
}

/// How to bound the neglected tails of a Green-operator integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailSpec {
    /// `‖φ(s)‖ <= bound` for all `s`: tail `<= 2 K bound e^{-αT} / α`.
    Sup(f64),
    /// `sup_t ∫_t^{t+1} ‖φ‖ <= C`: tail `<= 2 K C e^{-αT} / (1 - e^{-α})`.
    WindowIntegral(f64),
}

/// Green kernel `k(t, s)` of a dichotomic linear system, truncated at
/// horizon `T`. Evolution operators without a closed form are memoized.
#[derive(Debug)]
pub struct GreenKernel {
    dichotomy: DichotomyData,
    matrix: MatrixField,
    horizon: f64,
    tol: Tolerance,
    quad: QuadTol,
    memo: RwLock<HashMap<(u64, u64), DMatrix<f64>>>,
    projections: RwLock<HashMap<u64, DMatrix<f64>>>,
    invariant_projection: bool,
}

impl Clone for GreenKernel {
    fn clone(&self) -> Self {
        Self {
            dichotomy: self.dichotomy.clone(),
            matrix: self.matrix.clone(),
            horizon: self.horizon,
            tol: self.tol,
            quad: self.quad,
            memo: RwLock::new(self.memo.read().clone()),
            projections: RwLock::new(self.projections.read().clone()),
            invariant_projection: self.invariant_projection,
        }
    }
}

impl GreenKernel {
    pub fn new(dichotomy: DichotomyData, matrix: MatrixField, horizon: f64, tol: Tolerance) -> Result<Self> {
        check_dims(&dichotomy, &matrix)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        tol.validate()?;
        let invariant_projection = matrix.commutes_with(dichotomy.p0());
        Ok(Self {
            invariant_projection,
            dichotomy,
            matrix,
            horizon,
            tol,
            quad: QuadTol::new(1e-10, 1e-8),
            memo: RwLock::new(HashMap::new()),
            projections: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_quad_tol(mut self, quad: QuadTol) -> Self {
        self.quad = quad;
        self
    }

    pub fn dichotomy(&self) -> &DichotomyData {
        &self.dichotomy
    }

    pub fn matrix(&self) -> &MatrixField {
        &self.matrix
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tol
    }

    pub fn quad_tol(&self) -> QuadTol {
        self.quad
    }

    /// `U(t, s)`, memoized when not available in closed form.
    pub fn evolution(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        if let Some(u) = self.matrix.exact_evolution(t, s) {
            return Ok(u);
        }
        let key = (t.to_bits(), s.to_bits());
        if let Some(u) = self.memo.read().get(&key) {
            return Ok(u.clone());
        }
        let u = self.matrix.integrated_evolution(t, s, self.tol)?;
        self.memo.write().insert(key, u.clone());
        Ok(u)
    }

    /// `P(s)`, memoized.
    pub fn projection(&self, s: f64) -> Result<DMatrix<f64>> {
        let d = &self.dichotomy;
        if s == d.t0 || self.invariant_projection {
            return Ok(d.p0.clone());
        }
        if let Some(p) = self.projections.read().get(&s.to_bits()) {
            return Ok(p.clone());
        }
        let p = self.evolution(s, d.t0)? * &d.p0 * self.evolution(d.t0, s)?;
        self.projections.write().insert(s.to_bits(), p.clone());
        Ok(p)
    }

    /// `k(t, s)`: `U(t,s)P(s)` for `t >= s`, `-U(t,s)(I - P(s))` for `t < s`.
    pub fn eval(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let u = self.evolution(t, s)?;
        let p = self.projection(s)?;
        if t >= s {
            Ok(u * p)
        } else {
            let n = p.nrows();
            Ok(-(u * (DMatrix::identity(n, n) - p)))
        }
    }

    pub fn tail_bound(&self, tail: TailSpec) -> f64 {
        let (k, a, t) = (self.dichotomy.k, self.dichotomy.alpha, self.horizon);
        match tail {
            TailSpec::Sup(s) => 2.0 * k * s * (-a * t).exp() / a,
            TailSpec::WindowIntegral(c) => 2.0 * k * c * (-a * t).exp() / (1.0 - (-a).exp()),
        }
    }
}

/// Green-operator value with its error accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenValue {
    pub value: DVector<f64>,
    pub quad_error: f64,
    pub tail_bound: f64,
}

/// `𝒦(φ)(t) = ∫_{t-T}^t U(t,s)P(s)φ(s) ds - ∫_t^{t+T} U(t,s)(I-P(s))φ(s) ds`.
/// `breaks` lists points where `φ` may be nonsmooth.
pub fn green_apply<F>(kernel: &GreenKernel, phi: F, t: f64, breaks: &[f64], tail: TailSpec) -> Result<GreenValue>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let n = kernel.dichotomy.dim();
    let id = DMatrix::<f64>::identity(n, n);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let guard = |r: Result<DVector<f64>>| match r {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            DVector::zeros(n)
        }
    };
    let stable = |s: f64| {
        guard((|| {
            let u = kernel.evolution(t, s)?;
            let p = kernel.projection(s)?;
            Ok(u * (p * phi(s)?))
        })())
    };
    let unstable = |s: f64| {
        guard((|| {
            let u = kernel.evolution(t, s)?;
            let p = kernel.projection(s)?;
            Ok(u * ((&id - p) * phi(s)?))
        })())
    };
    let h = kernel.horizon;
    let q1 = integrate_with_breaks(stable, t - h, t, breaks, kernel.quad)?;
    let q2 = integrate_with_breaks(unstable, t, t + h, breaks, kernel.quad)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(GreenValue {
        value: q1.value - q2.value,
        quad_error: q1.error + q2.error,
        tail_bound: kernel.tail_bound(tail),
    })
}

/// Convenience window for sampling sup-type quantities around `t0`.
pub fn centered_window(t0: f64, half_width: f64) -> Window {
    Window::new(t0 - half_width, t0 + half_width)
}
