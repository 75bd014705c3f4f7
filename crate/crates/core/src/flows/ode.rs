use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{MatrixField, NonlinearField};
use crate::error::{invalid, Error, Result};

/// Absolute/relative error tolerance pair for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Result<Self> {
        let t = Self { abs, rel };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs > 0.0 && self.rel > 0.0 && self.abs.is_finite() && self.rel.is_finite()) {
            return Err(invalid(format!(
                "tolerances must be positive and finite, got ({}, {})",
                self.abs, self.rel
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            abs: self.abs * factor,
            rel: self.rel * factor,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-9, rel: 1e-9 }
    }
}

/// Solution samples with cubic Hermite dense output between them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    derivs: Vec<DVector<f64>>,
    // states at the midpoint of each step, when the integrator provides them
    mids: Option<Vec<DVector<f64>>>,
    tol: Tolerance,
}

impl Trajectory {
    /// Builds a trajectory from samples; `times` must be strictly increasing.
    pub fn from_samples(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        derivs: Vec<DVector<f64>>,
        tol: Tolerance,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() || times.len() != derivs.len() {
            return Err(invalid(
                "trajectory needs matching nonempty times, states and derivatives",
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("trajectory times must be strictly increasing"));
        }
        Ok(Self {
            times,
            states,
            derivs,
            mids: None,
            tol,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn derivatives(&self) -> &[DVector<f64>] {
        &self.derivs
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Dense-output state at `t`; errors outside the covered span.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let (a, b) = (self.start(), self.end());
        let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
        if !(t >= a - slack && t <= b + slack) {
            return Err(invalid(format!("time {t} outside trajectory span [{a}, {b}]")));
        }
        let t = t.clamp(a, b);
        let n = self.times.len();
        if n == 1 {
            return Ok(self.states[0].clone());
        }
        let k = self.times.partition_point(|&x| x <= t);
        if k > 0 && self.times[k - 1] == t {
            return Ok(self.states[k - 1].clone());
        }
        let k = k.clamp(1, n - 1) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let mut out = &self.states[k] * h00;
        out.axpy(h * h10, &self.derivs[k], 1.0);
        out.axpy(h01, &self.states[k + 1], 1.0);
        out.axpy(h * h11, &self.derivs[k + 1], 1.0);
        if let Some(mids) = &self.mids {
            // Quartic correction s²(1-s)² through the midpoint state.
            let mut cubic_mid = (&self.states[k] + &self.states[k + 1]) * 0.5;
            cubic_mid.axpy(h / 8.0, &self.derivs[k], 1.0);
            cubic_mid.axpy(-h / 8.0, &self.derivs[k + 1], 1.0);
            let w = 16.0 * s2 * (1.0 - s) * (1.0 - s);
            out.axpy(w, &(&mids[k] - cubic_mid), 1.0);
        }
        Ok(out)
    }

    fn reversed(mut self) -> Self {
        self.times.reverse();
        self.states.reverse();
        self.derivs.reverse();
        if let Some(m) = self.mids.as_mut() {
            m.reverse();
        }
        self
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

// Dense-output weights of the stages at the half step (Shampine's
// continuous extension evaluated at θ = 1/2).
const MID: [f64; 7] = mid_weights();

const fn mid_weights() -> [f64; 7] {
    const P: [[f64; 4]; 7] = [
        [
            1.0,
            -8048581381.0 / 2820520608.0,
            8663915743.0 / 2820520608.0,
            -12715105075.0 / 11282082432.0,
        ],
        [0.0; 4],
        [
            0.0,
            131558114200.0 / 32700410799.0,
            -68118460800.0 / 10900136933.0,
            87487479700.0 / 32700410799.0,
        ],
        [
            0.0,
            -1754552775.0 / 470086768.0,
            14199869525.0 / 1410260304.0,
            -10690763975.0 / 1880347072.0,
        ],
        [
            0.0,
            127303824393.0 / 49829197408.0,
            -318862633887.0 / 49829197408.0,
            701980252875.0 / 199316789632.0,
        ],
        [
            0.0,
            -282668133.0 / 205662961.0,
            2019193451.0 / 616988883.0,
            -1453857185.0 / 822651844.0,
        ],
        [
            0.0,
            40617522.0 / 29380423.0,
            -110615467.0 / 29380423.0,
            69997945.0 / 29380423.0,
        ],
    ];
    let mut w = [0.0; 7];
    let mut i = 0;
    while i < 7 {
        w[i] = P[i][0] * 0.5 + P[i][1] * 0.25 + P[i][2] * 0.125 + P[i][3] * 0.0625;
        i += 1;
    }
    w
}

const MAX_STEPS: usize = 5_000_000;

struct Stepper<F> {
    rhs: F,
    k: Vec<DVector<f64>>,
    stage: DVector<f64>,
    ynew: DVector<f64>,
}

impl<F: FnMut(f64, &DVector<f64>, &mut DVector<f64>)> Stepper<F> {
    fn new(rhs: F, n: usize) -> Self {
        Self {
            rhs,
            k: vec![DVector::zeros(n); 7],
            stage: DVector::zeros(n),
            ynew: DVector::zeros(n),
        }
    }

    /// One DOPRI5 step from `(t, y)` with `k[0] = f(t, y)` already set.
    /// Leaves the new state in `ynew` and `f(t + h, ynew)` in `k[6]`.
    fn step(&mut self, t: f64, y: &DVector<f64>, h: f64) {
        for i in 1..7 {
            self.stage.copy_from(y);
            for j in 0..i {
                if A[i][j] != 0.0 {
                    self.stage.axpy(h * A[i][j], &self.k[j], 1.0);
                }
            }
            (self.rhs)(t + C[i] * h, &self.stage, &mut self.k[i]);
        }
        // Stage 7 is evaluated at the 5th-order solution (FSAL).
        self.ynew.copy_from(&self.stage);
    }

    fn midpoint(&self, y: &DVector<f64>, h: f64) -> DVector<f64> {
        let mut m = y.clone();
        for (j, w) in MID.iter().enumerate() {
            if *w != 0.0 {
                m.axpy(h * w, &self.k[j], 1.0);
            }
        }
        m
    }

    fn error_norm(&self, y: &DVector<f64>, h: f64, tol: Tolerance) -> f64 {
        let n = y.len();
        let mut acc = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, ej) in E.iter().enumerate() {
                e += ej * self.k[j][i];
            }
            let e = h * e;
            let sc = tol.abs + tol.rel * y[i].abs().max(self.ynew[i].abs());
            acc += (e / sc) * (e / sc);
        }
        (acc / n.max(1) as f64).sqrt()
    }
}

fn rms_scaled(v: &DVector<f64>, y: &DVector<f64>, tol: Tolerance) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter()
        .zip(y.iter())
        .map(|(a, b)| {
            let r = a / (tol.abs + tol.rel * b.abs());
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

fn initial_step<F: FnMut(f64, &DVector<f64>, &mut DVector<f64>)>(
    rhs: &mut F,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    dir: f64,
    span: f64,
    tol: Tolerance,
) -> f64 {
    let d0 = rms_scaled(y0, y0, tol);
    let d1 = rms_scaled(f0, y0, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + f0 * (dir * h0);
    let mut f1 = DVector::zeros(y0.len());
    rhs(t0 + dir * h0, &y1, &mut f1);
    let d2 = rms_scaled(&(&f1 - f0), y0, tol) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Adaptive integration from `t0` to `t_end` (either direction). The
/// callback sees every accepted step as `(t, y, f(t, y), midpoint state)`,
/// starting with the initial point (no midpoint).
fn drive<F, G>(
    mut rhs: F,
    t0: f64,
    y0: &DVector<f64>,
    t_end: f64,
    tol: Tolerance,
    mut on_accept: G,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    G: FnMut(f64, &DVector<f64>, &DVector<f64>, Option<DVector<f64>>),
{
    tol.validate()?;
    if !(t0.is_finite() && t_end.is_finite()) {
        return Err(invalid("integration limits must be finite"));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow { t: t0 });
    }
    let n = y0.len();
    let mut y = y0.clone();
    let mut f0 = DVector::zeros(n);
    rhs(t0, &y, &mut f0);
    on_accept(t0, &y, &f0, None);
    if t_end == t0 {
        return Ok(y);
    }
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();
    let mut h = initial_step(&mut rhs, t0, &y, &f0, dir, span, tol);
    let mut stepper = Stepper::new(rhs, n);
    stepper.k[0].copy_from(&f0);
    let mut t = t0;
    let mut rejected_last = false;
    for _ in 0..MAX_STEPS {
        let remaining = (t_end - t).abs();
        let last = h >= remaining;
        let h_try = if last { remaining } else { h };
        if h_try < 1e-14 * t.abs().max(1.0) {
            return Err(Error::IntegrationFailure {
                t,
                reason: "step size underflow".into(),
            });
        }
        stepper.step(t, &y, dir * h_try);
        let err = stepper.error_norm(&y, h_try, tol);
        if !err.is_finite() || stepper.ynew.iter().any(|v| !v.is_finite()) {
            if h_try < 1e-10 * t.abs().max(1.0) {
                return Err(Error::NumericOverflow { t });
            }
            h = 0.2 * h_try;
            rejected_last = true;
            continue;
        }
        if err <= 1.0 {
            let mid = stepper.midpoint(&y, dir * h_try);
            t = if last { t_end } else { t + dir * h_try };
            y.copy_from(&stepper.ynew);
            let fnew = stepper.k[6].clone();
            stepper.k[0].copy_from(&fnew);
            on_accept(t, &y, &fnew, Some(mid));
            if last {
                return Ok(y);
            }
            let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h = h_try * fac;
            rejected_last = false;
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = h_try * fac;
            rejected_last = true;
        }
    }
    Err(Error::IntegrationFailure {
        t,
        reason: format!("exceeded {MAX_STEPS} steps"),
    })
}

/// Solves `y' = rhs(t, y)` from `t0` to `t_end` and returns the trajectory
/// over the covered interval (times increasing regardless of direction).
pub fn solve_ivp<F>(rhs: F, t0: f64, y0: &DVector<f64>, t_end: f64, tol: Tolerance) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut derivs = Vec::new();
    let mut mids = Vec::new();
    drive(rhs, t0, y0, t_end, tol, |t, y, f, m| {
        times.push(t);
        states.push(y.clone());
        derivs.push(f.clone());
        mids.extend(m);
    })?;
    let traj = Trajectory {
        times,
        states,
        derivs,
        mids: Some(mids),
        tol,
    };
    Ok(if t_end < t0 { traj.reversed() } else { traj })
}

/// Like [`solve_ivp`] but keeps only the final state.
pub fn solve_endpoint<F>(rhs: F, t0: f64, y0: &DVector<f64>, t_end: f64, tol: Tolerance) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    drive(rhs, t0, y0, t_end, tol, |_, _, _, _| {})
}

/// Fixed-step DOPRI5 (5th-order solution, no error control) over `steps`
/// equal steps. Used to measure the convergence order.
pub fn solve_fixed_step<F>(rhs: F, t0: f64, y0: &DVector<f64>, t_end: f64, steps: usize) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    if steps == 0 {
        return Err(invalid("fixed-step integration needs at least one step"));
    }
    let n = y0.len();
    let h = (t_end - t0) / steps as f64;
    let mut stepper = Stepper::new(rhs, n);
    let mut y = y0.clone();
    let mut t = t0;
    (stepper.rhs)(t, &y, &mut stepper.k[0]);
    for i in 0..steps {
        stepper.step(t, &y, h);
        y.copy_from(&stepper.ynew);
        let fnew = stepper.k[6].clone();
        stepper.k[0].copy_from(&fnew);
        t = t0 + h * (i + 1) as f64;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { t });
        }
    }
    Ok(y)
}

/// Integrates `x' = A(t)x + f(t, x)` with `x(t0) = x0` over `span`, which
/// must contain `t0`. Both directions from `t0` are covered.
pub fn integrate(
    a: &MatrixField,
    f: &NonlinearField,
    t0: f64,
    x0: &DVector<f64>,
    span: (f64, f64),
    tol: Tolerance,
) -> Result<Trajectory> {
    let (lo, hi) = span;
    if !(lo <= t0 && t0 <= hi) {
        return Err(invalid(format!(
            "span [{lo}, {hi}] does not contain the initial time {t0}"
        )));
    }
    if x0.len() != a.dim() || f.dim() != a.dim() {
        return Err(invalid(format!(
            "dimension mismatch: state {}, matrix {}, field {}",
            x0.len(),
            a.dim(),
            f.dim()
        )));
    }
    let rhs = |t: f64, x: &DVector<f64>, dx: &mut DVector<f64>| {
        a.apply_into(t, x, dx);
        if !f.is_zero() {
            *dx += f.eval(t, x);
        }
    };
    let fwd = solve_ivp(rhs, t0, x0, hi, tol)?;
    if lo == t0 {
        return Ok(fwd);
    }
    let bwd = solve_ivp(rhs, t0, x0, lo, tol)?;
    let mut times = bwd.times;
    let mut states = bwd.states;
    let mut derivs = bwd.derivs;
    // The backward piece ends at t0, which also starts the forward piece.
    times.pop();
    states.pop();
    derivs.pop();
    times.extend(fwd.times);
    states.extend(fwd.states);
    derivs.extend(fwd.derivs);
    let mids = match (bwd.mids, fwd.mids) {
        (Some(mut b), Some(f)) => {
            b.extend(f);
            Some(b)
        }
        _ => None,
    };
    Ok(Trajectory {
        times,
        states,
        derivs,
        mids,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(rate: f64) -> impl FnMut(f64, &DVector<f64>, &mut DVector<f64>) {
        move |_, y, dy| {
            dy.copy_from(y);
            *dy *= rate;
        }
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let tol = Tolerance::new(1e-12, 1e-12).unwrap();
        let rot = |_: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = -y[1];
            dy[1] = y[0];
        };
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = solve_ivp(rot, 0.0, &y0, 10.0, tol).unwrap();
        let mut worst = 0.0f64;
        for w in traj.times().windows(2) {
            for s in [0.17, 0.5, 0.83] {
                let t = w[0] + s * (w[1] - w[0]);
                let y = traj.eval(t).unwrap();
                worst = worst.max((y[0] - t.cos()).abs()).max((y[1] - t.sin()).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        let sampled = Trajectory::from_samples(
            traj.times().to_vec(),
            traj.states().to_vec(),
            traj.derivatives().to_vec(),
            tol,
        )
        .unwrap();
        assert!(sampled.eval(0.5 * (traj.times()[0] + traj.times()[1])).is_ok());
    }

    #[test]
    fn exponential_decay_forward_and_backward() {
        let tol = Tolerance::new(1e-12, 1e-12).unwrap();
        let y0 = DVector::from_element(1, 1.0);
        let tr = solve_ivp(decay(-0.75), 0.0, &y0, 5.0, tol).unwrap();
        for t in [1.0, 2.0, 5.0] {
            assert!((tr.eval(t).unwrap()[0] - (-0.75 * t).exp()).abs() < 1e-9);
        }
        let back = solve_ivp(decay(-0.75), 0.0, &y0, -3.0, tol).unwrap();
        assert_eq!(back.start(), -3.0);
        assert_eq!(back.end(), 0.0);
        assert!((back.eval(-3.0).unwrap()[0] - 2.25f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_reproduces_nodes() {
        let tol = Tolerance::new(1e-6, 1e-6).unwrap();
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let rot = |_: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = -y[1];
            dy[1] = y[0];
        };
        let tr = solve_ivp(rot, 0.0, &y0, 10.0, tol).unwrap();
        for (t, x) in tr.times().iter().zip(tr.states()) {
            assert_eq!(&tr.eval(*t).unwrap(), x);
        }
        assert!(tr.eval(10.5).is_err());
    }

    #[test]
    fn fixed_step_order_is_five() {
        let rhs = |t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = -y[0] + t.sin();
        };
        let y0 = DVector::from_element(1, 1.0);
        let exact = |t: f64| 1.5 * (-t).exp() + 0.5 * (t.sin() - t.cos());
        let e1 = (solve_fixed_step(rhs, 0.0, &y0, 2.0, 20).unwrap()[0] - exact(2.0)).abs();
        let e2 = (solve_fixed_step(rhs, 0.0, &y0, 2.0, 40).unwrap()[0] - exact(2.0)).abs();
        let ratio = e1 / e2;
        assert!(ratio > 20.0 && ratio < 50.0, "ratio {ratio}");
    }

    #[test]
    fn overflow_is_reported() {
        let blowup = |_: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = y[0] * y[0];
        };
        let y0 = DVector::from_element(1, 1.0);
        let err = solve_ivp(blowup, 0.0, &y0, 2.0, Tolerance::default()).unwrap_err();
        match err {
            Error::IntegrationFailure { t, .. } | Error::NumericOverflow { t } => {
                assert!(t < 1.0 + 1e-6 && t > 0.9, "failed at {t}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_tolerances() {
        assert!(Tolerance::new(0.0, 1e-6).is_err());
        assert!(Tolerance::new(1e-6, -1.0).is_err());
    }
}
