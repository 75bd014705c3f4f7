use serde::{Deserialize, Serialize};

use super::Window;
use crate::error::{invalid, Result};
use crate::quadrature::{integrate_with_breaks, QuadTol};

/// Shape of a nonnegative scalar function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulusKind {
    Constant(f64),
    /// Piecewise-linear interpolation of samples, clamped outside the table.
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    /// Even extension of a train of triangular bumps: on `[m, m + 1/m]`
    /// (integer `m >= 1`) a triangle of height `c m / 2` peaking at
    /// `m + 1/(2m)`, zero elsewhere.
    Sawtooth {
        c: f64,
    },
    /// `scale * 2 / (1 + e^{2t})`, i.e. `scale * 2e^{-t} / (e^t + e^{-t})`.
    Logistic {
        scale: f64,
    },
    /// `inner(t) * exp(-eps |t|)`.
    Weighted {
        inner: Box<ModulusKind>,
        eps: f64,
    },
    /// `factor * inner(t)`.
    Scaled {
        inner: Box<ModulusKind>,
        factor: f64,
    },
}

impl ModulusKind {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            ModulusKind::Constant(v) => *v,
            ModulusKind::Table { times, values } => table_value(times, values, t),
            ModulusKind::Sawtooth { c } => sawtooth_value(*c, t.abs()),
            ModulusKind::Logistic { scale } => scale * 2.0 / (1.0 + (2.0 * t).exp()),
            ModulusKind::Weighted { inner, eps } => inner.value(t) * (-eps * t.abs()).exp(),
            ModulusKind::Scaled { inner, factor } => factor * inner.value(t),
        }
    }

    /// Points in `(a, b)` where the function may fail to be smooth.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.push_breakpoints(a, b, &mut out);
        out.retain(|&p| p > a && p < b);
        out
    }

    fn push_breakpoints(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        match self {
            ModulusKind::Constant(_) | ModulusKind::Logistic { .. } => {}
            ModulusKind::Table { times, .. } => out.extend(times.iter().copied().filter(|&p| p > a && p < b)),
            ModulusKind::Sawtooth { .. } => {
                let hi = a.abs().max(b.abs()).ceil() as i64 + 1;
                for m in 1..=hi {
                    let m = m as f64;
                    for p in [m, m + 0.5 / m, m + 1.0 / m] {
                        if p > a && p < b {
                            out.push(p);
                        }
                        if -p > a && -p < b {
                            out.push(-p);
                        }
                    }
                }
            }
            ModulusKind::Weighted { inner, .. } => {
                inner.push_breakpoints(a, b, out);
                if 0.0 > a && 0.0 < b {
                    out.push(0.0);
                }
            }
            ModulusKind::Scaled { inner, .. } => inner.push_breakpoints(a, b, out),
        }
    }

    /// `∫_a^b value(s) ds`; closed form where available.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        match self {
            ModulusKind::Constant(v) => v * (b - a),
            ModulusKind::Table { times, values } => {
                table_antiderivative(times, values, b) - table_antiderivative(times, values, a)
            }
            ModulusKind::Sawtooth { c } => sawtooth_odd_primitive(*c, b) - sawtooth_odd_primitive(*c, a),
            ModulusKind::Logistic { scale } => scale * (logistic_primitive(b) - logistic_primitive(a)),
            ModulusKind::Scaled { inner, factor } => factor * inner.integral(a, b),
            ModulusKind::Weighted { .. } => {
                let breaks = self.breakpoints(a, b);
                integrate_with_breaks(|s| self.value(s), a, b, &breaks, QuadTol::new(1e-13, 1e-12))
                    .map(|q| q.value)
                    .unwrap_or(f64::NAN)
            }
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ModulusKind::Constant(v) => Some(*v),
            ModulusKind::Scaled { inner, factor } => inner.as_constant().map(|v| v * factor),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ModulusKind::Constant(v) if !(*v >= 0.0) => {
                Err(invalid(format!("constant modulus must be nonnegative, got {v}")))
            }
            ModulusKind::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(invalid("modulus table needs matching nonempty times/values"));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("modulus table times must be strictly increasing"));
                }
                if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(invalid("modulus table values must be finite and nonnegative"));
                }
                Ok(())
            }
            ModulusKind::Sawtooth { c } if !(*c > 0.0) => {
                Err(invalid(format!("sawtooth height parameter must be positive, got {c}")))
            }
            ModulusKind::Logistic { scale } if !(*scale >= 0.0) => {
                Err(invalid(format!("logistic scale must be nonnegative, got {scale}")))
            }
            ModulusKind::Weighted { inner, eps } => {
                if !(*eps >= 0.0) {
                    return Err(invalid(format!("weight exponent must be nonnegative, got {eps}")));
                }
                inner.validate()
            }
            ModulusKind::Scaled { inner, factor } => {
                if !(*factor >= 0.0) {
                    return Err(invalid(format!("scale factor must be nonnegative, got {factor}")));
                }
                inner.validate()
            }
            _ => Ok(()),
        }
    }
}

/// A nonnegative scalar function of time together with its unit-window
/// supremum `C = sup_t ∫_t^{t+1} b(s) ds`, sampled over a declared window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarModulus {
    kind: ModulusKind,
    window: Window,
    window_sup: f64,
}

impl ScalarModulus {
    pub fn new(kind: ModulusKind, window: Window) -> Result<Self> {
        kind.validate()?;
        window.validate()?;
        let window_sup = match kind.as_constant() {
            Some(v) => v,
            None => window
                .grid()
                .into_iter()
                .map(|t| kind.integral(t, t + 1.0))
                .fold(0.0_f64, f64::max),
        };
        Ok(Self {
            kind,
            window,
            window_sup,
        })
    }

    pub fn constant(v: f64, window: Window) -> Result<Self> {
        Self::new(ModulusKind::Constant(v), window)
    }

    pub fn zero(window: Window) -> Self {
        Self::constant(0.0, window).expect("zero modulus is valid")
    }

    pub fn kind(&self) -> &ModulusKind {
        &self.kind
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Sampled `sup_t ∫_t^{t+1} b`.
    pub fn window_sup(&self) -> f64 {
        self.window_sup
    }

    pub fn value(&self, t: f64) -> f64 {
        self.kind.value(t)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.kind.integral(a, b)
    }

    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        self.kind.breakpoints(a, b)
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.kind.as_constant()
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Same function, resampled over another window.
    pub fn with_window(&self, window: Window) -> Result<Self> {
        Self::new(self.kind.clone(), window)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let kind = match &self.kind {
            ModulusKind::Constant(v) => ModulusKind::Constant(v * factor),
            other => ModulusKind::Scaled {
                inner: Box::new(other.clone()),
                factor,
            },
        };
        Self::new(kind, self.window)
    }
}

pub(crate) fn table_value(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let k = times.partition_point(|&x| x <= t) - 1;
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    values[k] + w * (values[k + 1] - values[k])
}

/// Antiderivative of the clamped piecewise-linear table, zero at `times[0]`.
pub(crate) fn table_antiderivative(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return (t - times[0]) * values[0];
    }
    let mut acc = 0.0;
    for k in 0..n - 1 {
        let (a, b) = (times[k], times[k + 1]);
        if t >= b {
            acc += 0.5 * (b - a) * (values[k] + values[k + 1]);
        } else {
            let slope = (values[k + 1] - values[k]) / (b - a);
            let dx = t - a;
            return acc + dx * values[k] + 0.5 * slope * dx * dx;
        }
    }
    acc + (t - times[n - 1]) * values[n - 1]
}

fn sawtooth_value(c: f64, tau: f64) -> f64 {
    let m = tau.floor();
    if m < 1.0 {
        return 0.0;
    }
    let x = tau - m;
    if x < 0.5 / m {
        c * m * m * x
    } else if x < 1.0 / m {
        c * m * m * (1.0 / m - x)
    } else {
        0.0
    }
}

/// `∫_0^tau` of the one-sided sawtooth, `tau >= 0`.
fn sawtooth_primitive(c: f64, tau: f64) -> f64 {
    let m = tau.floor();
    if m < 1.0 {
        return 0.0;
    }
    let x = tau - m;
    let full = (m - 1.0) * c / 4.0;
    let partial = if x < 0.5 / m {
        0.5 * c * m * m * x * x
    } else if x < 1.0 / m {
        let r = 1.0 / m - x;
        c / 4.0 - 0.5 * c * m * m * r * r
    } else {
        c / 4.0
    };
    full + partial
}

fn sawtooth_odd_primitive(c: f64, t: f64) -> f64 {
    t.signum() * sawtooth_primitive(c, t.abs())
}

fn logistic_primitive(t: f64) -> f64 {
    // 2t - ln(1 + e^{2t}), evaluated without overflow.
    let x = 2.0 * t;
    let softplus = if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    x - softplus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadTol;

    fn numeric(kind: &ModulusKind, a: f64, b: f64) -> f64 {
        let breaks = kind.breakpoints(a, b);
        integrate_with_breaks(|s| kind.value(s), a, b, &breaks, QuadTol::new(1e-14, 1e-13))
            .unwrap()
            .value
    }

    #[test]
    fn sawtooth_values() {
        let k = ModulusKind::Sawtooth { c: 1.0 };
        assert_eq!(k.value(0.5), 0.0);
        assert_eq!(k.value(-0.99), 0.0);
        // peak of the m = 4 bump
        assert!((k.value(4.0 + 1.0 / 8.0) - 2.0).abs() < 1e-12);
        assert!((k.value(-(4.0 + 1.0 / 8.0)) - 2.0).abs() < 1e-12);
        assert_eq!(k.value(4.5), 0.0);
    }

    #[test]
    fn sawtooth_bump_area_is_quarter_c() {
        let k = ModulusKind::Sawtooth { c: 2.0 };
        for m in 1..8 {
            let m = m as f64;
            assert!((k.integral(m, m + 1.0) - 0.5).abs() < 1e-12);
            assert!((numeric(&k, m, m + 1.0) - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_integrals_match_quadrature() {
        let kinds = [
            ModulusKind::Sawtooth { c: 1.3 },
            ModulusKind::Logistic { scale: 0.7 },
            ModulusKind::Table {
                times: vec![-1.0, 0.0, 2.0],
                values: vec![1.0, 0.0, 3.0],
            },
        ];
        for k in &kinds {
            for (a, b) in [(-3.3, 2.7), (0.1, 0.9), (1.2, 5.5), (-6.0, -1.5)] {
                let exact = k.integral(a, b);
                let q = numeric(k, a, b);
                assert!((exact - q).abs() < 1e-10, "{k:?} on [{a}, {b}]: {exact} vs {q}");
            }
        }
    }

    #[test]
    fn window_sup_of_constant_and_zero() {
        let w = Window::symmetric(5.0);
        assert_eq!(ScalarModulus::constant(0.3, w).unwrap().window_sup(), 0.3);
        assert_eq!(ScalarModulus::zero(w).window_sup(), 0.0);
    }

    #[test]
    fn window_sup_bounds_every_sampled_unit_integral() {
        let w = Window::new(-8.0, 8.0).with_step(0.05);
        let m = ScalarModulus::new(ModulusKind::Sawtooth { c: 1.0 }, w).unwrap();
        for t in w.grid() {
            assert!(m.integral(t, t + 1.0) <= m.window_sup() + 1e-15);
        }
        assert!(m.window_sup() <= 1.0);
    }

    #[test]
    fn rejects_negative_values() {
        let w = Window::default();
        assert!(ScalarModulus::constant(-1.0, w).is_err());
        let t = ModulusKind::Table {
            times: vec![0.0, 1.0],
            values: vec![1.0, -0.5],
        };
        assert!(ScalarModulus::new(t, w).is_err());
    }
}
