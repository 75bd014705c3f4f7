use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::modulus::{ModulusKind, ScalarModulus};
use super::Window;
use crate::error::{invalid, Result};

/// Named perturbations with scalar parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum FieldBuiltin {
    /// `sigma (sin x2, sin x1)`.
    PlanarSine { sigma: f64 },
    /// `sigma (tanh x2, tanh x1)`; same bound and Lipschitz constants as the
    /// sine version but saturating along the unstable growth.
    PlanarTanh { sigma: f64 },
    /// `gain x` in dimension `dim`.
    Linear { gain: f64, dim: usize },
    /// Planar field defined on the unit ball: componentwise
    /// `eps x1` / `eps x1^3` for `x1 >= 0` / `x1 < 0`, and
    /// `-eps x2` / `-eps x2^3` for `x2 >= 0` / `x2 < 0`.
    UnitBall { eps: f64 },
    /// Scalar `w(|x|) 2/(1 + e^{2t}) x` where `w` is 0 on `|x| <= eps`, 1 on
    /// `|x| >= delta` and a cubic smoothstep in between.
    ScalarTime { eps: f64, delta: f64 },
    /// `sawtooth_c(t) sin(x_i)` componentwise in dimension `dim`.
    SawtoothSine { c: f64, dim: usize },
}

impl FieldBuiltin {
    fn dim(&self) -> usize {
        match self {
            FieldBuiltin::PlanarSine { .. } | FieldBuiltin::PlanarTanh { .. } | FieldBuiltin::UnitBall { .. } => 2,
            FieldBuiltin::ScalarTime { .. } => 1,
            FieldBuiltin::Linear { dim, .. } | FieldBuiltin::SawtoothSine { dim, .. } => *dim,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            FieldBuiltin::PlanarSine { sigma } | FieldBuiltin::PlanarTanh { sigma } => {
                *sigma >= 0.0 && sigma.is_finite()
            }
            FieldBuiltin::Linear { gain, dim } => gain.is_finite() && *dim > 0,
            FieldBuiltin::UnitBall { eps } => *eps > 0.0 && eps.is_finite(),
            FieldBuiltin::ScalarTime { eps, delta } => *eps > 0.0 && eps < delta && delta.is_finite(),
            FieldBuiltin::SawtoothSine { c, dim } => *c > 0.0 && c.is_finite() && *dim > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid field parameters: {self:?}")))
        }
    }

    /// Radius of the closed ball the field is defined on, if not global.
    fn domain_radius(&self) -> Option<f64> {
        match self {
            FieldBuiltin::UnitBall { .. } => Some(1.0),
            _ => None,
        }
    }

    /// Bound and Lipschitz moduli on the closed ball of radius `rho`
    /// (`None`: all of space).
    fn moduli(&self, rho: Option<f64>) -> (ModulusKind, ModulusKind) {
        use ModulusKind::*;
        let inf = f64::INFINITY;
        match self {
            FieldBuiltin::PlanarSine { sigma } | FieldBuiltin::PlanarTanh { sigma } => {
                (Constant(sigma * 2f64.sqrt()), Constant(*sigma))
            }
            FieldBuiltin::Linear { gain, .. } => (Constant(rho.map_or(inf, |r| gain.abs() * r)), Constant(gain.abs())),
            FieldBuiltin::UnitBall { eps } => {
                let r = rho.unwrap_or(1.0);
                // |x^3| <= |x| on the unit ball; d(x^3)/dx = 3x^2.
                (Constant(eps * r), Constant(eps * (3.0 * r * r).max(1.0)))
            }
            FieldBuiltin::ScalarTime { eps, delta } => {
                let lip = 1.0 + 1.5 * delta / (delta - eps);
                let mu = match rho {
                    Some(r) => Logistic { scale: r },
                    None => Constant(inf),
                };
                (mu, Logistic { scale: lip })
            }
            FieldBuiltin::SawtoothSine { c, dim } => {
                let saw = Sawtooth { c: *c };
                (
                    Scaled {
                        inner: Box::new(saw.clone()),
                        factor: (*dim as f64).sqrt(),
                    },
                    saw,
                )
            }
        }
    }

    fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match self {
            FieldBuiltin::PlanarSine { sigma } => DVector::from_vec(vec![sigma * x[1].sin(), sigma * x[0].sin()]),
            FieldBuiltin::PlanarTanh { sigma } => DVector::from_vec(vec![sigma * x[1].tanh(), sigma * x[0].tanh()]),
            FieldBuiltin::Linear { gain, .. } => x * *gain,
            FieldBuiltin::UnitBall { eps } => {
                let f1 = if x[0] >= 0.0 { eps * x[0] } else { eps * x[0].powi(3) };
                let f2 = if x[1] >= 0.0 { -eps * x[1] } else { -eps * x[1].powi(3) };
                DVector::from_vec(vec![f1, f2])
            }
            FieldBuiltin::ScalarTime { eps, delta } => {
                let s = ((x[0].abs() - eps) / (delta - eps)).clamp(0.0, 1.0);
                let w = s * s * (3.0 - 2.0 * s);
                DVector::from_element(1, w * 2.0 / (1.0 + (2.0 * t).exp()) * x[0])
            }
            FieldBuiltin::SawtoothSine { c, .. } => {
                let m = ModulusKind::Sawtooth { c: *c }.value(t);
                x.map(|v| m * v.sin())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum FieldKind {
    Zero,
    Builtin(FieldBuiltin),
    /// `inner` frozen along rays outside the ball of radius `radius`.
    RadiallyExtended {
        inner: Box<NonlinearField>,
        radius: f64,
    },
}

/// Perturbation `f(t, x)` with its bound modulus `mu` and Lipschitz modulus
/// `r`.
#[derive(Debug, Clone)]
pub struct NonlinearField {
    kind: FieldKind,
    dim: usize,
    mu: ScalarModulus,
    r: ScalarModulus,
    domain_radius: Option<f64>,
}

impl NonlinearField {
    pub fn zero(dim: usize, window: Window) -> Self {
        Self {
            kind: FieldKind::Zero,
            dim,
            mu: ScalarModulus::zero(window),
            r: ScalarModulus::zero(window),
            domain_radius: None,
        }
    }

    pub fn builtin(b: FieldBuiltin, window: Window) -> Result<Self> {
        b.validate()?;
        let domain_radius = b.domain_radius();
        let (mu, r) = b.moduli(domain_radius);
        Ok(Self {
            dim: b.dim(),
            mu: ScalarModulus::new(mu, window)?,
            r: ScalarModulus::new(r, window)?,
            kind: FieldKind::Builtin(b),
            domain_radius,
        })
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bound modulus: `‖f(t, x)‖ <= mu(t)`.
    pub fn mu(&self) -> &ScalarModulus {
        &self.mu
    }

    /// Lipschitz modulus: `‖f(t, x) - f(t, y)‖ <= r(t) ‖x - y‖`.
    pub fn r(&self) -> &ScalarModulus {
        &self.r
    }

    /// Radius of the ball the field (and its moduli) is restricted to;
    /// `None` for globally defined fields.
    pub fn domain_radius(&self) -> Option<f64> {
        self.domain_radius
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, FieldKind::Zero)
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            FieldKind::Zero => DVector::zeros(self.dim),
            FieldKind::Builtin(b) => b.eval(t, x),
            FieldKind::RadiallyExtended { inner, radius } => {
                let n = x.norm();
                if n <= *radius {
                    inner.eval(t, x)
                } else {
                    inner.eval(t, &(x * (radius / n)))
                }
            }
        }
    }

    fn moduli_on_ball(&self, rho: f64) -> (ModulusKind, ModulusKind) {
        match &self.kind {
            FieldKind::Builtin(b) => b.moduli(Some(rho)),
            _ => (self.mu.kind().clone(), self.r.kind().clone()),
        }
    }
}

/// Extends a field given on the closed ball of radius `eps` to all of space
/// by `F(t, x) = f(t, eps x / ‖x‖)` outside the ball. The Lipschitz modulus
/// of the extension is twice that of `f` on the ball.
pub fn radial_extend(f: &NonlinearField, eps: f64) -> Result<NonlinearField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(format!("extension radius must be positive, got {eps}")));
    }
    if let Some(rho) = f.domain_radius {
        if eps > rho * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "extension radius {eps} exceeds the field's domain radius {rho}"
            )));
        }
    }
    if f.is_zero() {
        return Ok(f.clone());
    }
    let window = f.mu.window();
    let origin = DVector::zeros(f.dim);
    let grid = window.grid();
    let stride = (grid.len() / 64).max(1);
    for &t in grid.iter().step_by(stride) {
        let v = f.eval(t, &origin);
        if v.norm() > 0.0 {
            return Err(invalid(format!(
                "field does not vanish at the origin (t = {t}, |f| = {})",
                v.norm()
            )));
        }
    }
    let (mu, r) = f.moduli_on_ball(eps);
    let r2 = match r {
        ModulusKind::Constant(v) => ModulusKind::Constant(2.0 * v),
        other => ModulusKind::Scaled {
            inner: Box::new(other),
            factor: 2.0,
        },
    };
    Ok(NonlinearField {
        kind: FieldKind::RadiallyExtended {
            inner: Box::new(f.clone()),
            radius: eps,
        },
        dim: f.dim,
        mu: ScalarModulus::new(mu, window)?,
        r: ScalarModulus::new(r2, window)?,
        domain_radius: None,
    })
}
