//! Coefficient fields, perturbations and their flows.

mod field;
mod matrix;
mod modulus;
mod ode;

pub use field::{radial_extend, FieldBuiltin, FieldKind, NonlinearField};
pub use matrix::{evolution_operator, MatrixBuiltin, MatrixField, MatrixKind};
pub use modulus::{ModulusKind, ScalarModulus};
pub use ode::{integrate, solve_fixed_step, solve_ivp, Tolerance, Trajectory};

use serde::{Deserialize, Serialize};

/// Default sampling step for sup-type quantities over a window.
pub const DEFAULT_GRID_STEP: f64 = 1e-2;

/// Closed time interval over which sup-type quantities (`M`, `C`) are
/// sampled, together with the sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self {
            start,
            end,
            step: DEFAULT_GRID_STEP,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.start.is_finite() && self.end.is_finite() && self.start <= self.end) {
            return Err(crate::error::invalid(format!(
                "window [{}, {}] is not a finite ordered interval",
                self.start, self.end
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(crate::error::invalid(format!(
                "window grid step must be positive, got {}",
                self.step
            )));
        }
        Ok(())
    }

    /// Sampling grid from `start` to `end` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.start, self.end, self.step)
    }
}

impl Default for Window {
    fn default() -> Self {
        Self::symmetric(20.0)
    }
}

/// Points `a, a + step, ...` up to and including `b`.
pub fn uniform_grid(a: f64, b: f64, step: f64) -> Vec<f64> {
    if b <= a {
        return vec![a];
    }
    let n = ((b - a) / step).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    (0..=n).map(|i| if i == n { b } else { a + h * i as f64 }).collect()
}
