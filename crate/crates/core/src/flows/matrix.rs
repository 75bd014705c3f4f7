use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::modulus::{table_antiderivative, table_value};
use super::ode::{solve_endpoint, Tolerance};
use super::Window;
use crate::error::{invalid, Result};
use crate::linalg::{expm, op_norm};

/// Named coefficient matrices with scalar parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum MatrixBuiltin {
    /// `diag(base_i + amplitude_i sin(frequency t))`.
    PeriodicDiagonal {
        base: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: f64,
    },
    /// `[[-rate, shear cos(frequency t)], [0, rate]]`: a saddle whose
    /// unstable direction rotates in time, so `P(t)` is not constant.
    ShearedSaddle { rate: f64, shear: f64, frequency: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixKind {
    Constant(DMatrix<f64>),
    /// Diagonal entries sampled at `times`, interpolated linearly and clamped
    /// outside the table. `diagonals[k]` holds the diagonal at `times[k]`.
    DiagonalTable {
        times: Vec<f64>,
        diagonals: Vec<Vec<f64>>,
    },
    Builtin(MatrixBuiltin),
}

/// Time-dependent coefficient matrix `A(t)` with its sampled bound
/// `M = sup ‖A(t)‖` over a window.
#[derive(Debug, Clone)]
pub struct MatrixField {
    kind: MatrixKind,
    dim: usize,
    window: Window,
    bound_m: f64,
    // Per-component columns of a diagonal table.
    columns: Vec<Vec<f64>>,
}

impl MatrixField {
    pub fn new(kind: MatrixKind, window: Window) -> Result<Self> {
        window.validate()?;
        let dim = validate_kind(&kind)?;
        let columns = match &kind {
            MatrixKind::DiagonalTable { diagonals, .. } => (0..dim).map(|i| column(diagonals, i)).collect(),
            _ => Vec::new(),
        };
        let mut field = Self {
            kind,
            dim,
            window,
            bound_m: 0.0,
            columns,
        };
        field.bound_m = match &field.kind {
            MatrixKind::Constant(m) => op_norm(m),
            _ => window
                .grid()
                .into_iter()
                .map(|t| op_norm(&field.eval(t)))
                .fold(0.0, f64::max),
        };
        Ok(field)
    }

    pub fn constant(m: DMatrix<f64>, window: Window) -> Result<Self> {
        Self::new(MatrixKind::Constant(m), window)
    }

    pub fn diagonal(entries: &[f64], window: Window) -> Result<Self> {
        Self::constant(DMatrix::from_diagonal(&DVector::from_column_slice(entries)), window)
    }

    pub fn diagonal_table(times: Vec<f64>, diagonals: Vec<Vec<f64>>, window: Window) -> Result<Self> {
        Self::new(MatrixKind::DiagonalTable { times, diagonals }, window)
    }

    pub fn builtin(b: MatrixBuiltin, window: Window) -> Result<Self> {
        Self::new(MatrixKind::Builtin(b), window)
    }

    pub fn kind(&self) -> &MatrixKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Sampled `sup ‖A(t)‖` over the window.
    pub fn bound_m(&self) -> f64 {
        self.bound_m
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, MatrixKind::Constant(_))
    }

    /// Whether `U(t, s)` is available in closed form (true for every kind in
    /// the catalog; [`MatrixField::evolution`] falls back to integration
    /// otherwise).
    pub fn has_exact_evolution(&self) -> bool {
        true
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        match &self.kind {
            MatrixKind::Constant(m) => m.clone(),
            _ => {
                let mut out = DMatrix::zeros(self.dim, self.dim);
                self.fill(t, &mut out);
                out
            }
        }
    }

    fn fill(&self, t: f64, out: &mut DMatrix<f64>) {
        match &self.kind {
            MatrixKind::Constant(m) => out.copy_from(m),
            MatrixKind::DiagonalTable { times, .. } => {
                out.fill(0.0);
                for i in 0..self.dim {
                    out[(i, i)] = table_value(times, &self.columns[i], t);
                }
            }
            MatrixKind::Builtin(MatrixBuiltin::PeriodicDiagonal {
                base,
                amplitude,
                frequency,
            }) => {
                out.fill(0.0);
                let s = (frequency * t).sin();
                for i in 0..self.dim {
                    out[(i, i)] = base[i] + amplitude[i] * s;
                }
            }
            MatrixKind::Builtin(MatrixBuiltin::ShearedSaddle { rate, shear, frequency }) => {
                out[(0, 0)] = -rate;
                out[(0, 1)] = shear * (frequency * t).cos();
                out[(1, 0)] = 0.0;
                out[(1, 1)] = *rate;
            }
        }
    }

    /// `out = A(t) x`.
    pub fn apply_into(&self, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.kind {
            MatrixKind::Constant(m) => m.mul_to(x, out),
            _ => {
                let a = self.eval(t);
                a.mul_to(x, out);
            }
        }
    }

    /// Diagonal antiderivative `Φ_i(t)` for the diagonal kinds.
    fn diagonal_primitive(&self, t: f64) -> Option<DVector<f64>> {
        match &self.kind {
            MatrixKind::Constant(m) if crate::linalg::is_diagonal(m) => Some(m.diagonal() * t),
            MatrixKind::DiagonalTable { times, .. } => Some(DVector::from_iterator(
                self.dim,
                (0..self.dim).map(|i| table_antiderivative(times, &self.columns[i], t)),
            )),
            MatrixKind::Builtin(MatrixBuiltin::PeriodicDiagonal {
                base,
                amplitude,
                frequency,
            }) => {
                let c = (frequency * t).cos() / frequency;
                Some(DVector::from_iterator(
                    self.dim,
                    (0..self.dim).map(|i| base[i] * t - amplitude[i] * c),
                ))
            }
            _ => None,
        }
    }

    /// Whether `A(t)` commutes with `p` for every `t`, in which case the
    /// propagated projection `U(s, t0) p U(t0, s)` is `p` itself.
    pub fn commutes_with(&self, p: &DMatrix<f64>) -> bool {
        if p.nrows() != self.dim || p.ncols() != self.dim {
            return false;
        }
        match &self.kind {
            MatrixKind::Constant(m) => {
                let scale = (crate::linalg::max_abs(m) * crate::linalg::max_abs(p)).max(1.0);
                crate::linalg::max_abs(&(m * p - p * m)) <= 1e-14 * scale
            }
            MatrixKind::DiagonalTable { .. } | MatrixKind::Builtin(MatrixBuiltin::PeriodicDiagonal { .. }) => {
                crate::linalg::is_diagonal(p)
            }
            MatrixKind::Builtin(MatrixBuiltin::ShearedSaddle { .. }) => false,
        }
    }

    /// Closed-form `U(t, s)` where available.
    pub fn exact_evolution(&self, t: f64, s: f64) -> Option<DMatrix<f64>> {
        if t == s {
            return Some(DMatrix::identity(self.dim, self.dim));
        }
        if let Some(pt) = self.diagonal_primitive(t) {
            let ps = self.diagonal_primitive(s).expect("diagonal kind");
            return Some(DMatrix::from_diagonal(&(pt - ps).map(f64::exp)));
        }
        match &self.kind {
            MatrixKind::Constant(m) => Some(expm(&(m * (t - s)))),
            MatrixKind::Builtin(MatrixBuiltin::ShearedSaddle { rate, shear, frequency }) => {
                // x2 = e^{r(t-s)} x2(s); x1 picks up ∫ e^{-r(t-u)} b cos(ωu) e^{r(u-s)} du.
                let (r, w) = (*rate, *frequency);
                let g = |u: f64| 2.0 * r * (w * u).cos() + w * (w * u).sin();
                let up = (r * (t - s)).exp();
                let down = (-r * (t - s)).exp();
                let u12 = shear / (4.0 * r * r + w * w) * (up * g(t) - down * g(s));
                Some(DMatrix::from_row_slice(2, 2, &[down, u12, 0.0, up]))
            }
            _ => None,
        }
    }

    /// `U(t, s)` by integrating the columns of `U' = A(t) U` from `s` to `t`.
    pub fn integrated_evolution(&self, t: f64, s: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let id = DMatrix::<f64>::identity(n, n);
        let y0 = DVector::from_column_slice(id.as_slice());
        let mut a = DMatrix::zeros(n, n);
        let rhs = |tau: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            self.fill(tau, &mut a);
            for j in 0..n {
                for i in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += a[(i, k)] * y[j * n + k];
                    }
                    dy[j * n + i] = acc;
                }
            }
        };
        let y = solve_endpoint(rhs, s, &y0, t, tol)?;
        Ok(DMatrix::from_column_slice(n, n, y.as_slice()))
    }

    /// Evolution operator `U(t, s)`: closed form when available, otherwise by
    /// column integration at tolerance `tol`.
    pub fn evolution(&self, t: f64, s: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
        match self.exact_evolution(t, s) {
            Some(u) => Ok(u),
            None => self.integrated_evolution(t, s, tol),
        }
    }
}

/// Evolution operator `U(t, s)` of `x' = A(t) x`.
pub fn evolution_operator(a: &MatrixField, t: f64, s: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
    a.evolution(t, s, tol)
}

fn column(diagonals: &[Vec<f64>], i: usize) -> Vec<f64> {
    diagonals.iter().map(|d| d[i]).collect()
}

fn validate_kind(kind: &MatrixKind) -> Result<usize> {
    match kind {
        MatrixKind::Constant(m) => {
            if m.nrows() == 0 || m.nrows() != m.ncols() {
                return Err(invalid(format!(
                    "coefficient matrix must be square and nonempty, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(invalid("coefficient matrix has non-finite entries"));
            }
            Ok(m.nrows())
        }
        MatrixKind::DiagonalTable { times, diagonals } => {
            if times.is_empty() || times.len() != diagonals.len() {
                return Err(invalid("diagonal table needs matching nonempty times and samples"));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(invalid("diagonal table times must be strictly increasing"));
            }
            let n = diagonals[0].len();
            if n == 0 || diagonals.iter().any(|d| d.len() != n) {
                return Err(invalid("diagonal table samples must share a positive length"));
            }
            if diagonals.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid("diagonal table has non-finite entries"));
            }
            Ok(n)
        }
        MatrixKind::Builtin(MatrixBuiltin::PeriodicDiagonal {
            base,
            amplitude,
            frequency,
        }) => {
            if base.is_empty() || base.len() != amplitude.len() {
                return Err(invalid("periodic diagonal needs matching nonempty base and amplitude"));
            }
            if !(frequency.is_finite() && *frequency != 0.0) {
                return Err(invalid("periodic diagonal frequency must be finite and nonzero"));
            }
            Ok(base.len())
        }
        MatrixKind::Builtin(MatrixBuiltin::ShearedSaddle { rate, shear, frequency }) => {
            if !(*rate > 0.0 && shear.is_finite() && frequency.is_finite()) {
                return Err(invalid("sheared saddle needs a positive rate and finite parameters"));
            }
            Ok(2)
        }
    }
}
