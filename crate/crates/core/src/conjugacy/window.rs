//! Green operator on a finite uniform grid.
//!
//! With nodes `s_0 < ... < s_N`, the stable part
//! `S_j = ∫_{s_0}^{s_j} U(s_j,u)P(u)F(u) du` and the unstable part
//! `Q_j = ∫_{s_j}^{s_N} U(s_j,u)(I-P(u))F(u) du` satisfy one-panel
//! recursions; each panel integral uses 4-point Gauss–Legendre. Node values
//! are interpolated to the Gauss points with cubic Lagrange stencils.

use nalgebra::{DMatrix, DVector};

use crate::dichotomy::GreenKernel;
use crate::error::{invalid, Result};
use crate::flows::uniform_grid;
use crate::quadrature::GL4;

pub(crate) type Panel<T> = [T; 4];

#[derive(Debug)]
pub(crate) struct WindowOps {
    nodes: Vec<f64>,
    gauss: Vec<Panel<f64>>,
    p: Vec<DMatrix<f64>>,
    q: Vec<DMatrix<f64>>,
    // U(s_{j+1}, s_j) and U(s_j, s_{j+1})
    step_fwd: Vec<DMatrix<f64>>,
    step_bwd: Vec<DMatrix<f64>>,
    // weighted U(s_{j+1}, u) P(u) and U(s_j, u) (I - P(u)) at Gauss points
    k_fwd: Vec<Panel<DMatrix<f64>>>,
    k_bwd: Vec<Panel<DMatrix<f64>>>,
    stencil: Vec<usize>,
    lagrange: Vec<Panel<[f64; 4]>>,
}

fn lagrange_weights(x: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for (i, wi) in w.iter_mut().enumerate() {
        for j in 0..4 {
            if i != j {
                *wi *= (x - j as f64) / (i as f64 - j as f64);
            }
        }
    }
    w
}

impl WindowOps {
    /// Builds the panel operators on `[a, b]` with step close to `step`.
    pub(crate) fn new(kernel: &GreenKernel, a: f64, b: f64, step: f64) -> Result<Self> {
        if !(b > a && step > 0.0) {
            return Err(invalid(format!("bad Green window [{a}, {b}] with step {step}")));
        }
        let step = step.min((b - a) / 3.0);
        Self::from_nodes(kernel, uniform_grid(a, b, step))
    }

    /// Window `[t - half, t + half]` whose middle node is exactly `t`.
    pub(crate) fn centered(kernel: &GreenKernel, t: f64, half: f64, step: f64) -> Result<Self> {
        if !(half > 0.0 && step > 0.0) {
            return Err(invalid(format!("bad Green half-width {half} with step {step}")));
        }
        let m = ((half / step).ceil() as usize).max(2);
        let h = half / m as f64;
        let nodes = (0..=2 * m).map(|j| t + h * (j as f64 - m as f64)).collect();
        Self::from_nodes(kernel, nodes)
    }

    pub(crate) fn from_nodes(kernel: &GreenKernel, nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len() - 1;
        let dim = kernel.dichotomy().dim();
        let id = DMatrix::<f64>::identity(dim, dim);
        let p: Vec<DMatrix<f64>> = nodes.iter().map(|&s| kernel.projection(s)).collect::<Result<_>>()?;
        let q = p.iter().map(|pj| &id - pj).collect();
        let mut gauss = Vec::with_capacity(n);
        let mut step_fwd = Vec::with_capacity(n);
        let mut step_bwd = Vec::with_capacity(n);
        let mut k_fwd = Vec::with_capacity(n);
        let mut k_bwd = Vec::with_capacity(n);
        let mut stencil = Vec::with_capacity(n);
        let mut lagrange = Vec::with_capacity(n);
        for j in 0..n {
            let (lo, hi) = (nodes[j], nodes[j + 1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let pts: Panel<f64> = std::array::from_fn(|k| mid + half * GL4[k].0);
            let i0 = j.saturating_sub(1).min(n - 3);
            let mut kf = Vec::with_capacity(4);
            let mut kb = Vec::with_capacity(4);
            let mut lw = [[0.0; 4]; 4];
            for (k, &u) in pts.iter().enumerate() {
                let w = half * GL4[k].1;
                let pu = kernel.projection(u)?;
                kf.push(kernel.evolution(hi, u)? * &pu * w);
                kb.push(kernel.evolution(lo, u)? * (&id - &pu) * w);
                // position on the stencil's local 0..3 coordinate
                let x = (u - nodes[i0]) / (nodes[i0 + 1] - nodes[i0]);
                lw[k] = lagrange_weights(x);
            }
            gauss.push(pts);
            step_fwd.push(kernel.evolution(hi, lo)?);
            step_bwd.push(kernel.evolution(lo, hi)?);
            k_fwd.push(kf.try_into().expect("four Gauss points"));
            k_bwd.push(kb.try_into().expect("four Gauss points"));
            stencil.push(i0);
            lagrange.push(lw);
        }
        Ok(Self {
            nodes,
            gauss,
            p,
            q,
            step_fwd,
            step_bwd,
            k_fwd,
            k_bwd,
            stencil,
            lagrange,
        })
    }

    pub(crate) fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub(crate) fn panels(&self) -> usize {
        self.gauss.len()
    }

    pub(crate) fn gauss(&self, j: usize) -> &Panel<f64> {
        &self.gauss[j]
    }

    /// Index of the node closest to `t`.
    pub(crate) fn node_index(&self, t: f64) -> usize {
        let k = self.nodes.partition_point(|&x| x < t);
        if k == 0 {
            0
        } else if k >= self.nodes.len() {
            self.nodes.len() - 1
        } else if (self.nodes[k] - t).abs() < (t - self.nodes[k - 1]).abs() {
            k
        } else {
            k - 1
        }
    }

    /// Cubic interpolation of node values at the Gauss points of panel `j`.
    pub(crate) fn interpolate(&self, vals: &[DVector<f64>], j: usize) -> Panel<DVector<f64>> {
        let i0 = self.stencil[j];
        std::array::from_fn(|k| {
            let w = &self.lagrange[j][k];
            let mut out = &vals[i0] * w[0];
            for m in 1..4 {
                out.axpy(w[m], &vals[i0 + m], 1.0);
            }
            out
        })
    }

    fn stable_sweep(&self, f: &[Panel<DVector<f64>>], upto: usize) -> Vec<DVector<f64>> {
        let dim = self.p[0].nrows();
        let mut s = Vec::with_capacity(upto + 1);
        s.push(DVector::zeros(dim));
        for j in 0..upto {
            let mut acc = &self.step_fwd[j] * &s[j];
            for k in 0..4 {
                acc += &self.k_fwd[j][k] * &f[j][k];
            }
            s.push(&self.p[j + 1] * acc);
        }
        s
    }

    fn unstable_sweep(&self, f: &[Panel<DVector<f64>>], downto: usize) -> Vec<DVector<f64>> {
        let n = self.panels();
        let dim = self.p[0].nrows();
        let mut q = vec![DVector::zeros(dim); n + 1];
        for j in (downto..n).rev() {
            let mut acc = &self.step_bwd[j] * &q[j + 1];
            for k in 0..4 {
                acc += &self.k_bwd[j][k] * &f[j][k];
            }
            q[j] = &self.q[j] * acc;
        }
        q
    }

    /// Truncated Green operator at every node, given the input at the Gauss
    /// points of every panel.
    pub(crate) fn apply(&self, f: &[Panel<DVector<f64>>]) -> Vec<DVector<f64>> {
        let n = self.panels();
        let s = self.stable_sweep(f, n);
        let q = self.unstable_sweep(f, 0);
        s.into_iter().zip(q).map(|(a, b)| a - b).collect()
    }

    /// Truncated Green operator at node `idx` only.
    pub(crate) fn apply_at(&self, f: &[Panel<DVector<f64>>], idx: usize) -> DVector<f64> {
        let s = self.stable_sweep(f, idx);
        let q = self.unstable_sweep(f, idx);
        &s[idx] - &q[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::DichotomyData;
    use crate::flows::{MatrixField, Tolerance, Window};

    #[test]
    fn lagrange_weights_reproduce_cubics() {
        let f = |x: f64| 2.0 - x + 0.5 * x * x - 0.25 * x * x * x;
        for x in [0.0, 0.3, 1.7, 2.9] {
            let w = lagrange_weights(x);
            let v: f64 = (0..4).map(|i| w[i] * f(i as f64)).sum();
            assert!((v - f(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn saddle_constant_input_matches_closed_form() {
        let a = MatrixField::diagonal(&[-1.0, 1.0], Window::default()).unwrap();
        let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let d = DichotomyData::new(0.0, p0, 1.0, 1.0, 0.5).unwrap();
        let k = GreenKernel::new(d, a, 10.0, Tolerance::default()).unwrap();
        let ops = WindowOps::centered(&k, 0.0, 10.0, 0.05).unwrap();
        let one = DVector::from_vec(vec![1.0, 1.0]);
        let f: Vec<Panel<DVector<f64>>> = (0..ops.panels())
            .map(|_| std::array::from_fn(|_| one.clone()))
            .collect();
        let g = ops.apply(&f);
        let c = ops.node_index(0.0);
        assert_eq!(ops.nodes()[c], 0.0);
        // ∫_0^10 e^{-u} du on both sides
        let expect = 1.0 - (-10.0f64).exp();
        assert!((g[c][0] - expect).abs() < 1e-12);
        assert!((g[c][1] + expect).abs() < 1e-12);
        assert!((ops.apply_at(&f, c) - &g[c]).norm() < 1e-15);
        // at the left edge only the unstable part survives
        assert!((g[0][0]).abs() < 1e-15);
    }
}
