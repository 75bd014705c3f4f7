//! Adaptive Gauss–Kronrod quadrature and fixed Gauss–Legendre panels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use crate::error::{Error, Result};

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 4-point Gauss–Legendre nodes and weights on [-1, 1].
pub const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Values that can be integrated: scalars and vectors.
pub trait QuadValue: Clone {
    fn scaled(&self, a: f64) -> Self;
    fn add_scaled(&mut self, a: f64, x: &Self);
    fn norm(&self) -> f64;
}

impl QuadValue for f64 {
    fn scaled(&self, a: f64) -> Self {
        a * self
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for DVector<f64> {
    fn scaled(&self, a: f64) -> Self {
        self * a
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        self.axpy(a, x, 1.0);
    }
    fn norm(&self) -> f64 {
        nalgebra::Matrix::norm(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl QuadTol {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            max_intervals: 4000,
        }
    }
}

impl Default for QuadTol {
    fn default() -> Self {
        Self::new(1e-10, 1e-10)
    }
}

#[derive(Debug, Clone)]
pub struct Quad<V> {
    pub value: V,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc.scaled(WGK[7]);
    let mut resg = fc.scaled(WG[3]);
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        resk.add_scaled(WGK[j], &f1);
        resk.add_scaled(WGK[j], &f2);
        if j % 2 == 1 {
            resg.add_scaled(WG[j / 2], &f1);
            resg.add_scaled(WG[j / 2], &f2);
        }
    }
    let value = resk.scaled(half);
    let mut diff = resk;
    diff.add_scaled(-1.0, &resg);
    let err = (half * diff.norm()).abs();
    (value, err)
}

struct Segment<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

impl<V> PartialEq for Segment<V> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<V> Eq for Segment<V> {}
impl<V> PartialOrd for Segment<V> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Segment<V> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive G7K15 quadrature of `f` over `[a, b]`.
pub fn integrate<V, F>(f: F, a: f64, b: f64, tol: QuadTol) -> Result<Quad<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    integrate_with_breaks(f, a, b, &[], tol)
}

/// Like [`integrate`], with the interval pre-split at `breaks` (points outside
/// `(a, b)` are ignored). Kinks of the integrand belong here.
pub fn integrate_with_breaks<V, F>(mut f: F, a: f64, b: f64, breaks: &[f64], tol: QuadTol) -> Result<Quad<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "quadrature limits must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        let z = f(a).scaled(0.0);
        return Ok(Quad {
            value: z,
            error: 0.0,
            evaluations: 1,
        });
    }
    if a > b {
        let mut q = integrate_with_breaks(f, b, a, breaks, tol)?;
        q.value = q.value.scaled(-1.0);
        return Ok(q);
    }

    let mut points: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut edges = Vec::with_capacity(points.len() + 2);
    edges.push(a);
    edges.extend(points);
    edges.push(b);

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    let mut total: Option<V> = None;
    let mut total_err = 0.0;
    for w in edges.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = gk15(&mut f, w[0], w[1]);
        evaluations += 15;
        match total.as_mut() {
            Some(t) => t.add_scaled(1.0, &v),
            None => total = Some(v.clone()),
        }
        total_err += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    let mut total = total.expect("at least one segment");

    loop {
        let target = tol.abs.max(tol.rel * total.norm());
        if total_err <= target {
            break;
        }
        if !total_err.is_finite() || !total.norm().is_finite() {
            return Err(Error::QuadratureFailure { a, b, error: total_err });
        }
        if heap.len() >= tol.max_intervals {
            return Err(Error::QuadratureFailure { a, b, error: total_err });
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            return Err(Error::QuadratureFailure { a, b, error: total_err });
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evaluations += 30;
        total.add_scaled(-1.0, &worst.value);
        total.add_scaled(1.0, &v1);
        total.add_scaled(1.0, &v2);
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed accumulated cancellation in the running total.
    let mut value = total.scaled(0.0);
    let mut err = 0.0;
    for seg in heap.iter() {
        value.add_scaled(1.0, &seg.value);
        err += seg.error;
    }
    Ok(Quad {
        value,
        error: err,
        evaluations,
    })
}
