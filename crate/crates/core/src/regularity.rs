//! Regularity of the conjugating maps: the theoretical constants `p`, `λ`,
//! `β`, `q`, `τ` and empirical Lipschitz/Hölder estimators.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Lipschitz constant `p = 1 + 2K²θ̃ / (1 - Kθ̃)`.
pub fn theoretical_p(k: f64, theta_tilde: f64) -> Result<f64> {
    if !(k > 0.0 && theta_tilde >= 0.0) {
        return Err(invalid(format!("need K > 0 and θ̃ >= 0, got K={k}, θ̃={theta_tilde}")));
    }
    let kt = k * theta_tilde;
    if kt >= 1.0 {
        return Err(Error::HypothesisViolated {
            what: "K*theta_tilde".into(),
            value: kt,
        });
    }
    // single division: exact for representable anchors such as 5/3
    Ok((1.0 - kt + 2.0 * k * k * theta_tilde) / (1.0 - kt))
}

/// Constants of the Hölder argument with a flag per condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoreticalConstants {
    /// Lipschitz constant, when `θ̃` was supplied.
    pub p: Option<f64>,
    pub lambda: f64,
    /// Right-hand side of the `λ` condition.
    pub lambda_lower: f64,
    pub beta: f64,
    /// `α / (M + C_μ)`.
    pub beta_cap: f64,
    /// Root of the third condition at equality, if it lies in `(0, α/M)`.
    pub beta_star: Option<f64>,
    pub q: f64,
    /// `1 / (M + C_μ)`, so that `τ = tau_coefficient ln(1/d)`.
    pub tau_coefficient: f64,
    /// `2 K C_r / (1 - e^{-(α - Mβ)})` at the returned `β`.
    pub third_value: f64,
    pub lambda_feasible: bool,
    pub beta_feasible: bool,
    pub third_feasible: bool,
}

impl TheoreticalConstants {
    pub fn all_feasible(&self) -> bool {
        self.lambda_feasible && self.beta_feasible && self.third_feasible
    }

    pub fn with_p(mut self, k: f64, theta_tilde: f64) -> Result<Self> {
        self.p = Some(theoretical_p(k, theta_tilde)?);
        Ok(self)
    }
}

fn third_condition(k: f64, alpha: f64, m: f64, c_r: f64, beta: f64) -> f64 {
    2.0 * k * c_r / (1.0 - (-(alpha - m * beta)).exp())
}

/// Picks `λ` at 1.01 times its lower bound and `β` at 0.9 times the largest
/// value the two `β` conditions allow.
pub fn theoretical_beta_lambda(k: f64, alpha: f64, m: f64, c_mu: f64, c_r: f64) -> Result<TheoreticalConstants> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid(format!("M must be positive, got {m}")));
    }
    if !(k > 0.0 && alpha > 0.0 && c_mu >= 0.0 && c_r >= 0.0) {
        return Err(invalid(format!(
            "need K, α > 0 and C_μ, C_r >= 0, got K={k}, α={alpha}, C_μ={c_mu}, C_r={c_r}"
        )));
    }
    let denom = 1.0 - (alpha - m).exp();
    let lambda_feasible = denom > 0.0;
    let lambda_lower = 3.0 / (1.0 - (-alpha).exp()) + 3.0 / (2.0 * denom);
    let lambda = 1.01 * lambda_lower;

    let beta_cap = alpha / (m + c_mu);
    // The third quantity increases in β on (0, α/M); bisect for where it hits 1/3.
    let upper = alpha / m;
    let g = |b: f64| third_condition(k, alpha, m, c_r, b) - 1.0 / 3.0;
    let beta_star = if c_r == 0.0 {
        Some(upper)
    } else if g(0.0) >= 0.0 {
        None
    } else {
        let (mut lo, mut hi) = (0.0, upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    };
    let beta = 0.9 * beta_star.map_or(beta_cap, |s| beta_cap.min(s));
    let third_value = third_condition(k, alpha, m, c_r, beta);
    Ok(TheoreticalConstants {
        p: None,
        lambda,
        lambda_lower,
        beta,
        beta_cap,
        beta_star,
        q: 1.0 + lambda,
        tau_coefficient: 1.0 / (m + c_mu),
        third_value,
        lambda_feasible,
        beta_feasible: beta > 0.0 && beta < 1.0 && beta < beta_cap,
        // Strict positivity fails when C_r = 0.
        third_feasible: beta_star.is_some() && third_value > 0.0 && third_value < 1.0 / 3.0,
    })
}

/// `τ = ln(1/d) / (M + C_μ)`.
pub fn tau_scale(m: f64, c_mu: f64, d: f64) -> Result<f64> {
    if !(d > 0.0 && d < 1.0) {
        return Err(invalid(format!("distance must lie in (0, 1), got {d}")));
    }
    if !(m + c_mu > 0.0) {
        return Err(invalid(format!("need M + C_μ > 0, got {}", m + c_mu)));
    }
    Ok((1.0 / d).ln() / (m + c_mu))
}

/// How pairs at a given distance are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Uniform base point, uniform direction.
    Random,
    /// Uniform base point, coordinate direction.
    Axis,
    /// Base point at the origin, coordinate or uniform direction.
    OriginAnchored,
    /// Cycles through the other three.
    Mixed,
}

/// Draws pairs `(x, x̄)` with `‖x - x̄‖ = d` inside the box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSampler {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mode: PairMode,
    pub seed: u64,
}

impl PairSampler {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, mode: PairMode, seed: u64) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(invalid("sampler box needs matching nonempty bounds"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(invalid("sampler box must have positive extent"));
        }
        if matches!(mode, PairMode::OriginAnchored | PairMode::Mixed)
            && lower.iter().zip(&upper).any(|(l, u)| !(*l <= 0.0 && 0.0 <= *u))
        {
            return Err(invalid("origin-anchored pairs need the origin inside the box"));
        }
        Ok(Self {
            lower,
            upper,
            mode,
            seed,
        })
    }

    /// Symmetric box `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64, mode: PairMode, seed: u64) -> Result<Self> {
        Self::new(vec![-half; dim], vec![half; dim], mode, seed)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    fn inside(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| l <= v && v <= u)
    }

    fn direction(&self, rng: &mut ChaCha8Rng, axis: bool) -> DVector<f64> {
        let n = self.dim();
        if axis || n == 1 {
            let i = rng.gen_range(0..n);
            let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut v = DVector::zeros(n);
            v[i] = s;
            return v;
        }
        loop {
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
            let r = v.norm();
            if r > 1e-3 && r <= 1.0 {
                return v / r;
            }
        }
    }

    fn base(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| rng.gen_range(*l..=*u)),
        )
    }

    /// `count` pairs at distance `d`; fewer if the box rejects too many.
    pub fn pairs(&self, d: f64, count: usize, stream: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count && attempts < 100 * count.max(1) {
            attempts += 1;
            let mode = match self.mode {
                PairMode::Mixed => [PairMode::Random, PairMode::Axis, PairMode::OriginAnchored][attempts % 3],
                m => m,
            };
            let (x, dir) = match mode {
                PairMode::Random => (self.base(&mut rng), self.direction(&mut rng, false)),
                PairMode::Axis => (self.base(&mut rng), self.direction(&mut rng, true)),
                _ => {
                    let axis = rng.gen_bool(0.5);
                    (DVector::zeros(self.dim()), self.direction(&mut rng, axis))
                }
            };
            let xb = &x + dir * d;
            if self.inside(&x) && self.inside(&xb) {
                out.push((x, xb));
            }
        }
        out
    }
}

/// Largest observed increment at one scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleIncrement {
    pub scale: f64,
    pub max_increment: f64,
    /// `max_increment / scale`.
    pub max_ratio: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityEstimate {
    /// Fitted exponent; `None` when the map looks flat.
    pub exponent: Option<f64>,
    /// Constant in front of `d^exponent`.
    pub constant: Option<f64>,
    pub log_constant: Option<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Root-mean-square residual of the log-log fit.
    pub fit_residual: f64,
    pub flat_map: bool,
    pub per_scale: Vec<ScaleIncrement>,
}

impl RegularityEstimate {
    /// `scale,max_increment,max_ratio,pairs` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scale,max_increment,max_ratio,pairs\n");
        for r in &self.per_scale {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt17(r.scale),
                fmt17(r.max_increment),
                fmt17(r.max_ratio),
                r.pairs
            );
        }
        s
    }
}

/// Round-trip decimal formatting with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Map under study: point to point.
pub type PointMap<'a> = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync + 'a;

fn increments(
    map: &PointMap<'_>,
    sampler: &PairSampler,
    scales: &[f64],
    pairs_per_scale: usize,
) -> Result<Vec<ScaleIncrement>> {
    if scales.is_empty() {
        return Err(invalid("at least one scale is required"));
    }
    if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(invalid("scales must be positive"));
    }
    if scales.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("scales must be strictly increasing"));
    }
    if scales[scales.len() - 1] >= sampler.diameter() {
        return Err(invalid("largest scale must be below the domain diameter"));
    }
    if pairs_per_scale == 0 {
        return Err(invalid("pairs_per_scale must be positive"));
    }
    scales
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let pairs = sampler.pairs(d, pairs_per_scale, i as u64);
            if pairs.is_empty() {
                return Err(invalid(format!("no pairs at distance {d} fit in the sampling box")));
            }
            let mut worst = 0.0f64;
            for (x, xb) in &pairs {
                let inc = (map(x)? - map(xb)?).norm();
                worst = worst.max(inc);
            }
            Ok(ScaleIncrement {
                scale: d,
                max_increment: worst,
                max_ratio: worst / d,
                pairs: pairs.len(),
            })
        })
        .collect()
}

/// Largest difference quotient over all scales; exponent fixed at 1.
pub fn lipschitz_estimate(
    map: &PointMap<'_>,
    sampler: &PairSampler,
    scales: &[f64],
    pairs_per_scale: usize,
) -> Result<RegularityEstimate> {
    let per_scale = increments(map, sampler, scales, pairs_per_scale)?;
    let c = per_scale.iter().map(|s| s.max_ratio).fold(0.0, f64::max);
    let flat = c == 0.0;
    Ok(RegularityEstimate {
        exponent: Some(1.0),
        constant: Some(c),
        log_constant: Some(c.ln()),
        scale_min: scales[0],
        scale_max: scales[scales.len() - 1],
        fit_residual: 0.0,
        flat_map: flat,
        per_scale,
    })
}

/// Least-squares slope of `ln(max increment)` against `ln(scale)`.
pub fn holder_estimate(
    map: &PointMap<'_>,
    sampler: &PairSampler,
    scales: &[f64],
    pairs_per_scale: usize,
) -> Result<RegularityEstimate> {
    if scales.len() < 4 {
        return Err(invalid("Hölder fit needs at least 4 scales"));
    }
    if scales.iter().any(|&s| !(s > 0.0)) {
        return Err(invalid("scales must be positive"));
    }
    if scales[scales.len() - 1] / scales[0] < 100.0 {
        return Err(invalid("Hölder fit needs scales spanning at least two decades"));
    }
    let per_scale = increments(map, sampler, scales, pairs_per_scale)?;
    let (scale_min, scale_max) = (scales[0], scales[scales.len() - 1]);
    if per_scale.iter().any(|s| !(s.max_increment > 0.0)) {
        return Ok(RegularityEstimate {
            exponent: None,
            constant: None,
            log_constant: None,
            scale_min,
            scale_max,
            fit_residual: 0.0,
            flat_map: true,
            per_scale,
        });
    }
    let xs: Vec<f64> = per_scale.iter().map(|s| s.scale.ln()).collect();
    let ys: Vec<f64> = per_scale.iter().map(|s| s.max_increment.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RegularityEstimate {
        exponent: Some(slope),
        constant: Some(intercept.exp()),
        log_constant: Some(intercept),
        scale_min,
        scale_max,
        fit_residual: (rss / n).sqrt(),
        flat_map: false,
        per_scale,
    })
}

/// `count` logarithmically spaced scales from `lo` to `hi`.
pub fn log_scales(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && count >= 2) {
        return Err(invalid(format!("bad scale range [{lo}, {hi}] with {count} points")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}
