//! JSON run configuration and construction of the systems it describes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use conjlab_core::conjugacy::{ConjugacySettings, SampleSpec};
use conjlab_core::dichotomy::{
    default_alpha_candidates, estimate_dichotomy_constants, pair_grid, DichotomyData, DichotomyEstimate,
};
use conjlab_core::examples::{
    planar_system, sawtooth_example, scalar_time_example, unit_ball_example, ClosedFormConjugacy, ExampleSystem,
    PlanarRealization,
};
use conjlab_core::flows::{
    radial_extend, FieldBuiltin, MatrixBuiltin, MatrixField, ModulusKind, NonlinearField, Window,
};
use conjlab_core::regularity::PairMode;

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub dichotomy: Option<DichotomySpec>,
    #[serde(default)]
    pub settings: ConjugacySettings,
    #[serde(default)]
    pub verify: VerifyOptions,
    #[serde(default)]
    pub regularity: RegularityOptions,
    #[serde(default)]
    pub gronwall: GronwallOptions,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    UnitBall {
        eps: f64,
    },
    ScalarTime {
        eps: f64,
        delta: f64,
    },
    Sawtooth {
        c: f64,
    },
    Planar {
        sigma: f64,
        #[serde(default)]
        realization: PlanarRealization,
    },
    Custom {
        matrix: MatrixSpec,
        field: FieldSpec,
        /// Radius of the ball outside which the field is frozen along rays.
        #[serde(default)]
        radial_extension: Option<f64>,
        #[serde(default)]
        window: Option<Window>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    /// Rows of a constant matrix.
    Constant(Vec<Vec<f64>>),
    DiagonalTable {
        times: Vec<f64>,
        diagonals: Vec<Vec<f64>>,
    },
    Builtin(MatrixBuiltin),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero { dim: usize },
    Builtin(FieldBuiltin),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DichotomySpec {
    Given(GivenDichotomy),
    Estimate(EstimateDichotomy),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GivenDichotomy {
    #[serde(default)]
    pub t0: f64,
    pub p0: Vec<Vec<f64>>,
    pub k: f64,
    pub alpha: f64,
    pub alpha1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateDichotomy {
    #[serde(default)]
    pub t0: f64,
    pub p0: Vec<Vec<f64>>,
    #[serde(default = "default_pair_start")]
    pub pair_start: f64,
    #[serde(default = "default_pair_end")]
    pub pair_end: f64,
    #[serde(default = "default_pair_step")]
    pub pair_step: f64,
    /// `α1` as a fraction of the estimated `α`.
    #[serde(default = "default_alpha1_fraction")]
    pub alpha1_fraction: f64,
    /// Candidate rates; the default geometric grid when absent.
    #[serde(default)]
    pub candidates: Option<Vec<f64>>,
}

fn default_pair_start() -> f64 {
    -3.0
}
fn default_pair_end() -> f64 {
    3.0
}
fn default_pair_step() -> f64 {
    0.5
}
fn default_alpha1_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub sample: SampleSpec,
    /// Bound on every residual, and on the overshoot of the offset bound.
    pub budget: f64,
    pub write_samples: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            sample: SampleSpec::default(),
            budget: 5e-3,
            write_samples: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularityTarget {
    /// First component of the unit-ball conjugacy, as a scalar map.
    H1,
    /// Its inverse.
    G1,
    /// Closed-form `H(t, ·)` of the configured example.
    ClosedFormH,
    /// Closed-form `G(t, ·)` of the configured example.
    ClosedFormG,
    /// Numerically constructed `H(t, ·)`.
    H,
    /// Numerically constructed `G(t, ·)`.
    G,
    /// The zero map; its increments vanish at every scale.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimators {
    Lipschitz,
    Holder,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularityOptions {
    pub target: RegularityTarget,
    /// Time at which time-dependent maps are frozen.
    pub t: f64,
    /// Sampling box; derived from the target when absent.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub mode: PairMode,
    pub seed: u64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scales: usize,
    pub pairs_per_scale: usize,
    pub estimators: Estimators,
    /// Exit 1 when the empirical Lipschitz constant exceeds this.
    pub max_lipschitz: Option<f64>,
    /// Exit 1 when the fitted exponent leaves `[lo, hi]`.
    pub exponent_range: Option<[f64; 2]>,
}

impl Default for RegularityOptions {
    fn default() -> Self {
        Self {
            target: RegularityTarget::H,
            t: 0.0,
            lower: None,
            upper: None,
            mode: PairMode::Mixed,
            seed: 0,
            scale_min: 1e-6,
            scale_max: 1e-1,
            scales: 11,
            pairs_per_scale: 50,
            estimators: Estimators::Both,
            max_lipschitz: None,
            exponent_range: None,
        }
    }
}

/// One explicitly specified inequality instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub t0: f64,
    pub s: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub alpha1: f64,
    pub b: ModulusKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GronwallOptions {
    pub seed: u64,
    /// Size of the randomized family.
    pub count: usize,
    pub instances: Vec<InstanceSpec>,
    pub grid_points: usize,
    /// Picard tolerance for the worst-case solutions.
    pub tol: f64,
    /// Relative slack on the conclusion bound.
    pub slack: f64,
    /// Bound on the relative deviation of the solution for `2c` from twice
    /// the solution for `c`.
    pub scaling_tol: f64,
}

impl Default for GronwallOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 50,
            instances: Vec::new(),
            grid_points: conjlab_core::gronwall::DEFAULT_GRID_POINTS,
            tol: 1e-12,
            slack: 1e-6,
            scaling_tol: 1e-10,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::Config(format!("malformed config: {e}")))
    }

    /// Replaces every command seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.verify.sample.seed = seed;
        self.regularity.seed = seed;
        self.gronwall.seed = seed;
    }

    pub fn system_spec(&self) -> Result<&SystemSpec, Failure> {
        self.system
            .as_ref()
            .ok_or_else(|| Failure::Config("config has no system block".into()))
    }
}

/// A configured system with its resolved dichotomy.
pub struct Resolved {
    pub system: ExampleSystem,
    pub closed_form: Option<ClosedFormConjugacy>,
    pub estimate: Option<DichotomyEstimate>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Failure> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Failure::Config(format!("{what} must be a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn custom_system(
    matrix: &MatrixSpec,
    field: &FieldSpec,
    radial_extension: Option<f64>,
    window: Window,
) -> Result<(MatrixField, NonlinearField), Failure> {
    window.validate()?;
    let a = match matrix {
        MatrixSpec::Constant(rows) => MatrixField::constant(matrix_from_rows(rows, "constant matrix")?, window)?,
        MatrixSpec::DiagonalTable { times, diagonals } => {
            MatrixField::diagonal_table(times.clone(), diagonals.clone(), window)?
        }
        MatrixSpec::Builtin(b) => MatrixField::builtin(b.clone(), window)?,
    };
    let mut f = match field {
        FieldSpec::Zero { dim } => NonlinearField::zero(*dim, window),
        FieldSpec::Builtin(b) => NonlinearField::builtin(b.clone(), window)?,
    };
    if let Some(radius) = radial_extension {
        f = radial_extend(&f, radius)?;
    }
    if f.dim() != a.dim() {
        return Err(Failure::Config(format!(
            "field dimension {} does not match matrix dimension {}",
            f.dim(),
            a.dim()
        )));
    }
    Ok((a, f))
}

fn dichotomy_from(
    spec: &DichotomySpec,
    a: &MatrixField,
    tol: conjlab_core::flows::Tolerance,
) -> Result<(DichotomyData, Option<DichotomyEstimate>), Failure> {
    match spec {
        DichotomySpec::Given(g) => {
            let p0 = matrix_from_rows(&g.p0, "p0")?;
            Ok((DichotomyData::new(g.t0, p0, g.k, g.alpha, g.alpha1)?, None))
        }
        DichotomySpec::Estimate(e) => {
            let p0 = matrix_from_rows(&e.p0, "p0")?;
            if !(e.alpha1_fraction > 0.0 && e.alpha1_fraction < 1.0) {
                return Err(Failure::Config(format!(
                    "alpha1_fraction must lie in (0, 1), got {}",
                    e.alpha1_fraction
                )));
            }
            if !(e.pair_step > 0.0 && e.pair_end > e.pair_start) {
                return Err(Failure::Config("estimation pair grid is empty".into()));
            }
            let pairs = pair_grid(e.pair_start, e.pair_end, e.pair_step);
            let candidates = e.candidates.clone().unwrap_or_else(default_alpha_candidates);
            let est = estimate_dichotomy_constants(a, &p0, e.t0, &pairs, &candidates, tol)?;
            let d = DichotomyData::new(e.t0, p0, est.k, est.alpha, e.alpha1_fraction * est.alpha)?;
            Ok((d, Some(est)))
        }
    }
}

/// Builds the system, substituting the configured dichotomy for the
/// example's own when one is given. Custom systems require one.
pub fn resolve(cfg: &RunConfig) -> Result<Resolved, Failure> {
    let spec = cfg.system_spec()?;
    let (mut system, closed_form) = match spec {
        SystemSpec::UnitBall { eps } => {
            let (s, cf) = unit_ball_example(*eps)?;
            (s, Some(cf))
        }
        SystemSpec::ScalarTime { eps, delta } => {
            let (s, cf) = scalar_time_example(*eps, *delta)?;
            (s, Some(cf))
        }
        SystemSpec::Sawtooth { c } => (sawtooth_example(*c)?, None),
        SystemSpec::Planar { sigma, realization } => (planar_system(*sigma, *realization)?, None),
        SystemSpec::Custom {
            matrix,
            field,
            radial_extension,
            window,
        } => {
            let (a, f) = custom_system(matrix, field, *radial_extension, window.unwrap_or_default())?;
            let spec = cfg
                .dichotomy
                .as_ref()
                .ok_or_else(|| Failure::Config("custom systems need a dichotomy block".into()))?;
            let (d, estimate) = dichotomy_from(spec, &a, cfg.settings.ode_tol)?;
            return Ok(Resolved {
                system: ExampleSystem {
                    matrix: a,
                    field: f,
                    dichotomy: d,
                },
                closed_form: None,
                estimate,
            });
        }
    };
    let mut estimate = None;
    if let Some(spec) = &cfg.dichotomy {
        let (d, est) = dichotomy_from(spec, &system.matrix, cfg.settings.ode_tol)?;
        if d.dim() != system.matrix.dim() {
            return Err(Failure::Config("dichotomy dimension does not match the system".into()));
        }
        system.dichotomy = d;
        estimate = est;
    }
    Ok(Resolved {
        system,
        closed_form,
        estimate,
    })
}

/// Dichotomy block equivalent to resolved data, for the echoed config.
pub fn given_block(d: &DichotomyData) -> DichotomySpec {
    let p = d.p0();
    DichotomySpec::Given(GivenDichotomy {
        t0: d.t0(),
        p0: (0..p.nrows())
            .map(|i| (0..p.ncols()).map(|j| p[(i, j)]).collect())
            .collect(),
        k: d.k(),
        alpha: d.alpha(),
        alpha1: d.alpha1(),
    })
}

/// Materializes the window of a custom system.
pub fn materialize_system(spec: &mut SystemSpec) {
    if let SystemSpec::Custom { window, .. } = spec {
        window.get_or_insert_with(Window::default);
    }
}
