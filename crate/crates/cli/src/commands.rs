//! The five subcommands. Each fills in the effective config and returns
//! its result, exit code and any CSV tables.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use conjlab_core::conjugacy::{verify_conjugacy, ConjugacyProblem, HypothesisReport, MapEvaluator, MapMode};
use conjlab_core::examples::{
    planar_self_test, sawtooth_self_test, scalar_time_self_test, unit_ball_g1, unit_ball_h1, unit_ball_self_test,
    ClosedFormConjugacy,
};
use conjlab_core::flows::{ScalarModulus, Window};
use conjlab_core::gronwall::{
    check_first_inequality, check_second_inequality, random_family, theta1, worst_case_u, CertificateStatus,
    IneqInstance, IneqTemplate, InequalityKind,
};
use conjlab_core::regularity::{
    holder_estimate, lipschitz_estimate, log_scales, theoretical_beta_lambda, PairSampler, RegularityEstimate,
};
use conjlab_core::Result as CoreResult;

use crate::config::{
    given_block, materialize_system, resolve, Estimators, RegularityTarget, Resolved, RunConfig, SystemSpec,
};
use crate::output::{indexed, Cell, Csv};
use crate::Failure;

pub const PASS: u8 = 0;
pub const VIOLATION: u8 = 1;
pub const HYPOTHESIS: u8 = 3;

pub struct Outcome {
    pub code: u8,
    pub summary: String,
    pub result: Value,
    pub warnings: Vec<String>,
    pub tables: Vec<(String, String)>,
}

impl Outcome {
    fn new(code: u8, summary: String, result: Value) -> Self {
        Self {
            code,
            summary,
            result,
            warnings: Vec::new(),
            tables: Vec::new(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Resolves the system and records its materialized blocks in `cfg`.
fn resolve_into(cfg: &mut RunConfig) -> Result<Resolved, Failure> {
    let r = resolve(cfg)?;
    if let Some(spec) = cfg.system.as_mut() {
        materialize_system(spec);
    }
    if cfg.dichotomy.is_none() {
        cfg.dichotomy = Some(given_block(&r.system.dichotomy));
    }
    Ok(r)
}

fn build_problem(cfg: &mut RunConfig, r: &Resolved) -> Result<ConjugacyProblem, Failure> {
    let problem = r.system.problem(cfg.settings.clone())?;
    cfg.settings.horizon = Some(problem.horizon());
    Ok(problem)
}

pub fn hypotheses(cfg: &mut RunConfig) -> Result<Outcome, Failure> {
    let r = resolve_into(cfg)?;
    let problem = build_problem(cfg, &r)?;
    let h = problem.hypotheses()?.clone();
    let code = if h.all_ok() { PASS } else { HYPOTHESIS };
    let summary = format!(
        "theta {:.6} (K theta {:.6}), theta_tilde {:.6}, sup L_alpha(mu) {:.6}",
        h.theta, h.k_theta, h.theta_tilde, h.sup_l_alpha_mu
    );
    let result = json!({ "hypotheses": h, "dichotomy_estimate": r.estimate });
    Ok(Outcome::new(code, summary, result))
}

fn hypothesis_failure(h: &HypothesisReport) -> Outcome {
    Outcome::new(
        HYPOTHESIS,
        format!("hypotheses fail: K theta {:.6}, mu finite {}", h.k_theta, h.mu_finite),
        json!({ "hypotheses": h }),
    )
}

pub fn verify(cfg: &mut RunConfig) -> Result<Outcome, Failure> {
    let r = resolve_into(cfg)?;
    let problem = build_problem(cfg, &r)?;
    let h = problem.hypotheses()?.clone();
    if !h.conjugacy_ok() {
        return Ok(hypothesis_failure(&h));
    }
    let budget = cfg.verify.budget;
    if !(budget >= 0.0) {
        return Err(Failure::Config(format!(
            "verify budget must be nonnegative, got {budget}"
        )));
    }
    let report = verify_conjugacy(&problem, &cfg.verify.sample)?;
    let code = if report.within(budget) { PASS } else { VIOLATION };
    let summary = format!(
        "max residual {:.3e} (budget {:.1e}), offset {:.4} of bound {:.4}, Picard ratio {:.3}",
        report.max_residual(),
        budget,
        report.max_h_offset,
        report.offset_bound,
        report.max_picard_ratio
    );
    let mut out = Outcome::new(code, summary, json!({ "conjugacy": report }));
    if cfg.verify.write_samples {
        let n = problem.dim();
        let mut header = vec!["t".to_string()];
        header.extend(indexed("x", n));
        header.extend(indexed("h", n));
        header.extend(indexed("g", n));
        header.extend(["hg_residual", "gh_residual", "picard_iterations", "picard_ratio"].map(String::from));
        let mut csv = Csv::new(&header);
        for s in &report.samples {
            let mut cells = vec![Cell::Num(s.t)];
            cells.extend(s.x.iter().chain(s.h.iter()).chain(s.g.iter()).map(|&v| Cell::Num(v)));
            cells.extend([
                Cell::Num(s.hg_residual),
                Cell::Num(s.gh_residual),
                Cell::Int(s.picard_iterations),
                Cell::Num(s.picard_ratio),
            ]);
            csv.row(&cells);
        }
        out.tables.push(("map_samples.csv".into(), csv.finish()));
        let header = ["index", "t0", "t1", "h_residual", "g_residual"].map(String::from);
        let mut csv = Csv::new(&header);
        for s in &report.trajectory_samples {
            csv.row(&[
                Cell::Int(s.index),
                Cell::Num(s.t0),
                Cell::Num(s.t1),
                Cell::Num(s.h_residual),
                Cell::Num(s.g_residual),
            ]);
        }
        out.tables.push(("trajectory_samples.csv".into(), csv.finish()));
    }
    Ok(out)
}

type BoxedMap<'a> = Box<dyn Fn(&DVector<f64>) -> CoreResult<DVector<f64>> + Sync + 'a>;

fn unit_ball_eps(cfg: &RunConfig, target: &str) -> Result<f64, Failure> {
    match cfg.system {
        Some(SystemSpec::UnitBall { eps }) => Ok(eps),
        _ => Err(Failure::Config(format!("target {target} needs the unit_ball system"))),
    }
}

fn scalar(f: impl Fn(f64) -> f64 + Sync + 'static) -> BoxedMap<'static> {
    Box::new(move |x: &DVector<f64>| Ok(DVector::from_element(1, f(x[0]))))
}

fn default_box(cfg: &RunConfig, r: Option<&Resolved>) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    let o = &cfg.regularity;
    let dim = r.map_or(1, |r| r.system.matrix.dim());
    let cube = |half: f64, n: usize| (vec![-half; n], vec![half; n]);
    Ok(match o.target {
        RegularityTarget::H1 => cube(1.0, 1),
        RegularityTarget::G1 => {
            let eps = unit_ball_eps(cfg, "g1")?;
            cube(unit_ball_h1(eps, 1.0), 1)
        }
        RegularityTarget::ClosedFormH | RegularityTarget::ClosedFormG => match r.and_then(|r| r.closed_form) {
            Some(ClosedFormConjugacy::ScalarTime { delta, .. }) => {
                let (a, b) = (delta, delta + 4.0);
                if o.target == RegularityTarget::ClosedFormH {
                    (vec![a], vec![b])
                } else {
                    let cf = r.and_then(|r| r.closed_form).expect("checked above");
                    let ya = cf.h(o.t, &DVector::from_element(1, a))[0];
                    let yb = cf.h(o.t, &DVector::from_element(1, b))[0];
                    (vec![ya.min(yb)], vec![ya.max(yb)])
                }
            }
            _ => cube(1.0, dim),
        },
        RegularityTarget::H | RegularityTarget::G | RegularityTarget::Constant => cube(1.0, dim),
    })
}

#[derive(Serialize)]
struct Theory {
    k: f64,
    alpha: f64,
    m: f64,
    c_mu: f64,
    c_r: f64,
    constants: Option<conjlab_core::regularity::TheoreticalConstants>,
    error: Option<String>,
}

fn theory(r: &Resolved, h: Option<&HypothesisReport>) -> Theory {
    let d = &r.system.dichotomy;
    let (k, alpha) = (d.k(), d.alpha());
    let m = r.system.matrix.bound_m();
    let c_mu = r.system.field.mu().window_sup();
    let c_r = r.system.field.r().window_sup();
    let mut constants = theoretical_beta_lambda(k, alpha, m, c_mu, c_r);
    if let (Ok(c), Some(h)) = (&constants, h) {
        if h.theta_tilde_ok {
            constants = c.clone().with_p(k, h.theta_tilde);
        }
    }
    let (constants, error) = match constants {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Theory {
        k,
        alpha,
        m,
        c_mu,
        c_r,
        constants,
        error,
    }
}

pub fn regularity(cfg: &mut RunConfig) -> Result<Outcome, Failure> {
    let resolved = match cfg.system {
        Some(_) => Some(resolve_into(cfg)?),
        None => None,
    };
    let target = cfg.regularity.target;
    let problem = match (&resolved, target) {
        (Some(r), _) => Some(build_problem(cfg, r)?),
        (None, RegularityTarget::Constant) => None,
        (None, _) => {
            return Err(Failure::Config(
                "regularity targets other than constant need a system".into(),
            ))
        }
    };
    let hyp = match &problem {
        Some(p) => Some(p.hypotheses()?.clone()),
        None => None,
    };
    let (lower, upper) = match (&cfg.regularity.lower, &cfg.regularity.upper) {
        (Some(l), Some(u)) => (l.clone(), u.clone()),
        (None, None) => default_box(cfg, resolved.as_ref())?,
        _ => return Err(Failure::Config("give both lower and upper, or neither".into())),
    };
    cfg.regularity.lower = Some(lower.clone());
    cfg.regularity.upper = Some(upper.clone());
    let o = cfg.regularity.clone();
    let sampler = PairSampler::new(lower, upper, o.mode, o.seed)?;
    let dim = sampler.dim();
    let t = o.t;
    let evaluator;
    let map: BoxedMap<'_> = match target {
        RegularityTarget::H1 => {
            let eps = unit_ball_eps(cfg, "h1")?;
            scalar(move |x| unit_ball_h1(eps, x))
        }
        RegularityTarget::G1 => {
            let eps = unit_ball_eps(cfg, "g1")?;
            scalar(move |y| unit_ball_g1(eps, y))
        }
        RegularityTarget::ClosedFormH | RegularityTarget::ClosedFormG => {
            let cf = resolved
                .as_ref()
                .and_then(|r| r.closed_form)
                .ok_or_else(|| Failure::Config("the configured system has no closed-form conjugacy".into()))?;
            if target == RegularityTarget::ClosedFormH {
                Box::new(move |x: &DVector<f64>| Ok(cf.h(t, x)))
            } else {
                Box::new(move |y: &DVector<f64>| Ok(cf.g(t, y)))
            }
        }
        RegularityTarget::H | RegularityTarget::G => {
            let p = problem.as_ref().expect("system present");
            let h = hyp.as_ref().expect("system present");
            if !h.conjugacy_ok() {
                return Ok(hypothesis_failure(h));
            }
            let mode = if target == RegularityTarget::H {
                MapMode::H
            } else {
                MapMode::G
            };
            evaluator = MapEvaluator::new(p, mode)?;
            let ev = &evaluator;
            Box::new(move |x: &DVector<f64>| ev.eval(t, x))
        }
        RegularityTarget::Constant => Box::new(move |_: &DVector<f64>| Ok(DVector::zeros(dim))),
    };
    if let Some(p) = &problem {
        if p.dim() != dim && matches!(target, RegularityTarget::H | RegularityTarget::G) {
            return Err(Failure::Config(format!(
                "sampling box has dimension {dim}, system {}",
                p.dim()
            )));
        }
    }
    let scales = log_scales(o.scale_min, o.scale_max, o.scales)?;
    let lip = match o.estimators {
        Estimators::Lipschitz | Estimators::Both => {
            Some(lipschitz_estimate(&*map, &sampler, &scales, o.pairs_per_scale)?)
        }
        Estimators::Holder => None,
    };
    let hol = match o.estimators {
        Estimators::Holder | Estimators::Both => Some(holder_estimate(&*map, &sampler, &scales, o.pairs_per_scale)?),
        Estimators::Lipschitz => None,
    };
    let mut warnings = Vec::new();
    let mut failures = Vec::new();
    let flat = lip.as_ref().is_some_and(|e| e.flat_map) || hol.as_ref().is_some_and(|e| e.flat_map);
    if flat {
        warnings.push("map looks flat: increments vanish at every scale".to_string());
    } else {
        if let (Some(bound), Some(e)) = (o.max_lipschitz, &lip) {
            let c = e.constant.unwrap_or(f64::INFINITY);
            if !(c <= bound) {
                failures.push(format!("Lipschitz estimate {c} exceeds {bound}"));
            }
        }
        if let (Some([lo, hi]), Some(e)) = (o.exponent_range, &hol) {
            let x = e.exponent.unwrap_or(f64::NAN);
            if !(lo <= x && x <= hi) {
                failures.push(format!("exponent estimate {x} outside [{lo}, {hi}]"));
            }
        }
    }
    let theory = resolved.as_ref().map(|r| theory(r, hyp.as_ref()));
    let mut parts = Vec::new();
    if let Some(c) = lip.as_ref().and_then(|e| e.constant) {
        parts.push(format!("Lipschitz {c:.6}"));
    }
    if let Some(x) = hol.as_ref().and_then(|e| e.exponent) {
        parts.push(format!("exponent {x:.4}"));
    }
    if flat {
        parts.push("flat map".into());
    }
    parts.extend(failures.iter().cloned());
    let code = if failures.is_empty() { PASS } else { VIOLATION };
    let result = json!({
        "lipschitz": lip,
        "holder": hol,
        "flat_map": flat,
        "violations": failures,
        "hypotheses": hyp,
        "theory": theory,
    });
    let mut out = Outcome::new(code, parts.join(", "), result);
    out.warnings = warnings;
    let tables: [(&str, &Option<RegularityEstimate>); 2] = [("lipschitz.csv", &lip), ("holder.csv", &hol)];
    for (name, e) in tables {
        if let Some(e) = e {
            out.tables.push((name.into(), e.to_csv()));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct CertificateRow {
    index: usize,
    source: &'static str,
    kind: Option<InequalityKind>,
    theta1: f64,
    status: &'static str,
    hypothesis_excess: f64,
    bound_margin: f64,
    worst_t: f64,
    iterations: usize,
    scaling_error: f64,
}

fn status_name(s: CertificateStatus) -> &'static str {
    match s {
        CertificateStatus::Pass => "pass",
        CertificateStatus::LemmaViolated => "lemma_violated",
        CertificateStatus::HypothesisNotSatisfied => "hypothesis_not_satisfied",
    }
}

fn certify(
    index: usize,
    source: &'static str,
    tpl: &IneqTemplate,
    tol: f64,
    slack: f64,
) -> CoreResult<Vec<CertificateRow>> {
    let th = theta1(tpl)?;
    if !th.below_one {
        return Ok(vec![CertificateRow {
            index,
            source,
            kind: None,
            theta1: th.value,
            status: "contraction_violated",
            hypothesis_excess: f64::NAN,
            bound_margin: f64::NAN,
            worst_t: th.argmax,
            iterations: 0,
            scaling_error: f64::NAN,
        }]);
    }
    [InequalityKind::First, InequalityKind::Second]
        .into_iter()
        .map(|kind| {
            let w = worst_case_u(tpl, kind, tol)?;
            let inst = IneqInstance::new(tpl.clone(), w.u.clone())?;
            let cert = match kind {
                InequalityKind::First => check_first_inequality(&inst, slack)?,
                InequalityKind::Second => check_second_inequality(&inst, slack)?,
            };
            let doubled = worst_case_u(&tpl.clone().with_c(2.0 * tpl.c())?, kind, 0.1 * tol)?;
            let scaling = doubled
                .u
                .iter()
                .zip(&w.u)
                .map(|(u2, u)| (u2 - 2.0 * u).abs() / u.abs().max(1.0))
                .fold(0.0, f64::max);
            Ok(CertificateRow {
                index,
                source,
                kind: Some(kind),
                theta1: th.value,
                status: status_name(cert.status),
                hypothesis_excess: cert.hypothesis_excess,
                bound_margin: cert.bound_margin,
                worst_t: cert.worst_t,
                iterations: w.iterations,
                scaling_error: scaling,
            })
        })
        .collect()
}

pub fn gronwall(cfg: &mut RunConfig) -> Result<Outcome, Failure> {
    let o = cfg.gronwall.clone();
    if !(o.tol > 0.0 && o.slack >= 0.0 && o.scaling_tol >= 0.0) {
        return Err(Failure::Config(
            "gronwall tol must be positive, slack and scaling_tol nonnegative".into(),
        ));
    }
    let mut templates: Vec<(&'static str, IneqTemplate)> = random_family(o.seed, o.count)?
        .into_iter()
        .map(|t| Ok(("random", t.with_grid_points(o.grid_points)?)))
        .collect::<CoreResult<_>>()?;
    for s in &o.instances {
        let b = ScalarModulus::new(s.b.clone(), Window::new(s.t0, s.s))?;
        let t = IneqTemplate::new(s.t0, s.s, s.c, s.c1, s.c2, s.alpha, s.alpha1, b)?.with_grid_points(o.grid_points)?;
        templates.push(("explicit", t));
    }
    let rows: Vec<CertificateRow> = templates
        .par_iter()
        .enumerate()
        .map(|(i, (src, t))| certify(i, src, t, o.tol, o.slack))
        .collect::<CoreResult<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let contraction = rows.iter().filter(|r| r.status == "contraction_violated").count();
    let failed = rows
        .iter()
        .filter(|r| r.kind.is_some() && (r.status != "pass" || !(r.scaling_error <= o.scaling_tol)))
        .count();
    let code = if contraction > 0 {
        HYPOTHESIS
    } else if failed > 0 {
        VIOLATION
    } else {
        PASS
    };
    let min_margin = rows
        .iter()
        .filter(|r| r.kind.is_some())
        .map(|r| r.bound_margin)
        .fold(f64::INFINITY, f64::min);
    let max_scaling = rows
        .iter()
        .filter(|r| r.kind.is_some())
        .map(|r| r.scaling_error)
        .fold(0.0, f64::max);
    let summary = format!(
        "{} instances, {} certificates failed, {} contraction violations, smallest margin {:.3e}, scaling {:.1e}",
        templates.len(),
        failed,
        contraction,
        min_margin,
        max_scaling
    );
    let mut csv = Csv::new(
        &[
            "index",
            "source",
            "kind",
            "theta1",
            "status",
            "hypothesis_excess",
            "bound_margin",
            "worst_t",
            "iterations",
            "scaling_error",
        ]
        .map(String::from),
    );
    for r in &rows {
        let kind = match r.kind {
            Some(InequalityKind::First) => "first",
            Some(InequalityKind::Second) => "second",
            None => "",
        };
        csv.row(&[
            Cell::Int(r.index),
            Cell::Text(r.source),
            Cell::Text(kind),
            Cell::Num(r.theta1),
            Cell::Text(r.status),
            Cell::Num(r.hypothesis_excess),
            Cell::Num(r.bound_margin),
            Cell::Num(r.worst_t),
            Cell::Int(r.iterations),
            Cell::Num(r.scaling_error),
        ]);
    }
    let result = json!({
        "instances": templates.len(),
        "failed_certificates": failed,
        "contraction_violations": contraction,
        "smallest_margin": min_margin,
        "max_scaling_error": max_scaling,
        "certificates": to_value(&rows),
    });
    let mut out = Outcome::new(code, summary, result);
    out.tables.push(("certificates.csv".into(), csv.finish()));
    Ok(out)
}

pub fn example(cfg: &mut RunConfig) -> Result<Outcome, Failure> {
    let spec = cfg.system_spec()?.clone();
    let report = match spec {
        SystemSpec::UnitBall { eps } => unit_ball_self_test(eps)?,
        SystemSpec::ScalarTime { eps, delta } => scalar_time_self_test(eps, delta)?,
        SystemSpec::Sawtooth { c } => sawtooth_self_test(c)?,
        SystemSpec::Planar { sigma, realization } => planar_self_test(sigma, realization)?,
        SystemSpec::Custom { .. } => return Err(Failure::Config("custom systems have no oracle self-test".into())),
    };
    let mut warnings = Vec::new();
    if cfg.dichotomy.is_some() {
        warnings.push("the dichotomy block is not used by the example self-tests".into());
    }
    let code = if report.passed() { PASS } else { VIOLATION };
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let summary = if failed.is_empty() {
        format!("{}: {} oracle checks pass", report.example, report.checks.len())
    } else {
        format!("{}: failed {}", report.example, failed.join(", "))
    };
    let mut out = Outcome::new(code, summary, json!({ "oracles": report }));
    out.warnings = warnings;
    Ok(out)
}
