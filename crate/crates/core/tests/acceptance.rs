//! End-to-end acceptance suite: each criterion prints one PASS/FAIL line.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conjlab_core::conjugacy::{decay_check, verify_conjugacy, ConjugacySettings, DecayDirection, SampleSpec};
use conjlab_core::dichotomy::{coppel_bound, l_alpha, sup_l_alpha};
use conjlab_core::examples::{
    planar_example, sawtooth_modulus, scalar_time_example, unit_ball_g1, unit_ball_h1, PlanarRealization,
};
use conjlab_core::flows::{uniform_grid, ModulusKind, ScalarModulus, Window};
use conjlab_core::gronwall::{
    check_first_inequality, check_second_inequality, random_family, theta1, worst_case_u, IneqInstance, InequalityKind,
};
use conjlab_core::regularity::{
    holder_estimate, lipschitz_estimate, log_scales, theoretical_beta_lambda, theoretical_p, PairMode, PairSampler,
};
use conjlab_core::Result;

type Outcome = std::result::Result<Vec<String>, String>;
type Criterion = fn() -> Result<Outcome>;

fn expect(ok: bool, what: String, failures: &mut Vec<String>) {
    if !ok {
        failures.push(what);
    }
}

fn finish(notes: Vec<String>, failures: Vec<String>) -> Outcome {
    if failures.is_empty() {
        Ok(notes)
    } else {
        Err(failures.join("; "))
    }
}

fn lift(r: Result<Outcome>) -> Outcome {
    r.unwrap_or_else(|e| Err(format!("error: {e}")))
}

fn scalar<'a>(f: impl Fn(f64) -> f64 + Sync + 'a) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync + 'a {
    move |x: &DVector<f64>| Ok(DVector::from_element(1, f(x[0])))
}

fn closed_form_oracles() -> Result<Outcome> {
    let eps = 0.25;
    let mut fail = Vec::new();
    let grid = (0..2001).map(|i| -1.0 + 2.0 * i as f64 / 2000.0);
    let rt = grid
        .map(|x| (unit_ball_g1(eps, unit_ball_h1(eps, x)) - x).abs())
        .fold(0.0, f64::max);
    expect(rt <= 1e-10, format!("G1(H1(x)) residual {rt:e}"), &mut fail);
    let h1 = unit_ball_h1(eps, 1.0);
    expect(h1 == 0.75, format!("H1(1) = {h1}"), &mut fail);
    let h = 1e-12;
    let right = unit_ball_h1(eps, h) / h;
    let left = unit_ball_h1(eps, -h) / -h;
    let left_exact = 0.75f64.powf(1.5);
    expect(right.abs() <= 1e-3, format!("right slope {right:e}"), &mut fail);
    expect(
        (left - left_exact).abs() <= 1e-3,
        format!("left slope {left} vs {left_exact}"),
        &mut fail,
    );
    let pushed = (0..=1000)
        .map(|i| {
            let t = i as f64 / 100.0;
            (unit_ball_h1(eps, (-0.75 * t).exp()) - 0.75 * (-t).exp()).abs()
        })
        .fold(0.0, f64::max);
    expect(
        pushed <= 1e-10,
        format!("pushed trajectory residual {pushed:e}"),
        &mut fail,
    );
    Ok(finish(
        vec![format!(
            "roundtrip {rt:.1e}, slopes ({right:.1e}, {left:.4}), pushed {pushed:.1e}"
        )],
        fail,
    ))
}

fn regularity_anchors() -> Result<Outcome> {
    let eps = 0.25;
    let mut fail = Vec::new();
    let h1 = scalar(move |x| unit_ball_h1(eps, x));
    let g1 = scalar(move |y| unit_ball_g1(eps, y));
    let scales = log_scales(1e-6, 1e-1, 11)?;
    let mixed = PairSampler::new(vec![-1.0], vec![1.0], PairMode::Mixed, 2024)?;
    let lip = lipschitz_estimate(&h1, &mixed, &scales, 400)?
        .constant
        .unwrap_or(f64::NAN);
    expect(lip <= 1.0 + 1e-3, format!("H1 Lipschitz {lip}"), &mut fail);
    let y_range = unit_ball_h1(eps, 1.0);
    let anchored = PairSampler::new(vec![-y_range], vec![y_range], PairMode::OriginAnchored, 7)?;
    let g_exp = holder_estimate(&g1, &anchored, &scales, 20)?
        .exponent
        .unwrap_or(f64::NAN);
    expect((g_exp - 0.75).abs() <= 0.02, format!("G1 exponent {g_exp}"), &mut fail);
    let anchored_h = PairSampler::new(vec![-1.0], vec![1.0], PairMode::OriginAnchored, 8)?;
    let h_exp = holder_estimate(&h1, &anchored_h, &scales, 20)?
        .exponent
        .unwrap_or(f64::NAN);
    expect((h_exp - 1.0).abs() <= 0.02, format!("H1 exponent {h_exp}"), &mut fail);
    Ok(finish(
        vec![format!(
            "Lipschitz(H1) {lip:.6}, exponent(G1) {g_exp:.4}, exponent(H1) {h_exp:.4}"
        )],
        fail,
    ))
}

fn time_dependent_anchors() -> Result<Outcome> {
    let delta = 0.5;
    let (_, cf) = scalar_time_example(0.1, delta)?;
    let mut fail = Vec::new();
    let at = |t: f64, x: f64| cf.h(t, &DVector::from_element(1, x))[0];
    let h0 = at(0.0, 1.0);
    expect(h0 == 0.5, format!("H(0, 1) = {h0}"), &mut fail);
    // d/dt H(t, x(t)) = -e^t/2 - x'/x² along x = 2/(e^t + e^{-t})
    let mut res = 0.0f64;
    for i in 0..=1000 {
        let t = -5.0 + i as f64 / 100.0;
        let x = 2.0 / (t.exp() + (-t).exp());
        let dx = -2.0 * (t.exp() - (-t).exp()) / (t.exp() + (-t).exp()).powi(2);
        let y = at(t, x);
        let dy = -0.5 * t.exp() - dx / (x * x);
        res = res.max((dy + y).abs());
    }
    expect(res <= 1e-10, format!("pushed-curve residual {res:e}"), &mut fail);
    let pts: Vec<f64> = (0..300)
        .map(|i| delta + 9.5 * i as f64 / 299.0)
        .flat_map(|x| [x, -x])
        .collect();
    let mut lip = 0.0f64;
    for (i, &a) in pts.iter().enumerate() {
        for &b in &pts[i + 1..] {
            lip = lip.max((at(1.3, a) - at(1.3, b)).abs() / (a - b).abs());
        }
    }
    let cap = 1.0 / (delta * delta) + 1e-6;
    expect(lip <= cap, format!("Lipschitz ratio {lip} > {cap}"), &mut fail);
    Ok(finish(
        vec![format!("H(0,1) {h0}, residual {res:.1e}, Lipschitz {lip:.6}")],
        fail,
    ))
}

fn planar_pipeline() -> Result<Outcome> {
    let sys = planar_example(0.1, PlanarRealization::Tanh)?;
    let problem = sys.problem(ConjugacySettings::default())?;
    let spec = SampleSpec {
        seed: 42,
        points: 100,
        t_min: -2.0,
        t_max: 2.0,
        radius: 2.0,
        trajectories: 20,
        horizon: 3.0,
        checkpoints: 6,
    };
    let r = verify_conjugacy(&problem, &spec)?;
    let mut fail = Vec::new();
    let cap = 0.2 * 2f64.sqrt() + 1e-3;
    expect(r.max_h_offset <= cap, format!("H offset {}", r.max_h_offset), &mut fail);
    expect(
        r.max_hg_residual <= 5e-3,
        format!("H∘G residual {:e}", r.max_hg_residual),
        &mut fail,
    );
    expect(
        r.max_gh_residual <= 5e-3,
        format!("G∘H residual {:e}", r.max_gh_residual),
        &mut fail,
    );
    let mapping = r.max_h_mapping_residual.max(r.max_g_mapping_residual);
    expect(
        mapping <= 5e-3,
        format!("solution-mapping residual {mapping:e}"),
        &mut fail,
    );
    expect(
        r.max_picard_ratio <= 0.25,
        format!("Picard ratio {}", r.max_picard_ratio),
        &mut fail,
    );
    Ok(finish(
        vec![format!(
            "offset {:.4} (cap {cap:.4}), compositions ({:.1e}, {:.1e}), mapping {mapping:.1e}, Picard ratio {:.3}",
            r.max_h_offset, r.max_hg_residual, r.max_gh_residual, r.max_picard_ratio
        )],
        fail,
    ))
}

fn decay_estimates() -> Result<Outcome> {
    let sys = planar_example(0.1, PlanarRealization::Tanh)?;
    let problem = sys.problem(ConjugacySettings::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fail = Vec::new();
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let t0 = rng.gen_range(-2.0..2.0);
        let (a, b) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        for dir in [DecayDirection::Forward, DecayDirection::Backward] {
            let (x, xb) = match dir {
                DecayDirection::Forward => (DVector::from_vec(vec![a, 0.0]), DVector::from_vec(vec![b, 0.0])),
                DecayDirection::Backward => (DVector::from_vec(vec![0.0, a]), DVector::from_vec(vec![0.0, b])),
            };
            let rep = decay_check(&problem, t0, &x, &xb, 6.0, dir)?;
            worst = worst.min(rep.min_margin);
            expect(
                rep.passed,
                format!("{dir:?} pair at t0={t0:.3}: margin {:e}", rep.min_margin),
                &mut fail,
            );
        }
    }
    Ok(finish(vec![format!("40 checks, smallest margin {worst:.3e}")], fail))
}

fn dichotomic_inequalities() -> Result<Outcome> {
    let family = random_family(1, 50)?;
    let mut fail = Vec::new();
    let mut worst_margin = f64::INFINITY;
    let mut scaling = 0.0f64;
    for (i, tpl) in family.iter().enumerate() {
        let th = theta1(tpl)?.value;
        expect(th <= 0.9 + 1e-9, format!("instance {i}: θ1 {th}"), &mut fail);
        for kind in [InequalityKind::First, InequalityKind::Second] {
            let w = worst_case_u(tpl, kind, 1e-12)?;
            let inst = IneqInstance::new(tpl.clone(), w.u.clone())?;
            let cert = match kind {
                InequalityKind::First => check_first_inequality(&inst, 1e-6)?,
                InequalityKind::Second => check_second_inequality(&inst, 1e-6)?,
            };
            worst_margin = worst_margin.min(cert.bound_margin);
            expect(
                cert.hypothesis_ok && cert.bound_margin >= -1e-6,
                format!(
                    "instance {i} {kind:?}: {:?} margin {:e}",
                    cert.status, cert.bound_margin
                ),
                &mut fail,
            );
            let doubled = worst_case_u(&tpl.clone().with_c(2.0 * tpl.c())?, kind, 1e-13)?;
            for (u2, u) in doubled.u.iter().zip(&w.u) {
                scaling = scaling.max((u2 - 2.0 * u).abs() / u.abs().max(1.0));
            }
        }
    }
    expect(scaling <= 1e-10, format!("linearity in c {scaling:e}"), &mut fail);
    Ok(finish(
        vec![format!(
            "100 certificates, smallest margin {worst_margin:.3e}, scaling {scaling:.1e}"
        )],
        fail,
    ))
}

fn kernel_anchors() -> Result<Outcome> {
    let mut fail = Vec::new();
    let w = Window::symmetric(60.0);
    let mut worst_const = 0.0f64;
    for (b, alpha) in [(0.3, 1.0), (1.0, 0.5), (2.5, 2.0)] {
        let m = ScalarModulus::constant(b, w)?;
        for t in [-3.0, 0.0, 7.5] {
            let v = l_alpha(&m, alpha, t, 40.0 / alpha)?.value;
            worst_const = worst_const.max((v - 2.0 * b / alpha).abs());
        }
    }
    expect(
        worst_const <= 1e-9,
        format!("constant kernel error {worst_const:e}"),
        &mut fail,
    );
    let builtins = vec![
        ModulusKind::Constant(0.4),
        ModulusKind::Table {
            times: vec![-5.0, -1.0, 0.0, 2.0, 6.0],
            values: vec![0.1, 1.2, 0.0, 0.7, 0.3],
        },
        ModulusKind::Sawtooth { c: 1.0 },
        ModulusKind::Logistic { scale: 0.8 },
        ModulusKind::Weighted {
            inner: Box::new(ModulusKind::Sawtooth { c: 0.5 }),
            eps: 0.1,
        },
        ModulusKind::Scaled {
            inner: Box::new(ModulusKind::Logistic { scale: 1.0 }),
            factor: 1.5,
        },
    ];
    let grid = uniform_grid(-20.0, 20.0, 0.25);
    let mut min_gap = f64::INFINITY;
    for kind in builtins {
        let m = ScalarModulus::new(kind.clone(), w)?;
        for alpha in [0.5, 1.0, 2.0] {
            let sup = sup_l_alpha(&m, alpha, &grid, 30.0)?.value;
            let cb = coppel_bound(&m, alpha);
            min_gap = min_gap.min(cb - sup);
            expect(
                sup <= cb,
                format!("Coppel bound {cb} < sup {sup} for {kind:?}, α={alpha}"),
                &mut fail,
            );
        }
    }
    let c = 1.0;
    let saw = sawtooth_modulus(c, w)?;
    let mut window_max = 0.0f64;
    for i in 0..=5000 {
        let t = i as f64 / 100.0;
        window_max = window_max.max(saw.integral(t, t + 1.0));
    }
    expect(
        window_max <= c,
        format!("sawtooth window integral {window_max}"),
        &mut fail,
    );
    let peak = saw.value(50.0 + 1.0 / 100.0);
    expect(peak > 10.0 * c, format!("sawtooth peak {peak}"), &mut fail);
    Ok(finish(
        vec![format!(
            "constant error {worst_const:.1e}, smallest Coppel gap {min_gap:.3e}, window max {window_max:.4}, peak {peak}"
        )],
        fail,
    ))
}

fn theoretical_constants() -> Result<Outcome> {
    let mut fail = Vec::new();
    let p = theoretical_p(1.0, 0.25)?;
    expect(p == 5.0 / 3.0, format!("p = {p:.17}"), &mut fail);
    for alpha in [0.5, 1.0, 2.0, 3.0] {
        for m in [0.25, 0.5, 1.0, 2.0, 3.0] {
            if alpha >= m {
                let c = theoretical_beta_lambda(1.0, alpha, m, 1.0, 0.01)?;
                expect(!c.lambda_feasible, format!("α={alpha}, M={m} not flagged"), &mut fail);
            }
        }
    }
    let (k, alpha, m, c_mu, c_r) = (1.0, 1.0, 2.0, 1.0, 0.01);
    let c = theoretical_beta_lambda(k, alpha, m, c_mu, c_r)?;
    let lambda_rhs = 3.0 / (1.0 - (-alpha).exp()) + 3.0 / (2.0 * (1.0 - (alpha - m).exp()));
    let third = 2.0 * k * c_r / (1.0 - (-(alpha - m * c.beta)).exp());
    expect(
        c.lambda > lambda_rhs,
        format!("λ {} <= {lambda_rhs}", c.lambda),
        &mut fail,
    );
    expect(
        c.beta > 0.0 && c.beta < alpha / (m + c_mu),
        format!("β {}", c.beta),
        &mut fail,
    );
    expect(
        third > 0.0 && third < 1.0 / 3.0,
        format!("third condition {third}"),
        &mut fail,
    );
    Ok(finish(
        vec![format!(
            "p {p:.17}, λ {:.4}, β {:.4}, third {third:.4}",
            c.lambda, c.beta
        )],
        fail,
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<(&str, Criterion)> = vec![
        ("closed-form oracles of the unit-ball example", closed_form_oracles),
        ("Lipschitz and Hölder anchors of the unit-ball maps", regularity_anchors),
        ("time-dependent scalar example anchors", time_dependent_anchors),
        ("numerical conjugacy on the planar saddle", planar_pipeline),
        ("decay of bounded half-line solutions", decay_estimates),
        ("dichotomic integral inequalities", dichotomic_inequalities),
        ("exponential-kernel transform anchors", kernel_anchors),
        ("theoretical regularity constants", theoretical_constants),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = std::time::Instant::now();
        match lift(run()) {
            Ok(notes) => println!(
                "PASS {} {name} [{:.1}s]: {}",
                i + 1,
                start.elapsed().as_secs_f64(),
                notes.join("; ")
            ),
            Err(why) => {
                println!("FAIL {} {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
