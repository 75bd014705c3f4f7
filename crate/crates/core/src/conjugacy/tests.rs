use nalgebra::{DMatrix, DVector};

use super::*;
use crate::dichotomy::DichotomyData;
use crate::flows::{FieldBuiltin, MatrixField, NonlinearField, Window};

fn saddle(field: FieldBuiltin, settings: ConjugacySettings) -> ConjugacyProblem {
    let w = Window::symmetric(20.0);
    let a = MatrixField::diagonal(&[-1.0, 1.0], w).unwrap();
    let f = NonlinearField::builtin(field, w).unwrap();
    let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let d = DichotomyData::new(0.0, p0, 1.0, 1.0, 0.5).unwrap();
    ConjugacyProblem::new(a, f, d, settings).unwrap()
}

fn planar(sigma: f64) -> ConjugacyProblem {
    saddle(FieldBuiltin::PlanarTanh { sigma }, ConjugacySettings::default())
}

fn linear_free() -> ConjugacyProblem {
    let w = Window::symmetric(20.0);
    let a = MatrixField::diagonal(&[-1.0, 1.0], w).unwrap();
    let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let d = DichotomyData::new(0.0, p0, 1.0, 1.0, 0.5).unwrap();
    ConjugacyProblem::new(a, NonlinearField::zero(2, w), d, ConjugacySettings::default()).unwrap()
}

fn v(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

#[test]
fn planar_hypotheses_use_closed_form() {
    let p = planar(0.1);
    let h = p.hypotheses().unwrap();
    assert!((h.theta - 0.2).abs() < 1e-15);
    assert!((h.sup_l_alpha_mu - 0.2 * 2f64.sqrt()).abs() < 1e-15);
    assert!((h.theta_tilde - 0.4).abs() < 1e-15);
    assert_eq!(h.autonomous_shortcut, Some(0.2));
    assert!(h.all_ok() && h.closed_form);
}

#[test]
fn zero_field_passes_everything() {
    let p = linear_free();
    let h = p.hypotheses().unwrap();
    assert_eq!(h.theta, 0.0);
    assert!(h.all_ok());
    let x = v(0.3, -1.2);
    assert_eq!(h_eval(&p, 0.4, &x).unwrap(), x);
    let g = solve_g(&p, 0.4, 0.4, &x).unwrap();
    assert_eq!(g.iterations, 1);
    assert_eq!(g.value, DVector::zeros(2));
}

#[test]
fn strong_lipschitz_constant_refuses_g() {
    let p = saddle(FieldBuiltin::PlanarTanh { sigma: 0.6 }, ConjugacySettings::default());
    let h = p.hypotheses().unwrap();
    assert!((h.theta - 1.2).abs() < 1e-15);
    assert!(!h.theta_ok);
    assert!(matches!(
        solve_g(&p, 0.0, 0.0, &v(0.1, 0.1)),
        Err(Error::HypothesisViolated { .. })
    ));
    assert!(MapEvaluator::new(&p, MapMode::G).is_err());
}

#[test]
fn unbounded_mu_is_flagged() {
    let p = saddle(
        FieldBuiltin::Linear { gain: 0.1, dim: 2 },
        ConjugacySettings {
            horizon: Some(10.0),
            ..Default::default()
        },
    );
    let h = p.hypotheses().unwrap();
    assert!(!h.mu_finite);
    assert!(h.theta_ok);
    assert!(!h.conjugacy_ok());
}

#[test]
fn h_offset_respects_bound_even_far_out() {
    let p = planar(0.1);
    let bound = 0.2 * 2f64.sqrt() * (1.0 + 1e-3);
    for x in [v(0.5, 0.5), v(-1.0, 2.0), v(10.0, 0.0), v(0.0, -10.0)] {
        let h = solve_h(&p, 0.3, 0.3, &x).unwrap();
        assert!(h.norm() <= bound, "{} > {bound}", h.norm());
    }
}

#[test]
fn h_is_invariant_along_trajectories() {
    let p = planar(0.1);
    let (tau, xi) = (0.0, v(0.7, -0.4));
    let traj = integrate(p.matrix(), p.field(), tau, &xi, (0.0, 1.5), p.settings().ode_tol).unwrap();
    let t = 1.5;
    let direct = solve_h(&p, t, tau, &xi).unwrap();
    let moved = solve_h(&p, t, t, &traj.eval(t).unwrap()).unwrap();
    assert!((direct - moved).norm() < 1e-6);
}

#[test]
fn g_contracts_at_rate_k_theta() {
    let p = planar(0.1);
    for (t, y) in [(0.0, v(1.0, 1.0)), (-1.5, v(-2.0, 0.3)), (1.2, v(0.0, 1.7))] {
        let g = solve_g(&p, t, t, &y).unwrap();
        assert!(contraction_ratio(&g.changes) <= 0.2 + 1e-3, "{:?}", g.changes);
        let first = g.changes[0];
        let bound = ((p.settings().picard_tol / first).ln() / 0.2f64.ln()).ceil() as usize + 1;
        assert!(g.iterations <= bound);
        assert!(g.value.norm() <= 0.2 * 2f64.sqrt() * (1.0 + 1e-3));
    }
}

#[test]
fn maps_are_mutually_inverse() {
    let p = planar(0.1);
    let t = 0.7;
    let x = v(0.8, -1.1);
    let h = h_eval(&p, t, &x).unwrap();
    let back = g_eval(&p, t, &h).unwrap();
    assert!((back - &x).norm() < 5e-4);
    let g = g_eval(&p, t, &x).unwrap();
    let fwd = h_eval(&p, t, &g).unwrap();
    assert!((fwd - &x).norm() < 5e-4);
}

#[test]
fn evaluator_memoizes() {
    let p = planar(0.1);
    let m = MapEvaluator::new(&p, MapMode::H).unwrap();
    let x = v(0.2, 0.1);
    let a = m.eval(0.0, &x).unwrap();
    let b = m.eval(0.0, &x).unwrap();
    assert_eq!(a, b);
    assert_eq!(m.memo_len(), 1);
}

#[test]
fn bounded_forward_without_field_is_linear_flow() {
    let p = linear_free();
    let s = solve_bounded_forward(&p, 0.0, &v(0.5, 0.0), 4.0, 1e-10).unwrap();
    for (t, x) in s.trajectory.times().iter().zip(s.trajectory.states()) {
        assert!((x[0] - 0.5 * (-t).exp()).abs() < 1e-14);
        assert!(x[1].abs() < 1e-14);
    }
}

#[test]
fn bounded_forward_reintegrates() {
    let p = planar(0.1);
    let s = solve_bounded_forward(&p, 0.0, &v(0.5, 0.0), 8.0, 1e-10).unwrap();
    let traj = &s.trajectory;
    assert!(traj.states().iter().all(|x| x.norm() < 1.0));
    assert!((traj.states()[0][0] - 0.5).abs() < 1e-12);
    let direct = integrate(
        p.matrix(),
        p.field(),
        0.0,
        &traj.states()[0],
        (0.0, 3.0),
        p.settings().ode_tol,
    )
    .unwrap();
    for &t in traj.times().iter().filter(|&&t| t <= 3.0) {
        let d = (direct.eval(t).unwrap() - traj.eval(t).unwrap()).norm();
        assert!(d < 1e-5, "t={t} d={d}");
    }
}

#[test]
fn bounded_backward_reintegrates() {
    let p = planar(0.1);
    let s = solve_bounded_backward(&p, 0.0, &v(0.0, 0.5), 8.0, 1e-10).unwrap();
    let traj = &s.trajectory;
    assert_eq!(traj.end(), 0.0);
    assert!((traj.states().last().unwrap()[1] - 0.5).abs() < 1e-12);
    let x0 = traj.states().last().unwrap().clone();
    let direct = integrate(p.matrix(), p.field(), 0.0, &x0, (-3.0, 0.0), p.settings().ode_tol).unwrap();
    for &t in traj.times().iter().filter(|&&t| t >= -3.0) {
        let d = (direct.eval(t).unwrap() - traj.eval(t).unwrap()).norm();
        assert!(d < 1e-5, "t={t} d={d}");
    }
}

#[test]
fn bounded_solution_rejects_off_range_data() {
    let p = planar(0.1);
    assert!(solve_bounded_forward(&p, 0.0, &v(0.5, 0.1), 4.0, 1e-8).is_err());
    assert!(solve_bounded_backward(&p, 0.0, &v(0.5, 0.1), 4.0, 1e-8).is_err());
}

#[test]
fn decay_bounds_hold_both_ways() {
    let p = planar(0.1);
    let f = decay_check(&p, 0.0, &v(0.6, 0.0), &v(-0.3, 0.0), 6.0, DecayDirection::Forward).unwrap();
    assert!(f.passed, "{f:?}");
    let b = decay_check(&p, 0.0, &v(0.0, 0.6), &v(0.0, -0.3), 6.0, DecayDirection::Backward).unwrap();
    assert!(b.passed, "{b:?}");
    let same = decay_check(&p, 0.0, &v(0.4, 0.0), &v(0.4, 0.0), 6.0, DecayDirection::Forward).unwrap();
    assert_eq!(same.initial_distance, 0.0);
    assert!(same.min_margin >= 0.0);
}

#[test]
fn probe_decays_to_zero() {
    let p = planar(0.1);
    let reference = solve_bounded_forward(&p, 0.0, &v(0.5, 0.0), 6.0, 1e-10)
        .unwrap()
        .trajectory;
    let r = zero_uniqueness_probe(&p, &reference, &v(0.1, 0.0), 1e-9).unwrap();
    assert!(r.converged);
    assert!(r.max_ratio <= 0.2 + 1e-9, "{r:?}");
    let zero = zero_uniqueness_probe(&p, &reference, &v(0.0, 0.0), 1e-9).unwrap();
    assert_eq!(zero.iterations, 0);
    let free = linear_free();
    let one = zero_uniqueness_probe(&free, &reference, &v(0.3, 0.3), 1e-9).unwrap();
    assert_eq!(one.iterations, 1);
}

#[test]
fn verification_of_the_linear_system_is_exact() {
    let p = linear_free();
    let spec = SampleSpec {
        points: 10,
        trajectories: 3,
        ..Default::default()
    };
    let r = verify_conjugacy(&p, &spec).unwrap();
    assert_eq!(r.max_hg_residual, 0.0);
    assert_eq!(r.max_gh_residual, 0.0);
    assert!(r.max_h_mapping_residual < 1e-6);
    assert!(r.max_g_mapping_residual < 1e-6);
}
