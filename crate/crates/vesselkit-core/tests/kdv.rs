use vesselkit_core::algebra::{c, max_abs, VesselParams, I};
use vesselkit_core::kdv::*;
use vesselkit_core::spectrum::{Atom, SpectralMeasure};
use vesselkit_core::vessel::*;
use vesselkit_core::Error;

fn sl() -> VesselParams {
    VesselParams::sturm_liouville()
}

fn atom(mu: f64, w11: f64, w12: f64, w22: f64) -> Atom {
    Atom { mu, w11, w12, w22 }
}

fn one_atom() -> SpectralMeasure {
    SpectralMeasure::from_atoms(vec![atom(1.0, 0.1, 0.0, 0.1)]).unwrap()
}

fn two_atoms() -> SpectralMeasure {
    SpectralMeasure::from_atoms(vec![atom(1.0, 0.1, 0.0, 0.1), atom(0.5, 0.05, 0.02, 0.1)]).unwrap()
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[test]
fn initial_row_matches_static_snapshots() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    let xs = grid(-3.0, 3.0, 25);
    let f = q_field(&v, &xs, &[0.0]).unwrap();
    for (ix, &x) in xs.iter().enumerate() {
        let s = snapshot(&v, x).unwrap();
        assert!((f.q[ix] - s.q.unwrap()).norm() < 1e-10, "x={x}");
        assert!((f.tau[ix] - s.tau).norm() < 1e-10 * s.tau.norm().max(1.0), "x={x}");
    }
}

#[test]
fn empty_measure_gives_zero_field() {
    let v = build_node(&SpectralMeasure::empty(), &sl()).unwrap();
    let f = q_field(&v, &grid(-1.0, 1.0, 11), &grid(-0.5, 0.5, 6)).unwrap();
    assert_eq!(f.omega_count(), f.q.len());
    assert!(f.q.iter().all(|q| *q == c(0.0, 0.0)));
    assert_eq!(kdv_residual(&f).unwrap().max, 0.0);
}

#[test]
fn eigen_evaluator_agrees_with_sylvester_snapshots() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    let fast = FieldEvaluator::new(&v);
    let slow = FieldEvaluator::sylvester_only(&v);
    assert!(fast.eigen.is_some());
    for (x, t) in [(-4.0, 0.9), (-1.1, -0.3), (0.0, 0.0), (2.5, 0.7), (4.8, -1.0)] {
        let (a, b) = (fast.point(x, t).unwrap(), slow.point(x, t).unwrap());
        assert!((a.q - b.q).norm() < 1e-12, "({x},{t}): {} vs {}", a.q, b.q);
        assert!((a.tau - b.tau).norm() < 1e-12 * b.tau.norm().max(1.0));
    }
}

#[test]
fn time_generators_commute() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    assert!(generator_commutator(&v) < 1e-13);
    for (x, t) in [(0.7, 0.4), (-1.5, 0.9)] {
        let a = evolve_c_t(&v, x, t).unwrap();
        let b = evolve_c_two_stage(&v, x, t).unwrap();
        assert!(max_abs(&(a - b)) < 1e-9);
    }
}

#[test]
fn single_atom_input_is_a_translation() {
    let v = build_node(&one_atom(), &sl()).unwrap();
    for (x, t) in [(0.4, 0.3), (-2.0, 1.1)] {
        let a = evolve_b_t(&v, x, t);
        let b = evolve_b(&v, x - t);
        assert!(max_abs(&(a - b)) < 1e-14);
    }
}

#[test]
fn input_time_flow_converges_at_second_order() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    let (x, t) = (0.6, 0.35);
    let res = |h: f64| {
        let bt = (evolve_b_t(&v, x, t + h) - evolve_b_t(&v, x, t - h)) / c(2.0 * h, 0.0);
        let bx = (evolve_b_t(&v, x + h, t) - evolve_b_t(&v, x - h, t)) / c(2.0 * h, 0.0);
        max_abs(&(bt - &v.a * bx * I))
    };
    let (r1, r2) = (res(1e-2), res(5e-3));
    assert!(r2 < 1e-4);
    assert!(r1 / r2 > 3.5, "ratio {}", r1 / r2);
}

#[test]
fn lyapunov_solution_matches_time_integration() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    for (x, t) in [(0.8, 0.5), (-1.2, -0.7)] {
        let b = evolve_b_t(&v, x, t);
        let cm = evolve_c_t(&v, x, t).unwrap();
        let xs = solve_x_t(&v, &b, &cm).unwrap();
        let xi = integrate_x_t(&v, x, t).unwrap();
        assert!(max_abs(&(&xs - &xi)) < 1e-8 * xs.norm().max(1.0));
    }
}

#[test]
fn time_identities_converge_at_second_order() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    let (x, t) = (0.5, 0.2);
    let r1 = gamma_star_t_residual(&v, x, t, 2e-3).unwrap();
    let r2 = gamma_star_t_residual(&v, x, t, 1e-3).unwrap();
    assert!(r2.max() < 1e-6, "{r2:?}");
    for (a, b) in [(r1.gamma_star, r2.gamma_star), (r1.moment, r2.moment), (r1.transfer, r2.transfer)] {
        assert!(a / b > 3.5, "ratio {}", a / b);
    }
}

#[test]
fn evolved_inverse_vessel_satisfies_its_identities() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    for (x, t) in [(1.0, 0.5), (-2.0, -0.8)] {
        let inv = inverse_vessel_t(&v, x, t).unwrap();
        let chk = inverse_checks(&v, &snapshot_xt(&v, x, t).unwrap(), &inv);
        assert!(chk.max() < 1e-6, "({x},{t}) {chk:?}");
    }
    let a = inverse_vessel_t(&v, 1.3, 0.0).unwrap();
    let b = inverse_vessel(&v, 1.3).unwrap();
    assert!(max_abs(&(&a.xstar - &b.xstar)) < 1e-9 * b.xstar.norm().max(1.0));
}

#[test]
fn invertibility_half_width_is_validated() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    for x in [-3.0, 0.0, 2.0] {
        let e = estimate_tx(&v, x).unwrap();
        assert!(e.tx > 0.0 && e.tx.is_finite());
        assert!(e.validated, "x={x} {e:?}");
    }
    let empty = build_node(&SpectralMeasure::empty(), &sl()).unwrap();
    assert_eq!(estimate_tx(&empty, 0.0).unwrap().tx, f64::INFINITY);
}

#[test]
fn kdv_residual_is_small_and_converges() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    let c = kdv_convergence(&v, (-1.0, 1.0), (-0.2, 0.2), 0.02, 0.004).unwrap();
    assert!(c.coarse < 1e-4, "{c:?}");
    assert!(c.ratio >= 4.0, "{c:?}");
    let f = q_field(&v, &grid(-1.0, 1.0, 101), &grid(-0.2, 0.2, 101)).unwrap();
    let streamed = kdv_residual_streamed(&v, &f.x_grid, &f.t_grid).unwrap();
    let stored = kdv_residual(&f).unwrap();
    assert_eq!(streamed.max, stored.max);
    assert_eq!(streamed.points, stored.points);
}

#[test]
fn coarse_or_uneven_grids_are_rejected() {
    let v = build_node(&one_atom(), &sl()).unwrap();
    let f = q_field(&v, &grid(-1.0, 1.0, 6), &grid(0.0, 1.0, 5)).unwrap();
    assert!(matches!(kdv_residual(&f), Err(Error::GridTooCoarse(_))));
    let f = q_field(&v, &grid(-1.0, 1.0, 9), &grid(0.0, 1.0, 4)).unwrap();
    assert!(matches!(kdv_residual(&f), Err(Error::GridTooCoarse(_))));
    let xs = vec![0.0, 0.1, 0.2, 0.35, 0.4, 0.5, 0.6, 0.7];
    let f = q_field(&v, &xs, &grid(0.0, 1.0, 5)).unwrap();
    assert!(matches!(kdv_residual(&f), Err(Error::GridTooCoarse(_))));
}

#[test]
fn cross_derivatives_of_tau_commute() {
    let v = build_node(&two_atoms(), &sl()).unwrap();
    let (a, b) = (
        cross_derivative_mismatch(&v, 0.4, 0.3, 2e-3).unwrap(),
        cross_derivative_mismatch(&v, 0.4, 0.3, 1e-3).unwrap(),
    );
    assert!(b < 1e-6);
    assert!(a / b > 3.0 || b < 1e-12, "{a} {b}");
}

#[test]
fn traveling_wave_fit_is_reported() {
    let v = build_node(&one_atom(), &sl()).unwrap();
    let f = q_field(&v, &grid(-5.0, 5.0, 201), &grid(0.0, 0.5, 6)).unwrap();
    let w = traveling_wave_check(&f).unwrap();
    assert!(w.amplitude > 0.0 && w.speed.is_finite() && w.mismatch.is_finite());
    let empty = build_node(&SpectralMeasure::empty(), &sl()).unwrap();
    let f0 = q_field(&empty, &grid(-1.0, 1.0, 11), &grid(0.0, 0.5, 3)).unwrap();
    assert!(traveling_wave_check(&f0).is_none());
}

#[test]
fn csv_layout_is_stable() {
    let v = build_node(&one_atom(), &sl()).unwrap();
    let f = q_field(&v, &[0.0, 0.5], &[0.0]).unwrap();
    let csv = f.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,t,tau_re,tau_im,q_re,q_im,in_omega"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 7);
    assert_eq!(first[0], "0.0000000000000000e0");
    assert_eq!(first[6], "1");
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(fmt_float(f64::NAN), "NaN");
}
