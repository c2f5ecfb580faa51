//! Randomized invariants of the moment split, the quadrature, the measure
//! file format, the node construction and the potential pipeline.

use proptest::prelude::*;
use vesselkit_core::algebra::{c, VesselParams};
use vesselkit_core::kdv::q_field;
use vesselkit_core::moments::{moments_at_zero, PotentialModel};
use vesselkit_core::spectrum::*;
use vesselkit_core::vessel::{build_node, node_residual, potential_series, snapshot};

fn sl() -> VesselParams {
    VesselParams::sturm_liouville()
}

fn separated(mus: &[f64], gap: f64) -> bool {
    let mut s = mus.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[1] - w[0] > gap)
}

/// Signed structured measures with up to four atoms on `[0, 3]`.
fn signed_measure() -> impl Strategy<Value = SpectralMeasure> {
    prop::collection::vec((0.0..3.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..=4)
        .prop_filter("atoms must be separated", |a| separated(&a.iter().map(|t| t.0).collect::<Vec<_>>(), 0.05))
        .prop_map(|a| {
            let atoms = a.into_iter().map(|(mu, w11, w12, w22)| Atom { mu, w11, w12, w22 }).collect();
            SpectralMeasure::from_atoms(atoms).unwrap()
        })
}

/// Positive scalar measures with up to four well separated nodes on `[0, 4]`.
fn positive_scalar() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..4.0f64, 0.1..2.0f64), 1..=4)
        .prop_filter("nodes must be separated", |a| separated(&a.iter().map(|t| t.0).collect::<Vec<_>>(), 0.25))
}

fn power_moment(atoms: &[(f64, f64)], n: usize) -> f64 {
    atoms.iter().map(|&(x, w)| w * x.powi(n as i32)).sum()
}

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_gives_two_stieltjes_sequences(m in prop::collection::vec(-10.0..10.0f64, 1..10)) {
        let s = split_signed(&m, DEFAULT_MARGIN).unwrap();
        prop_assert!(stieltjes_ok(&s.v, 0.0).unwrap());
        prop_assert!(stieltjes_ok(&s.u, 0.0).unwrap());
        for (n, ((v, u), m)) in s.v.iter().zip(&s.u).zip(&m).enumerate() {
            let scale = v.abs().max(u.abs()).max(1.0);
            prop_assert!((v - u - m).abs() <= 8.0 * f64::EPSILON * scale, "n={n}");
        }
    }

    #[test]
    fn gauss_quadrature_reproduces_its_window(atoms in positive_scalar()) {
        let j = atoms.len();
        let v: Vec<f64> = (0..2 * j).map(|n| power_moment(&atoms, n)).collect();
        let g = gauss_atoms(&v, Support::Stieltjes).unwrap();
        prop_assert_eq!(g.nodes.len(), j);
        prop_assert!(g.weights.iter().all(|&w| w > 0.0));
        for (n, &target) in v.iter().enumerate() {
            prop_assert!(rel((g.moment(n) - target).abs(), target) <= 1e-9, "n={n}");
        }
    }

    #[test]
    fn signed_solver_matches_with_nonnegative_nodes(
        m in (1usize..=4).prop_flat_map(|j| prop::collection::vec(-1.0..1.0f64, 2 * j))
    ) {
        let meas = solve_signed_stieltjes(&m, DEFAULT_MARGIN).unwrap();
        prop_assert!(meas.nodes.iter().all(|&x| x >= 0.0));
        for (n, &target) in m.iter().enumerate() {
            prop_assert!(rel((meas.moment(n) - target).abs(), target) <= 1e-8, "n={n}");
        }
    }

    #[test]
    fn assembled_measure_is_a_right_inverse(
        rbd in (1usize..=3).prop_flat_map(|j| prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 2 * j))
    ) {
        let r: Vec<f64> = rbd.iter().map(|t| t.0).collect();
        let b: Vec<f64> = rbd.iter().map(|t| t.1).collect();
        let d: Vec<f64> = rbd.iter().map(|t| t.2).collect();
        let meas = assemble_measure(&r, &b, &d, DEFAULT_MARGIN).unwrap();
        for n in 0..r.len() {
            let target = Atom { mu: 1.0, w11: r[n], w12: b[n], w22: d[n] }.weight() * c(0.0, 1.0).powi(n as i32);
            let err = (measure_moments(&meas, n) - target).camax();
            prop_assert!(err <= 1e-8, "n={n}: {err:e}");
        }
    }

    #[test]
    fn measure_json_round_trip_is_exact(meas in signed_measure()) {
        let back = measure_from_json(&measure_to_json(&meas).unwrap()).unwrap();
        prop_assert_eq!(back, meas);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn node_solves_the_lyapunov_equation(meas in signed_measure()) {
        let v = build_node(&meas, &sl()).unwrap();
        prop_assert!(node_residual(&v) <= 1e-13);
        let h0 = snapshot(&v, 0.0).unwrap().h0;
        prop_assert!((h0 - measure_moments(&meas, 0)).camax() <= 1e-12);
    }

    #[test]
    fn moment_gauge_is_kept_along_x(meas in signed_measure(), x in -1.0..1.0f64) {
        let v = build_node(&meas, &sl()).unwrap();
        let snap = snapshot(&v, x);
        prop_assume!(snap.is_ok());
        let h0 = snap.unwrap().h0;
        let scale = h0.camax().max(1.0);
        prop_assert!((h0[(0, 1)] + h0[(1, 0)]).norm() <= 1e-9 * scale);
    }

    #[test]
    fn field_at_time_zero_is_the_snapshot_potential(meas in signed_measure()) {
        let v = build_node(&meas, &sl()).unwrap();
        let xs = [-1.0, -0.3, 0.0, 0.4, 1.0];
        let field = q_field(&v, &xs, &[0.0, 0.1]).unwrap();
        for (ix, &x) in xs.iter().enumerate() {
            if !field.omega[ix] {
                continue;
            }
            let Ok(snap) = snapshot(&v, x) else { continue };
            let q = snap.q.unwrap();
            let err = (field.q[ix] - q).norm();
            prop_assert!(err <= 1e-7 * q.norm().max(1.0), "x={x}: {err:e}");
        }
    }

    #[test]
    fn quadratic_potentials_survive_the_round_trip(c0 in -1.0..1.0f64, c1 in -1.0..1.0f64, c2 in -1.0..1.0f64) {
        let order = 6;
        let coeffs = [c0, c1, c2];
        let p = PotentialModel::from_polynomial(&coeffs, 2 * order + 2);
        let (r, b, d) = moments_at_zero(&p, order, &[]).unwrap().sequences();
        let meas = assemble_measure(&r[..order], &b[..order], &d[..order], DEFAULT_MARGIN).unwrap();
        let series = potential_series(&build_node(&meas, &sl()).unwrap(), order).unwrap();
        for k in 0..=order - 2 {
            let input = coeffs.get(k).copied().unwrap_or(0.0);
            let err = (series.coeff(k).re - input).abs();
            prop_assert!(err <= 1e-6 * input.abs().max(1e-2), "k={k}: {err:e}");
        }
    }
}
