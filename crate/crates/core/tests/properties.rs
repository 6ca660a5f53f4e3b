mod common;

use dgama::matx::{clip, eig_sym, eig_sym_decompose, frob_dist, inverse_spd, soft_threshold_scalar, clip_scalar, SymMatrix};
use dgama::network::{check_joint_observability, consensus_rate, Topology};
use dgama::solver::{dual_update, OnlineCovariance};
use proptest::prelude::*;

fn sym(p: usize) -> impl Strategy<Value = SymMatrix> {
    proptest::collection::vec(-3.0f64..3.0, p * p).prop_map(move |v| SymMatrix::from_fn(p, |i, j| v[i * p + j]))
}

fn spd(p: usize) -> impl Strategy<Value = SymMatrix> {
    proptest::collection::vec(-1.0f64..1.0, p * p).prop_map(move |v| {
        // B Bᵀ + 0.5 I
        SymMatrix::from_fn(p, |i, j| (0..p).map(|k| v[i * p + k] * v[j * p + k]).sum::<f64>()).shift_diag(0.5)
    })
}

/// Whether `a − b` is exactly representable.
fn exact_difference(a: f64, b: f64) -> bool {
    let s = a - b;
    let bb = s - a;
    (a - (s - bb)) + (-b - bb) == 0.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shrink_and_clip_recombine(x in -1e3f64..1e3, lambda in 0.0f64..10.0) {
        let s = soft_threshold_scalar(x, lambda);
        let c = clip_scalar(x, lambda);
        prop_assert!(c.abs() <= lambda);
        prop_assert!(s == 0.0 || s.signum() == x.signum());
        if exact_difference(x, c) {
            prop_assert_eq!(s + c, x);
        } else {
            prop_assert!((s + c - x).abs() <= f64::EPSILON * x.abs());
        }
    }

    #[test]
    fn clip_is_non_expansive(a in sym(4), b in sym(4), lambda in 0.0f64..2.0) {
        let d = frob_dist(&clip(&a, lambda), &clip(&b, lambda)).unwrap();
        prop_assert!(d <= frob_dist(&a, &b).unwrap());
    }

    #[test]
    fn inverse_is_an_involution(m in spd(5)) {
        let back = inverse_spd(&inverse_spd(&m).unwrap()).unwrap();
        prop_assert!(frob_dist(&back, &m).unwrap() <= 1e-8 * m.max_abs().max(1.0));
        let prod = m.matmul(&inverse_spd(&m).unwrap()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((prod.get(i, j) - target).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rayleigh_quotients_lie_between_extremes(m in sym(5), v in proptest::collection::vec(-1.0f64..1.0, 5)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let ev = eig_sym(&m).unwrap();
        let mv = m.mul_vec(&v);
        let q = v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|a| a * a).sum::<f64>();
        prop_assert!(q >= ev[0] - 1e-10 && q <= ev[4] + 1e-10);
    }

    #[test]
    fn eigen_decomposition_reconstructs(m in sym(5)) {
        let d = eig_sym_decompose(&m).unwrap();
        let r = d.reconstruct();
        for i in 0..5 {
            for j in 0..5 {
                prop_assert!((r.get(i, j) - m.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dual_update_is_feasible_and_symmetric(g in spd(5), s in spd(5), lambda in 0.0f64..0.5, frac in 0.1f64..0.9) {
        let zeta = frac * eig_sym(&g).unwrap()[0].powi(2);
        let next = dual_update(&g, &s, zeta, lambda).unwrap();
        prop_assert_eq!(next.asymmetry(), 0.0);
        for i in 0..5 {
            for j in 0..5 {
                prop_assert!((next.get(i, j) - s.get(i, j)).abs() <= lambda);
            }
        }
    }

    #[test]
    fn online_covariance_matches_batch(xs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..60)) {
        let mut oc = OnlineCovariance::new(3);
        for x in &xs {
            oc = oc.update(x).unwrap();
        }
        let batch = SymMatrix::from_rows(&common::batch_covariance(&xs)).unwrap();
        prop_assert_eq!(oc.t, xs.len());
        prop_assert!(frob_dist(&oc.s, &batch).unwrap() <= 1e-12 * batch.max_abs().max(1.0));
    }

    #[test]
    fn random_topologies_contract(n in 2usize..9, p in 2usize..6, seed in 0u64..1000) {
        let topo = Topology::random_jointly_observable(n, p, 0.3, 0.4, seed);
        prop_assert!(check_joint_observability(&topo).jointly_observable);
        let rate = consensus_rate(&topo).unwrap();
        let sigma = rate.sigma.unwrap();
        prop_assert!((0.0..1.0).contains(&sigma));
        prop_assert!(rate.c.unwrap() >= 1.0);
    }

    #[test]
    fn topology_text_round_trip(n in 1usize..7, p in 1usize..5, seed in 0u64..1000) {
        let topo = Topology::random_jointly_observable(n, p, 0.5, 0.5, seed);
        prop_assert_eq!(Topology::parse(&topo.to_text(), "round trip").unwrap(), topo);
    }
}
