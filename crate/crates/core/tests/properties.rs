use hlattice::config::{mix_seed, SuiteConfig};
use hlattice::control::{solve_reachability, verify_control, ControlProblem};
use hlattice::diagnostics::Outcome;
use hlattice::geometry::{homogeneous_norm, site_metric, BoxLattice, SiteState};
use hlattice::interactions::{evaluate_q, BoundaryMode, InteractionSpec};
use hlattice::models::{lie_bracket, PolyVectorField, SiteModel};
use hlattice::poly::{rat, Poly, RatPoly};
use hlattice::simulate::{noise_at, NoiseSource};
use proptest::prelude::*;

fn site() -> impl Strategy<Value = SiteState> {
    (-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64).prop_map(|(x, y, z)| SiteState::new(x, y, z))
}

fn small_poly(nvars: usize) -> impl Strategy<Value = RatPoly> {
    prop::collection::vec(
        (prop::collection::vec(0u32..3, nvars), -4i64..=4, 1i64..=3),
        1..5,
    )
    .prop_map(move |terms| {
        RatPoly::from_terms(nvars, terms.into_iter().map(|(e, n, d)| (e, rat(n, d))))
    })
}

fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        Just(Outcome::Pass),
        Just(Outcome::Fail),
        Just(Outcome::Inconclusive)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metric_axioms(a in site(), b in site(), c in site()) {
        let ab = site_metric(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, site_metric(&b, &a).unwrap());
        prop_assert_eq!(site_metric(&a, &a).unwrap(), 0.0);
        let rhs = ab + site_metric(&b, &c).unwrap();
        prop_assert!(site_metric(&a, &c).unwrap() <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn norm_is_dilation_homogeneous(a in site(), t in 1e-2..1e2f64) {
        let d = SiteState::new(t * a.x, t * a.y, t * t * a.z);
        let lhs = homogeneous_norm(&d).unwrap();
        let rhs = t * homogeneous_norm(&a).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn bracket_is_antisymmetric(v in prop::collection::vec(small_poly(3), 3), w in prop::collection::vec(small_poly(3), 3)) {
        let v = PolyVectorField::new(v).unwrap();
        let w = PolyVectorField::new(w).unwrap();
        let vw = lie_bracket(&v, &w).unwrap();
        let wv = lie_bracket(&w, &v).unwrap();
        prop_assert!(vw.add(&wv).unwrap().is_zero());
    }

    #[test]
    fn compose_commutes_with_eval(p in small_poly(2), a in small_poly(2), b in small_poly(2), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let pf = p.to_f64_poly();
        let args: Vec<Poly<f64>> = vec![a.to_f64_poly(), b.to_f64_poly()];
        let lhs = pf.compose(&args).eval(&[x, y]);
        let rhs = pf.eval(&[args[0].eval(&[x, y]), args[1].eval(&[x, y])]);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn tanh_interaction_respects_bound(states in prop::collection::vec(-1e6..1e6f64, 15), c in 0.1..5.0f64, gain in 0.05..1.0f64) {
        let q = InteractionSpec::tanh(c, 1, gain, 2, BoundaryMode::ZeroPad).unwrap();
        let lat = BoxLattice::new(1, 1, 2).unwrap();
        for s in lat.sites() {
            let v = evaluate_q(&q, &lat, &states, 3, 2, s).unwrap();
            prop_assert!((v[0] * v[0] + v[1] * v[1]).sqrt() <= c / 2.0 * 2f64.sqrt() + 1e-12);
            prop_assert!(v[0].abs() <= c / 2.0 + 1e-12 && v[1].abs() <= c / 2.0 + 1e-12);
        }
    }

    #[test]
    fn random_access_noise_matches_stream(seed in any::<u64>(), replica in 0u64..1000, steps in 1usize..20) {
        let lat = BoxLattice::new(1, 1, 1).unwrap();
        let mut src = NoiseSource::new(seed, replica, &lat, 2);
        let mut buf = vec![0.0; lat.len() * 2];
        for k in 0..steps {
            src.fill(&mut buf);
            for (p, s) in lat.sites().iter().enumerate() {
                for c in 0..2 {
                    prop_assert_eq!(buf[p * 2 + c], noise_at(seed, replica, s, c, k as u64));
                }
            }
        }
    }

    #[test]
    fn outcome_meet_is_commutative_and_associative(a in outcome(), b in outcome(), c in outcome()) {
        prop_assert_eq!(a.and(b), b.and(a));
        prop_assert_eq!(a.and(b).and(c), a.and(b.and(c)));
        prop_assert_eq!(a.and(Outcome::Pass), a);
    }

    #[test]
    fn seed_mixing_is_deterministic(m in any::<u64>(), l in any::<u64>()) {
        prop_assert_eq!(mix_seed(m, l), mix_seed(m, l));
        let s = SuiteConfig::default_for("ergodic").unwrap();
        prop_assert_eq!(s.with_master_seed(m), s.with_master_seed(m));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reachability_hits_target(
        a in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
        b in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
        t in 0.2..3.0f64,
        lambda in 0.1..3.0f64,
    ) {
        let p = ControlProblem::new(
            SiteState::new(a.0, a.1, a.2),
            SiteState::new(b.0, b.1, b.2),
            t,
            lambda,
        ).unwrap();
        let u = solve_reachability(&p).unwrap();
        prop_assert!(verify_control(&p, &u) <= 1e-6);
    }

    #[test]
    fn lyapunov_candidates_are_positive_off_origin(x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64, k in 1u32..3) {
        prop_assume!(x != 0.0 || y != 0.0 || z != 0.0);
        for name in ["heisenberg", "euclidean3", "martinet"] {
            let m = SiteModel::by_name(name, 1.0).unwrap();
            let v = m.lyapunov_candidate(k).unwrap().to_f64_poly();
            prop_assert!(v.eval(&[x, y, z]) > 0.0);
        }
    }
}
