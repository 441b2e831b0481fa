use std::sync::Arc;

use couette_core::fit::fit_power_law;
use couette_core::grid::f_weight;
use couette_core::nonlinear::{interaction_inequality_holds, ModeSystem, NonlinearStepper};
use couette_core::resolvent::pseudospectral_bound;
use couette_core::semigroup::propagate_linear;
use couette_core::{
    assemble_lk, solve_stream, Bump, FlowParams, GridFunction, NormKind, RadialGrid, RingInit, ScanConfig, SmoothProfile, C64,
};
use proptest::prelude::*;

fn grid(n: usize) -> Arc<RadialGrid> {
    Arc::new(RadialGrid::uniform(n, 20.0).unwrap())
}

/// Random complex nodal values in the unit square.
fn values(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n).prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
}

fn smooth(start: f64, width: f64, im: f64) -> GridFunction {
    let g = grid(256);
    let b = Bump::Compact { amplitude: C64::new(1.0, im), center: start + 0.5 * width, half_width: 0.5 * width };
    SmoothProfile::new(vec![b]).sample(&g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pairing_is_bounded_by_dual_norms(f in values(64), v in values(64)) {
        let g = grid(64);
        let (f, v) = (GridFunction::new(f), GridFunction::new(v));
        let lhs = g.inner(f.values(), v.values()).norm();
        let rhs = g.norm(&f, NormKind::Hm1).unwrap() * g.norm(&v, NormKind::H1).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-10), "{lhs} > {rhs}");
    }

    #[test]
    fn weight_cancels_in_the_m_norm(v in values(128)) {
        let g = grid(128);
        let gf = GridFunction::new(v);
        let weighted = gf.mul_by(&g, f_weight);
        let m = g.norm(&weighted, NormKind::M).unwrap();
        let l2 = g.norm(&gf, NormKind::L2).unwrap();
        prop_assert!((m - l2).abs() <= 1e-12 * l2.max(1e-300));
    }

    #[test]
    fn real_part_is_positive_and_independent_of_b(
        v in values(96),
        k in 1i32..6,
        b1 in 1.0f64..1e5,
        b2 in -1e5f64..-1.0,
    ) {
        let g = grid(96);
        let p = assemble_lk(&g, k, &FlowParams::from_ratio(b1).unwrap()).unwrap().form(&v).re;
        let q = assemble_lk(&g, k, &FlowParams::from_ratio(b2).unwrap()).unwrap().form(&v).re;
        prop_assert!(p > 0.0);
        prop_assert!((p - q).abs() <= 1e-12 * p, "{p} vs {q}");
    }

    #[test]
    fn stream_solve_is_linear(a in values(64), b in values(64), s in -3.0f64..3.0, k in 1i32..6) {
        let g = grid(64);
        let (a, b) = (GridFunction::new(a), GridFunction::new(b));
        let mix = GridFunction::new(a.values().iter().zip(b.values()).map(|(x, y)| x * s + y).collect());
        let pa = solve_stream(&a, k, g.clone()).unwrap().phi;
        let pb = solve_stream(&b, k, g.clone()).unwrap().phi;
        let pm = solve_stream(&mix, k, g).unwrap().phi;
        let scale = pm.max_abs().max(1.0);
        for ((x, y), z) in pa.values().iter().zip(pb.values()).zip(pm.values()) {
            prop_assert!((x * s + y - z).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn interaction_inequality_holds_for_any_b(b in -1e6f64..1e6, k_max in 1usize..12) {
        prop_assert!(interaction_inequality_holds(b, k_max));
    }

    #[test]
    fn power_law_fit_recovers_exponent(p in -2.0f64..2.0, c in 0.1f64..10.0) {
        let xs = [1e2, 1e3, 1e4, 1e5];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| c * x.powf(p)).collect();
        prop_assert!((fit_power_law(&xs, &ys).unwrap().slope - p).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_norm_never_grows(r0 in 1.0f64..6.0, width in 0.5f64..3.0, im in -1.0f64..1.0, k in 1i32..4, b in 1.0f64..1e4) {
        let g = grid(256);
        let op = assemble_lk(&g, k, &FlowParams::from_ratio(b).unwrap()).unwrap();
        let w0 = smooth(r0, width, im);
        let traj = propagate_linear(&op, &w0, 0.5, 1e-3, 1).unwrap();
        for kind in [NormKind::L2, NormKind::X] {
            let n = traj.norms(&g, kind).unwrap();
            for pair in n.windows(2) {
                prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-10), "{kind:?}: {} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn nonlinear_steps_keep_reality(amp in 0.1f64..50.0, r_c in 1.5f64..5.0, k_max in 1usize..4) {
        let g = grid(96);
        let params = FlowParams::from_ratio(1e3).unwrap();
        let mut state = RingInit::all(amp, r_c, k_max).build(&g, k_max, params).unwrap();
        let mut stepper = NonlinearStepper::new(ModeSystem::new(g, params, k_max).unwrap(), 1e-3).unwrap();
        for _ in 0..5 {
            let info = stepper.step(&mut state).unwrap();
            prop_assert!(info.raw_reality_defect < 1e-12, "{}", info.raw_reality_defect);
        }
        prop_assert_eq!(state.reality_defect(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn psi_is_conjugation_symmetric(k in 1i32..4, b in 10.0f64..1e4) {
        let g = grid(128);
        let scan = ScanConfig::default();
        let psi = |k: i32, b: f64| pseudospectral_bound(&assemble_lk(&g, k, &FlowParams::from_ratio(b).unwrap()).unwrap(), &scan).unwrap().psi;
        let base = psi(k, b);
        for other in [psi(-k, -b), psi(k, -b)] {
            prop_assert!((other - base).abs() <= 1e-6 * base, "{base} vs {other}");
        }
    }
}
