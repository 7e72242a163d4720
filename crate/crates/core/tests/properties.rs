mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;

use backstep_core::characteristics::CharacteristicCache;
use backstep_core::coeffs::{params, BinOp, Expr, Func, SampleWindow, Var, ViolationKind, CATALOG_NAMES};
use backstep_core::grid::Uniform;
use backstep_core::simulator::{simulate, GeneralSystem, SimOptions, StateSnapshot};
use backstep_core::transforms::TimeMode;
use backstep_core::verify::{check_finite_time, check_omega, check_psi, check_uniform_stability};
use common::*;
use proptest::prelude::*;

fn varying_cache() -> &'static CharacteristicCache {
    static CELL: OnceLock<CharacteristicCache> = OnceLock::new();
    CELL.get_or_init(|| cache_of(&varying_3x3()))
}

fn example_cache() -> &'static CharacteristicCache {
    static CELL: OnceLock<CharacteristicCache> = OnceLock::new();
    CELL.get_or_init(|| cache_of(&named("example_1_5", &[])))
}

fn caches() -> [&'static CharacteristicCache; 2] {
    [varying_cache(), example_cache()]
}

// ---- coefficients ----

fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-1e3f64..1e3).prop_map(Expr::Const),
        Just(Expr::Var(Var::T)),
        Just(Expr::Var(Var::X)),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)];
        let func = prop_oneof![Just(Func::Exp), Just(Func::Log), Just(Func::Sin), Just(Func::Cos)];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
            (func, inner).prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
        ]
    })
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(e in expr_strategy()) {
        let printed = e.to_string();
        prop_assert_eq!(Expr::parse(&printed).unwrap(), e, "printed as {}", printed);
    }

    #[test]
    fn time_extension_leaves_nonnegative_times_alone(t in 0.0f64..50.0, x in 0.0f64..=1.0) {
        for spec in [named("example_1_5", &[("M12", "sin(t)*x"), ("q", "1 + t")]), varying_3x3()] {
            let ext = spec.extend_time(None).unwrap();
            for i in 0..spec.n {
                prop_assert_eq!(ext.speed(i, t, x).to_bits(), spec.speed(i, t, x).to_bits());
                for j in 0..spec.n {
                    prop_assert_eq!(ext.coupling(i, j, t, x).to_bits(), spec.coupling(i, j, t, x).to_bits());
                }
            }
            for l in 0..spec.p() {
                for j in 0..spec.m {
                    prop_assert_eq!(ext.boundary(l, j, t).to_bits(), spec.boundary(l, j, t).to_bits());
                }
            }
        }
    }
}

#[test]
fn catalog_systems_validate() {
    for name in CATALOG_NAMES {
        let pairs: &[(&str, &str)] = if name == "custom" { &[("lambda1", "-1"), ("lambda2", "1")] } else { &[] };
        let spec = backstep_core::coeffs::catalog(name, &params(pairs)).unwrap();
        let report = spec.validate(&SampleWindow::default());
        if name == "remark_1_7_3x3" {
            let mut kinds = report.kinds();
            kinds.dedup();
            assert_eq!(kinds, vec![ViolationKind::Gap], "{:?}", report.violations.first());
        } else {
            assert!(report.passed(), "{}: {:?}", name, report.violations.first());
        }
    }
}

// ---- characteristics ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flows_compose(which in 0usize..2, i in 0usize..3, t in 0.0f64..3.0, x in 0.02f64..0.98, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let cache = caches()[which];
        let i = i % cache.spec().n;
        let (s_in, s_out) = cache.boundary_times(i, t, x).unwrap();
        let lo = s_in.max(0.0);
        let (s, sigma) = (lo + a * (s_out - lo), lo + b * (s_out - lo));
        prop_assert!(group_property(cache, i, t, x, s, sigma) <= 10.0 * TOL_ROOT);
    }

    #[test]
    fn boundary_times_are_constant_along_characteristics(which in 0usize..2, i in 0usize..3, t in 0.0f64..3.0, x in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
        let cache = caches()[which];
        let i = i % cache.spec().n;
        prop_assert!(boundary_time_drift(cache, i, t, x, frac) <= 10.0 * TOL_ROOT);
    }

    #[test]
    fn boundary_times_increase_in_time(which in 0usize..2, i in 0usize..3, t in 0.0f64..3.0, x in 0.0f64..=1.0) {
        let cache = caches()[which];
        prop_assert!(time_increase(cache, i % cache.spec().n, t, x, 1e-3) > 0.0);
    }

    #[test]
    fn boundary_times_are_monotone_in_space(which in 0usize..2, i in 0usize..3, t in 0.0f64..3.0, x in 0.01f64..0.99) {
        let cache = caches()[which];
        prop_assert!(space_monotonicity(cache, i % cache.spec().n, t, x, 1e-3) > 0.0);
    }

    #[test]
    fn leftward_exit_times_are_ordered(t in 0.0f64..3.0, x in 1e-3f64..=1.0) {
        prop_assert!(exit_ordering(varying_cache(), t, x) > 0.0);
    }

    #[test]
    fn crossing_times_are_bounded(which in 0usize..2, i in 0usize..3, t in 0.0f64..20.0, x in 0.0f64..=1.0) {
        let cache = caches()[which];
        prop_assert!(crossing_bound(cache, i % cache.spec().n, t, x) < 1.0);
    }

    #[test]
    fn omega_increases_in_time_and_space(which in 0usize..2, i in 0usize..2, t in 0.0f64..3.0, x in 0.01f64..0.99, u in 0.0f64..1.0) {
        let cache = caches()[which];
        let i = i % cache.spec().m;
        let nu = cache.omega_nu(i, &[0.0, 1.0, 2.0, 3.0], &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let scale = nu + u * (1.0 - 1e-3 - nu);
        let [d_t, d_x, d_nu] = omega_derivatives(cache, i, scale, t, x, 1e-4);
        prop_assert!(d_t > 0.0);
        prop_assert!(d_x > 0.0);
        prop_assert!(d_nu >= -1e-5);
    }

    #[test]
    fn big_omega_decreases_along_joint_flows(i in 0usize..2, j in 0usize..3, t in 0.0f64..3.0, x in 0.05f64..0.95, r in 0.0f64..1.0) {
        let cache = varying_cache();
        let j = j.max(i);
        let nu = cache.omega_nu(i, &[0.0, 1.0, 2.0, 3.0], &[0.0, 0.25, 0.5, 0.75, 1.0]);
        if let Some(w) = omega_along_flow(cache, i, j, nu, t, x, r * x, 0.02, 5) {
            prop_assert!(w < 0.0, "increment {}", w);
        }
    }
}

#[test]
fn psi_satisfies_its_transport_equation() {
    let cache = varying_cache();
    let ts = [0.0, 0.7, 1.9, 2.6];
    let xs: Vec<f64> = (1..10).map(|q| q as f64 / 10.0).collect();
    for (i, j) in [(0, 1), (1, 0)] {
        let report = check_psi(cache, i, j, &ts, &xs, 1e-4, 1e-5).unwrap();
        assert!(report.pass, "{}", report);
    }
}

#[test]
fn omega_weight_checks_pass() {
    let cache = varying_cache();
    let points: Vec<(f64, f64, f64)> =
        (0..20).map(|q| (0.15 * q as f64, 0.1 + 0.04 * q as f64, 0.02 * q as f64)).collect();
    for i in 0..2 {
        let nu = cache.omega_nu(i, &[0.0, 1.0, 2.0, 3.0], &[0.0, 0.5, 1.0]);
        let report = check_omega(cache, i, nu, &points, 1e-4).unwrap();
        assert!(report.pass, "{}", report);
    }
}

// ---- transforms ----

#[test]
fn transforms_invariants_hold() {
    assert_all(&transforms_invariants(varying_synthesis(16), varying_synthesis(32)));
}

#[test]
fn constant_speed_transforms_invariants_hold() {
    let syn = constant_3x3_synthesis();
    assert!(compatibility_residual(syn) <= TOL_TRI);
    assert!(f2_residual(syn) <= 1e-8);
    assert!(nilpotency_residual(syn, 5) <= 1e-12);
    assert!(reflection_between_nodes(syn, 100, 5) <= 1e-12);
}

// ---- simulator ----

fn snapshot(n: usize, components: usize, f: impl Fn(usize, f64) -> f64) -> StateSnapshot {
    StateSnapshot::from_fn(0.0, Uniform::new(n), components, f)
}

#[test]
fn components_vanish_after_their_crossing_time() {
    let spec = named("custom", &[("lambda1", "-(1+x)"), ("lambda2", "1 + 0.5*sin(t)")]);
    let cache = cache_of(&spec);
    let sys = GeneralSystem::open_loop(&spec);
    let crossing = [cache.exit_time(0, 0.0, 1.0).unwrap(), cache.exit_time(1, 0.0, 0.0).unwrap()];
    // largest remainder of each component after its own crossing time
    let remainder = |n: usize| {
        let y0 = snapshot(n, 2, |_, x| (PI * x).sin().powi(2));
        let trace = simulate(&sys, 0.0, &y0, 2.5, 0.7 / n as f64, &SimOptions::default()).unwrap();
        let mut worst = [0.0f64; 2];
        for snap in &trace.snapshots {
            for (i, &c) in crossing.iter().enumerate() {
                if snap.t >= c {
                    worst[i] = snap.values[i].iter().fold(worst[i], |a, v| a.max(v.abs()));
                }
            }
        }
        worst
    };
    let (coarse, fine) = (remainder(200), remainder(400));
    for i in 0..2 {
        assert!(coarse[i] <= 2.0 / 200.0 && coarse[i] / fine[i] >= 1.8, "{:?} -> {:?}", coarse, fine);
    }
}

/// `y₁_t − y₁_x = a y₁`, `y₂_t + 2 y₂_x = 0`, `y₂(t, 0) = q y₁(t, 0)`,
/// `y₁(t, 1) = 0`, both starting from `sin²(πx)`.
fn manufactured(a: f64, q: f64, t: f64, x: f64) -> [f64; 2] {
    let f = |s: f64| if (0.0..=1.0).contains(&s) { (PI * s).sin().powi(2) } else { 0.0 };
    let y1 = (a * t).exp() * f(x + t);
    let y2 = if t >= x / 2.0 { q * (a * (t - x / 2.0)).exp() * f(t - x / 2.0) } else { f(x - 2.0 * t) };
    [y1, y2]
}

#[test]
fn manufactured_solution_converges_at_first_order() {
    let (a, q) = (0.5, 0.8);
    let spec = named("const_2x2", &[("l2", "2"), ("M11", "0.5"), ("q", "0.8")]);
    let sys = GeneralSystem::open_loop(&spec);
    let horizon = 0.8;
    let errors: Vec<f64> = [50usize, 100, 200, 400]
        .iter()
        .map(|&n| {
            let y0 = snapshot(n, 2, |i, x| manufactured(a, q, 0.0, x)[i]);
            let trace = simulate(&sys, 0.0, &y0, horizon, 0.7 / n as f64, &SimOptions::default()).unwrap();
            let last = trace.last();
            let exact = StateSnapshot::from_fn(last.t, last.grid, 2, |i, x| manufactured(a, q, last.t, x)[i]);
            last.sup_diff(&exact)
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 1.8, "errors {:?}", errors);
    }
}

#[test]
fn closed_loop_norms_stay_bounded() {
    let syn = varying_synthesis(32);
    let sys = GeneralSystem::closed_loop(syn.spec(), syn.gain.clone()).unwrap();
    let y0 = snapshot(100, 3, |_, x| (PI * x).sin());
    let report = check_uniform_stability(&sys, &[0.0, 0.75, 1.5], &y0, 2.5, 0.01, 1e3);
    assert!(report.pass, "{}", report);
}

// ---- verify ----

#[test]
fn reports_are_deterministic() {
    let cache = varying_cache();
    let run = || check_psi(cache, 0, 1, &[0.3, 1.1], &[0.2, 0.5, 0.8], 1e-4, 1e-5).unwrap().to_json();
    assert_eq!(run(), run());
    let syn = unstable_synthesis();
    let sys = GeneralSystem::closed_loop(syn.spec(), syn.gain.clone()).unwrap();
    let y0 = [snapshot(100, 2, |_, x| (PI * x).sin())];
    let run = || check_finite_time(&sys, &[0.0, 1.0], &y0, 2.02, 0.01, 0.05).to_json();
    assert_eq!(run(), run());
}

#[test]
fn finite_time_ratios_shrink_under_refinement() {
    let spec = named("unstable_2x2", &[]);
    let ratios: Vec<f64> = [(32usize, 100usize), (64, 200), (128, 400)]
        .iter()
        .map(|&(nx, n)| {
            let syn = synth(&spec, nx, TimeMode::Stationary);
            let sys = GeneralSystem::closed_loop(&spec, syn.gain.clone()).unwrap();
            let dt = 1.0 / n as f64;
            let y0 = [snapshot(n, 2, |_, x| (PI * x).sin()), snapshot(n, 2, |i, x| if i == 0 { x } else { 1.0 - x })];
            check_finite_time(&sys, &[0.0], &y0, 2.0 + 2.0 * dt, dt, 0.05).residual
        })
        .collect();
    for w in ratios.windows(2) {
        assert!(w[1] <= 1.1 * w[0], "ratios {:?}", ratios);
    }
}

#[test]
fn settling_before_the_optimal_time_fails() {
    let spec = named("const_2x2", &[("q", "1")]);
    let syn = synth(&spec, 16, TimeMode::Stationary);
    let sys = GeneralSystem::closed_loop(&spec, syn.gain.clone()).unwrap();
    for n in [100usize, 200, 400] {
        let y0 = [snapshot(n, 2, |_, x| (PI * x).sin())];
        let report = check_finite_time(&sys, &[0.0], &y0, 1.0, 1.0 / n as f64, 0.05);
        assert!(!report.pass && report.residual >= 0.3, "{}", report);
    }
}
