//! Fixtures and invariant sweeps shared by the integration test targets.
#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use backstep_core::characteristics::{CharacteristicCache, FlowConfig};
use backstep_core::coeffs::{catalog, params, SystemSpec};
use backstep_core::grid::TimeAxis;
use backstep_core::transforms::{prepared_spec, synthesize, Sheet, Synthesis, SynthesisConfig, TimeMode};
use backstep_core::verify::{check_psi, check_reflection, check_trace, check_triangular};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

pub const TOL_FP: f64 = 1e-8;
pub const TOL_ROOT: f64 = 1e-10;
pub const TOL_TRI: f64 = 1e-12;

pub fn named(name: &str, pairs: &[(&str, &str)]) -> SystemSpec {
    catalog(name, &params(pairs)).expect("catalog spec")
}

/// Three components, two of them leftward, with speeds and couplings that
/// depend on time and space.
pub fn varying_3x3() -> SystemSpec {
    named(
        "custom",
        &[
            ("n", "3"),
            ("m", "2"),
            ("eps", "0.25"),
            ("lambda1", "-2 - 0.5*sin(t) - 0.25*x"),
            ("lambda2", "-0.75 + 0.25*x*cos(t)"),
            ("lambda3", "1 + 0.5*cos(t) + 0.25*x"),
            ("M11", "0.3"),
            ("M12", "1 + 0.5*sin(t)"),
            ("M13", "x"),
            ("M21", "0.5"),
            ("M23", "-1"),
            ("M31", "cos(t)*x"),
            ("M32", "1"),
            ("M33", "-0.2"),
            ("Q11", "1"),
            ("Q12", "0.5*cos(t)"),
        ],
    )
}

/// Constant speeds `(-2, -1, 1)` with couplings in every block.
pub fn constant_3x3() -> SystemSpec {
    named(
        "custom",
        &[
            ("n", "3"),
            ("m", "2"),
            ("lambda1", "-2"),
            ("lambda2", "-1"),
            ("lambda3", "1"),
            ("M12", "1"),
            ("M21", "0.5"),
            ("M13", "-1"),
            ("M31", "2"),
            ("M32", "1"),
            ("M23", "0.5"),
            ("Q11", "1"),
            ("Q12", "0.5"),
        ],
    )
}

pub fn cache_of(spec: &SystemSpec) -> CharacteristicCache {
    let spec = prepared_spec(spec).expect("prepared spec");
    CharacteristicCache::new(Arc::new(spec), FlowConfig::default())
}

pub fn synth(spec: &SystemSpec, nx: usize, time: TimeMode) -> Synthesis {
    synthesize(spec, &SynthesisConfig { nx, time, ..Default::default() }).expect("synthesis")
}

/// Window used for the time-varying fixtures: back to `-2/ε` and a few
/// units forward.
pub fn varying_window(nt: usize) -> TimeMode {
    TimeMode::Window { start: -8.0, end: 4.0, nt }
}

pub fn unstable_synthesis() -> &'static Synthesis {
    static CELL: OnceLock<Synthesis> = OnceLock::new();
    CELL.get_or_init(|| synth(&named("unstable_2x2", &[]), 64, TimeMode::Stationary))
}

pub fn constant_3x3_synthesis() -> &'static Synthesis {
    static CELL: OnceLock<Synthesis> = OnceLock::new();
    CELL.get_or_init(|| synth(&constant_3x3(), 32, TimeMode::Stationary))
}

pub fn varying_synthesis(nx: usize) -> &'static Synthesis {
    static COARSE: OnceLock<Synthesis> = OnceLock::new();
    static FINE: OnceLock<Synthesis> = OnceLock::new();
    let cell = match nx {
        16 => &COARSE,
        32 => &FINE,
        _ => panic!("no cached synthesis for nx = {}", nx),
    };
    cell.get_or_init(|| synth(&varying_3x3(), nx, varying_window(25)))
}

/// Name, verdict and a short description of the measured quantity.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(name: &str, pass: bool, detail: String) -> Outcome {
        Outcome { name: name.to_string(), pass, detail }
    }

    pub fn bound(name: &str, value: f64, tol: f64) -> Outcome {
        Outcome::new(name, value <= tol, format!("{:.3e} <= {:.1e}", value, tol))
    }
}

pub fn assert_all(outcomes: &[Outcome]) {
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    assert!(failed.is_empty(), "failed: {:#?}", failed);
}

fn interior(rng: &mut StdRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

// ---- characteristics ----

/// `χ_i(σ; s, χ_i(s; t, x)) = χ_i(σ; t, x)`.
pub fn group_property(cache: &CharacteristicCache, i: usize, t: f64, x: f64, s: f64, sigma: f64) -> f64 {
    let via = cache.flow(i, s, cache.flow(i, t, x, s).unwrap(), sigma).unwrap();
    (via - cache.flow(i, t, x, sigma).unwrap()).abs()
}

/// Largest change of `(s_in, s_out)` between `(t, x)` and a point further
/// along the same characteristic.
pub fn boundary_time_drift(cache: &CharacteristicCache, i: usize, t: f64, x: f64, frac: f64) -> f64 {
    let (s_in, s_out) = cache.boundary_times(i, t, x).unwrap();
    let s = s_in + frac * (s_out - s_in);
    let y = cache.flow(i, t, x, s).unwrap().clamp(0.0, 1.0);
    let (a, b) = cache.boundary_times(i, s, y).unwrap();
    (a - s_in).abs().max((b - s_out).abs())
}

/// Smallest forward difference of `s_in` and `s_out` in `t`.
pub fn time_increase(cache: &CharacteristicCache, i: usize, t: f64, x: f64, step: f64) -> f64 {
    let (a0, b0) = cache.boundary_times(i, t, x).unwrap();
    let (a1, b1) = cache.boundary_times(i, t + step, x).unwrap();
    (a1 - a0).min(b1 - b0)
}

/// Smallest signed forward difference in `x`: increasing for leftward
/// components, decreasing for rightward ones.
pub fn space_monotonicity(cache: &CharacteristicCache, i: usize, t: f64, x: f64, step: f64) -> f64 {
    let (a0, b0) = cache.boundary_times(i, t, x).unwrap();
    let (a1, b1) = cache.boundary_times(i, t, x + step).unwrap();
    let sign = if i < cache.spec().m { 1.0 } else { -1.0 };
    (sign * (a1 - a0)).min(sign * (b1 - b0))
}

/// Smallest gap `s_out_{i+1} − s_out_i` over the leftward components.
pub fn exit_ordering(cache: &CharacteristicCache, t: f64, x: f64) -> f64 {
    let m = cache.spec().m;
    (1..m)
        .map(|i| cache.exit_time(i, t, x).unwrap() - cache.exit_time(i - 1, t, x).unwrap())
        .fold(f64::INFINITY, f64::min)
}

/// Largest of `t − s_in` and `s_out − t` times `ε` (must stay below 1).
pub fn crossing_bound(cache: &CharacteristicCache, i: usize, t: f64, x: f64) -> f64 {
    let (a, b) = cache.boundary_times(i, t, x).unwrap();
    cache.spec().eps * (t - a).max(b - t)
}

/// Central differences of `ω^ν_i` in `t`, `x` and `ν`.
pub fn omega_derivatives(cache: &CharacteristicCache, i: usize, nu: f64, t: f64, x: f64, step: f64) -> [f64; 3] {
    let om = |nu: f64, t: f64, x: f64| cache.omega_exit(i, nu, t, x).unwrap();
    let d_t = (om(nu, t + step, x) - om(nu, t - step, x)) / (2.0 * step);
    let d_x = (om(nu, t, x + step) - om(nu, t, x - step)) / (2.0 * step);
    let hi = (nu + step).min(1.0);
    let d_nu = (om(hi, t, x) - om(nu - step, t, x)) / (hi - nu + step);
    [d_t, d_x, d_nu]
}

/// Largest increment of `s ↦ Ω_i(s, χ_i(s; t, x), χ_j(s; t, ξ))` over `steps`
/// forward steps of length `h` that stay inside `0 ≤ ξ ≤ x ≤ 1` (negative
/// when strictly decreasing).
#[allow(clippy::too_many_arguments)]
pub fn omega_along_flow(
    cache: &CharacteristicCache,
    i: usize,
    j: usize,
    nu: f64,
    t: f64,
    x: f64,
    xi: f64,
    h: f64,
    steps: usize,
) -> Option<f64> {
    let mut prev = cache.omega(i, nu, t, x, xi).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for q in 1..=steps {
        let s = t + q as f64 * h;
        let xs = cache.flow(i, t, x, s).unwrap();
        let xis = cache.flow(j, t, xi, s).unwrap();
        if !(0.0 <= xis && xis <= xs && xs <= 1.0) {
            break;
        }
        let cur = cache.omega(i, nu, s, xs, xis).unwrap();
        worst = worst.max(cur - prev);
        prev = cur;
    }
    (worst > f64::NEG_INFINITY).then_some(worst)
}

/// Runs every characteristics invariant at `samples` random points.
pub fn characteristics_invariants(spec: &SystemSpec, t_range: (f64, f64), samples: usize, seed: u64) -> Vec<Outcome> {
    let cache = cache_of(spec);
    let (n, m) = (spec.n, spec.m);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut group: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let mut increase = f64::INFINITY;
    let mut mono = f64::INFINITY;
    let mut order = f64::INFINITY;
    let mut bound: f64 = 0.0;
    for _ in 0..samples {
        let t = interior(&mut rng, t_range.0, t_range.1);
        let x = interior(&mut rng, 0.05, 0.95);
        let i = rng.random_range(0..n);
        // inside the domain and after t = 0, where the speeds are smooth
        let (s_in, s_out) = cache.boundary_times(i, t, x).unwrap();
        let lo = s_in.max(t_range.0);
        let s = interior(&mut rng, lo, s_out);
        let sigma = interior(&mut rng, lo, s_out);
        group = group.max(group_property(&cache, i, t, x, s, sigma));
        drift = drift.max(boundary_time_drift(&cache, i, t, x, interior(&mut rng, 0.1, 0.9)));
        increase = increase.min(time_increase(&cache, i, t, x, 1e-3));
        mono = mono.min(space_monotonicity(&cache, i, t, x, 1e-3));
        order = order.min(exit_ordering(&cache, t, x));
        bound = bound.max(crossing_bound(&cache, i, t, x));
    }
    let mut out = vec![
        Outcome::bound("flow group property", group, 10.0 * TOL_ROOT),
        Outcome::bound("boundary times constant along characteristics", drift, 10.0 * TOL_ROOT),
        Outcome::new("boundary times increase in t", increase > 0.0, format!("min difference {:.3e}", increase)),
        Outcome::new("boundary times monotone in x", mono > 0.0, format!("min signed difference {:.3e}", mono)),
        Outcome::new(
            "exit times ordered",
            m < 2 || order > 0.0,
            if m < 2 { "single leftward component".into() } else { format!("min gap {:.3e}", order) },
        ),
        Outcome::new("crossing times below 1/eps", bound < 1.0, format!("max eps*(crossing time) {:.4}", bound)),
    ];

    let ts: Vec<f64> = (0..5).map(|_| interior(&mut rng, t_range.0, t_range.1)).collect();
    let xs: Vec<f64> = (1..10).map(|q| q as f64 / 10.0).collect();
    let mut psi: f64 = 0.0;
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            psi = psi.max(check_psi(&cache, i, j, &ts, &xs, 1e-4, 1e-5).unwrap().residual);
        }
    }
    out.push(if m < 2 {
        Outcome::new("psi transport residual", true, "single leftward component".into())
    } else {
        Outcome::bound("psi transport residual", psi, 1e-5)
    });

    let t_nu: Vec<f64> = (0..=10).map(|q| t_range.0 + (t_range.1 - t_range.0) * q as f64 / 10.0).collect();
    let x_nu: Vec<f64> = (0..=10).map(|q| q as f64 / 10.0).collect();
    let mut d_min = [f64::INFINITY; 3];
    let mut along = f64::NEG_INFINITY;
    for i in 0..m {
        let nu = cache.omega_nu(i, &t_nu, &x_nu);
        for _ in 0..samples / m.max(1) {
            let t = interior(&mut rng, t_range.0, t_range.1);
            let x = interior(&mut rng, 0.05, 0.95);
            let scale = interior(&mut rng, nu, 1.0).min(1.0 - 1e-3);
            let d = omega_derivatives(&cache, i, scale, t, x, 1e-4);
            for q in 0..3 {
                d_min[q] = d_min[q].min(d[q]);
            }
            let xi = interior(&mut rng, 0.0, x);
            for j in i..n {
                if let Some(w) = omega_along_flow(&cache, i, j, nu, t, x, xi, 0.02, 5) {
                    along = along.max(w);
                }
            }
        }
    }
    out.push(Outcome::new("omega increases in t", d_min[0] > 0.0, format!("min {:.3e}", d_min[0])));
    out.push(Outcome::new("omega increases in x", d_min[1] > 0.0, format!("min {:.3e}", d_min[1])));
    out.push(Outcome::new("omega nondecreasing in nu", d_min[2] >= -1e-5, format!("min {:.3e}", d_min[2])));
    out.push(Outcome::new(
        "Omega decreasing along joint flows",
        along < 0.0,
        format!("max increment {:.3e}", along),
    ));
    out
}

// ---- transforms ----

fn two_sheet_distance(syn: &Synthesis, i: usize, t: f64, x: f64, xi: f64) -> f64 {
    (0..syn.kernel.n)
        .filter_map(|l| syn.kernel.psi_table(i, l))
        .map(|p| (xi - p.eval(t, x)).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Mean of `|d/ds k_ij + Σ_l k_il m̃_lj|` along the joint flow at random
/// interior points away from every `ψ` surface of row `i`.
pub fn kernel_pde_residual(syn: &Synthesis, t_range: (f64, f64), samples: usize, seed: u64) -> f64 {
    let cache = &syn.cache;
    let kernel = &syn.kernel;
    let n = kernel.n;
    let mut rng = StdRng::seed_from_u64(seed);
    let step = 0.02;
    let mut total = 0.0;
    let mut count = 0usize;
    while count < samples {
        let i = rng.random_range(0..kernel.rows);
        let j = rng.random_range(0..n);
        let t = interior(&mut rng, t_range.0, t_range.1);
        let x = interior(&mut rng, 0.25, 0.85);
        let xi = interior(&mut rng, 0.1, x - 0.1);
        let at = |s: f64| -> Option<(f64, f64)> {
            let xs = cache.flow(i, t, x, s).ok()?;
            let xis = cache.flow(j, t, xi, s).ok()?;
            (0.05 < xis && xis + 0.05 < xs && xs < 0.95 && two_sheet_distance(syn, i, s, xs, xis) > 0.05)
                .then_some((xs, xis))
        };
        let (Some(lo), Some(mid), Some(hi)) = (at(t - step), at(t), at(t + step)) else {
            continue;
        };
        let k = |s: f64, p: (f64, f64), l: usize| kernel.eval(i, l, s, p.0, p.1, Sheet::Auto).unwrap();
        let derivative = (k(t + step, hi, j) - k(t - step, lo, j)) / (2.0 * step);
        let source: f64 = (0..n).map(|l| k(t, mid, l) * syn.pre.mt[l][j].eval(t, mid.1)).sum();
        total += (derivative + source).abs();
        count += 1;
    }
    total / samples as f64
}

/// Largest `|k_ij(t, 1, ξ) − r_ij(t, 1)|` over nodes, `j < i < m`.
pub fn compatibility_residual(syn: &Synthesis) -> f64 {
    let kernel = &syn.kernel;
    let nx = kernel.grid.nx;
    let mut worst: f64 = 0.0;
    for i in 0..kernel.m {
        for j in 0..i {
            for k in 0..kernel.axis.len() {
                let expected = syn.pre.r[i][j].at(k, nx);
                for b in 0..=nx {
                    worst = worst.max((kernel.node(i, j, k, nx, b) - expected).abs());
                }
            }
        }
    }
    worst
}

pub fn trapezoid(nx: usize) -> Vec<f64> {
    let dx = 1.0 / nx as f64;
    (0..=nx).map(|a| if a == 0 || a == nx { 0.5 * dx } else { dx }).collect()
}

/// Largest nodal residual of `F²(ξ) − ∫ F²(ζ) H(ζ, ξ) dζ + H(1, ξ)` with the
/// trapezoid rule.
pub fn f2_residual(syn: &Synthesis) -> f64 {
    let (h, f2) = (&syn.h, &syn.f2);
    let (m, nx) = (h.m, h.grid.nx);
    let w = trapezoid(nx);
    let mut worst: f64 = 0.0;
    for k in 0..h.axis.len() {
        for i in 0..m {
            for j in 0..m {
                for b in 0..=nx {
                    let integral: f64 =
                        (0..m).map(|l| (0..=nx).map(|a| w[a] * f2.at(i, l, k, a) * h.node(l, j, k, a, b)).sum::<f64>()).sum();
                    worst = worst.max((f2.at(i, j, k, b) - integral + h.node(i, j, k, nx, b)).abs());
                }
            }
        }
    }
    worst
}

/// Applies the discretized operator `(Hf)_i(x) = Σ_j ∫ h_ij(x, ξ) f_j(ξ) dξ`
/// `m` times to a random test function at every time node; returns the
/// largest nodal value of the result.
pub fn nilpotency_residual(syn: &Synthesis, seed: u64) -> f64 {
    let h = &syn.h;
    let (m, nx) = (h.m, h.grid.nx);
    let w = trapezoid(nx);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..h.axis.len() {
        let mut f: Vec<Vec<f64>> = (0..m).map(|_| (0..=nx).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        for _ in 0..m {
            f = (0..m)
                .map(|i| {
                    (0..=nx)
                        .map(|a| (0..m).map(|j| (0..=nx).map(|b| w[b] * h.node(i, j, k, a, b) * f[j][b]).sum::<f64>()).sum())
                        .collect()
                })
                .collect();
        }
        worst = f.iter().flatten().fold(worst, |acc, v| acc.max(v.abs()));
    }
    worst
}

/// Largest reflection residual between nodes: `x` off the grid at a time
/// node, linear interpolation of both sides along `ξ = 0`.
pub fn reflection_between_nodes(syn: &Synthesis, samples: usize, seed: u64) -> f64 {
    let kernel = &syn.kernel;
    let (n, m) = (kernel.n, kernel.m);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = rng.random_range(0..kernel.axis.len());
        let t = kernel.axis.time(k);
        let x = rng.random_range(0.0..1.0);
        let i = rng.random_range(0..m);
        for j in i..m {
            let lhs = kernel.eval(i, j, t, x, 0.0, Sheet::Lower).unwrap();
            let rhs: f64 = (0..n - m)
                .map(|l| syn.pre.qt[l][j].eval(t) * kernel.eval(i, m + l, t, x, 0.0, Sheet::Auto).unwrap())
                .sum();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// Central part of the time window of a synthesis.
pub fn inner_times(syn: &Synthesis) -> (f64, f64) {
    match syn.kernel.axis {
        TimeAxis::Window { end, .. } => (0.0, end - 1.0),
        _ => (0.0, 1.0),
    }
}

/// Runs every transforms invariant on `coarse` and `fine` syntheses of the
/// same system (the fine one with twice the grid intervals).
pub fn transforms_invariants(coarse: &Synthesis, fine: &Synthesis) -> Vec<Outcome> {
    let syn = fine;
    let spec = syn.spec();
    let mut out = vec![
        Outcome::bound("trace identity", check_trace(spec, &syn.kernel, &syn.pre, 5.0 * TOL_FP).residual, 5.0 * TOL_FP),
        Outcome::bound("reflection identity at nodes", check_reflection(&syn.kernel, &syn.pre, 0.0).residual, 0.0),
        Outcome::bound(
            "reflection identity between nodes",
            reflection_between_nodes(syn, 200, 7),
            10.0 * syn.kernel.grid.dx().powi(2),
        ),
    ];
    let range = inner_times(syn);
    let r_coarse = kernel_pde_residual(coarse, range, 200, 11);
    let r_fine = kernel_pde_residual(fine, range, 200, 11);
    out.push(Outcome::new(
        "kernel equation residual shrinks under refinement",
        r_fine < r_coarse,
        format!("mean residual {:.3e} (nx = {}) -> {:.3e} (nx = {})", r_coarse, coarse.kernel.grid.nx, r_fine, fine.kernel.grid.nx),
    ));
    out.push(Outcome::bound("compatibility at x = 1", compatibility_residual(syn), TOL_TRI));
    out.push(Outcome::bound("G2 upper triangle", check_triangular(&syn.g2, TOL_TRI).residual, TOL_TRI));
    out.push(Outcome::bound("F2 equation residual", f2_residual(syn), 1e-8));
    out.push(Outcome::bound("Fredholm operator nilpotent", nilpotency_residual(syn, 3), 1e-12));
    out
}
