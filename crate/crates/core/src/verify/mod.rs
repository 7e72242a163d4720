//! Executable checks of the kernel identities, the characteristic
//! constructions and the closed-loop behaviour.
//!
//! Every check returns a [`CheckReport`]; `pass` holds exactly when the
//! residual does not exceed the tolerance. Stability probes sample finitely
//! many initial times and states, so they report trends, not proofs.

mod consistency;

pub use consistency::{
    check_transform_consistency, fredholm_target_system, transform_mismatch, volterra_source_system,
    volterra_target_system, ConsistencyLevel, ConsistencyProbe,
};

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::CharacteristicCache;
use crate::coeffs::SystemSpec;
use crate::error::{Error, Result};
use crate::grid::TimeAxis;
use crate::simulator::{simulate, GeneralSystem, SimOptions, StateSnapshot};
use crate::transforms::{G2Table, GainTable, KernelTable, Pretransform};

const MAX_OFFENDERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    /// Coordinates, labelled by `what`.
    pub at: Vec<f64>,
    pub what: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Worst points first, at most ten.
    pub offenders: Vec<Offender>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CheckReport {
    fn build(name: &str, samples: usize, residual: f64, tolerance: f64, mut offenders: Vec<Offender>) -> CheckReport {
        offenders.sort_by(|a, b| b.residual.total_cmp(&a.residual));
        offenders.truncate(MAX_OFFENDERS);
        CheckReport {
            name: name.into(),
            samples,
            residual,
            tolerance,
            pass: residual <= tolerance,
            offenders,
            notes: Vec::new(),
        }
    }

    /// Report without offenders.
    pub fn from_residual(name: &str, samples: usize, residual: f64, tolerance: f64) -> CheckReport {
        CheckReport::build(name, samples, residual, tolerance, Vec::new())
    }

    fn note(mut self, text: impl Into<String>) -> CheckReport {
        self.notes.push(text.into());
        self
    }

    /// One line: `name PASS|FAIL residual=… tolerance=… samples=…`.
    pub fn line(&self) -> String {
        format!(
            "{} {} residual={:.6e} tolerance={:.6e} samples={}",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.residual,
            self.tolerance,
            self.samples
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.line())?;
        for o in &self.offenders {
            writeln!(f, "  {} {:?} residual={:.6e}", o.what, o.at, o.residual)?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {}", n)?;
        }
        Ok(())
    }
}

/// Keeps the largest residuals seen so far.
#[derive(Default)]
struct Worst {
    max: f64,
    count: usize,
    list: Vec<Offender>,
}

impl Worst {
    fn push(&mut self, residual: f64, tol: f64, what: &str, at: &[f64]) {
        self.count += 1;
        let r = if residual.is_nan() { f64::INFINITY } else { residual };
        self.max = self.max.max(r);
        if r > tol {
            self.list.push(Offender { at: at.to_vec(), what: what.into(), residual: r });
            if self.list.len() > 4 * MAX_OFFENDERS {
                self.list.sort_by(|a, b| b.residual.total_cmp(&a.residual));
                self.list.truncate(MAX_OFFENDERS);
            }
        }
    }

    fn report(self, name: &str, tol: f64) -> CheckReport {
        CheckReport::build(name, self.count, self.max, tol, self.list)
    }
}

/// `(λ_j − λ_i) k_ij(t, x, x) = −m¹_ij(t, x)` at every diagonal node, rows
/// of negative speed, `j ≠ i`.
pub fn check_trace(spec: &SystemSpec, kernel: &KernelTable, pre: &Pretransform, tol: f64) -> CheckReport {
    let mut worst = Worst::default();
    for i in 0..kernel.m.min(kernel.rows) {
        for j in (0..kernel.n).filter(|&j| j != i) {
            for k in 0..kernel.axis.len() {
                let t = kernel.axis.time(k);
                for a in 0..kernel.grid.nodes() {
                    let x = kernel.grid.x(a);
                    let gap = spec.speed(j, t, x) - spec.speed(i, t, x);
                    // the diagonal lies on the upper sheet of two-sheet entries
                    let value = match &kernel.entry(i, j).upper {
                        Some(up) => up[kernel.node_index(k, a, a)],
                        None => kernel.node(i, j, k, a, a),
                    };
                    let r = (gap * value + pre.m1[i][j].at(k, a)).abs();
                    worst.push(r, tol, &format!("k[{}][{}] (t, x)", i, j), &[t, x]);
                }
            }
        }
    }
    worst.report("check_trace", tol)
}

/// `k_ij(t, x, 0) = Σ_l q̃_lj k_{i,m+l}(t, x, 0)` at the nodes, `i ≤ j < m`.
pub fn check_reflection(kernel: &KernelTable, pre: &Pretransform, tol: f64) -> CheckReport {
    let m = kernel.m;
    let mut worst = Worst::default();
    for i in 0..m.min(kernel.rows) {
        for j in i..m {
            for k in 0..kernel.axis.len() {
                let t = kernel.axis.time(k);
                for a in 0..kernel.grid.nodes() {
                    let idx = kernel.node_index(k, a, 0);
                    let mut expected = 0.0;
                    for l in 0..kernel.n - m {
                        expected += pre.qt[l][j].data[k] * kernel.entry(i, m + l).lower[idx];
                    }
                    let r = (kernel.entry(i, j).lower[idx] - expected).abs();
                    worst.push(r, tol, &format!("k[{}][{}] (t, x)", i, j), &[t, kernel.grid.x(a)]);
                }
            }
        }
    }
    worst.report("check_reflection", tol)
}

/// `max |g²_ij|` over `i ≤ j < m`.
pub fn check_triangular(g2: &G2Table, tol: f64) -> CheckReport {
    let mut worst = Worst::default();
    for i in 0..g2.m.min(g2.rows) {
        for j in i..g2.m {
            for k in 0..g2.axis.len() {
                for a in 0..g2.grid.nodes() {
                    let r = g2.g[i][j].at(k, a).abs();
                    worst.push(r, tol, &format!("g2[{}][{}] (t, x)", i, j), &[g2.axis.time(k), g2.grid.x(a)]);
                }
            }
        }
    }
    let report = worst.report("check_triangular", tol);
    if report.samples == 0 {
        report.note("no entries with i <= j < m")
    } else {
        report
    }
}

/// Closed-loop runs from each `(t⁰, y0)`; the residual is the largest
/// terminal ratio `‖y(t⁰ + T)‖ / ‖y0‖`.
pub fn check_finite_time(
    sys: &GeneralSystem,
    t0_list: &[f64],
    y0_list: &[StateSnapshot],
    horizon: f64,
    dt: f64,
    tol: f64,
) -> CheckReport {
    let runs: Vec<(f64, usize)> = t0_list.iter().flat_map(|&t0| (0..y0_list.len()).map(move |q| (t0, q))).collect();
    let opts = SimOptions { store_every: usize::MAX, ..Default::default() };
    let results: Vec<(f64, usize, Result<f64>)> = runs
        .par_iter()
        .map(|&(t0, q)| (t0, q, simulate(sys, t0, &y0_list[q], horizon, dt, &opts).map(|tr| tr.terminal_ratio())))
        .collect();
    let mut worst = Worst::default();
    let mut notes = Vec::new();
    for (t0, q, r) in results {
        match r {
            Ok(ratio) => worst.push(ratio, tol, "(t0, initial state)", &[t0, q as f64]),
            Err(e) => {
                notes.push(format!("t0 = {}, initial state {}: {}", t0, q, e));
                worst.push(f64::INFINITY, tol, "(t0, initial state)", &[t0, q as f64]);
            }
        }
    }
    let mut report = worst.report("check_finite_time", tol);
    report.notes = notes;
    report
}

/// Sup over `t⁰` of the largest norm ratio on `[t⁰, t⁰ + window]`; passes
/// when it stays below `bound`. The ratios per `t⁰` are listed in the notes.
pub fn check_uniform_stability(
    sys: &GeneralSystem,
    t0_grid: &[f64],
    y0: &StateSnapshot,
    window: f64,
    dt: f64,
    bound: f64,
) -> CheckReport {
    let opts = SimOptions { store_every: usize::MAX, ..Default::default() };
    let peaks: Vec<(f64, Result<f64>)> = t0_grid
        .par_iter()
        .map(|&t0| (t0, simulate(sys, t0, y0, window, dt, &opts).map(|tr| tr.peak_ratio())))
        .collect();
    let mut worst = Worst::default();
    let mut notes = vec!["sampled probe over finitely many initial times; not a proof".to_string()];
    for (t0, p) in &peaks {
        match p {
            Ok(v) => {
                worst.push(*v, bound, "t0", &[*t0]);
                notes.push(format!("t0 = {}: peak ratio {:.6e}", t0, v));
            }
            Err(e) => {
                worst.push(f64::INFINITY, bound, "t0", &[*t0]);
                notes.push(format!("t0 = {}: {}", t0, e));
            }
        }
    }
    let mut report = worst.report("check_uniform_stability", bound);
    report.notes = notes;
    report
}

/// Central-difference residual of `∂_tψ + λ_i ∂_xψ − λ_j(t, ψ)` at the
/// sample points where `ψ` lies strictly inside `(0, 1)`, plus `ψ(t, 0)`.
pub fn check_psi(
    cache: &CharacteristicCache,
    i: usize,
    j: usize,
    t_samples: &[f64],
    x_samples: &[f64],
    step: f64,
    tol: f64,
) -> Result<CheckReport> {
    let spec = cache.spec();
    let points: Vec<(f64, f64)> = t_samples.iter().flat_map(|&t| x_samples.iter().map(move |&x| (t, x))).collect();
    let values: Vec<Result<Option<f64>>> = points
        .par_iter()
        .map(|&(t, x)| {
            let lo = (x - step).max(0.0);
            let hi = (x + step).min(1.0);
            let centre = cache.psi(i, j, t, x)?;
            let around = [
                cache.psi(i, j, t - step, x)?,
                cache.psi(i, j, t + step, x)?,
                cache.psi(i, j, t, lo)?,
                cache.psi(i, j, t, hi)?,
            ];
            let margin = 1e-3;
            if around.iter().chain(std::iter::once(&centre)).any(|&p| p <= margin || p >= 1.0 - margin) {
                return Ok(None);
            }
            let dt = (around[1] - around[0]) / (2.0 * step);
            let dx = (around[3] - around[2]) / (hi - lo);
            Ok(Some((dt + spec.speed(i, t, x) * dx - spec.speed(j, t, centre)).abs()))
        })
        .collect();
    let mut worst = Worst::default();
    for ((t, x), v) in points.iter().zip(values) {
        if let Some(r) = v? {
            worst.push(r, tol, "(t, x)", &[*t, *x]);
        }
    }
    for &t in t_samples {
        worst.push(cache.psi(i, j, t, 0.0)?.abs(), tol, "boundary (t, 0)", &[t, 0.0]);
    }
    Ok(worst.report(&format!("check_psi[{}][{}]", i, j), tol))
}

/// `max |F(t + τ, ξ) − F(t, ξ)|` over nodes whose shifted time is also a
/// node. Time-independent tables pass trivially.
pub fn check_periodicity(gain: &GainTable, tau: Option<f64>, tol: f64) -> Result<CheckReport> {
    let tau = tau.ok_or_else(|| Error::Config("periodicity check needs a period".into()))?;
    let axis = gain.axis;
    let shift = match axis {
        TimeAxis::Stationary => 0,
        _ => {
            let u = tau / axis.step();
            let s = u.round();
            if (u - s).abs() > 1e-9 * u.max(1.0) || s < 1.0 {
                return Err(Error::Grid(format!("period {} is not a multiple of the time step {}", tau, axis.step())));
            }
            s as usize
        }
    };
    let nt = axis.len();
    if shift > 0 && shift >= nt {
        return Err(Error::Grid("time axis shorter than one period".into()));
    }
    let mut worst = Worst::default();
    for i in 0..gain.m {
        for j in 0..gain.n {
            for k in 0..nt - shift {
                for b in 0..gain.grid.nodes() {
                    let r = (gain.at(i, j, k + shift, b) - gain.at(i, j, k, b)).abs();
                    worst.push(r, tol, &format!("F[{}][{}] (t, xi)", i, j), &[axis.time(k), gain.grid.x(b)]);
                }
            }
        }
    }
    let report = worst.report("check_periodicity", tol);
    Ok(if shift == 0 { report.note("time-independent table") } else { report })
}

/// Checks on `Ω_i = ω¹_i(t, x) − ω^ν_i(t, ξ)`: non-negativity on `ξ ≤ x`,
/// the directional derivatives along `(1, λ_i(t, x), λ_j(t, ξ))` (positive
/// for `j < i`, negative for `j ≥ i`, by central differences with `step`),
/// and monotone decrease along joint characteristics for `j ≥ i`.
/// The residual is minus the smallest margin; the tolerance is zero.
pub fn check_omega(
    cache: &CharacteristicCache,
    i: usize,
    nu: f64,
    points: &[(f64, f64, f64)],
    step: f64,
) -> Result<CheckReport> {
    let spec = cache.spec();
    let n = spec.n;
    let results: Vec<Result<Vec<(f64, String)>>> = points
        .par_iter()
        .map(|&(t, x, xi)| {
            let om = |t: f64, x: f64, xi: f64| cache.omega(i, nu, t, x.clamp(0.0, 1.0), xi.clamp(0.0, 1.0));
            let mut out = vec![(om(t, x, xi)?, "omega".to_string())];
            let xs = (x - step).max(0.0)..=(x + step).min(1.0);
            let xis = (xi - step).max(0.0)..=(xi + step).min(1.0);
            let d_t = (om(t + step, x, xi)? - om(t - step, x, xi)?) / (2.0 * step);
            let d_x = (om(t, *xs.end(), xi)? - om(t, *xs.start(), xi)?) / (xs.end() - xs.start());
            let d_xi = (om(t, x, *xis.end())? - om(t, x, *xis.start())?) / (xis.end() - xis.start());
            for j in 0..n {
                let d = d_t + spec.speed(i, t, x) * d_x + spec.speed(j, t, xi) * d_xi;
                let margin = if j < i { d } else { -d };
                out.push((margin, format!("derivative j={}", j)));
            }
            // decrease along the joint flow for j >= i, a few short steps forward
            for j in i..n {
                let mut prev = om(t, x, xi)?;
                for q in 1..=5 {
                    let s = t + 0.01 * q as f64;
                    let (xs, xis) = (cache.flow(i, t, x, s)?, cache.flow(j, t, xi, s)?);
                    if !(0.0..=1.0).contains(&xs) || !(0.0..=1.0).contains(&xis) || xis > xs {
                        break;
                    }
                    let v = om(s, xs, xis)?;
                    out.push((prev - v, format!("monotone j={}", j)));
                    prev = v;
                }
            }
            Ok(out)
        })
        .collect();
    let mut worst = Worst::default();
    let mut min_margin = f64::INFINITY;
    for (p, r) in points.iter().zip(results) {
        for (margin, what) in r? {
            min_margin = min_margin.min(margin);
            worst.push(-margin, 0.0, &what, &[p.0, p.1, p.2]);
        }
    }
    let mut report = worst.report(&format!("check_omega[{}]", i), 0.0);
    report.residual = -min_margin;
    report.pass = report.residual <= 0.0;
    Ok(report.note(format!("smallest margin {:.6e} with nu = {}", min_margin, nu)))
}
