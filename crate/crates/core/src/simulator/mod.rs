//! Semi-Lagrangian time marching of the general closed-loop system
//!
//! `y_t + Λ y_x = M y + G y(t, 0)`, `y_-(t, 1) = ∫₀¹ F(t, ξ) y(t, ξ) dξ`,
//! `y_+(t, 0) = Q y_-(t, 0)`,
//!
//! and the Volterra and Fredholm state transformations.

mod apply;
mod io;

pub use apply::{apply_fredholm, apply_volterra, invert_fredholm, l2_norm};
pub use io::{norms_to_csv, trace_to_csv};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coeffs::{ScalarField, SystemSpec};
use crate::error::{Error, Result};
use crate::grid::{interp_uniform, TLine, TxTable, Uniform};
use crate::transforms::GainTable;

/// Values of all components on a uniform grid at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub t: f64,
    pub grid: Uniform,
    /// `values[i][k] = y_i(t, x_k)`.
    pub values: Vec<Vec<f64>>,
}

impl StateSnapshot {
    pub fn zeros(t: f64, grid: Uniform, n: usize) -> StateSnapshot {
        StateSnapshot { t, grid, values: vec![vec![0.0; grid.nodes()]; n] }
    }

    pub fn from_fn(t: f64, grid: Uniform, n: usize, f: impl Fn(usize, f64) -> f64) -> StateSnapshot {
        let values = (0..n).map(|i| (0..grid.nodes()).map(|k| f(i, grid.x(k))).collect()).collect();
        StateSnapshot { t, grid, values }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// `y_i(t, x)` by linear interpolation.
    pub fn eval(&self, i: usize, x: f64) -> f64 {
        interp_uniform(&self.values[i], self.grid, x)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Largest nodal difference to another snapshot on the same grid.
    pub fn sup_diff(&self, other: &StateSnapshot) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub l2: f64,
    /// `max_i |y_i(t, 1)|` over the controlled components.
    pub feedback_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    /// Snapshots at `t⁰, t⁰ + Δt, …`; every `store_every`-th step plus the last.
    pub snapshots: Vec<StateSnapshot>,
    /// One record per step, including the initial time.
    pub records: Vec<StepRecord>,
}

impl Trace {
    pub fn last(&self) -> &StateSnapshot {
        self.snapshots.last().expect("a trace holds at least the initial state")
    }

    pub fn first(&self) -> &StateSnapshot {
        &self.snapshots[0]
    }

    /// Terminal norm over initial norm.
    pub fn terminal_ratio(&self) -> f64 {
        let (a, b) = (self.records[0].l2, self.records.last().unwrap().l2);
        if a == 0.0 {
            b
        } else {
            b / a
        }
    }

    /// Largest norm ratio along the trace.
    pub fn peak_ratio(&self) -> f64 {
        let a = self.records[0].l2;
        let peak = self.records.iter().fold(0.0f64, |p, r| p.max(r.l2));
        if a == 0.0 {
            peak
        } else {
            peak / a
        }
    }
}

/// A coefficient of the simulated system.
#[derive(Debug, Clone)]
pub enum Coef {
    Field(ScalarField),
    Table(TxTable),
    /// Depends on time only.
    Line(TLine),
}

impl Coef {
    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Coef::Field(f) => f.eval(t.max(0.0), x.clamp(0.0, 1.0)),
            Coef::Table(tab) => tab.eval(t, x.clamp(0.0, 1.0)),
            Coef::Line(line) => line.eval(t),
        }
    }
}

/// The system `(M, G, F, Q)`: speeds come from `spec`, every other
/// coefficient is given explicitly (`None` is zero).
#[derive(Debug, Clone)]
pub struct GeneralSystem {
    pub spec: Arc<SystemSpec>,
    /// `n × n`.
    pub coupling: Vec<Vec<Option<Coef>>>,
    /// `n × n`, multiplies `y(t, 0)`.
    pub g: Vec<Vec<Option<Coef>>>,
    /// `(n − m) × m`; evaluated at `x = 0`.
    pub boundary: Vec<Vec<Option<Coef>>>,
    /// `m × n`; `None` leaves `y_-(t, 1) = 0`.
    pub gain: Option<GainTable>,
}

fn from_fields(rows: &[Vec<ScalarField>]) -> Vec<Vec<Option<Coef>>> {
    rows.iter()
        .map(|r| r.iter().map(|f| if f.is_zero() { None } else { Some(Coef::Field(f.clone())) }).collect())
        .collect()
}

impl GeneralSystem {
    /// The plant itself with `y_-(t, 1) = 0`.
    pub fn open_loop(spec: &SystemSpec) -> GeneralSystem {
        let n = spec.n;
        GeneralSystem {
            spec: Arc::new(spec.clone()),
            coupling: from_fields(&spec.coupling),
            g: vec![vec![None; n]; n],
            boundary: from_fields(&spec.boundary),
            gain: None,
        }
    }

    /// The plant with `y_-(t, 1) = ∫ F y`.
    pub fn closed_loop(spec: &SystemSpec, gain: GainTable) -> Result<GeneralSystem> {
        GeneralSystem::open_loop(spec).with_gain(Some(gain))
    }

    pub fn with_gain(mut self, gain: Option<GainTable>) -> Result<GeneralSystem> {
        if let Some(g) = &gain {
            if g.m != self.spec.m || g.n != self.spec.n {
                return Err(Error::Grid(format!(
                    "gain is {} × {}, system needs {} × {}",
                    g.m, g.n, self.spec.m, self.spec.n
                )));
            }
        }
        self.gain = gain;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    fn check(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let ok = self.coupling.len() == n
            && self.coupling.iter().all(|r| r.len() == n)
            && self.g.len() == n
            && self.g.iter().all(|r| r.len() == n)
            && self.boundary.len() == n - m
            && self.boundary.iter().all(|r| r.len() == m);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec("coefficient shapes do not match the system size".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// RK4 sub-step bound for tracing feet.
    pub h_ode: f64,
    /// Keep every `store_every`-th snapshot (the last one is always kept).
    pub store_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { h_ode: 1e-3, store_every: 1 }
    }
}

/// Where the backward characteristic through a node lands one step earlier.
#[derive(Debug, Clone, Copy)]
enum Foot {
    /// Inside the domain at the previous time level: cell and weight.
    Inside { x: f64, cell: usize, w: f64 },
    /// Through the inflow boundary at time `t + frac·Δt`.
    Boundary { frac: f64, x: f64 },
}

fn trace_foot(spec: &SystemSpec, i: usize, t1: f64, x: f64, dt: f64, h_ode: f64, grid: Uniform) -> Foot {
    let nsub = (dt / h_ode).ceil().max(1.0) as usize;
    let h = dt / nsub as f64;
    let (mut s, mut y) = (t1, x);
    let f = |s: f64, y: f64| spec.speed(i, s, y);
    for _ in 0..nsub {
        let k1 = f(s, y);
        let k2 = f(s - 0.5 * h, y - 0.5 * h * k1);
        let k3 = f(s - 0.5 * h, y - 0.5 * h * k2);
        let k4 = f(s - h, y - h * k3);
        let next = y - h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        if !(0.0..=1.0).contains(&next) {
            let edge = if next > 1.0 { 1.0 } else { 0.0 };
            let sc = s - h * (y - edge) / (y - next);
            return Foot::Boundary { frac: ((sc - (t1 - dt)) / dt).clamp(0.0, 1.0), x: edge };
        }
        s -= h;
        y = next;
    }
    let (cell, w) = grid.cell(y);
    Foot::Inside { x: y, cell, w }
}

struct Stepper<'a> {
    sys: &'a GeneralSystem,
    grid: Uniform,
    dt: f64,
    opts: SimOptions,
    /// Cached feet when the speeds do not depend on time.
    feet: Option<Vec<Vec<Foot>>>,
    weights: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn feet(&self, t1: f64) -> Vec<Vec<Foot>> {
        let spec = &self.sys.spec;
        (0..spec.n)
            .map(|i| {
                (0..self.grid.nodes())
                    .map(|k| trace_foot(spec, i, t1, self.grid.x(k), self.dt, self.opts.h_ode, self.grid))
                    .collect()
            })
            .collect()
    }

    /// `Σ_j M_ij y_j(x) + Σ_j G_ij y_j(0)` with `y` given by `value(j)` and
    /// `origin(j)`.
    fn source(&self, i: usize, t: f64, x: f64, value: impl Fn(usize) -> f64, origin: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for (j, c) in self.sys.coupling[i].iter().enumerate() {
            if let Some(c) = c {
                acc += c.eval(t, x) * value(j);
            }
        }
        for (j, c) in self.sys.g[i].iter().enumerate() {
            if let Some(c) = c {
                acc += c.eval(t, x) * origin(j);
            }
        }
        acc
    }

    /// Controls `∫ F(t, ξ) y(t, ξ) dξ` for each of the first `m` components.
    fn feedback(&self, t: f64, y: &[Vec<f64>]) -> Vec<f64> {
        let m = self.sys.m();
        let Some(gain) = &self.sys.gain else {
            return vec![0.0; m];
        };
        let f = gain.resample(t, self.grid);
        let nn = self.grid.nodes();
        (0..m)
            .map(|i| {
                let mut acc = 0.0;
                for (j, yj) in y.iter().enumerate() {
                    let row = &f[(i * gain.n + j) * nn..(i * gain.n + j + 1) * nn];
                    acc += row.iter().zip(yj).zip(&self.weights).map(|((a, b), w)| a * b * w).sum::<f64>();
                }
                acc
            })
            .collect()
    }

    fn reflect(&self, t: f64, y: &[Vec<f64>]) -> Vec<f64> {
        self.sys
            .boundary
            .iter()
            .map(|row| row.iter().enumerate().map(|(j, c)| c.as_ref().map_or(0.0, |c| c.eval(t, 0.0)) * y[j][0]).sum())
            .collect()
    }

    /// Inflow boundary values at time `t` from the state `y`.
    fn boundary_values(&self, t: f64, y: &[Vec<f64>]) -> Vec<f64> {
        let mut b = self.feedback(t, y);
        b.extend(self.reflect(t, y));
        b
    }

    /// One sweep: new values at `t + Δt` given the old state, the old and
    /// estimated new inflow values, and the current estimate of the new
    /// state (used for the coupling at the head of each characteristic).
    fn sweep(&self, t: f64, old: &[Vec<f64>], b_old: &[f64], b_new: &[f64], est: &[Vec<f64>], feet: &[Vec<Foot>]) -> Vec<Vec<f64>> {
        let (n, m) = (self.sys.n(), self.sys.m());
        let t1 = t + self.dt;
        let nx = self.grid.nx;
        let mut out = vec![vec![0.0; self.grid.nodes()]; n];
        for i in 0..n {
            let inflow = if i < m { nx } else { 0 };
            for k in 0..self.grid.nodes() {
                if k == inflow {
                    out[i][k] = b_new[i];
                    continue;
                }
                let xk = self.grid.x(k);
                let head = self.source(i, t1, xk, |j| est[j][k], |j| est[j][0]);
                let (v0, s_foot, foot_src) = match feet[i][k] {
                    Foot::Inside { x, cell, w } => {
                        let at = |j: usize| old[j][cell] * (1.0 - w) + old[j][cell + 1] * w;
                        (at(i), t, self.source(i, t, x, at, |j| old[j][0]))
                    }
                    Foot::Boundary { frac, x } => {
                        let s = t + frac * self.dt;
                        let edge = if x >= 1.0 { nx } else { 0 };
                        let v = b_old[i] + frac * (b_new[i] - b_old[i]);
                        (v, s, self.source(i, s, x, |j| old[j][edge], |j| old[j][0]))
                    }
                };
                out[i][k] = v0 + 0.5 * (t1 - s_foot) * (foot_src + head);
            }
        }
        out
    }

    fn set_boundary(&self, t: f64, y: &mut [Vec<f64>]) {
        let m = self.sys.m();
        let nx = self.grid.nx;
        let b = self.boundary_values(t, y);
        for (i, v) in b.into_iter().enumerate() {
            if i < m {
                y[i][nx] = v;
            } else {
                y[i][0] = v;
            }
        }
    }

    fn step(&self, t: f64, old: &[Vec<f64>], b_old: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let t1 = t + self.dt;
        let owned;
        let feet = match &self.feet {
            Some(f) => f,
            None => {
                owned = self.feet(t1);
                &owned
            }
        };
        let b_pred = self.boundary_values(t1, old);
        let pred = self.sweep(t, old, b_old, &b_pred, old, feet);
        let b_corr = self.boundary_values(t1, &pred);
        let mut new = self.sweep(t, old, b_old, &b_corr, &pred, feet);
        self.set_boundary(t1, &mut new);
        let b_new = self.inflow_values(&new);
        (new, b_new)
    }

    fn inflow_values(&self, y: &[Vec<f64>]) -> Vec<f64> {
        let m = self.sys.m();
        let nx = self.grid.nx;
        y.iter().enumerate().map(|(i, c)| if i < m { c[nx] } else { c[0] }).collect()
    }
}

/// Marches the system from `(t0, y0)` over `horizon` with step `dt` on the
/// grid of `y0`. The number of steps is `⌈horizon/dt⌉`.
pub fn simulate(sys: &GeneralSystem, t0: f64, y0: &StateSnapshot, horizon: f64, dt: f64, opts: &SimOptions) -> Result<Trace> {
    sys.check()?;
    if y0.n() != sys.n() {
        return Err(Error::Grid(format!("initial state has {} components, system has {}", y0.n(), sys.n())));
    }
    if !(dt > 0.0) || !(horizon >= 0.0) || opts.store_every == 0 {
        return Err(Error::Config("need dt > 0, horizon >= 0 and store_every >= 1".into()));
    }
    if !y0.is_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    let grid = y0.grid;
    let dx = grid.dx();
    let weights = (0..grid.nodes()).map(|k| if k == 0 || k == grid.nx { 0.5 * dx } else { dx }).collect();
    let mut stepper = Stepper { sys, grid, dt, opts: *opts, feet: None, weights };
    if sys.spec.speeds_time_independent() {
        stepper.feet = Some(stepper.feet(t0 + dt));
    }
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut state = y0.values.clone();
    let b0 = stepper.boundary_values(t0, &state);
    let feedback_sup = |b: &[f64]| b[..sys.m()].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let first = StateSnapshot { t: t0, grid, values: state.clone() };
    let mut b: Vec<f64> = stepper.inflow_values(&state).iter().zip(&b0).map(|(a, c)| 0.5 * (a + c)).collect();
    for (i, v) in b.iter().enumerate() {
        let k = if i < sys.m() { grid.nx } else { 0 };
        state[i][k] = *v;
    }
    let mut records = vec![StepRecord { t: t0, l2: l2_norm(&first), feedback_sup: feedback_sup(&b0) }];
    let mut snapshots = vec![first];
    for step in 1..=steps {
        let t = t0 + (step - 1) as f64 * dt;
        let (new, b_new) = stepper.step(t, &state, &b);
        let t1 = t0 + step as f64 * dt;
        if new.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("simulated state at t = {}", t1)));
        }
        state = new;
        b = b_new;
        let snap = StateSnapshot { t: t1, grid, values: state.clone() };
        records.push(StepRecord { t: t1, l2: l2_norm(&snap), feedback_sup: feedback_sup(&b) });
        if step % opts.store_every == 0 || step == steps {
            snapshots.push(snap);
        }
    }
    Ok(Trace { dt, snapshots, records })
}

/// Adds `α_i x⁴` to each controlled component so that
/// `y_-(t⁰, 1) = ∫ F(t⁰, ξ) y(ξ) dξ` holds for the trapezoid quadrature on
/// the snapshot grid. The positive components are left unchanged.
pub fn make_compatible(gain: &GainTable, y0: &StateSnapshot) -> Result<StateSnapshot> {
    let (m, n) = (gain.m, gain.n);
    if y0.n() != n {
        return Err(Error::Grid(format!("state has {} components, gain expects {}", y0.n(), n)));
    }
    let grid = y0.grid;
    let dx = grid.dx();
    let quad = |i: usize, j: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        (0..grid.nodes())
            .map(|k| {
                let w = if k == 0 || k == grid.nx { 0.5 * dx } else { dx };
                w * gain.eval(i, j, y0.t, grid.x(k)) * f(k)
            })
            .sum()
    };
    // (I − A) α = b with A_il = ∫ F_il x⁴ and b_i = ∫ F_i· y0 − y0_i(1)
    let mut a = vec![vec![0.0; m + 1]; m];
    for i in 0..m {
        for l in 0..m {
            a[i][l] = f64::from(u8::from(i == l)) - quad(i, l, &|k| grid.x(k).powi(4));
        }
        a[i][m] = (0..n).map(|j| quad(i, j, &|k| y0.values[j][k])).sum::<f64>() - y0.values[i][grid.nx];
    }
    for c in 0..m {
        let p = (c..m).max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs())).unwrap();
        if a[p][c].abs() < 1e-12 {
            return Err(Error::Numerical("compatibility correction is singular".into()));
        }
        a.swap(c, p);
        for r in 0..m {
            if r != c {
                let f = a[r][c] / a[c][c];
                for q in c..=m {
                    a[r][q] -= f * a[c][q];
                }
            }
        }
    }
    let mut out = y0.clone();
    for i in 0..m {
        let alpha = a[i][m] / a[i][i];
        for k in 0..grid.nodes() {
            out.values[i][k] += alpha * grid.x(k).powi(4);
        }
    }
    Ok(out)
}
