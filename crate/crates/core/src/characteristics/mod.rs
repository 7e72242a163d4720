//! Characteristic flows `dχ_i/ds = λ_i(s, χ_i)`, their boundary entry and
//! exit times, crossing times of pairs of flows, the surfaces `ψ_ij` and
//! the weight `Ω` used in the kernel contraction estimate.

mod topt;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

pub use topt::{compute_topt, settling_from, topt_time_independent, ToptConfig, ToptResult};

use crate::coeffs::SystemSpec;
use crate::error::{Error, Result};

/// Step and root tolerances for flow integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub h_ode: f64,
    pub tol_root: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { h_ode: 1e-3, tol_root: 1e-10 }
    }
}

/// Conditions that stop the joint march of two flows `χ_i(s; t, x)` and
/// `χ_j(s; t, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEvent {
    /// The two flows meet (`x(s) = ξ(s)`).
    Meet,
    /// `x(s)` reaches 1.
    XHigh,
    /// `x(s)` reaches 0.
    XLow,
    /// `ξ(s)` reaches 0.
    XiLow,
    /// `ξ(s)` reaches 1.
    XiHigh,
}

impl PathEvent {
    #[inline]
    fn gauge(self, x: f64, xi: f64) -> f64 {
        match self {
            PathEvent::Meet => x - xi,
            PathEvent::XHigh => 1.0 - x,
            PathEvent::XLow => x,
            PathEvent::XiLow => xi,
            PathEvent::XiHigh => 1.0 - xi,
        }
    }
}

/// Point of a joint march.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPoint {
    pub s: f64,
    pub x: f64,
    pub xi: f64,
}

/// Result of a joint march.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEnd {
    pub point: PairPoint,
    pub event: PathEvent,
}

/// Direction of a crossing-time query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

type MemoKey = (usize, u64, u64);

/// Flow integrator with memoized boundary times. Safe to share between
/// threads.
#[derive(Debug)]
pub struct CharacteristicCache {
    spec: Arc<SystemSpec>,
    cfg: FlowConfig,
    budget: f64,
    exits: RwLock<HashMap<MemoKey, f64>>,
    entries: RwLock<HashMap<MemoKey, f64>>,
}

const MEMO_LIMIT: usize = 1 << 20;

impl CharacteristicCache {
    pub fn new(spec: Arc<SystemSpec>, cfg: FlowConfig) -> CharacteristicCache {
        let budget = 2.0 / spec.eps;
        CharacteristicCache { spec, cfg, budget, exits: RwLock::default(), entries: RwLock::default() }
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> Arc<SystemSpec> {
        self.spec.clone()
    }

    pub fn config(&self) -> FlowConfig {
        self.cfg
    }

    /// Largest admissible travel time for one crossing of `[0, 1]`.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.spec.n {
            return Err(Error::Index(format!("component {} out of range for n = {}", i, self.spec.n)));
        }
        Ok(())
    }

    #[inline]
    fn rk4(&self, i: usize, scale: f64, s: f64, y: f64, h: f64) -> f64 {
        let f = |s: f64, y: f64| scale * self.spec.speed(i, s, y);
        let k1 = f(s, y);
        let k2 = f(s + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(s + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(s + h, y + h * k3);
        y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    /// `χ_i(s; t, x)`: the flow through `(t, x)` evaluated at time `s`.
    /// The speed is continued constantly outside `[0, 1]`.
    pub fn flow(&self, i: usize, t: f64, x: f64, s: f64) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.flow_unchecked(i, 1.0, t, x, s))
    }

    fn flow_unchecked(&self, i: usize, scale: f64, t: f64, x: f64, s: f64) -> f64 {
        let span = s - t;
        if span == 0.0 {
            return x;
        }
        let steps = (span.abs() / self.cfg.h_ode).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let mut y = x;
        for k in 0..steps {
            y = self.rk4(i, scale, t + k as f64 * h, y, h);
        }
        y
    }

    // March one flow from (t, x) in direction `dir` until it reaches `target`
    // (0 or 1). Returns the crossing time.
    fn march_to(&self, i: usize, scale: f64, t: f64, x: f64, dir: f64, target: f64) -> Result<f64> {
        let gauge = |y: f64| if target == 0.0 { y } else { 1.0 - y };
        if gauge(x) <= 0.0 {
            return Ok(t);
        }
        let h = dir * self.cfg.h_ode;
        let max_steps = (self.budget / self.cfg.h_ode).ceil() as usize + 1;
        let (mut s, mut y) = (t, x);
        for _ in 0..max_steps {
            let y_next = self.rk4(i, scale, s, y, h);
            if gauge(y_next) <= 0.0 {
                let (mut lo, mut hi) = (0.0, 1.0);
                while (hi - lo) * self.cfg.h_ode > self.cfg.tol_root {
                    let mid = 0.5 * (lo + hi);
                    if gauge(self.rk4(i, scale, s, y, mid * h)) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(s + 0.5 * (lo + hi) * h);
            }
            s += h;
            y = y_next;
        }
        Err(Error::NoExit { component: i, t, x, budget: self.budget })
    }

    fn outflow_boundary(&self, i: usize) -> f64 {
        if i < self.spec.m {
            0.0
        } else {
            1.0
        }
    }

    /// Exit time `s_out_i(t, x) ≥ t`.
    pub fn exit_time(&self, i: usize, t: f64, x: f64) -> Result<f64> {
        self.check_index(i)?;
        let key = (i, t.to_bits(), x.to_bits());
        if let Some(&v) = self.exits.read().unwrap().get(&key) {
            return Ok(v);
        }
        let v = self.march_to(i, 1.0, t, x, 1.0, self.outflow_boundary(i))?;
        let mut memo = self.exits.write().unwrap();
        if memo.len() > MEMO_LIMIT {
            memo.clear();
        }
        memo.insert(key, v);
        Ok(v)
    }

    /// Entry time `s_in_i(t, x) ≤ t`.
    pub fn entry_time(&self, i: usize, t: f64, x: f64) -> Result<f64> {
        self.check_index(i)?;
        let key = (i, t.to_bits(), x.to_bits());
        if let Some(&v) = self.entries.read().unwrap().get(&key) {
            return Ok(v);
        }
        let v = self.march_to(i, 1.0, t, x, -1.0, 1.0 - self.outflow_boundary(i))?;
        let mut memo = self.entries.write().unwrap();
        if memo.len() > MEMO_LIMIT {
            memo.clear();
        }
        memo.insert(key, v);
        Ok(v)
    }

    /// `(s_in_i(t, x), s_out_i(t, x))`.
    pub fn boundary_times(&self, i: usize, t: f64, x: f64) -> Result<(f64, f64)> {
        Ok((self.entry_time(i, t, x)?, self.exit_time(i, t, x)?))
    }

    /// Exit time at `x = 0` of the slowed flow `dχ/ds = λ_i/ν`
    /// (`i` must be a negative-speed component).
    pub fn omega_exit(&self, i: usize, nu: f64, t: f64, x: f64) -> Result<f64> {
        self.check_index(i)?;
        if i >= self.spec.m {
            return Err(Error::Index(format!("component {} has positive speed", i)));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::Config(format!("speed scale must lie in (0, 1], got {}", nu)));
        }
        self.march_to(i, 1.0 / nu, t, x, 1.0, 0.0)
    }

    /// Jointly march `χ_i(·; t, x)` and `χ_j(·; t, ξ)` with step `h` in the
    /// given direction until the first of `events` fires. `visit` sees
    /// every accepted point, including the start and the end.
    #[allow(clippy::too_many_arguments)]
    pub fn march_pair(
        &self,
        i: usize,
        j: usize,
        start: PairPoint,
        direction: Direction,
        events: &[PathEvent],
        h: f64,
        mut visit: impl FnMut(PairPoint),
    ) -> Result<PairEnd> {
        let dir = match direction {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        };
        visit(start);
        for &ev in events {
            if ev.gauge(start.x, start.xi) <= 0.0 {
                return Ok(PairEnd { point: start, event: ev });
            }
        }
        let step = dir * h;
        let max_steps = (self.budget / h).ceil() as usize + 2;
        let mut p = start;
        for _ in 0..max_steps {
            let advance = |frac: f64| PairPoint {
                s: p.s + frac * step,
                x: self.rk4(i, 1.0, p.s, p.x, frac * step),
                xi: self.rk4(j, 1.0, p.s, p.xi, frac * step),
            };
            let next = advance(1.0);
            let fired: Vec<PathEvent> =
                events.iter().copied().filter(|ev| ev.gauge(next.x, next.xi) <= 0.0).collect();
            if fired.is_empty() {
                visit(next);
                p = next;
                continue;
            }
            // earliest of the fired events
            let mut best: Option<(f64, PathEvent)> = None;
            for ev in fired {
                let (mut lo, mut hi) = (0.0, 1.0);
                while (hi - lo) * h > self.cfg.tol_root {
                    let mid = 0.5 * (lo + hi);
                    let q = advance(mid);
                    if ev.gauge(q.x, q.xi) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if best.map_or(true, |(f, _)| hi < f) {
                    best = Some((hi, ev));
                }
            }
            let (frac, event) = best.expect("at least one event fired");
            let mut end = advance(frac);
            match event {
                PathEvent::Meet => end.xi = end.x,
                PathEvent::XHigh => end.x = 1.0,
                PathEvent::XLow => end.x = 0.0,
                PathEvent::XiLow => end.xi = 0.0,
                PathEvent::XiHigh => end.xi = 1.0,
            }
            visit(end);
            return Ok(PairEnd { point: end, event });
        }
        Err(Error::NoExit { component: i, t: start.s, x: start.x, budget: self.budget })
    }

    /// Events that end the characteristic of kernel entry `(i, j)`, and the
    /// direction it is followed in.
    ///
    /// Rows of negative-speed components: entries left of the diagonal run
    /// backward to the diagonal or to `x = 1`; the others run forward to the
    /// diagonal or to `ξ = 0`. Rows of positive-speed components run
    /// backward to the diagonal, or also to `ξ = 0` when the column speed is
    /// positive.
    pub fn kernel_path_rule(&self, i: usize, j: usize) -> (Direction, &'static [PathEvent]) {
        let m = self.spec.m;
        if i < m {
            if j < i {
                (Direction::Backward, &[PathEvent::Meet, PathEvent::XHigh])
            } else if j == i {
                (Direction::Forward, &[PathEvent::XiLow])
            } else if j < m {
                (Direction::Forward, &[PathEvent::XiLow, PathEvent::Meet])
            } else {
                (Direction::Forward, &[PathEvent::Meet])
            }
        } else if j == i {
            (Direction::Backward, &[PathEvent::XiLow])
        } else if j < m {
            (Direction::Backward, &[PathEvent::Meet])
        } else {
            (Direction::Backward, &[PathEvent::Meet, PathEvent::XiLow])
        }
    }

    /// Crossing time of the characteristic of kernel entry `(i, j)` from
    /// `(t, x, ξ)`: the backward entry time for `j < i`, the forward exit
    /// time otherwise (rows `i < m`). Returns `None` when `direction` does
    /// not match the entry.
    pub fn crossing_time(
        &self,
        i: usize,
        j: usize,
        t: f64,
        x: f64,
        xi: f64,
        direction: Direction,
    ) -> Result<Option<f64>> {
        self.check_index(i)?;
        self.check_index(j)?;
        if !(0.0..=1.0).contains(&xi) || !(xi <= x && x <= 1.0) {
            return Err(Error::OutOfDomain { t, x });
        }
        let (dir, events) = self.kernel_path_rule(i, j);
        if dir != direction {
            return Ok(None);
        }
        let end = self.march_pair(i, j, PairPoint { s: t, x, xi }, dir, events, self.cfg.h_ode, |_| {})?;
        Ok(Some(end.point.s))
    }

    /// `ψ_ij(t, x) ∈ [0, 1]` for negative-speed components `i ≠ j`: the
    /// position `ξ` whose `j`-flow leaves at `x = 0` together with the
    /// `i`-flow from `x`.
    pub fn psi(&self, i: usize, j: usize, t: f64, x: f64) -> Result<f64> {
        let m = self.spec.m;
        if i >= m || j >= m || i == j {
            return Err(Error::Index(format!("psi needs distinct negative-speed components, got ({}, {})", i, j)));
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        let s = self.exit_time(i, t, x)?;
        if self.exit_time(j, t, 1.0)? <= s {
            return Ok(1.0);
        }
        Ok(self.flow_unchecked(j, 1.0, s, 0.0, t).clamp(0.0, 1.0))
    }

    /// `Ω_i(t, x, ξ) = ω¹_i(t, x) − ω^ν_i(t, ξ)`.
    pub fn omega(&self, i: usize, nu: f64, t: f64, x: f64, xi: f64) -> Result<f64> {
        Ok(self.omega_exit(i, 1.0, t, x)? - self.omega_exit(i, nu, t, xi)?)
    }

    /// Speed scale `ν = (1 + r)/2`, with `r` the largest sampled ratio
    /// `λ_i/λ_j` over `j < i` (zero for the first component).
    pub fn omega_nu(&self, i: usize, t_samples: &[f64], x_samples: &[f64]) -> f64 {
        let mut r: f64 = 0.0;
        for j in 0..i {
            for &t in t_samples {
                for &x in x_samples {
                    r = r.max(self.spec.speed(i, t, x) / self.spec.speed(j, t, x));
                }
            }
        }
        0.5 * (1.0 + r)
    }
}
