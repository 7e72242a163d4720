use serde::{Deserialize, Serialize};

use super::field::ScalarField;
use crate::error::{Error, Result};

/// How coefficients are continued to negative times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeExtension {
    /// Coefficients frozen at `t = 0`.
    #[default]
    Frozen,
    /// `λ̄(t,x) = λ(0,x) + δ (λ(0,x) − λ(1 − e^{t/δ}, x))`; coupling and
    /// boundary matrices frozen.
    Relaxed { delta: f64 },
    /// Periodic continuation of every coefficient.
    Periodic,
}

/// An `n × n` hyperbolic system with `m` leftward (negative) speeds.
///
/// Indices are zero-based throughout: speeds `0..m` are negative, `m..n`
/// positive. The boundary matrix has `n − m` rows and `m` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub lambda: Vec<ScalarField>,
    #[serde(rename = "M")]
    pub coupling: Vec<Vec<ScalarField>>,
    #[serde(rename = "Q")]
    pub boundary: Vec<Vec<ScalarField>>,
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub extension: TimeExtension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Shape,
    NonFinite,
    Sign,
    Gap,
    Period,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn kinds(&self) -> Vec<ViolationKind> {
        let mut kinds: Vec<ViolationKind> = Vec::new();
        for v in &self.violations {
            if !kinds.contains(&v.kind) {
                kinds.push(v.kind);
            }
        }
        kinds
    }
}

/// Sampling window used by [`SystemSpec::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWindow {
    pub t_min: f64,
    pub t_max: f64,
    pub nt: usize,
    pub nx: usize,
}

impl Default for SampleWindow {
    fn default() -> Self {
        SampleWindow { t_min: 0.0, t_max: 10.0, nt: 201, nx: 41 }
    }
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<SystemSpec> {
        let spec: SystemSpec = serde_json::from_str(text)?;
        spec.check_shape()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system serializes")
    }

    pub fn p(&self) -> usize {
        self.n - self.m
    }

    pub fn check_shape(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.m == 0 || self.m >= self.n {
            return bad(format!("need 1 <= m < n, got n = {}, m = {}", self.n, self.m));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.lambda.len() != self.n {
            return bad(format!("expected {} speeds, got {}", self.n, self.lambda.len()));
        }
        if self.coupling.len() != self.n || self.coupling.iter().any(|r| r.len() != self.n) {
            return bad(format!("coupling matrix must be {0} x {0}", self.n));
        }
        if self.boundary.len() != self.p() || self.boundary.iter().any(|r| r.len() != self.m) {
            return bad(format!("boundary matrix must be {} x {}", self.p(), self.m));
        }
        if let Some(tau) = self.period {
            if !(tau > 0.0 && tau.is_finite()) {
                return bad(format!("period must be positive, got {}", tau));
            }
        }
        if let TimeExtension::Relaxed { delta } = self.extension {
            if !(delta > 0.0) {
                return bad(format!("extension parameter must be positive, got {}", delta));
            }
        }
        Ok(())
    }

    /// True when no coefficient depends on time.
    pub fn is_time_independent(&self) -> bool {
        !(self.lambda.iter().any(|f| f.depends_on_t())
            || self.coupling.iter().flatten().any(|f| f.depends_on_t())
            || self.boundary.iter().flatten().any(|f| f.depends_on_t()))
    }

    pub fn speeds_time_independent(&self) -> bool {
        !self.lambda.iter().any(|f| f.depends_on_t())
    }

    fn wrap_time(&self, t: f64) -> f64 {
        match (self.extension, self.period) {
            (TimeExtension::Periodic, Some(tau)) if t < 0.0 => t.rem_euclid(tau),
            _ => t,
        }
    }

    /// Speed `λ_i(t, x)` on the extended domain. `x` is clamped into `[0, 1]`.
    #[inline]
    pub fn speed(&self, i: usize, t: f64, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let f = &self.lambda[i];
        if t >= 0.0 {
            return f.eval(t, x);
        }
        match (self.extension, self.period) {
            (TimeExtension::Periodic, Some(_)) => f.eval(self.wrap_time(t), x),
            (TimeExtension::Relaxed { delta }, _) => {
                let base = f.eval(0.0, x);
                base + delta * (base - f.eval(1.0 - (t / delta).exp(), x))
            }
            _ => f.eval(0.0, x),
        }
    }

    /// `∂λ_i/∂x` by central differences.
    pub fn speed_dx(&self, i: usize, t: f64, x: f64) -> f64 {
        let h = 1e-6;
        let (lo, hi) = ((x - h).max(0.0), (x + h).min(1.0));
        (self.speed(i, t, hi) - self.speed(i, t, lo)) / (hi - lo)
    }

    #[inline]
    pub fn coupling(&self, i: usize, j: usize, t: f64, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let t = if t >= 0.0 {
            t
        } else if matches!(self.extension, TimeExtension::Periodic) && self.period.is_some() {
            self.wrap_time(t)
        } else {
            0.0
        };
        self.coupling[i][j].eval(t, x)
    }

    /// Entry `(l, j)` of the boundary matrix, `l < n − m`, `j < m`.
    #[inline]
    pub fn boundary(&self, l: usize, j: usize, t: f64) -> f64 {
        let t = if t >= 0.0 {
            t
        } else if matches!(self.extension, TimeExtension::Periodic) && self.period.is_some() {
            self.wrap_time(t)
        } else {
            0.0
        };
        self.boundary[l][j].eval(t, 0.0)
    }

    pub fn max_abs_speed(&self, window: &SampleWindow) -> f64 {
        let mut best: f64 = 0.0;
        for k in 0..window.nt {
            let t = sample(window.t_min, window.t_max, window.nt, k);
            for a in 0..window.nx {
                let x = sample(0.0, 1.0, window.nx, a);
                for i in 0..self.n {
                    best = best.max(self.speed(i, t, x).abs());
                }
            }
        }
        best
    }

    /// Checks shape, finiteness, the sign pattern `λ_i < −ε` / `λ_i > ε`
    /// and the gaps `λ_{i+1} − λ_i > ε` on a sample grid.
    pub fn validate(&self, window: &SampleWindow) -> ValidationReport {
        self.validate_with_eps(window, self.eps)
    }

    fn validate_with_eps(&self, window: &SampleWindow, eps: f64) -> ValidationReport {
        let mut report = ValidationReport::default();
        if let Err(e) = self.check_shape() {
            report.violations.push(Violation { kind: ViolationKind::Shape, detail: e.to_string(), t: 0.0, x: 0.0 });
            return report;
        }
        // worst sample per (kind, index) pair
        let mut worst: Vec<Option<(f64, Violation)>> = vec![None; 2 * self.n + 1];
        let mut record = |slot: usize, margin: f64, v: Violation| {
            let entry = &mut worst[slot];
            if entry.as_ref().map_or(true, |(m, _)| margin < *m) {
                *entry = Some((margin, v));
            }
        };
        for k in 0..window.nt {
            let t = sample(window.t_min, window.t_max, window.nt, k);
            for a in 0..window.nx {
                let x = sample(0.0, 1.0, window.nx, a);
                let speeds: Vec<f64> = (0..self.n).map(|i| self.speed(i, t, x)).collect();
                let finite = speeds.iter().all(|v| v.is_finite())
                    && (0..self.n).all(|i| (0..self.n).all(|j| self.coupling(i, j, t, x).is_finite()))
                    && (0..self.p()).all(|l| (0..self.m).all(|j| self.boundary(l, j, t).is_finite()));
                if !finite {
                    record(2 * self.n, f64::NEG_INFINITY, Violation {
                        kind: ViolationKind::NonFinite,
                        detail: "non-finite coefficient".into(),
                        t,
                        x,
                    });
                    continue;
                }
                for i in 0..self.n {
                    let margin = if i < self.m { -speeds[i] - eps } else { speeds[i] - eps };
                    if !(margin > 0.0) {
                        record(i, margin, Violation {
                            kind: ViolationKind::Sign,
                            detail: format!("speed {} = {} violates |λ| > {} with the required sign", i, speeds[i], eps),
                            t,
                            x,
                        });
                    }
                    if i + 1 < self.n && i + 1 != self.m {
                        let gap = speeds[i + 1] - speeds[i];
                        if !(gap > eps) {
                            record(self.n + i, gap - eps, Violation {
                                kind: ViolationKind::Gap,
                                detail: format!("gap between speeds {} and {} is {} <= {}", i, i + 1, gap, eps),
                                t,
                                x,
                            });
                        }
                    }
                }
            }
        }
        report.violations.extend(worst.into_iter().flatten().map(|(_, v)| v));
        if let Some(tau) = self.period {
            for k in 0..window.nt.min(41) {
                let t = sample(0.0, tau, window.nt.min(41), k);
                for a in 0..window.nx {
                    let x = sample(0.0, 1.0, window.nx, a);
                    let scale = |u: f64, v: f64| (u - v).abs() <= 1e-9 * (1.0 + u.abs());
                    let ok = (0..self.n).all(|i| scale(self.lambda[i].eval(t, x), self.lambda[i].eval(t + tau, x)))
                        && (0..self.n).all(|i| {
                            (0..self.n).all(|j| scale(self.coupling[i][j].eval(t, x), self.coupling[i][j].eval(t + tau, x)))
                        });
                    if !ok {
                        report.violations.push(Violation {
                            kind: ViolationKind::Period,
                            detail: format!("coefficients are not {}-periodic", tau),
                            t,
                            x,
                        });
                        return report;
                    }
                }
            }
        }
        report
    }

    /// Returns a copy continued to negative times. Periodic systems are
    /// wrapped; others use the relaxed extension with parameter `delta`
    /// (`None` picks `ε / (8 max|λ|)`). The extended speeds are sampled on
    /// `[−4/ε, 0]` and must keep the sign and gap conditions with `ε/2`.
    pub fn extend_time(&self, delta: Option<f64>) -> Result<SystemSpec> {
        self.check_shape()?;
        let mut out = self.clone();
        if self.period.is_some() {
            out.extension = TimeExtension::Periodic;
            return Ok(out);
        }
        let window = SampleWindow { t_min: 0.0, t_max: 1.0, nt: 41, nx: 21 };
        let delta = match delta {
            Some(d) => d,
            None => {
                let vmax = self.max_abs_speed(&window).max(1e-12);
                self.eps / (8.0 * vmax)
            }
        };
        if !(delta > 0.0) {
            return Err(Error::InvalidSpec(format!("extension parameter must be positive, got {}", delta)));
        }
        out.extension = TimeExtension::Relaxed { delta };
        let neg = SampleWindow { t_min: -4.0 / self.eps, t_max: 0.0, nt: 201, nx: 21 };
        let report = out.validate_with_eps(&neg, 0.5 * self.eps);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidSpec(format!(
                "extension parameter {} too large: {} at t = {}",
                delta, v.detail, v.t
            )));
        }
        Ok(out)
    }
}

fn sample(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if n <= 1 {
        lo
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}
