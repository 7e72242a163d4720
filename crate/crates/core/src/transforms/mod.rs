//! Backstepping transformations and the synthesized boundary feedback.

pub mod gains;
pub mod io;
pub mod kernel;
pub mod pretransform;
pub mod volterra;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gains::{
    f1_compose, f2_solve, f_compose, fredholm_solve, fredholm_value, g2_assemble, FredholmTable, G2Table, GainTable,
};
pub use kernel::{KernelEntry, KernelTable, Sheet};
pub use pretransform::{exp_pretransform, Pretransform};
pub use volterra::{volterra_solve, VolterraConfig, VolterraReport};

use crate::characteristics::{CharacteristicCache, FlowConfig};
use crate::coeffs::{SampleWindow, SystemSpec, TimeExtension};
use crate::error::{Error, Result};
use crate::grid::{TimeAxis, Uniform};

/// Time discretization of the kernel tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeMode {
    /// Stationary for time-independent systems, one period for periodic
    /// ones, otherwise a window from `−2/ε` to `horizon`.
    Auto { horizon: f64, nt: usize },
    Stationary,
    /// `periods` periods with `nt` nodes each.
    Periodic { periods: usize, nt: usize },
    Window { start: f64, end: f64, nt: usize },
}

impl Default for TimeMode {
    fn default() -> Self {
        TimeMode::Auto { horizon: 10.0, nt: 41 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Intervals of the `x` (and `ξ`) grid.
    pub nx: usize,
    pub time: TimeMode,
    /// Quadrature step along characteristics; defaults to `1/(nx max|λ|)`.
    pub path_step: Option<f64>,
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Also compute the kernel rows of positive speeds (needed for `G²`
    /// below the negative block and for the Volterra transform of the full
    /// state).
    pub full: bool,
    pub h_ode: f64,
    pub tol_root: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            nx: 64,
            time: TimeMode::default(),
            path_step: None,
            tol_fp: 1e-8,
            max_iter: 200,
            full: true,
            h_ode: 1e-3,
            tol_root: 1e-10,
        }
    }
}

impl SynthesisConfig {
    pub fn flow(&self) -> FlowConfig {
        FlowConfig { h_ode: self.h_ode, tol_root: self.tol_root }
    }
}

/// Everything produced by [`synthesize`].
#[derive(Debug)]
pub struct Synthesis {
    pub cache: Arc<CharacteristicCache>,
    pub pre: Pretransform,
    pub kernel: KernelTable,
    pub report: VolterraReport,
    pub g2: G2Table,
    pub h: FredholmTable,
    pub f2: GainTable,
    pub f1: GainTable,
    /// Feedback gain acting on the original state.
    pub gain: GainTable,
    pub path_step: f64,
}

impl Synthesis {
    pub fn spec(&self) -> &SystemSpec {
        self.cache.spec()
    }
}

/// Continues a system to negative times if it is not already.
pub fn prepared_spec(spec: &SystemSpec) -> Result<SystemSpec> {
    if spec.extension != TimeExtension::Frozen || spec.is_time_independent() {
        return Ok(spec.clone());
    }
    spec.extend_time(None)
}

/// Resolves the time axis for a system.
pub fn resolve_axis(spec: &SystemSpec, mode: TimeMode) -> Result<TimeAxis> {
    let axis = match mode {
        TimeMode::Stationary => {
            if !spec.is_time_independent() {
                return Err(Error::Config("stationary tables need a time-independent system".into()));
            }
            TimeAxis::Stationary
        }
        TimeMode::Periodic { periods, nt } => {
            let tau = spec.period.ok_or_else(|| Error::Config("periodic tables need a periodic system".into()))?;
            if periods == 0 || nt == 0 {
                return Err(Error::Config("periodic axis needs periods >= 1 and nt >= 1".into()));
            }
            TimeAxis::Periodic { start: 0.0, period: tau * periods as f64, n: nt * periods }
        }
        TimeMode::Window { start, end, nt } => {
            if !(end > start) || nt < 2 {
                return Err(Error::Config("window needs end > start and nt >= 2".into()));
            }
            TimeAxis::Window { start, end, n: nt }
        }
        TimeMode::Auto { horizon, nt } => {
            if spec.is_time_independent() {
                TimeAxis::Stationary
            } else if let Some(tau) = spec.period {
                TimeAxis::Periodic { start: 0.0, period: tau, n: nt.max(1) }
            } else {
                TimeAxis::Window { start: -2.0 / spec.eps, end: horizon, n: nt.max(2) }
            }
        }
    };
    Ok(axis)
}

struct Setup {
    cache: Arc<CharacteristicCache>,
    pre: Pretransform,
    path_step: f64,
}

fn setup(spec: &SystemSpec, cfg: &SynthesisConfig) -> Result<Setup> {
    let spec = prepared_spec(spec)?;
    let report = spec.validate(&SampleWindow::default());
    if !report.passed() {
        let v = &report.violations[0];
        return Err(Error::InvalidSpec(format!("{} (t = {}, x = {})", v.detail, v.t, v.x)));
    }
    let axis = resolve_axis(&spec, cfg.time)?;
    if cfg.nx < 2 {
        return Err(Error::Config("nx must be at least 2".into()));
    }
    let grid = Uniform::new(cfg.nx);
    let vmax = spec.max_abs_speed(&SampleWindow { t_min: 0.0, t_max: 10.0, nt: 41, nx: 21 });
    let path_step = cfg.path_step.unwrap_or(grid.dx() / vmax.max(1e-12));
    let cache = Arc::new(CharacteristicCache::new(Arc::new(spec), cfg.flow()));
    let pre = exp_pretransform(&cache, axis, grid, path_step.min(grid.dx()))?;
    Ok(Setup { cache, pre, path_step })
}

fn finish(s: Setup, kernel: KernelTable, report: VolterraReport) -> Result<Synthesis> {
    let Setup { cache, pre, path_step } = s;
    let g2 = g2_assemble(&cache, &pre, &kernel)?;
    let h = fredholm_solve(&cache, &g2, path_step)?;
    let f2 = f2_solve(&h, kernel.n);
    let f1 = f1_compose(&kernel, &f2)?;
    let gain = f_compose(&f1, &pre);
    if gain.data.iter().any(|e| e.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("feedback gain".into()));
    }
    Ok(Synthesis { cache, pre, kernel, report, g2, h, f2, f1, gain, path_step })
}

/// Full pipeline: pre-transform, Volterra kernel, `G²`, Fredholm kernel,
/// `F²`, `F¹` and the gain `F = F¹ Φ`.
pub fn synthesize(spec: &SystemSpec, cfg: &SynthesisConfig) -> Result<Synthesis> {
    let s = setup(spec, cfg)?;
    let vcfg = VolterraConfig { tol_fp: cfg.tol_fp, max_iter: cfg.max_iter, path_step: s.path_step, full: cfg.full };
    let (kernel, report) = volterra_solve(&s.cache, &s.pre, &vcfg)?;
    finish(s, kernel, report)
}

/// Rebuilds everything downstream of a given Volterra kernel (for instance
/// one read back from disk). The kernel must sit on the grid and time axis
/// that `cfg` resolves to.
pub fn synthesize_from_kernel(spec: &SystemSpec, cfg: &SynthesisConfig, kernel: KernelTable) -> Result<Synthesis> {
    let s = setup(spec, cfg)?;
    if kernel.grid != s.pre.grid || kernel.axis != s.pre.axis {
        return Err(Error::Grid(format!(
            "kernel table has nx = {} and axis {:?}, configuration gives nx = {} and axis {:?}",
            kernel.grid.nx, kernel.axis, s.pre.grid.nx, s.pre.axis
        )));
    }
    if kernel.n != s.cache.spec().n || kernel.m != s.cache.spec().m {
        return Err(Error::Grid(format!(
            "kernel table is for n = {}, m = {}, system has n = {}, m = {}",
            kernel.n, kernel.m, s.cache.spec().n, s.cache.spec().m
        )));
    }
    let report = VolterraReport::default();
    finish(s, kernel, report)
}
