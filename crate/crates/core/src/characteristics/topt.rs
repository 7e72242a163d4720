use serde::{Deserialize, Serialize};

use super::CharacteristicCache;
use crate::coeffs::SystemSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToptConfig {
    /// Right end of the initial-time grid (ignored for periodic systems,
    /// which use one period).
    pub t0_max: f64,
    /// Number of uniform grid points.
    pub samples: usize,
}

impl Default for ToptConfig {
    fn default() -> Self {
        ToptConfig { t0_max: 100.0, samples: 201 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToptResult {
    /// Best estimate of the supremum.
    pub topt: f64,
    /// Largest value attained on the (refined) grid.
    pub grid_max: f64,
    /// Initial time of `grid_max`.
    pub argmax: f64,
    /// Limit of a monotone tail, when one was detected.
    pub tail_limit: Option<f64>,
    pub evaluations: usize,
}

/// Time for the slowest leftward flow started at `(t0, 1)` to reach `x = 0`
/// plus the time for the slowest rightward flow to then cross to `x = 1`.
pub fn settling_from(cache: &CharacteristicCache, t0: f64) -> Result<f64> {
    let m = cache.spec().m;
    let s1 = cache.exit_time(m - 1, t0, 1.0)?;
    let s2 = cache.exit_time(m, s1, 0.0)?;
    Ok(s2 - t0)
}

/// Supremum over `t0 ≥ 0` of [`settling_from`].
///
/// The uniform grid is refined around its maximizer by golden-section
/// search. When the maximum sits at the right end and the last samples of
/// `t0_max/4, t0_max/2, t0_max` increase with shrinking increments, the
/// tail is continued geometrically (Aitken) and reported in `tail_limit`.
pub fn compute_topt(cache: &CharacteristicCache, cfg: &ToptConfig) -> Result<ToptResult> {
    let spec = cache.spec();
    let (span, periodic) = match spec.period {
        Some(tau) => (tau, true),
        None => (cfg.t0_max, false),
    };
    if !(span > 0.0) || cfg.samples < 2 {
        return Err(Error::Config("settling-time grid needs t0_max > 0 and at least two samples".into()));
    }
    let mut evaluations = 0usize;
    let mut eval = |t0: f64| -> Result<f64> {
        evaluations += 1;
        settling_from(cache, t0)
    };
    let n = cfg.samples;
    let grid: Vec<f64> = (0..n).map(|k| span * k as f64 / (n - 1) as f64).collect();
    let mut values = Vec::with_capacity(n);
    for &t0 in &grid {
        values.push(eval(t0)?);
    }
    let (mut k_best, mut best) = (0, values[0]);
    for (k, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            k_best = k;
        }
    }
    let mut argmax = grid[k_best];
    // golden-section refinement on the bracketing cells
    let lo = grid[k_best.saturating_sub(1)];
    let hi = grid[(k_best + 1).min(n - 1)];
    if hi > lo {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (eval(c)?, eval(d)?);
        for _ in 0..80 {
            if b - a < 1e-10 * (1.0 + b.abs()) {
                break;
            }
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = eval(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = eval(d)?;
            }
        }
        for (t0, v) in [(c, fc), (d, fd)] {
            if v > best {
                best = v;
                argmax = t0;
            }
        }
    }
    let mut tail_limit = None;
    if !periodic && k_best + 1 == n {
        let h1 = eval(0.25 * span)?;
        let h2 = eval(0.5 * span)?;
        let h3 = values[n - 1];
        let (d1, d2) = (h2 - h1, h3 - h2);
        if d1 > 0.0 && d2 > 0.0 && d2 < d1 {
            tail_limit = Some(h3 + d2 * d2 / (d1 - d2));
        }
    }
    let topt = tail_limit.map_or(best, |l| l.max(best));
    Ok(ToptResult { topt, grid_max: best, argmax, tail_limit, evaluations })
}

/// Closed-form settling time for time-independent speeds:
/// `∫₀¹ dx/(−λ_m(x)) + ∫₀¹ dx/λ_{m+1}(x)` (slowest leftward and rightward
/// components).
pub fn topt_time_independent(spec: &SystemSpec) -> Result<f64> {
    if !spec.speeds_time_independent() {
        return Err(Error::Unsupported("speeds depend on time".into()));
    }
    let m = spec.m;
    let left = |x: f64| 1.0 / -spec.speed(m - 1, 0.0, x);
    let right = |x: f64| 1.0 / spec.speed(m, 0.0, x);
    let v = adaptive_simpson(&left, 0.0, 1.0, 1e-13)? + adaptive_simpson(&right, 0.0, 1.0, 1e-13)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("settling-time quadrature".into()));
    }
    Ok(v)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let v = step(f, a, b, fa, fm, fb, whole, tol, 40);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("quadrature".into()))
    }
}
