//! Diagonal change of variables that removes the diagonal of the coupling
//! matrix, and the derived fields consumed by the kernel solver.

use rayon::prelude::*;

use crate::characteristics::{CharacteristicCache, Direction, PairPoint, PathEvent};
use crate::error::{Error, Result};
use crate::grid::{TLine, TimeAxis, TxTable, Uniform};

/// Output of [`exp_pretransform`]. Indices are zero-based; `p = n − m`.
#[derive(Debug, Clone)]
pub struct Pretransform {
    pub axis: TimeAxis,
    pub grid: Uniform,
    pub n: usize,
    pub m: usize,
    /// `φ_i(t, x) = exp(−∫_{s_in}^t m_ii(σ, χ_i(σ; t, x)) dσ)`.
    pub phi: Vec<TxTable>,
    /// `M¹` (zero diagonal), `n × n`.
    pub m1: Vec<Vec<TxTable>>,
    /// `M̃¹ = ∂_xΛ + M¹`, `n × n`.
    pub mt: Vec<Vec<TxTable>>,
    /// True where `M̃¹_ij` vanishes identically on the grid.
    pub mt_zero: Vec<Vec<bool>>,
    /// `r_ij = −m¹_ij / (λ_j − λ_i)` for `i ≠ j` (zero on the diagonal).
    pub r: Vec<Vec<TxTable>>,
    /// `Q¹`, `p × m`.
    pub q1: Vec<Vec<TLine>>,
    /// `q̃¹_lj = −λ_{m+l}(t, 0) q¹_lj / λ_j(t, 0)`, `p × m`.
    pub qt: Vec<Vec<TLine>>,
}

impl Pretransform {
    /// `r_ij` at an arbitrary point.
    #[inline]
    pub fn r_at(&self, i: usize, j: usize, t: f64, x: f64) -> f64 {
        self.r[i][j].eval(t, x)
    }
}

/// Integral of `m_ii` along the backward characteristic of component `i`
/// from `(t, x)` to its entry boundary, by the trapezoid rule with step `h`.
fn diagonal_integral(cache: &CharacteristicCache, i: usize, t: f64, x: f64, h: f64) -> Result<f64> {
    let spec = cache.spec();
    let inflow = if i < spec.m { PathEvent::XHigh } else { PathEvent::XLow };
    let mut prev: Option<PairPoint> = None;
    let mut acc = 0.0;
    cache.march_pair(i, i, PairPoint { s: t, x, xi: x }, Direction::Backward, &[inflow], h, |p| {
        if let Some(q) = prev {
            acc += 0.5 * (q.s - p.s) * (spec.coupling(i, i, q.s, q.x) + spec.coupling(i, i, p.s, p.x));
        }
        prev = Some(p);
    })?;
    Ok(acc)
}

/// Tabulates `φ`, `M¹`, `M̃¹`, `r`, `Q¹` and `q̃¹` on `axis × grid`.
/// `h` is the quadrature step along characteristics.
pub fn exp_pretransform(cache: &CharacteristicCache, axis: TimeAxis, grid: Uniform, h: f64) -> Result<Pretransform> {
    let spec = cache.spec();
    let (n, m) = (spec.n, spec.m);
    let p = n - m;
    let nn = grid.nodes();
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        if spec.coupling[i][i].is_zero() {
            phi.push(TxTable::from_fn(axis, grid, |_, _| 1.0));
            continue;
        }
        let nodes: Vec<(usize, usize)> = (0..axis.len()).flat_map(|k| (0..nn).map(move |a| (k, a))).collect();
        let values: Vec<f64> = nodes
            .par_iter()
            .map(|&(k, a)| diagonal_integral(cache, i, axis.time(k), grid.x(a), h).map(|v| (-v).exp()))
            .collect::<Result<_>>()?;
        phi.push(TxTable { axis, grid, data: values });
    }
    let mut m1 = vec![vec![TxTable::zeros(axis, grid); n]; n];
    let mut mt = vec![vec![TxTable::zeros(axis, grid); n]; n];
    let mut r = vec![vec![TxTable::zeros(axis, grid); n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..axis.len() {
                let t = axis.time(k);
                for a in 0..nn {
                    let x = grid.x(a);
                    let v = if i == j { 0.0 } else { phi[i].at(k, a) * spec.coupling(i, j, t, x) / phi[j].at(k, a) };
                    m1[i][j].set(k, a, v);
                    let d = if i == j { spec.speed_dx(i, t, x) } else { 0.0 };
                    mt[i][j].set(k, a, v + d);
                    if i != j {
                        r[i][j].set(k, a, -v / (spec.speed(j, t, x) - spec.speed(i, t, x)));
                    }
                }
            }
        }
    }
    let mt_zero = mt.iter().map(|row| row.iter().map(|tab| tab.data.iter().all(|&v| v == 0.0)).collect()).collect();
    let mut q1 = Vec::with_capacity(p);
    let mut qt = Vec::with_capacity(p);
    for l in 0..p {
        let mut q1_row = Vec::with_capacity(m);
        let mut qt_row = Vec::with_capacity(m);
        for j in 0..m {
            let line = TLine {
                axis,
                data: (0..axis.len())
                    .map(|k| spec.boundary(l, j, axis.time(k)) * phi[m + l].at(k, 0) / phi[j].at(k, 0))
                    .collect(),
            };
            let tilde = TLine {
                axis,
                data: (0..axis.len())
                    .map(|k| {
                        let t = axis.time(k);
                        -spec.speed(m + l, t, 0.0) * line.data[k] / spec.speed(j, t, 0.0)
                    })
                    .collect(),
            };
            q1_row.push(line);
            qt_row.push(tilde);
        }
        q1.push(q1_row);
        qt.push(qt_row);
    }
    let out = Pretransform { axis, grid, n, m, phi, m1, mt, mt_zero, r, q1, qt };
    let finite = out.phi.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
        && out.r.iter().flatten().all(|t| t.data.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite("pre-transform".into()));
    }
    Ok(out)
}
