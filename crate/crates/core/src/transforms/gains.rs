//! Boundary-coupling matrix of the intermediate target system, the
//! Fredholm kernel that removes it, and the composition into the feedback
//! gain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelTable, Sheet};
use super::pretransform::Pretransform;
use crate::characteristics::{CharacteristicCache, Direction, PairPoint, PathEvent};
use crate::error::{Error, Result};
use crate::grid::{interp_uniform, TimeAxis, TxTable, Uniform};

/// `G²(t, x)`: `n × m` (columns of the negative-speed components). Rows of
/// positive speeds are present only when the kernel was solved in full.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Table {
    pub axis: TimeAxis,
    pub grid: Uniform,
    pub n: usize,
    pub m: usize,
    pub rows: usize,
    pub g: Vec<Vec<TxTable>>,
}

impl G2Table {
    #[inline]
    pub fn eval(&self, i: usize, j: usize, t: f64, x: f64) -> f64 {
        if i >= self.rows || j >= self.m {
            return 0.0;
        }
        self.g[i][j].eval(t, x)
    }
}

/// `G² = −K(t, x, 0) Λ(t, 0) [I; Q¹(t)]` at grid nodes.
pub fn g2_assemble(cache: &CharacteristicCache, pre: &Pretransform, kernel: &KernelTable) -> Result<G2Table> {
    let spec = cache.spec();
    let (n, m) = (kernel.n, kernel.m);
    let (axis, grid) = (kernel.axis, kernel.grid);
    let mut g = vec![vec![TxTable::zeros(axis, grid); m]; kernel.rows];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, table) in row.iter_mut().enumerate() {
            for k in 0..axis.len() {
                let t = axis.time(k);
                for a in 0..grid.nodes() {
                    let idx = kernel.node_index(k, a, 0);
                    let mut v = -kernel.entry(i, j).lower[idx] * spec.speed(j, t, 0.0);
                    for l in 0..n - m {
                        v -= kernel.entry(i, m + l).lower[idx] * spec.speed(m + l, t, 0.0) * pre.q1[l][j].data[k];
                    }
                    table.set(k, a, v);
                }
            }
        }
    }
    Ok(G2Table { axis, grid, n, m, rows: kernel.rows, g })
}

/// Fredholm kernel `H` on `[0, 1]²`; only entries `i > j` (both below `m`)
/// are non-zero. The stored sheet is the `ξ ≤ ψ_ij` side; the other side
/// vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FredholmTable {
    pub axis: TimeAxis,
    pub grid: Uniform,
    pub m: usize,
    /// Row-major `m × m`, square `(nx+1)²` slices per time node.
    pub lower: Vec<Option<Vec<f64>>>,
    pub psi: Vec<Option<TxTable>>,
}

impl FredholmTable {
    fn slice_len(&self) -> usize {
        self.grid.nodes() * self.grid.nodes()
    }

    fn bilinear(&self, values: &[f64], t: f64, x: f64, xi: f64) -> f64 {
        let nn = self.grid.nodes();
        let (k0, k1, wt) = self.axis.locate(t);
        let (a, u) = self.grid.cell(x);
        let (b, v) = self.grid.cell(xi);
        let at = |k: usize| {
            let base = k * self.slice_len();
            let f = |i: usize, j: usize| values[base + i * nn + j];
            (1.0 - u) * ((1.0 - v) * f(a, b) + v * f(a, b + 1)) + u * ((1.0 - v) * f(a + 1, b) + v * f(a + 1, b + 1))
        };
        let v0 = at(k0);
        if wt == 0.0 {
            v0
        } else {
            v0 * (1.0 - wt) + at(k1) * wt
        }
    }

    pub fn is_lower_side(&self, i: usize, j: usize, t: f64, x: f64, xi: f64) -> bool {
        self.psi[i * self.m + j].as_ref().map_or(false, |p| xi <= p.eval(t, x))
    }

    /// `h_ij(t, x, ξ)` by interpolation within one sheet.
    pub fn eval(&self, i: usize, j: usize, t: f64, x: f64, xi: f64, sheet: Sheet) -> f64 {
        let Some(values) = self.lower.get(i * self.m + j).and_then(|v| v.as_ref()) else {
            return 0.0;
        };
        let lower = match sheet {
            Sheet::Lower => true,
            Sheet::Upper => false,
            Sheet::Auto => self.is_lower_side(i, j, t, x, xi),
        };
        if lower {
            self.bilinear(values, t, x, xi)
        } else {
            0.0
        }
    }

    /// Node value on the side the node lies on.
    pub fn node(&self, i: usize, j: usize, k: usize, a: usize, b: usize) -> f64 {
        let Some(values) = self.lower.get(i * self.m + j).and_then(|v| v.as_ref()) else {
            return 0.0;
        };
        let psi = self.psi[i * self.m + j].as_ref().expect("psi stored with values");
        if self.grid.x(b) <= psi.at(k, a) {
            let nn = self.grid.nodes();
            values[(k * nn + a) * nn + b]
        } else {
            0.0
        }
    }
}

/// Transport of `b` along the `j`-flow from `(t, ξ)`: returns the exit time
/// `s_j` and `exp(∫_t^{s_j} ∂_xλ_j(s, χ_j(s; t, ξ)) ds)`.
fn exit_with_growth(cache: &CharacteristicCache, j: usize, t: f64, xi: f64, h: f64) -> Result<(f64, f64)> {
    let spec = cache.spec();
    let mut prev: Option<PairPoint> = None;
    let mut acc = 0.0;
    let end = cache.march_pair(j, j, PairPoint { s: t, x: xi, xi }, Direction::Forward, &[PathEvent::XiLow], h, |p| {
        if let Some(q) = prev {
            acc += 0.5 * (p.s - q.s) * (spec.speed_dx(j, q.s, q.xi) + spec.speed_dx(j, p.s, p.xi));
        }
        prev = Some(p);
    })?;
    Ok((end.point.s, acc.exp()))
}

/// Closed-form value of `h_ij(t, x, ξ)`: zero when the `i`-flow from `x`
/// leaves before the `j`-flow from `ξ`, otherwise the transported
/// `−g²_ij / λ_j` evaluated where the `j`-flow leaves.
pub fn fredholm_value(
    cache: &CharacteristicCache,
    g2: &G2Table,
    i: usize,
    j: usize,
    t: f64,
    x: f64,
    xi: f64,
    h: f64,
) -> Result<f64> {
    let m = cache.spec().m;
    if !(i < m && j < i) {
        return Ok(0.0);
    }
    let s_i = cache.exit_time(i, t, x)?;
    let (s_j, growth) = exit_with_growth(cache, j, t, xi, h)?;
    if s_i < s_j {
        return Ok(0.0);
    }
    Ok(transported(cache, g2, i, j, t, x, s_j, growth)?)
}

#[allow(clippy::too_many_arguments)]
fn transported(
    cache: &CharacteristicCache,
    g2: &G2Table,
    i: usize,
    j: usize,
    t: f64,
    x: f64,
    s_j: f64,
    growth: f64,
) -> Result<f64> {
    let spec = cache.spec();
    let foot = cache.flow(i, t, x, s_j)?.clamp(0.0, 1.0);
    Ok(-g2.eval(i, j, s_j, foot) / spec.speed(j, s_j, 0.0) * growth)
}

/// Tabulates `H` on `g2`'s grid (full square in `(x, ξ)`).
pub fn fredholm_solve(cache: &CharacteristicCache, g2: &G2Table, h: f64) -> Result<FredholmTable> {
    let m = g2.m;
    let (axis, grid) = (g2.axis, g2.grid);
    let nn = grid.nodes();
    let mut lower = vec![None; m * m];
    let mut psi = vec![None; m * m];
    for i in 0..m {
        for j in 0..i {
            let mut table = TxTable::zeros(axis, grid);
            for k in 0..axis.len() {
                for a in 0..nn {
                    table.set(k, a, cache.psi(i, j, axis.time(k), grid.x(a))?);
                }
            }
            psi[i * m + j] = Some(table);
            let exits: Vec<(f64, f64)> = (0..axis.len())
                .flat_map(|k| (0..nn).map(move |b| (k, b)))
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&(k, b)| exit_with_growth(cache, j, axis.time(k), grid.x(b), h))
                .collect::<Result<_>>()?;
            let nodes: Vec<(usize, usize, usize)> =
                (0..axis.len()).flat_map(|k| (0..nn).flat_map(move |a| (0..nn).map(move |b| (k, a, b)))).collect();
            let values: Vec<f64> = nodes
                .par_iter()
                .map(|&(k, a, b)| {
                    let (s_j, growth) = exits[k * nn + b];
                    transported(cache, g2, i, j, axis.time(k), grid.x(a), s_j, growth)
                })
                .collect::<Result<_>>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("Fredholm kernel".into()));
            }
            lower[i * m + j] = Some(values);
        }
    }
    Ok(FredholmTable { axis, grid, m, lower, psi })
}

/// A gain `m × n` tabulated on `axis × grid` in `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub axis: TimeAxis,
    pub grid: Uniform,
    pub m: usize,
    pub n: usize,
    /// Row-major `m × n`.
    pub data: Vec<TxTable>,
}

impl GainTable {
    pub fn zeros(axis: TimeAxis, grid: Uniform, m: usize, n: usize) -> GainTable {
        GainTable { axis, grid, m, n, data: vec![TxTable::zeros(axis, grid); m * n] }
    }

    #[inline]
    pub fn eval(&self, i: usize, j: usize, t: f64, xi: f64) -> f64 {
        self.data[i * self.n + j].eval(t, xi)
    }

    pub fn at(&self, i: usize, j: usize, k: usize, b: usize) -> f64 {
        self.data[i * self.n + j].at(k, b)
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, b: usize, v: f64) {
        self.data[i * self.n + j].set(k, b, v);
    }

    /// Gain entries at time `t` resampled onto `target`, row-major
    /// `m × n × (target.nx + 1)`.
    pub fn resample(&self, t: f64, target: Uniform) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m * self.n * target.nodes());
        for e in &self.data {
            for b in 0..target.nodes() {
                out.push(e.eval(t, target.x(b)));
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, e| a.max(e.max_abs()))
    }
}

fn trapezoid_weights(grid: Uniform) -> Vec<f64> {
    let dx = grid.dx();
    (0..grid.nodes()).map(|a| if a == 0 || a == grid.nx { 0.5 * dx } else { dx }).collect()
}

/// Solves `F² − ∫₀¹ F²(ζ) H(ζ, ξ) dζ = −H_(t, 1, ξ)` on the grid by the
/// finite Neumann series (the operator is nilpotent of order `m`).
/// Columns `m..n` of the result vanish.
pub fn f2_solve(h: &FredholmTable, n: usize) -> GainTable {
    let m = h.m;
    let (axis, grid) = (h.axis, h.grid);
    let nn = grid.nodes();
    let w = trapezoid_weights(grid);
    let mut out = GainTable::zeros(axis, grid, m, n);
    for k in 0..axis.len() {
        // term[i][j][b]
        let mut term: Vec<Vec<Vec<f64>>> =
            (0..m).map(|i| (0..m).map(|j| (0..nn).map(|b| -h.node(i, j, k, grid.nx, b)).collect()).collect()).collect();
        let mut total = term.clone();
        for _ in 1..m {
            let mut next = vec![vec![vec![0.0; nn]; m]; m];
            for i in 0..m {
                for j in 0..m {
                    for b in 0..nn {
                        let mut acc = 0.0;
                        for l in j + 1..m {
                            for a in 0..nn {
                                acc += w[a] * term[i][l][a] * h.node(l, j, k, a, b);
                            }
                        }
                        next[i][j][b] = acc;
                    }
                }
            }
            for i in 0..m {
                for j in 0..m {
                    for b in 0..nn {
                        total[i][j][b] += next[i][j][b];
                    }
                }
            }
            term = next;
        }
        for i in 0..m {
            for j in 0..m {
                for b in 0..nn {
                    out.set(i, j, k, b, total[i][j][b]);
                }
            }
        }
    }
    out
}

/// `F¹(t, ξ) = K_(t, 1, ξ) + F²(t, ξ) − ∫_ξ¹ F²(t, ζ) K(t, ζ, ξ) dζ` at the
/// grid nodes; the integral is split where `ξ` crosses a `ψ` surface.
pub fn f1_compose(kernel: &KernelTable, f2: &GainTable) -> Result<GainTable> {
    let (n, m) = (kernel.n, kernel.m);
    let (axis, grid) = (kernel.axis, kernel.grid);
    if f2.grid != grid || f2.axis != axis {
        return Err(Error::Grid("F² and K must share their grid".into()));
    }
    let nn = grid.nodes();
    let dx = grid.dx();
    let mut out = GainTable::zeros(axis, grid, m, n);
    for k in 0..axis.len() {
        let t = axis.time(k);
        for i in 0..m {
            for j in 0..n {
                for b in 0..nn {
                    let xi = grid.x(b);
                    let mut v = kernel.node(i, j, k, grid.nx, b) + f2.at(i, j, k, b);
                    let mut integral = 0.0;
                    for l in 0..m {
                        let f2_row: Vec<f64> = (b..nn).map(|a| f2.at(i, l, k, a)).collect();
                        if f2_row.iter().all(|&u| u == 0.0) {
                            continue;
                        }
                        let psi = kernel.psi_table(l, j);
                        let side = |a: usize| -> Sheet {
                            match psi {
                                Some(p) if xi > p.at(k, a) => Sheet::Upper,
                                Some(_) => Sheet::Lower,
                                None => Sheet::Lower,
                            }
                        };
                        for a in b..grid.nx {
                            let (s0, s1) = (side(a), side(a + 1));
                            let (z0, z1) = (grid.x(a), grid.x(a + 1));
                            let (f0, f1) = (f2.at(i, l, k, a), f2.at(i, l, k, a + 1));
                            if s0 == s1 {
                                let k0 = kernel.eval_unchecked(l, j, t, z0, xi, s0);
                                let k1 = kernel.eval_unchecked(l, j, t, z1, xi, s0);
                                integral += 0.5 * dx * (f0 * k0 + f1 * k1);
                            } else {
                                let p = psi.expect("sides differ only with a surface");
                                let (d0, d1) = (xi - p.at(k, a), xi - p.at(k, a + 1));
                                let th = (d0 / (d0 - d1)).clamp(0.0, 1.0);
                                let zc = z0 + th * dx;
                                let fc = f0 + th * (f1 - f0);
                                let left =
                                    f0 * kernel.eval_unchecked(l, j, t, z0, xi, s0) + fc * kernel.eval_unchecked(l, j, t, zc, xi, s0);
                                let right =
                                    fc * kernel.eval_unchecked(l, j, t, zc, xi, s1) + f1 * kernel.eval_unchecked(l, j, t, z1, xi, s1);
                                integral += 0.5 * th * dx * left + 0.5 * (1.0 - th) * dx * right;
                            }
                        }
                    }
                    v -= integral;
                    out.set(i, j, k, b, v);
                }
            }
        }
    }
    Ok(out)
}

/// `F = F¹ Φ(t, ξ)`.
pub fn f_compose(f1: &GainTable, pre: &Pretransform) -> GainTable {
    let mut out = f1.clone();
    for i in 0..f1.m {
        for j in 0..f1.n {
            for k in 0..f1.axis.len() {
                for b in 0..f1.grid.nodes() {
                    let phi = if pre.grid == f1.grid {
                        pre.phi[j].at(k, b)
                    } else {
                        let nn = pre.grid.nodes();
                        interp_uniform(&pre.phi[j].data[k * nn..(k + 1) * nn], pre.grid, f1.grid.x(b))
                    };
                    out.set(i, j, k, b, f1.at(i, j, k, b) * phi);
                }
            }
        }
    }
    out
}
