//! Tabulated Volterra kernels with optional second sheet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TimeAxis, TxTable, Uniform};

/// Which side of a `ψ` surface to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sheet {
    /// Pick by position; on the surface the lower sheet wins.
    Auto,
    /// `ξ ≤ ψ` (characteristic reflected at `ξ = 0`).
    Lower,
    /// `ξ ≥ ψ` (characteristic reaching the diagonal).
    Upper,
}

/// Interpolation stencil on `time × triangle`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    k0: usize,
    k1: usize,
    wt: f64,
    idx: [usize; 3],
    w: [f64; 3],
}

impl Stencil {
    #[inline]
    pub(crate) fn new(axis: TimeAxis, grid: Uniform, s: f64, x: f64, xi: f64) -> Stencil {
        let (k0, k1, wt) = axis.locate(s);
        let nn = grid.nodes();
        let xi = xi.min(x);
        let (a, u) = grid.cell(x);
        let (b, v) = grid.cell(xi);
        let at = |i: usize, j: usize| i * nn + j;
        let (idx, w) = if b > a || (b == a && v > u) {
            let (c, w) = grid.cell(x);
            ([at(c, c), at(c + 1, c + 1), at(c, c)], [1.0 - w, w, 0.0])
        } else if v <= u {
            ([at(a, b), at(a + 1, b), at(a + 1, b + 1)], [1.0 - u, u - v, v])
        } else {
            ([at(a, b), at(a, b + 1), at(a + 1, b + 1)], [1.0 - v, v - u, u])
        };
        Stencil { k0, k1, wt, idx, w }
    }

    #[inline]
    pub(crate) fn apply(&self, values: &[f64], slice_len: usize) -> f64 {
        let slice = |k: usize| {
            let base = k * slice_len;
            self.w[0] * values[base + self.idx[0]] + self.w[1] * values[base + self.idx[1]] + self.w[2] * values[base + self.idx[2]]
        };
        let v0 = slice(self.k0);
        if self.wt == 0.0 {
            v0
        } else {
            v0 * (1.0 - self.wt) + slice(self.k1) * self.wt
        }
    }
}

/// One kernel entry `k_ij` on `axis × {0 ≤ ξ ≤ x ≤ 1}`.
///
/// Values are stored on the full square `(nx+1)²` per time node, indexed
/// `(k·(nx+1) + a)·(nx+1) + b` for `(t_k, x_a, ξ_b)`; entries with `b > a`
/// are unused. Two-sheet entries also carry `upper`, and `own_sheet`
/// records which sheet each node was computed on (0 lower, 1 upper); the
/// other sheet holds a one-sided extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub lower: Vec<f64>,
    pub upper: Option<Vec<f64>>,
    pub own_sheet: Option<Vec<u8>>,
}

impl KernelEntry {
    pub fn is_two_sheet(&self) -> bool {
        self.upper.is_some()
    }
}

/// The kernel `K` (rows `0..rows`, all `n` columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub axis: TimeAxis,
    pub grid: Uniform,
    pub n: usize,
    pub m: usize,
    /// `m` (negative-speed rows only) or `n` (full kernel).
    pub rows: usize,
    /// Row-major `rows × n`.
    pub entries: Vec<KernelEntry>,
    /// `ψ_ij` tables for the two-sheet pairs `i < j < m`, row-major `m × m`.
    pub psi: Vec<Option<TxTable>>,
}

impl KernelTable {
    pub fn slice_len(&self) -> usize {
        self.grid.nodes() * self.grid.nodes()
    }

    #[inline]
    pub fn node_index(&self, k: usize, a: usize, b: usize) -> usize {
        let nn = self.grid.nodes();
        (k * nn + a) * nn + b
    }

    pub fn entry(&self, i: usize, j: usize) -> &KernelEntry {
        &self.entries[i * self.n + j]
    }

    pub fn psi_table(&self, i: usize, j: usize) -> Option<&TxTable> {
        if i < self.m && j < self.m {
            self.psi[i * self.m + j].as_ref()
        } else {
            None
        }
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.rows || j >= self.n {
            return Err(Error::Index(format!("kernel entry ({}, {}) not stored (rows = {}, n = {})", i, j, self.rows, self.n)));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn resolve(&self, i: usize, j: usize, t: f64, x: f64, xi: f64, sheet: Sheet) -> &[f64] {
        let e = self.entry(i, j);
        match (&e.upper, sheet) {
            (None, _) | (Some(_), Sheet::Lower) => &e.lower,
            (Some(up), Sheet::Upper) => up,
            (Some(up), Sheet::Auto) => {
                let psi = self.psi_table(i, j).map_or(0.0, |p| p.eval(t, x));
                if xi <= psi {
                    &e.lower
                } else {
                    up
                }
            }
        }
    }

    /// `k_ij(t, x, ξ)` by interpolation within one sheet. Points with
    /// `ξ > x` are projected onto the diagonal.
    pub fn eval(&self, i: usize, j: usize, t: f64, x: f64, xi: f64, sheet: Sheet) -> Result<f64> {
        self.check(i, j)?;
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&xi) || !t.is_finite() {
            return Err(Error::OutOfDomain { t, x });
        }
        Ok(self.eval_unchecked(i, j, t, x, xi, sheet))
    }

    #[inline]
    pub fn eval_unchecked(&self, i: usize, j: usize, t: f64, x: f64, xi: f64, sheet: Sheet) -> f64 {
        let values = self.resolve(i, j, t, x, xi, sheet);
        Stencil::new(self.axis, self.grid, t, x, xi).apply(values, self.slice_len())
    }

    /// Node value on the sheet the node belongs to.
    pub fn node(&self, i: usize, j: usize, k: usize, a: usize, b: usize) -> f64 {
        let e = self.entry(i, j);
        let idx = self.node_index(k, a, b);
        match (&e.upper, &e.own_sheet) {
            (Some(up), Some(own)) if own[idx] == 1 => up[idx],
            _ => e.lower[idx],
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut best: f64 = 0.0;
        let nn = self.grid.nodes();
        for i in 0..self.rows {
            for j in 0..self.n {
                for k in 0..self.axis.len() {
                    for a in 0..nn {
                        for b in 0..=a {
                            best = best.max(self.node(i, j, k, a, b).abs());
                        }
                    }
                }
            }
        }
        best
    }
}
