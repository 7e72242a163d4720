//! Time axes, uniform space grids and the interpolants used by tabulated
//! kernels and fields.

use serde::{Deserialize, Serialize};

/// Discretization of the time direction of a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeAxis {
    /// One slice, valid for every time.
    Stationary,
    /// `n` nodes `start + k·period/n`, wrapped modulo `period`.
    Periodic { start: f64, period: f64, n: usize },
    /// `n ≥ 2` nodes from `start` to `end`; queries outside are clamped.
    Window { start: f64, end: f64, n: usize },
}

impl TimeAxis {
    pub fn len(&self) -> usize {
        match *self {
            TimeAxis::Stationary => 1,
            TimeAxis::Periodic { n, .. } | TimeAxis::Window { n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self) -> f64 {
        match *self {
            TimeAxis::Stationary => f64::INFINITY,
            TimeAxis::Periodic { period, n, .. } => period / n as f64,
            TimeAxis::Window { start, end, n } => (end - start) / (n - 1) as f64,
        }
    }

    /// Time of node `k` (zero for the stationary axis).
    pub fn time(&self, k: usize) -> f64 {
        match *self {
            TimeAxis::Stationary => 0.0,
            TimeAxis::Periodic { start, .. } => start + k as f64 * self.step(),
            TimeAxis::Window { start, end, n } => {
                if k + 1 == n {
                    end
                } else {
                    start + k as f64 * self.step()
                }
            }
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// Bracketing nodes and the weight of the second one.
    #[inline]
    pub fn locate(&self, s: f64) -> (usize, usize, f64) {
        match *self {
            TimeAxis::Stationary => (0, 0, 0.0),
            TimeAxis::Periodic { start, period, n } => {
                let h = period / n as f64;
                let u = (s - start).rem_euclid(period) / h;
                let k = (u.floor() as usize).min(n - 1);
                let w = (u - k as f64).clamp(0.0, 1.0);
                (k, (k + 1) % n, w)
            }
            TimeAxis::Window { start, end, n } => {
                if s <= start {
                    return (0, 0, 0.0);
                }
                if s >= end {
                    return (n - 1, n - 1, 0.0);
                }
                let u = (s - start) / self.step();
                let k = (u.floor() as usize).min(n - 2);
                (k, k + 1, (u - k as f64).clamp(0.0, 1.0))
            }
        }
    }
}

/// Uniform grid on `[0, 1]` with `nx` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Uniform {
    pub nx: usize,
}

impl Uniform {
    pub fn new(nx: usize) -> Uniform {
        assert!(nx >= 1, "grid needs at least one interval");
        Uniform { nx }
    }

    pub fn nodes(&self) -> usize {
        self.nx + 1
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn x(&self, a: usize) -> f64 {
        if a == self.nx {
            1.0
        } else {
            a as f64 / self.nx as f64
        }
    }

    /// Cell index and local coordinate in `[0, 1]`.
    #[inline]
    pub fn cell(&self, x: f64) -> (usize, f64) {
        let u = x.clamp(0.0, 1.0) * self.nx as f64;
        let a = (u.floor() as usize).min(self.nx - 1);
        (a, (u - a as f64).clamp(0.0, 1.0))
    }
}

/// Linear interpolation of nodal values on a uniform grid.
#[inline]
pub fn interp_uniform(values: &[f64], grid: Uniform, x: f64) -> f64 {
    let (a, u) = grid.cell(x);
    values[a] * (1.0 - u) + values[a + 1] * u
}

/// A field of `(t, x)` stored on a time axis times a uniform space grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxTable {
    pub axis: TimeAxis,
    pub grid: Uniform,
    pub data: Vec<f64>,
}

impl TxTable {
    pub fn zeros(axis: TimeAxis, grid: Uniform) -> TxTable {
        TxTable { axis, grid, data: vec![0.0; axis.len() * grid.nodes()] }
    }

    pub fn from_fn(axis: TimeAxis, grid: Uniform, mut f: impl FnMut(f64, f64) -> f64) -> TxTable {
        let mut table = TxTable::zeros(axis, grid);
        for k in 0..axis.len() {
            let t = axis.time(k);
            for a in 0..grid.nodes() {
                table.data[k * grid.nodes() + a] = f(t, grid.x(a));
            }
        }
        table
    }

    #[inline]
    pub fn at(&self, k: usize, a: usize) -> f64 {
        self.data[k * self.grid.nodes() + a]
    }

    #[inline]
    pub fn set(&mut self, k: usize, a: usize, v: f64) {
        let nn = self.grid.nodes();
        self.data[k * nn + a] = v;
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let (k0, k1, w) = self.axis.locate(t);
        let nn = self.grid.nodes();
        let v0 = interp_uniform(&self.data[k0 * nn..(k0 + 1) * nn], self.grid, x);
        if w == 0.0 {
            return v0;
        }
        let v1 = interp_uniform(&self.data[k1 * nn..(k1 + 1) * nn], self.grid, x);
        v0 * (1.0 - w) + v1 * w
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// A function of time alone, tabulated on a time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLine {
    pub axis: TimeAxis,
    pub data: Vec<f64>,
}

impl TLine {
    pub fn from_fn(axis: TimeAxis, f: impl Fn(f64) -> f64) -> TLine {
        TLine { axis, data: (0..axis.len()).map(|k| f(axis.time(k))).collect() }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let (k0, k1, w) = self.axis.locate(t);
        if w == 0.0 {
            self.data[k0]
        } else {
            self.data[k0] * (1.0 - w) + self.data[k1] * w
        }
    }
}

/// Piecewise-linear interpolation on the triangle `0 ≤ ξ ≤ x ≤ 1`.
///
/// Each square cell is split along the direction of the diagonal `ξ = x`,
/// so cells touching the diagonal only use nodes with `ξ ≤ x`. `slice` is
/// a full `(nx+1)²` array indexed `[a * (nx+1) + b]` for `(x_a, ξ_b)`.
#[inline]
pub fn interp_triangle(slice: &[f64], grid: Uniform, x: f64, xi: f64) -> f64 {
    let nn = grid.nodes();
    let xi = xi.min(x);
    let (a, u) = grid.cell(x);
    let (b, v) = grid.cell(xi);
    let f = |i: usize, j: usize| slice[i * nn + j];
    if b > a || (b == a && v > u) {
        // only reachable through rounding; snap onto the diagonal
        let (c, w) = grid.cell(x);
        return f(c, c) * (1.0 - w) + f(c + 1, c + 1) * w;
    }
    if v <= u {
        (1.0 - u) * f(a, b) + (u - v) * f(a + 1, b) + v * f(a + 1, b + 1)
    } else {
        (1.0 - v) * f(a, b) + (v - u) * f(a, b + 1) + u * f(a + 1, b + 1)
    }
}
