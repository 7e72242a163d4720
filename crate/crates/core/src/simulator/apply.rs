use super::StateSnapshot;
use crate::grid::Uniform;
use crate::transforms::{FredholmTable, KernelTable, Sheet};

/// `∫₀^{x_end} f(ξ, sheet) w(ξ) dξ` by the trapezoid rule on `grid`, with
/// the interval split at `cut`; `Lower` applies on `ξ ≤ cut`.
fn split_trapezoid(grid: Uniform, end: usize, cut: Option<f64>, w: &[f64], f: impl Fn(f64, Sheet) -> f64) -> f64 {
    let dx = grid.dx();
    let mut acc = 0.0;
    for b in 0..end {
        let (x0, x1) = (grid.x(b), grid.x(b + 1));
        match cut {
            Some(c) if c > x0 && c < x1 => {
                let th = (c - x0) / dx;
                let wc = w[b] + th * (w[b + 1] - w[b]);
                acc += 0.5 * (c - x0) * (f(x0, Sheet::Lower) * w[b] + f(c, Sheet::Lower) * wc);
                acc += 0.5 * (x1 - c) * (f(c, Sheet::Upper) * wc + f(x1, Sheet::Upper) * w[b + 1]);
            }
            _ => {
                let sheet = match cut {
                    Some(c) if x0 >= c => Sheet::Upper,
                    _ => Sheet::Lower,
                };
                acc += 0.5 * dx * (f(x0, sheet) * w[b] + f(x1, sheet) * w[b + 1]);
            }
        }
    }
    acc
}

/// `γ(t, x) = w(t, x) − ∫₀ˣ K(t, x, ξ) w(t, ξ) dξ`. Components without a
/// kernel row are copied.
pub fn apply_volterra(kernel: &KernelTable, s: &StateSnapshot) -> StateSnapshot {
    let grid = s.grid;
    let t = s.t;
    let mut out = s.clone();
    for i in 0..kernel.rows.min(s.n()) {
        for a in 1..grid.nodes() {
            let x = grid.x(a);
            let mut acc = 0.0;
            for j in 0..kernel.n {
                let cut = kernel.psi_table(i, j).map(|p| p.eval(t, x));
                acc += split_trapezoid(grid, a, cut, &s.values[j], |xi, sheet| {
                    kernel.eval_unchecked(i, j, t, x, xi, sheet)
                });
            }
            out.values[i][a] = s.values[i][a] - acc;
        }
    }
    out
}

fn fredholm_term(h: &FredholmTable, s: &StateSnapshot, i: usize, x: f64) -> f64 {
    let (grid, t, m) = (s.grid, s.t, h.m);
    let mut acc = 0.0;
    for j in 0..i {
        let Some(psi) = h.psi[i * m + j].as_ref() else { continue };
        let cut = psi.eval(t, x);
        acc += split_trapezoid(grid, grid.nx, Some(cut), &s.values[j], |xi, sheet| h.eval(i, j, t, x, xi, sheet));
    }
    acc
}

/// `γ = z − ∫₀¹ H(t, x, ξ) z(t, ξ) dξ`; only the first `m` components change.
pub fn apply_fredholm(h: &FredholmTable, s: &StateSnapshot) -> StateSnapshot {
    let mut out = s.clone();
    for i in 0..h.m {
        for a in 0..s.grid.nodes() {
            out.values[i][a] = s.values[i][a] - fredholm_term(h, s, i, s.grid.x(a));
        }
    }
    out
}

/// Inverse of [`apply_fredholm`] for the same quadrature: `H` is strictly
/// lower triangular, so components are recovered in order.
pub fn invert_fredholm(h: &FredholmTable, s: &StateSnapshot) -> StateSnapshot {
    let mut out = s.clone();
    for i in 0..h.m {
        let row: Vec<f64> = (0..s.grid.nodes()).map(|a| s.values[i][a] + fredholm_term(h, &out, i, s.grid.x(a))).collect();
        out.values[i] = row;
    }
    out
}

/// Trapezoid approximation of the `L²(0, 1)ⁿ` norm.
pub fn l2_norm(s: &StateSnapshot) -> f64 {
    let dx = s.grid.dx();
    let last = s.grid.nx;
    s.values
        .iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .map(|(k, v)| if k == 0 || k == last { 0.5 * dx * v * v } else { dx * v * v })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}
