//! Fixed-point solver for the Volterra kernel.
//!
//! Each kernel entry satisfies a transport equation along the joint
//! characteristic `(χ_i(s; t, x), χ_j(s; t, ξ))`. Integrating it from the
//! node to the end of that characteristic gives
//!
//! ```text
//! k_ij(t, x, ξ) = base + ∫_t^{s_end} Σ_l k_il(s, x(s), ξ(s)) m̃_lj(s, ξ(s)) ds
//! ```
//!
//! where `base` is the trace `r_ij` on the diagonal, artificial data on
//! `x = 1` (or `ξ = 0` for rows of positive speeds), or the reflection
//! `Σ_l q̃_lj k_{i,m+l}(·, ·, 0)` on `ξ = 0`. Paths are traced once; each
//! Picard sweep then re-evaluates the integrals with trapezoid weights and
//! piecewise-linear interpolation that never mixes the two sheets of an
//! entry.

use rayon::prelude::*;

use super::kernel::{KernelEntry, KernelTable, Stencil};
use super::pretransform::Pretransform;
use crate::characteristics::{CharacteristicCache, PairPoint, PathEvent};
use crate::error::{Error, Result};
use crate::grid::{TimeAxis, TxTable, Uniform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolterraConfig {
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Quadrature step along characteristics.
    pub path_step: f64,
    /// Also solve the rows of positive-speed components.
    pub full: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VolterraReport {
    /// Sweeps used per row.
    pub iterations: Vec<usize>,
    /// Last sup-norm update per row.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct PathPt {
    s: f64,
    x: f64,
    xi: f64,
    w: f64,
    mask: u32,
}

#[derive(Debug, Clone, Copy)]
enum Base {
    Const(f64),
    /// Reflection at `(s, x, 0)`.
    Reflect { s: f64, x: f64 },
    /// Reflection at grid node `(t_k, x_a, 0)`.
    ReflectNode { k: usize, a: usize },
}

#[derive(Debug, Clone, Copy)]
struct Task {
    idx: usize,
    sheet: u8,
    base: Base,
    start: usize,
    len: usize,
}

/// Traced characteristics of one kernel entry.
struct EntryPaths {
    tasks: Vec<Task>,
    points: Vec<PathPt>,
    /// `m̃_lj` at each point, `n` per point.
    mt: Vec<f64>,
    reflect: bool,
    two_sheet: bool,
}

struct RowContext<'a> {
    cache: &'a CharacteristicCache,
    pre: &'a Pretransform,
    axis: TimeAxis,
    grid: Uniform,
    row: usize,
    /// ψ tables of row `row`, indexed by column (two-sheet columns only).
    psi: Vec<Option<TxTable>>,
    h: f64,
}

impl RowContext<'_> {
    fn two_sheet(&self, j: usize) -> bool {
        self.psi[j].is_some()
    }

    fn mask_of(&self, p: &PairPoint) -> u32 {
        let mut mask = 0;
        for (l, psi) in self.psi.iter().enumerate() {
            if let Some(psi) = psi {
                if p.xi > psi.eval(p.s, p.x) {
                    mask |= 1 << l;
                }
            }
        }
        mask
    }

    fn gap(&self, l: usize, p: &PairPoint) -> f64 {
        p.xi - self.psi[l].as_ref().map_or(0.0, |psi| psi.eval(p.s, p.x))
    }

    /// Trapezoid points for a traced path, split where it crosses a ψ
    /// surface of this row.
    fn points(&self, raw: &[PairPoint], out: &mut Vec<PathPt>) {
        let lerp = |a: &PairPoint, b: &PairPoint, th: f64| PairPoint {
            s: a.s + th * (b.s - a.s),
            x: a.x + th * (b.x - a.x),
            xi: a.xi + th * (b.xi - a.xi),
        };
        let start = out.len();
        let emit = |p: PairPoint, w: f64, mask: u32, out: &mut Vec<PathPt>| {
            if out.len() > start {
                let last = out.last_mut().unwrap();
                if last.s == p.s && last.x == p.x && last.xi == p.xi && last.mask == mask {
                    last.w += w;
                    return;
                }
            }
            out.push(PathPt { s: p.s, x: p.x, xi: p.xi, w, mask });
        };
        let sheet_cols: Vec<usize> = (0..self.psi.len()).filter(|&l| self.two_sheet(l)).collect();
        for seg in raw.windows(2) {
            let (a, b) = (&seg[0], &seg[1]);
            let mut cuts: Vec<(f64, usize)> = Vec::new();
            for &l in &sheet_cols {
                let (da, db) = (self.gap(l, a), self.gap(l, b));
                if (da > 0.0) != (db > 0.0) {
                    let th = if da == db { 0.5 } else { (da / (da - db)).clamp(0.0, 1.0) };
                    cuts.push((th, l));
                }
            }
            let mut mask = self.mask_of(a);
            if cuts.is_empty() {
                let w = 0.5 * (b.s - a.s);
                emit(*a, w, mask, out);
                emit(*b, w, mask, out);
                continue;
            }
            cuts.sort_by(|u, v| u.0.total_cmp(&v.0));
            let mut th0 = 0.0;
            for (th, l) in cuts.into_iter().chain(std::iter::once((1.0, usize::MAX))) {
                let (p0, p1) = (lerp(a, b, th0), lerp(a, b, th));
                let w = 0.5 * (p1.s - p0.s);
                emit(p0, w, mask, out);
                emit(p1, w, mask, out);
                if l != usize::MAX {
                    mask ^= 1 << l;
                }
                th0 = th;
            }
        }
    }

    fn trace(&self, j: usize) -> Result<EntryPaths> {
        let (i, n, m) = (self.row, self.pre.n, self.pre.m);
        let (dir, events) = self.cache.kernel_path_rule(i, j);
        let nn = self.grid.nodes();
        let reflect = i < m && j >= i && j < m;
        let two_sheet = self.two_sheet(j);
        let nodes: Vec<(usize, usize, usize)> = (0..self.axis.len())
            .flat_map(|k| (0..nn).flat_map(move |a| (0..=a).map(move |b| (k, a, b))))
            .collect();
        let traced: Vec<(Task, Vec<PathPt>)> = nodes
            .par_iter()
            .map(|&(k, a, b)| -> Result<(Task, Vec<PathPt>)> {
                let t = self.axis.time(k);
                let start = PairPoint { s: t, x: self.grid.x(a), xi: self.grid.x(b) };
                let mut raw = Vec::new();
                let end = self.cache.march_pair(i, j, start, dir, events, self.h, |p| raw.push(p))?;
                let (sheet, base) = match end.event {
                    PathEvent::Meet => {
                        let r = if raw.len() == 1 {
                            self.pre.r[i][j].at(k, a)
                        } else {
                            self.pre.r_at(i, j, end.point.s, end.point.x)
                        };
                        (1, Base::Const(r))
                    }
                    PathEvent::XHigh => (0, Base::Const(self.pre.r_at(i, j, end.point.s, 1.0))),
                    PathEvent::XiLow if reflect => {
                        let base = if raw.len() == 1 {
                            Base::ReflectNode { k, a }
                        } else {
                            Base::Reflect { s: end.point.s, x: end.point.x }
                        };
                        (0, base)
                    }
                    PathEvent::XiLow => {
                        let v = if i == j { 0.0 } else { self.pre.r_at(i, j, end.point.s, 0.0) };
                        (0, Base::Const(v))
                    }
                    other => {
                        return Err(Error::Numerical(format!("unexpected path end {:?} for entry ({}, {})", other, i, j)))
                    }
                };
                let mut pts = Vec::new();
                if raw.len() > 1 {
                    self.points(&raw, &mut pts);
                }
                let idx = (k * nn + a) * nn + b;
                Ok((Task { idx, sheet: if two_sheet { sheet } else { 0 }, base, start: 0, len: pts.len() }, pts))
            })
            .collect::<Result<_>>()?;
        let total: usize = traced.iter().map(|(_, p)| p.len()).sum();
        let mut tasks = Vec::with_capacity(traced.len());
        let mut points = Vec::with_capacity(total);
        for (mut task, pts) in traced {
            task.start = points.len();
            points.extend(pts);
            tasks.push(task);
        }
        let mt: Vec<f64> = points
            .par_iter()
            .flat_map_iter(|p| (0..n).map(move |l| (l, p)))
            .map(|(l, p)| if self.pre.mt_zero[l][j] { 0.0 } else { self.pre.mt[l][j].eval(p.s, p.xi) })
            .collect();
        Ok(EntryPaths { tasks, points, mt, reflect, two_sheet })
    }
}

/// Current iterate of one row: per column the lower sheet and, for
/// two-sheet columns, the upper sheet.
#[derive(Clone)]
struct RowValues {
    lower: Vec<Vec<f64>>,
    upper: Vec<Option<Vec<f64>>>,
}

fn integral(paths: &EntryPaths, task: &Task, vals: &RowValues, axis: TimeAxis, grid: Uniform, slice: usize, zero: &[bool]) -> f64 {
    let n = vals.lower.len();
    let mut acc = 0.0;
    for q in task.start..task.start + task.len {
        let p = &paths.points[q];
        if p.w == 0.0 {
            continue;
        }
        let st = Stencil::new(axis, grid, p.s, p.x, p.xi);
        let mut f = 0.0;
        for l in 0..n {
            if zero[l] {
                continue;
            }
            let values = match &vals.upper[l] {
                Some(up) if p.mask & (1 << l) != 0 => up,
                _ => &vals.lower[l],
            };
            f += st.apply(values, slice) * paths.mt[q * n + l];
        }
        acc += p.w * f;
    }
    acc
}

/// Fills the non-owned nodes of a two-sheet entry by linear extrapolation
/// along `ξ` from the owned side; a column with no upper node takes the
/// trace value.
fn extrapolate_sheets(
    lower: &mut [f64],
    upper: &mut [f64],
    own: &[u8],
    axis: TimeAxis,
    grid: Uniform,
    trace: &TxTable,
) {
    let nn = grid.nodes();
    for k in 0..axis.len() {
        for a in 0..nn {
            let col = (k * nn + a) * nn;
            let owned = |b: usize, sheet: u8| own[col + b] == sheet;
            // lower sheet: extend upward past the last owned node
            if let Some(last) = (0..=a).rev().find(|&b| owned(b, 0)) {
                let slope = if last >= 1 && owned(last - 1, 0) { lower[col + last] - lower[col + last - 1] } else { 0.0 };
                for b in last + 1..=a {
                    lower[col + b] = lower[col + last] + slope * (b - last) as f64;
                }
            }
            match (0..=a).find(|&b| owned(b, 1)) {
                Some(first) => {
                    let slope =
                        if first < a && owned(first + 1, 1) { upper[col + first + 1] - upper[col + first] } else { 0.0 };
                    for b in 0..first {
                        upper[col + b] = upper[col + first] - slope * (first - b) as f64;
                    }
                }
                None => {
                    let v = trace.at(k, a);
                    for b in 0..=a {
                        upper[col + b] = v;
                    }
                }
            }
        }
    }
}

/// Solves for the kernel rows `0..m` (or `0..n` with `cfg.full`).
pub fn volterra_solve(
    cache: &CharacteristicCache,
    pre: &Pretransform,
    cfg: &VolterraConfig,
) -> Result<(KernelTable, VolterraReport)> {
    let (n, m) = (pre.n, pre.m);
    let (axis, grid) = (pre.axis, pre.grid);
    let nn = grid.nodes();
    let slice = nn * nn;
    let total = axis.len() * slice;
    let rows = if cfg.full { n } else { m };
    // ψ tables for pairs i < j < m
    let mut psi: Vec<Option<TxTable>> = vec![None; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let mut table = TxTable::zeros(axis, grid);
            for k in 0..axis.len() {
                for a in 0..nn {
                    table.set(k, a, cache.psi(i, j, axis.time(k), grid.x(a))?);
                }
            }
            psi[i * m + j] = Some(table);
        }
    }
    let mut entries = Vec::with_capacity(rows * n);
    let mut report = VolterraReport { iterations: Vec::new(), residuals: Vec::new() };
    for i in 0..rows {
        let ctx = RowContext {
            cache,
            pre,
            axis,
            grid,
            row: i,
            psi: (0..n).map(|j| if i < m && j < m && j > i { psi[i * m + j].clone() } else { None }).collect(),
            h: cfg.path_step,
        };
        let paths: Vec<EntryPaths> = (0..n).map(|j| ctx.trace(j)).collect::<Result<_>>()?;
        let own: Vec<Option<Vec<u8>>> = paths
            .iter()
            .map(|p| {
                p.two_sheet.then(|| {
                    let mut own = vec![0u8; total];
                    for task in &p.tasks {
                        own[task.idx] = task.sheet;
                    }
                    own
                })
            })
            .collect();
        let mut cur = RowValues {
            lower: vec![vec![0.0; total]; n],
            upper: (0..n).map(|j| paths[j].two_sheet.then(|| vec![0.0; total])).collect(),
        };
        let zero: Vec<Vec<bool>> = (0..n).map(|j| (0..n).map(|l| pre.mt_zero[l][j]).collect()).collect();
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        let mut converged = false;
        while iterations < cfg.max_iter {
            iterations += 1;
            let mut next = cur.clone();
            // phase A: everything except the reflected entries
            for j in (0..n).filter(|&j| !paths[j].reflect) {
                let p = &paths[j];
                let vals: Vec<f64> = p
                    .tasks
                    .par_iter()
                    .map(|task| {
                        let base = match task.base {
                            Base::Const(v) => v,
                            _ => unreachable!("reflection base outside reflected entries"),
                        };
                        base + integral(p, task, &cur, axis, grid, slice, &zero[j])
                    })
                    .collect();
                for (task, v) in p.tasks.iter().zip(vals) {
                    match (&mut next.upper[j], task.sheet) {
                        (Some(up), 1) => up[task.idx] = v,
                        _ => next.lower[j][task.idx] = v,
                    }
                }
            }
            // phase B: reflected entries read the fresh positive columns at ξ = 0
            for j in (0..n).filter(|&j| paths[j].reflect) {
                let p = &paths[j];
                let fresh = &next;
                let vals: Vec<f64> = p
                    .tasks
                    .par_iter()
                    .map(|task| {
                        let base = match task.base {
                            Base::Const(v) => v,
                            Base::ReflectNode { k, a } => {
                                let idx = (k * nn + a) * nn;
                                (0..n - m).map(|l| pre.qt[l][j].data[k] * fresh.lower[m + l][idx]).sum()
                            }
                            Base::Reflect { s, x } => {
                                let st = Stencil::new(axis, grid, s, x, 0.0);
                                (0..n - m).map(|l| pre.qt[l][j].eval(s) * st.apply(&fresh.lower[m + l], slice)).sum()
                            }
                        };
                        base + integral(p, task, &cur, axis, grid, slice, &zero[j])
                    })
                    .collect();
                for (task, v) in p.tasks.iter().zip(vals) {
                    match (&mut next.upper[j], task.sheet) {
                        (Some(up), 1) => up[task.idx] = v,
                        _ => next.lower[j][task.idx] = v,
                    }
                }
            }
            for j in 0..n {
                if let (Some(up), Some(own)) = (&mut next.upper[j], &own[j]) {
                    extrapolate_sheets(&mut next.lower[j], up, own, axis, grid, &pre.r[i][j]);
                }
            }
            let mut diff: f64 = 0.0;
            let mut scale: f64 = 1.0;
            for j in 0..n {
                for task in &paths[j].tasks {
                    let (new, old) = match (&next.upper[j], task.sheet) {
                        (Some(up), 1) => (up[task.idx], cur.upper[j].as_ref().unwrap()[task.idx]),
                        _ => (next.lower[j][task.idx], cur.lower[j][task.idx]),
                    };
                    if !new.is_finite() {
                        return Err(Error::NonFinite(format!("kernel row {}", i)));
                    }
                    diff = diff.max((new - old).abs());
                    scale = scale.max(new.abs());
                }
            }
            cur = next;
            residual = diff;
            if diff <= cfg.tol_fp * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged { residual, iterations });
        }
        report.iterations.push(iterations);
        report.residuals.push(residual);
        for (j, own) in own.into_iter().enumerate() {
            entries.push(KernelEntry { lower: std::mem::take(&mut cur.lower[j]), upper: cur.upper[j].take(), own_sheet: own });
        }
    }
    Ok((KernelTable { axis, grid, n, m, rows, entries, psi }, report))
}
