use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::CheckReport;
use crate::error::{Error, Result};
use crate::grid::{TxTable, Uniform};
use crate::simulator::{apply_fredholm, apply_volterra, invert_fredholm, make_compatible, simulate, Coef, GeneralSystem, SimOptions, StateSnapshot};
use crate::transforms::Synthesis;

fn table(t: &TxTable) -> Option<Coef> {
    if t.data.iter().all(|&v| v == 0.0) {
        None
    } else {
        Some(Coef::Table(t.clone()))
    }
}

fn base(syn: &Synthesis) -> Result<GeneralSystem> {
    if syn.kernel.rows != syn.kernel.n {
        return Err(Error::Config("transform consistency needs the full kernel".into()));
    }
    let spec = syn.spec();
    let n = spec.n;
    Ok(GeneralSystem {
        spec: Arc::new(spec.clone()),
        coupling: vec![vec![None; n]; n],
        g: vec![vec![None; n]; n],
        boundary: syn.pre.q1.iter().map(|row| row.iter().map(|l| Some(Coef::Line(l.clone()))).collect()).collect(),
        gain: None,
    })
}

/// `(M¹, 0, F¹, Q¹)`: the pre-transformed plant in closed loop.
pub fn volterra_source_system(syn: &Synthesis) -> Result<GeneralSystem> {
    let mut sys = base(syn)?;
    sys.coupling = syn.pre.m1.iter().map(|row| row.iter().map(table).collect()).collect();
    sys.with_gain(Some(syn.f1.clone()))
}

/// `(0, G², F², Q¹)`: the Volterra target system.
pub fn volterra_target_system(syn: &Synthesis) -> Result<GeneralSystem> {
    let mut sys = base(syn)?;
    for i in 0..syn.g2.rows {
        for j in 0..syn.g2.m {
            sys.g[i][j] = table(&syn.g2.g[i][j]);
        }
    }
    sys.with_gain(Some(syn.f2.clone()))
}

/// `(0, G³, 0, Q¹)` with `G³` the rows of `G²` below the negative block.
pub fn fredholm_target_system(syn: &Synthesis) -> Result<GeneralSystem> {
    let mut sys = base(syn)?;
    let m = syn.g2.m;
    for i in m..syn.g2.rows {
        for j in 0..m {
            sys.g[i][j] = table(&syn.g2.g[i][j]);
        }
    }
    Ok(sys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyProbe {
    pub t0: f64,
    pub horizon: f64,
    /// Grid sizes `N`; the step is `1/(N max|λ|)`.
    pub resolutions: Vec<usize>,
    /// Time between compared snapshots.
    pub compare_every: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyLevel {
    pub n: usize,
    pub dt: f64,
    /// `sup |γ − apply_volterra(K, w)|` over compared times.
    pub volterra: f64,
    /// `sup |γ − apply_fredholm(H, z)|` over compared times.
    pub fredholm: f64,
}

/// Simulates the source and both target systems from transformed initial
/// data and returns the mismatches at one resolution. `w0` is first made
/// compatible with the boundary condition of the source system.
pub fn transform_mismatch(
    syn: &Synthesis,
    t0: f64,
    w0: &dyn Fn(usize, f64) -> f64,
    horizon: f64,
    n: usize,
    dt: f64,
    compare_every: f64,
) -> Result<ConsistencyLevel> {
    let grid = Uniform::new(n);
    let nvars = syn.kernel.n;
    let w_init = make_compatible(&syn.f1, &StateSnapshot::from_fn(t0, grid, nvars, w0))?;
    let gamma_init = apply_volterra(&syn.kernel, &w_init);
    let z_init = invert_fredholm(&syn.h, &gamma_init);
    let stride = ((compare_every / dt).round() as usize).max(1);
    let opts = SimOptions { store_every: stride, ..Default::default() };
    let source = volterra_source_system(syn)?;
    let target = volterra_target_system(syn)?;
    let fred = fredholm_target_system(syn)?;
    let w = simulate(&source, t0, &w_init, horizon, dt, &opts)?;
    let gamma = simulate(&target, t0, &gamma_init, horizon, dt, &opts)?;
    let z = simulate(&fred, t0, &z_init, horizon, dt, &opts)?;
    let mut volterra: f64 = 0.0;
    let mut fredholm: f64 = 0.0;
    for ((ws, gs), zs) in w.snapshots.iter().zip(&gamma.snapshots).zip(&z.snapshots).skip(1) {
        volterra = volterra.max(apply_volterra(&syn.kernel, ws).sup_diff(gs));
        fredholm = fredholm.max(apply_fredholm(&syn.h, zs).sup_diff(gs));
    }
    Ok(ConsistencyLevel { n, dt, volterra, fredholm })
}

/// Runs [`transform_mismatch`] at each resolution and checks that the
/// Volterra mismatch shrinks by at least `min_factor` per level. The
/// residual is the largest ratio fine/coarse, the tolerance `1/min_factor`.
pub fn check_transform_consistency(
    syn: &Synthesis,
    probe: &ConsistencyProbe,
    w0: &dyn Fn(usize, f64) -> f64,
    min_factor: f64,
) -> Result<CheckReport> {
    if probe.resolutions.len() < 2 {
        return Err(Error::Config("need at least two resolutions".into()));
    }
    let vmax = (0..syn.spec().n)
        .flat_map(|i| (0..=20).map(move |a| (i, a as f64 / 20.0)))
        .map(|(i, x)| syn.spec().speed(i, probe.t0, x).abs())
        .fold(0.0f64, f64::max);
    let levels: Vec<ConsistencyLevel> = probe
        .resolutions
        .iter()
        .map(|&n| transform_mismatch(syn, probe.t0, w0, probe.horizon, n, 1.0 / (n as f64 * vmax), probe.compare_every))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for pair in levels.windows(2) {
        let ratio = if pair[0].volterra == 0.0 { 0.0 } else { pair[1].volterra / pair[0].volterra };
        worst = worst.max(ratio);
    }
    let mut report = CheckReport::build("check_transform_consistency", levels.len(), worst, 1.0 / min_factor, Vec::new());
    for l in &levels {
        report.notes.push(format!(
            "N = {}, dt = {:.6e}: volterra mismatch {:.6e}, fredholm mismatch {:.6e}",
            l.n, l.dt, l.volterra, l.fredholm
        ));
    }
    Ok(report)
}
