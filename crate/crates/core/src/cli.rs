//! Command-line front end: `synthesize`, `simulate`, `topt` and `verify`.
//!
//! Settings are merged as flags > config file > defaults. Exit codes: 0
//! success, 1 a check failed, 2 usage, configuration or I/O error, 3
//! numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngExt;
use rayon::prelude::*;
use serde_json::json;

use crate::characteristics::{compute_topt, settling_from, topt_time_independent, CharacteristicCache, ToptConfig, ToptResult};
use crate::coeffs::{SampleWindow, SystemSpec};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::grid::{TimeAxis, Uniform};
use crate::simulator::{norms_to_csv, simulate, trace_to_csv, GeneralSystem, SimOptions, StateSnapshot, Trace};
use crate::transforms::io::{gain_to_csv, kernel_to_csv, read_gain, read_kernel, write_gain, write_kernel};
use crate::transforms::{prepared_spec, synthesize, synthesize_from_kernel, GainTable, Synthesis};
use crate::verify::{
    check_finite_time, check_omega, check_periodicity, check_psi, check_reflection, check_trace, check_transform_consistency,
    check_triangular, check_uniform_stability, CheckReport, ConsistencyProbe,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "backstep", version, about = "Boundary feedback synthesis and simulation for 1-D hyperbolic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute kernels and the feedback gain; writes gain.csv, gain.bin,
    /// kernels.bin and summary.json.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the open or closed loop; writes trace.csv and norms.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Gain table written by `synthesize` (binary container).
        #[arg(long, conflicts_with = "open_loop")]
        gain: Option<PathBuf>,
        /// Simulate without feedback.
        #[arg(long)]
        open_loop: bool,
    },
    /// Print the settling time and write topt.json.
    Topt {
        #[command(flatten)]
        common: Common,
    },
    /// Run checks against stored artifacts; writes report.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list; all applicable checks by default.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<CheckName>,
        /// Kernel table (default: kernels.bin in the output directory).
        #[arg(long)]
        kernel: Option<PathBuf>,
        /// Gain table (default: gain.bin in the output directory).
        #[arg(long)]
        gain: Option<PathBuf>,
        /// Summary written by `synthesize` (default: summary.json in the
        /// output directory).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Catalog system name.
    #[arg(long)]
    pub catalog: Option<String>,
    /// System description file (JSON).
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Catalog parameter `KEY=VALUE`; repeatable.
    #[arg(short = 'p', long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Shorthand for `--param c=VALUE`.
    #[arg(long = "c", value_name = "VALUE")]
    pub c: Option<String>,
    /// Replaces every coupling entry (`zero` for 0).
    #[arg(long = "M", value_name = "EXPR")]
    pub coupling: Option<String>,
    /// Kernel grid intervals.
    #[arg(long)]
    pub nx: Option<usize>,
    /// Kernel time nodes.
    #[arg(long)]
    pub nt: Option<usize>,
    /// Simulation grid intervals.
    #[arg(long = "N")]
    pub n_sim: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub h_ode: Option<f64>,
    /// Keep every k-th simulated snapshot.
    #[arg(long)]
    pub store_every: Option<usize>,
    #[arg(long)]
    pub tol_fp: Option<f64>,
    #[arg(long)]
    pub tol_root: Option<f64>,
    #[arg(long)]
    pub tol_tri: Option<f64>,
    /// Initial time of simulations.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Right end of the initial-time grid for the settling time.
    #[arg(long)]
    pub t0_max: Option<f64>,
    /// Simulated time span.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Initial state of one component as an expression in `x`; repeat
    /// once per component.
    #[arg(long = "y0", value_name = "EXPR")]
    pub initial: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckName {
    Trace,
    Reflection,
    Triangular,
    FiniteTime,
    UniformStability,
    Psi,
    Omega,
    Periodicity,
    TransformConsistency,
    Topt,
}

const ALL_CHECKS: [CheckName; 10] = [
    CheckName::Trace,
    CheckName::Reflection,
    CheckName::Triangular,
    CheckName::FiniteTime,
    CheckName::UniformStability,
    CheckName::Psi,
    CheckName::Omega,
    CheckName::Periodicity,
    CheckName::TransformConsistency,
    CheckName::Topt,
];

impl Common {
    /// Merges flags over the config file (if any) over the defaults.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        let sys = &mut cfg.system;
        if let Some(name) = &self.catalog {
            sys.catalog = Some(name.clone());
            sys.file = None;
            sys.spec = None;
        }
        if let Some(path) = &self.system {
            sys.file = Some(path.clone());
            sys.catalog = None;
            sys.spec = None;
            sys.params.clear();
        }
        for kv in &self.params {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("parameter '{}' is not of the form KEY=VALUE", kv)))?;
            sys.params.insert(k.trim().to_string(), v.trim().to_string());
        }
        if let Some(c) = &self.c {
            sys.params.insert("c".into(), c.clone());
        }
        if let Some(m) = &self.coupling {
            sys.coupling = Some(m.clone());
        }
        let g = &mut cfg.grids;
        set(&mut g.nx, self.nx);
        set(&mut g.nt, self.nt);
        set(&mut g.n_sim, self.n_sim);
        set(&mut g.h_ode, self.h_ode);
        set(&mut g.store_every, self.store_every);
        if self.dt.is_some() {
            g.dt = self.dt;
        }
        let t = &mut cfg.tolerances;
        set(&mut t.tol_fp, self.tol_fp);
        set(&mut t.tol_root, self.tol_root);
        set(&mut t.tol_tri, self.tol_tri);
        set(&mut cfg.horizon.t0, self.t0);
        set(&mut cfg.horizon.t0_max, self.t0_max);
        if self.horizon.is_some() {
            cfg.horizon.t_horizon = self.horizon;
        }
        if !self.initial.is_empty() {
            cfg.initial = self.initial.clone();
        }
        set(&mut cfg.outputs.dir, self.out.clone());
        set(&mut cfg.seed, self.seed);
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Synthesize { common } => common.resolve().and_then(|cfg| cmd_synthesize(&cfg)),
        Command::Simulate { common, gain, open_loop } => {
            common.resolve().and_then(|cfg| cmd_simulate(&cfg, gain.as_deref(), *open_loop))
        }
        Command::Topt { common } => common.resolve().and_then(|cfg| cmd_topt(&cfg)),
        Command::Verify { common, checks, kernel, gain, summary } => common.resolve().and_then(|cfg| {
            let artifacts = Artifacts { kernel: kernel.clone(), gain: gain.clone(), summary: summary.clone() };
            cmd_verify(&cfg, checks, &artifacts)
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}

fn setup_workers(cfg: &ScenarioConfig) {
    if let Some(w) = cfg.workers {
        // fails when the pool was already built (repeated calls in one process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| with_path(e, path))?))
}

fn open(path: &Path) -> Result<std::io::BufReader<File>> {
    Ok(std::io::BufReader::new(File::open(path).map_err(|e| with_path(e, path))?))
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {}", path.display(), e)))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Settling time of the system. Uses the closed form when speeds do not
/// depend on time.
pub fn settling_time(spec: &SystemSpec, cfg: &ScenarioConfig) -> Result<(ToptResult, Option<f64>)> {
    let spec = prepared_spec(spec)?;
    let formula = if spec.speeds_time_independent() { Some(topt_time_independent(&spec)?) } else { None };
    let cache = CharacteristicCache::new(std::sync::Arc::new(spec), cfg.flow());
    let result = compute_topt(&cache, &ToptConfig { t0_max: cfg.horizon.t0_max, samples: 201 })?;
    Ok((result, formula))
}

fn topt_value(r: &ToptResult, formula: Option<f64>) -> f64 {
    formula.unwrap_or(r.topt)
}

/// Default simulation step `1/(N max|λ|)`.
pub fn default_dt(spec: &SystemSpec, cfg: &ScenarioConfig) -> f64 {
    let t0 = cfg.horizon.t0;
    let vmax = spec.max_abs_speed(&SampleWindow { t_min: t0, t_max: t0 + 10.0, nt: 41, nx: 21 });
    cfg.grids.dt.unwrap_or(1.0 / (cfg.grids.n_sim as f64 * vmax.max(1e-12)))
}

pub fn initial_state(spec: &SystemSpec, cfg: &ScenarioConfig) -> Result<StateSnapshot> {
    let fields = cfg.initial_fields(spec.n)?;
    let t0 = cfg.horizon.t0;
    let y0 = StateSnapshot::from_fn(t0, Uniform::new(cfg.grids.n_sim), spec.n, |i, x| fields[i].eval(t0, x));
    if !y0.is_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    Ok(y0)
}

pub fn cmd_synthesize(cfg: &ScenarioConfig) -> Result<i32> {
    setup_workers(cfg);
    let start = Instant::now();
    let spec = cfg.spec()?;
    let hash = cfg.hash(&spec);
    let syn = synthesize(&spec, &cfg.synthesis())?;
    let (topt, formula) = settling_time(&spec, cfg)?;
    let dir = &cfg.outputs.dir;
    if cfg.outputs.wants("csv") {
        let mut f = create(&dir.join("gain.csv"))?;
        gain_to_csv(&syn.gain, &hash, &mut f)?;
        f.flush()?;
    }
    if cfg.outputs.wants("kernel_csv") {
        let mut f = create(&dir.join("kernels.csv"))?;
        kernel_to_csv(&syn.kernel, &hash, &mut f)?;
        f.flush()?;
    }
    if cfg.outputs.wants("bin") {
        let mut f = create(&dir.join("gain.bin"))?;
        write_gain(&syn.gain, &hash, &mut f)?;
        f.flush()?;
        let mut f = create(&dir.join("kernels.bin"))?;
        write_kernel(&syn.kernel, &hash, &mut f)?;
        f.flush()?;
    }
    let summary = json!({
        "config_hash": hash,
        "system": spec.name,
        "n": spec.n,
        "m": spec.m,
        "topt": topt_value(&topt, formula),
        "topt_search": topt,
        "topt_formula": formula,
        "kernel": {
            "nx": syn.kernel.grid.nx,
            "axis": syn.kernel.axis,
            "rows": syn.kernel.rows,
            "iterations": syn.report.iterations,
            "residuals": syn.report.residuals,
            "max_abs": syn.kernel.max_abs(),
        },
        "gain_max_abs": syn.gain.max_abs(),
        "path_step": syn.path_step,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "config": cfg,
    });
    if cfg.outputs.wants("json") {
        write_json(&dir.join("summary.json"), &summary)?;
    }
    println!(
        "synthesized {} (n = {}, m = {}): topt = {:.6}, max |gain| = {:.6e}, config_hash = {}",
        spec.name,
        spec.n,
        spec.m,
        topt_value(&topt, formula),
        syn.gain.max_abs(),
        hash
    );
    Ok(EXIT_OK)
}

fn check_gain_grid(gain: &GainTable, spec: &SystemSpec, cfg: &ScenarioConfig, t_end: f64) -> Result<()> {
    if gain.n != spec.n || gain.m != spec.m {
        return Err(Error::Grid(format!(
            "gain table is for n = {}, m = {}, system has n = {}, m = {}",
            gain.n, gain.m, spec.n, spec.m
        )));
    }
    if gain.grid.nx != cfg.grids.nx {
        return Err(Error::Grid(format!("gain table has nx = {}, configuration has nx = {}", gain.grid.nx, cfg.grids.nx)));
    }
    match gain.axis {
        TimeAxis::Stationary if !spec.is_time_independent() => {
            Err(Error::Grid("stationary gain table for a time-dependent system".into()))
        }
        TimeAxis::Window { start, end, .. } if cfg.horizon.t0 < start || t_end > end + 1e-12 => Err(Error::Grid(format!(
            "gain table covers [{}, {}], simulation needs [{}, {}]",
            start, end, cfg.horizon.t0, t_end
        ))),
        _ => Ok(()),
    }
}

fn load_gain(path: &Path) -> Result<GainTable> {
    Ok(read_gain(open(path)?)?.0)
}

/// Runs one simulation as configured; `gain = None` is the open loop.
pub fn run_simulation(spec: &SystemSpec, cfg: &ScenarioConfig, gain: Option<GainTable>) -> Result<Trace> {
    let dt = default_dt(spec, cfg);
    let horizon = match (cfg.horizon.t_horizon, &gain) {
        (Some(h), _) => h,
        (None, Some(_)) => {
            let (r, formula) = settling_time(spec, cfg)?;
            topt_value(&r, formula) + 2.0 * dt
        }
        (None, None) => 10.0,
    };
    if let Some(g) = &gain {
        check_gain_grid(g, spec, cfg, cfg.horizon.t0 + horizon)?;
    }
    let sys = GeneralSystem::open_loop(spec).with_gain(gain)?;
    let y0 = initial_state(spec, cfg)?;
    let opts = SimOptions { h_ode: cfg.grids.h_ode, store_every: cfg.grids.store_every };
    simulate(&sys, cfg.horizon.t0, &y0, horizon, dt, &opts)
}

pub fn cmd_simulate(cfg: &ScenarioConfig, gain_path: Option<&Path>, open_loop: bool) -> Result<i32> {
    setup_workers(cfg);
    let spec = cfg.spec()?;
    let hash = cfg.hash(&spec);
    let gain = match (gain_path, open_loop) {
        (Some(p), false) => Some(load_gain(p)?),
        (None, true) => None,
        _ => return Err(Error::Config("simulate needs exactly one of --gain PATH and --open-loop".into())),
    };
    let trace = run_simulation(&spec, cfg, gain)?;
    let dir = &cfg.outputs.dir;
    let mut f = create(&dir.join("trace.csv"))?;
    trace_to_csv(&trace, &hash, &mut f)?;
    f.flush()?;
    let mut f = create(&dir.join("norms.csv"))?;
    norms_to_csv(&trace, &hash, &mut f)?;
    f.flush()?;
    println!(
        "simulated {} steps of dt = {:.6e} to t = {:.6}: terminal ratio {:.6e}, peak ratio {:.6e}",
        trace.records.len() - 1,
        trace.dt,
        trace.last().t,
        trace.terminal_ratio(),
        trace.peak_ratio()
    );
    Ok(EXIT_OK)
}

pub fn cmd_topt(cfg: &ScenarioConfig) -> Result<i32> {
    let spec = cfg.spec()?;
    let hash = cfg.hash(&spec);
    let (r, formula) = settling_time(&spec, cfg)?;
    let value = topt_value(&r, formula);
    if cfg.outputs.wants("json") {
        write_json(
            &cfg.outputs.dir.join("topt.json"),
            &json!({ "config_hash": hash, "topt": value, "topt_search": r, "topt_formula": formula }),
        )?;
    }
    println!("{:.12}", value);
    Ok(EXIT_OK)
}

/// Artifact paths for `verify`; missing entries default to the output
/// directory.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub kernel: Option<PathBuf>,
    pub gain: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

struct VerifyContext<'a> {
    cfg: &'a ScenarioConfig,
    spec: SystemSpec,
    syn: Option<Synthesis>,
    gain: Option<GainTable>,
    stored_topt: Option<f64>,
    topt: f64,
    formula: Option<f64>,
}

fn needs_kernel(c: CheckName) -> bool {
    matches!(c, CheckName::Trace | CheckName::Reflection | CheckName::Triangular | CheckName::TransformConsistency)
}

fn needs_gain(c: CheckName) -> bool {
    matches!(c, CheckName::FiniteTime | CheckName::UniformStability | CheckName::Periodicity)
}

fn applicable(c: CheckName, spec: &SystemSpec) -> bool {
    match c {
        CheckName::Psi => spec.m >= 2,
        CheckName::Periodicity => spec.period.is_some(),
        _ => true,
    }
}

pub fn cmd_verify(cfg: &ScenarioConfig, checks: &[CheckName], artifacts: &Artifacts) -> Result<i32> {
    setup_workers(cfg);
    let spec = cfg.spec()?;
    let hash = cfg.hash(&spec);
    let selected: Vec<CheckName> = if checks.is_empty() {
        ALL_CHECKS.iter().copied().filter(|&c| applicable(c, &spec)).collect()
    } else {
        if let Some(c) = checks.iter().find(|&&c| !applicable(c, &spec)) {
            return Err(Error::Config(format!("check {:?} does not apply to this system", c)));
        }
        checks.to_vec()
    };
    let dir = &cfg.outputs.dir;
    let syn = if selected.iter().any(|&c| needs_kernel(c)) {
        let path = artifacts.kernel.clone().unwrap_or_else(|| dir.join("kernels.bin"));
        let (kernel, _) = read_kernel(open(&path)?)?;
        Some(synthesize_from_kernel(&spec, &cfg.synthesis(), kernel)?)
    } else {
        None
    };
    let gain = if selected.iter().any(|&c| needs_gain(c)) {
        let path = artifacts.gain.clone().unwrap_or_else(|| dir.join("gain.bin"));
        Some(load_gain(&path)?)
    } else {
        None
    };
    let (r, formula) = settling_time(&spec, cfg)?;
    let stored_topt = if selected.contains(&CheckName::Topt) && formula.is_none() {
        let path = artifacts.summary.clone().unwrap_or_else(|| dir.join("summary.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| with_path(e, &path))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        Some(
            value["topt"]
                .as_f64()
                .ok_or_else(|| Error::Format(format!("{} has no numeric topt", path.display())))?,
        )
    } else {
        None
    };
    let ctx = VerifyContext { cfg, topt: topt_value(&r, formula), spec, syn, gain, stored_topt, formula };
    let reports: Vec<CheckReport> = selected.par_iter().map(|&c| run_check(&ctx, c)).collect::<Result<_>>()?;
    let pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        print!("{}", r);
    }
    println!("{}", if pass { "all checks passed" } else { "some checks failed" });
    if cfg.outputs.wants("json") {
        write_json(&dir.join("report.json"), &json!({ "config_hash": hash, "pass": pass, "checks": reports }))?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn random_states(ctx: &VerifyContext, count: usize) -> Vec<StateSnapshot> {
    let mut rng = ctx.cfg.rng();
    let (n, t0) = (ctx.spec.n, ctx.cfg.horizon.t0);
    let grid = Uniform::new(ctx.cfg.grids.n_sim);
    (0..count)
        .map(|_| {
            let coef: Vec<[f64; 4]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
            StateSnapshot::from_fn(t0, grid, n, |i, x| {
                let c = &coef[i];
                0.5 * c[0] + (1..4).map(|k| c[k] * (k as f64 * std::f64::consts::PI * x).sin()).sum::<f64>()
            })
        })
        .collect()
}

// Initial times whose closed-loop window fits the gain's time axis.
fn sample_t0(ctx: &VerifyContext, gain: &GainTable, horizon: f64, count: usize) -> Vec<f64> {
    let t0 = ctx.cfg.horizon.t0;
    let hi = match gain.axis {
        TimeAxis::Window { end, .. } => (end - horizon).max(t0),
        TimeAxis::Periodic { period, .. } => t0 + period,
        TimeAxis::Stationary => t0,
    };
    let mut rng = ctx.cfg.rng();
    let mut out = vec![t0];
    if hi > t0 {
        out.extend((1..count).map(|_| rng.random_range(t0..hi)));
    }
    out
}

fn run_check(ctx: &VerifyContext, check: CheckName) -> Result<CheckReport> {
    let cfg = ctx.cfg;
    let tol = &cfg.tolerances;
    let need_syn = || ctx.syn.as_ref().ok_or_else(|| Error::Config("kernel table not loaded".into()));
    let need_gain = || ctx.gain.as_ref().ok_or_else(|| Error::Config("gain table not loaded".into()));
    let dt = default_dt(&ctx.spec, cfg);
    let closed_horizon = cfg.horizon.t_horizon.unwrap_or(ctx.topt + 2.0 * dt);
    let cache = || -> Result<CharacteristicCache> {
        Ok(CharacteristicCache::new(std::sync::Arc::new(prepared_spec(&ctx.spec)?), cfg.flow()))
    };
    let mut rng = cfg.rng();
    match check {
        CheckName::Trace => {
            let syn = need_syn()?;
            Ok(check_trace(syn.spec(), &syn.kernel, &syn.pre, 5.0 * tol.tol_fp))
        }
        CheckName::Reflection => {
            let syn = need_syn()?;
            Ok(check_reflection(&syn.kernel, &syn.pre, tol.tol_tri))
        }
        CheckName::Triangular => Ok(check_triangular(&need_syn()?.g2, tol.tol_tri)),
        CheckName::FiniteTime => {
            let gain = need_gain()?;
            let sys = GeneralSystem::closed_loop(&ctx.spec, gain.clone())?;
            let mut states = vec![initial_state(&ctx.spec, cfg)?];
            states.extend(random_states(ctx, 2));
            let t0s = sample_t0(ctx, gain, closed_horizon, 3);
            Ok(check_finite_time(&sys, &t0s, &states, closed_horizon, dt, tol.tol_ratio))
        }
        CheckName::UniformStability => {
            let gain = need_gain()?;
            let sys = GeneralSystem::closed_loop(&ctx.spec, gain.clone())?;
            let t0s = sample_t0(ctx, gain, closed_horizon, 4);
            let y0 = initial_state(&ctx.spec, cfg)?;
            Ok(check_uniform_stability(&sys, &t0s, &y0, closed_horizon, dt, tol.stability_bound))
        }
        CheckName::Psi => {
            let cache = cache()?;
            let t_samples: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..5.0)).collect();
            let x_samples: Vec<f64> = (1..10).map(|a| a as f64 / 10.0).collect();
            let mut reports = Vec::new();
            for i in 0..ctx.spec.m {
                for j in 0..ctx.spec.m {
                    if i != j {
                        reports.push(check_psi(&cache, i, j, &t_samples, &x_samples, 1e-4, 1e-5)?);
                    }
                }
            }
            Ok(merge("check_psi", reports))
        }
        CheckName::Omega => {
            let cache = cache()?;
            let t_samples: Vec<f64> = (0..=10).map(|k| k as f64).collect();
            let x_samples: Vec<f64> = (0..=10).map(|a| a as f64 / 10.0).collect();
            let points: Vec<(f64, f64, f64)> = (0..40)
                .map(|_| {
                    let x: f64 = rng.random_range(0.05..0.95);
                    (rng.random_range(0.0..5.0), x, rng.random_range(0.0..x))
                })
                .collect();
            let mut reports = Vec::new();
            for i in 0..ctx.spec.m {
                let nu = cache.omega_nu(i, &t_samples, &x_samples);
                reports.push(check_omega(&cache, i, nu, &points, 1e-4)?);
            }
            Ok(merge("check_omega", reports))
        }
        CheckName::Periodicity => check_periodicity(need_gain()?, ctx.spec.period, tol.tol_periodic),
        CheckName::TransformConsistency => {
            let syn = need_syn()?;
            let fields = cfg.initial_fields(ctx.spec.n)?;
            let t0 = cfg.horizon.t0;
            // the kernel grid error is a floor for the mismatch, so N stays at or below nx
            let nx = cfg.grids.nx;
            let resolutions = vec![(nx / 4).max(8), (nx / 2).max(16), nx.max(32)];
            let probe = ConsistencyProbe { t0, horizon: ctx.topt, resolutions, compare_every: 0.25 };
            check_transform_consistency(syn, &probe, &|i, x| fields[i].eval(t0, x), 1.8)
        }
        CheckName::Topt => {
            let (reference, label) = match (ctx.formula, ctx.stored_topt) {
                (Some(f), _) => (f, "closed-form settling time"),
                (None, Some(s)) => (s, "settling time stored by synthesize"),
                (None, None) => return Err(Error::Config("no reference settling time".into())),
            };
            let cache = cache()?;
            let search = compute_topt(&cache, &ToptConfig { t0_max: cfg.horizon.t0_max, samples: 201 })?;
            let residual = (search.topt - reference).abs();
            let mut report = CheckReport::from_residual("check_topt", 1, residual, 1e-6);
            report.notes.push(format!("search gives {:.12}, {} is {:.12}", search.topt, label, reference));
            report.notes.push(format!("settling time from t0 = 0: {:.12}", settling_from(&cache, 0.0)?));
            Ok(report)
        }
    }
}

fn merge(name: &str, reports: Vec<CheckReport>) -> CheckReport {
    let mut out = CheckReport::from_residual(name, 0, f64::NEG_INFINITY, 0.0);
    out.pass = true;
    for r in reports {
        out.samples += r.samples;
        out.pass &= r.pass;
        if r.residual - r.tolerance > out.residual - out.tolerance {
            out.residual = r.residual;
            out.tolerance = r.tolerance;
        }
        out.offenders.extend(r.offenders);
        out.notes.extend(r.notes);
    }
    out.offenders.sort_by(|a, b| b.residual.total_cmp(&a.residual));
    out.offenders.truncate(10);
    out
}
