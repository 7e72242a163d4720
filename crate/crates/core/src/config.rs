//! Scenario configuration shared by the command-line front end and the
//! Python bindings, and its provenance hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::characteristics::FlowConfig;
use crate::coeffs::{catalog, ScalarField, SystemSpec};
use crate::error::{Error, Result};
use crate::transforms::{SynthesisConfig, TimeMode};

/// Where the system comes from. Exactly one of `catalog`, `file` and
/// `spec` must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSource {
    pub catalog: Option<String>,
    pub params: BTreeMap<String, String>,
    /// Path of a system description in JSON.
    pub file: Option<PathBuf>,
    /// Inline system description.
    pub spec: Option<SystemSpec>,
    /// Replaces every coupling entry (`"zero"` for 0).
    pub coupling: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Kernel grid intervals in `x` (the `ξ` grid is the same).
    pub nx: usize,
    /// Time nodes of the kernel tables per period or window.
    pub nt: usize,
    /// Overrides the automatic choice of time axis.
    pub time: Option<TimeMode>,
    /// Simulation grid intervals.
    pub n_sim: usize,
    /// Simulation step; defaults to `1/(n_sim max|λ|)`.
    pub dt: Option<f64>,
    pub h_ode: f64,
    pub store_every: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Grids { nx: 64, nt: 41, time: None, n_sim: 400, dt: None, h_ode: 1e-3, store_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol_fp: f64,
    pub tol_root: f64,
    /// Allowed size of `G²` entries on and above the diagonal.
    pub tol_tri: f64,
    /// Largest terminal norm ratio accepted by the finite-time check.
    pub tol_ratio: f64,
    pub tol_periodic: f64,
    /// Largest peak norm ratio accepted by the stability probe.
    pub stability_bound: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_fp: 1e-8,
            tol_root: 1e-10,
            tol_tri: 1e-12,
            tol_ratio: 0.05,
            tol_periodic: 1e-6,
            stability_bound: 1e3,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizon {
    /// Initial time of simulations.
    pub t0: f64,
    /// Right end of the initial-time grid for the settling time.
    pub t0_max: f64,
    /// Simulated time span; closed-loop runs default to the settling time
    /// plus two steps, open-loop runs to 10.
    pub t_horizon: Option<f64>,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon { t0: 0.0, t0_max: 1000.0, t_horizon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub dir: PathBuf,
    /// Any of `csv`, `bin`, `json`, `kernel_csv`.
    pub formats: Vec<String>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { dir: PathBuf::from("."), formats: vec!["csv".into(), "bin".into(), "json".into()] }
    }
}

impl Outputs {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSource,
    pub grids: Grids,
    pub tolerances: Tolerances,
    pub horizon: Horizon,
    pub outputs: Outputs,
    /// Initial state, one expression in `x` per component; components
    /// without an entry use `sin(pi*x)`.
    pub initial: Vec<String>,
    pub seed: u64,
    /// Worker threads; `None` leaves the choice to the thread pool.
    pub workers: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            system: SystemSource::default(),
            grids: Grids::default(),
            tolerances: Tolerances::default(),
            horizon: Horizon::default(),
            outputs: Outputs::default(),
            initial: Vec::new(),
            seed: 0,
            workers: None,
        }
    }
}

#[derive(Serialize)]
struct HashView<'a> {
    spec: &'a SystemSpec,
    grids: &'a Grids,
    tolerances: &'a Tolerances,
    horizon: &'a Horizon,
    initial: &'a [String],
    seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {}", path.display(), e)))?;
        ScenarioConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grids;
        if g.nx < 2 || g.nt < 2 || g.n_sim < 2 {
            return Err(Error::Config(format!(
                "grid counts must be at least 2 (nx = {}, nt = {}, n_sim = {})",
                g.nx, g.nt, g.n_sim
            )));
        }
        if g.store_every == 0 {
            return Err(Error::Config("store_every must be at least 1".into()));
        }
        if let Some(dt) = g.dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("dt must be positive, got {}", dt)));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("h_ode", g.h_ode),
            ("tol_fp", t.tol_fp),
            ("tol_root", t.tol_root),
            ("tol_tri", t.tol_tri),
            ("tol_ratio", t.tol_ratio),
            ("tol_periodic", t.tol_periodic),
            ("stability_bound", t.stability_bound),
            ("t0_max", self.horizon.t0_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{} must be positive and finite, got {}", name, v)));
            }
        }
        if let Some(h) = self.horizon.t_horizon {
            if !(h >= 0.0) {
                return Err(Error::Config(format!("horizon must be non-negative, got {}", h)));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let s = &self.system;
        let sources = [s.catalog.is_some(), s.file.is_some(), s.spec.is_some()];
        match sources.iter().filter(|&&b| b).count() {
            0 => Err(Error::Config("no system given (catalog name, file or inline spec)".into())),
            1 => Ok(()),
            _ => Err(Error::Config("give only one of catalog name, system file and inline spec".into())),
        }
    }

    /// Builds the system description.
    pub fn spec(&self) -> Result<SystemSpec> {
        let s = &self.system;
        let mut spec = if let Some(name) = &s.catalog {
            catalog(name, &s.params)?
        } else if let Some(path) = &s.file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read system file {}: {}", path.display(), e)))?;
            SystemSpec::from_json(&text)?
        } else if let Some(spec) = &s.spec {
            spec.check_shape()?;
            spec.clone()
        } else {
            return Err(Error::Config("no system given (catalog name, file or inline spec)".into()));
        };
        if !s.params.is_empty() && s.catalog.is_none() {
            return Err(Error::Config("catalog parameters given without a catalog name".into()));
        }
        if let Some(text) = &s.coupling {
            let field = ScalarField::parse(if text == "zero" { "0" } else { text })?;
            for row in spec.coupling.iter_mut() {
                for entry in row.iter_mut() {
                    *entry = field.clone();
                }
            }
        }
        Ok(spec)
    }

    /// Hex SHA-256 of the resolved system and every setting that affects
    /// numbers (not the output location or the thread count).
    pub fn hash(&self, spec: &SystemSpec) -> String {
        let view = HashView {
            spec,
            grids: &self.grids,
            tolerances: &self.tolerances,
            horizon: &self.horizon,
            initial: &self.initial,
            seed: self.seed,
        };
        let text = serde_json::to_string(&view).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{:02x}", b)).collect()
    }

    /// Kernel time axis: explicit choice, or automatic with a window long
    /// enough for the simulated span.
    pub fn time_mode(&self) -> TimeMode {
        self.grids.time.unwrap_or(TimeMode::Auto {
            horizon: (self.horizon.t0 + self.horizon.t_horizon.unwrap_or(0.0)).max(10.0),
            nt: self.grids.nt,
        })
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            nx: self.grids.nx,
            time: self.time_mode(),
            path_step: None,
            tol_fp: self.tolerances.tol_fp,
            max_iter: self.tolerances.max_iter,
            full: true,
            h_ode: self.grids.h_ode,
            tol_root: self.tolerances.tol_root,
        }
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig { h_ode: self.grids.h_ode, tol_root: self.tolerances.tol_root }
    }

    /// Initial state expressions, one per component.
    pub fn initial_fields(&self, n: usize) -> Result<Vec<ScalarField>> {
        if self.initial.len() > n {
            return Err(Error::Config(format!("{} initial expressions for {} components", self.initial.len(), n)));
        }
        (0..n).map(|i| ScalarField::parse(self.initial.get(i).map_or("sin(pi*x)", String::as_str))).collect()
    }

    pub fn rng(&self) -> StdRng {
        StdRng::seed_from_u64(self.seed)
    }
}
