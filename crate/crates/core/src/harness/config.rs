//! Experiment configuration: TOML documents layered as
//! preset → config file → `--set key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::analysis::surrogate_box;
use crate::dynamics::{ncv_dynamics, LinearDynamics, NoiseProcess, TargetTrajectory};
use crate::engine::{Execution, Granularity, InitPolicy, RunConfig, StepSchedule};
use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, MapKind, MirrorMap, Vector, DEFAULT_SIMPLEX_MIX};
use crate::losses::{round_robin_coords, LossFamily};
use crate::network::{read_edge_list, Network, Topology};
use crate::textio::read_to_string;

use super::presets;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkSpec {
    Grid { rows: usize, cols: usize },
    Complete { n: usize },
    Ring { n: usize },
    Path { n: usize },
    EdgeList { path: PathBuf, n: Option<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsSpec {
    Metropolis,
    /// 1/n everywhere; complete graphs only.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SetSpec {
    WholeSpace,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Simplex { mix: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DynamicsSpec {
    Ncv { epsilon: f64 },
    Identity { dim: usize },
    Matrix { rows: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    Zero,
    /// ε defaults to the NCV dynamics' sampling interval.
    NcvScaled { sigma_nu2: f64, epsilon: Option<f64> },
    /// The same step v every round.
    Constant { step: Vec<f64> },
    Scripted { steps: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossSpec {
    /// Round-robin coordinates unless `coords` is given.
    QuarticSensor { coords: Option<Vec<usize>> },
    QuadraticTracking { amplitude: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    None,
    /// The analytic gradient envelope over the feasible set, or over the
    /// padded bounding box of the target path when the set is unbounded.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClipSpec {
    Limit(f64),
    Mode(ClipMode),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant { eta: f64 },
    InverseSqrt { c: f64 },
    StaticOptimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Point(Vec<f64>),
    Mode(InitMode),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Padding of the surrogate box used when the feasible set is unbounded.
    #[serde(default = "default_pad")]
    pub pad: f64,
    /// Explicit evaluation box for unbounded sets.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            pad: default_pad(),
            lower: None,
            upper: None,
        }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_pad() -> f64 {
    1.0
}

fn default_clip() -> ClipSpec {
    ClipSpec::Mode(ClipMode::None)
}

fn default_init() -> InitSpec {
    InitSpec::Mode(InitMode::Zero)
}

fn default_granularity() -> Granularity {
    Granularity::Full
}

fn default_execution() -> Execution {
    Execution::Serial
}

fn default_weights() -> WeightsSpec {
    WeightsSpec::Metropolis
}

fn default_map() -> MapKind {
    MapKind::Euclidean
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub rounds: usize,
    pub seed: u64,
    /// Optional cross-check of the network size.
    pub agents: Option<usize>,
    pub network: NetworkSpec,
    #[serde(default = "default_weights")]
    pub weights: WeightsSpec,
    #[serde(default = "default_map")]
    pub map: MapKind,
    pub set: SetSpec,
    pub dynamics: DynamicsSpec,
    pub noise: NoiseSpec,
    /// x*_1; zero when omitted.
    pub target_start: Option<Vec<f64>>,
    pub loss: LossSpec,
    #[serde(default = "default_clip")]
    pub clip: ClipSpec,
    pub schedule: ScheduleSpec,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    #[serde(default = "default_execution")]
    pub execution: Execution,
    #[serde(default)]
    pub bound: BoundSpec,
}

/// How the clip threshold of a prepared run was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipSource {
    None,
    Configured,
    Auto,
}

impl ClipSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Configured => "configured",
            Self::Auto => "auto",
        }
    }
}

/// A configuration resolved into engine inputs, with its target path.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub run: RunConfig,
    pub trajectory: Arc<TargetTrajectory>,
    pub clip_source: ClipSource,
    pub bound: BoundSpec,
    /// Evaluation box for unbounded sets, when configured explicitly.
    pub bound_box: Option<FeasibleSet>,
}

/// A merged configuration document and its typed form.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub table: Table,
    pub config: ExperimentConfig,
}

impl Experiment {
    /// Layers `preset` (or the file's own `preset` key), the config file and
    /// the overrides, then type-checks the result.
    pub fn load(preset: Option<&str>, config_path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file = match config_path {
            Some(p) => Some(parse_document(&read_to_string(p)?, &p.display().to_string())?),
            None => None,
        };
        Self::layer(preset, file, overrides)
    }

    /// As [`Experiment::load`], with the config document given as text.
    pub fn from_document(preset: Option<&str>, text: &str, overrides: &[String]) -> Result<Self> {
        Self::layer(preset, Some(parse_document(text, "config")?), overrides)
    }

    fn layer(preset: Option<&str>, file: Option<Table>, overrides: &[String]) -> Result<Self> {
        let name = match (preset, file.as_ref().and_then(|f| f.get("preset"))) {
            (Some(p), _) => p.to_string(),
            (None, Some(Value::String(p))) => p.clone(),
            (None, Some(_)) => return Err(Error::config("`preset` must be a string")),
            (None, None) if file.is_some() => "custom".to_string(),
            (None, None) => return Err(Error::config("give a preset or a config document")),
        };
        let mut table = presets::preset_table(&name)?;
        if let Some(f) = file {
            merge(&mut table, f);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table.insert("preset".into(), Value::String(name));
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let config: ExperimentConfig = Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        Ok(Self { table, config })
    }

    /// Applies one more `key=value` override.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let mut table = self.table.clone();
        apply_override(&mut table, assignment)?;
        Self::from_table(table)
    }

    /// The merged document as TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.table).unwrap_or_default()
    }

    pub fn network(&self) -> Result<Network> {
        let c = &self.config;
        let topology = match &c.network {
            NetworkSpec::Grid { rows, cols } => Topology::Grid { rows: *rows, cols: *cols },
            NetworkSpec::Complete { n } => Topology::Complete(*n),
            NetworkSpec::Ring { n } => Topology::Ring(*n),
            NetworkSpec::Path { n } => Topology::Path(*n),
            NetworkSpec::EdgeList { path, n } => {
                let g = read_edge_list(path, *n)?;
                Topology::EdgeList {
                    n: g.n(),
                    edges: g.edges().to_vec(),
                }
            }
        };
        let network = match c.weights {
            WeightsSpec::Metropolis => Network::metropolis(&topology)?,
            WeightsSpec::Uniform => match topology {
                Topology::Complete(n) => Network::complete_uniform(n)?,
                _ => return Err(Error::config("uniform weights need a complete network")),
            },
        };
        if let Some(n) = c.agents {
            Error::check_dim("agents vs network size", n, network.n())?;
        }
        Ok(network)
    }

    fn dynamics(&self) -> Result<LinearDynamics> {
        match &self.config.dynamics {
            DynamicsSpec::Ncv { epsilon } => ncv_dynamics(*epsilon),
            DynamicsSpec::Identity { dim } => LinearDynamics::identity(*dim),
            DynamicsSpec::Matrix { rows } => {
                let d = rows.len();
                if d == 0 || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::config("dynamics matrix must be square and nonempty"));
                }
                LinearDynamics::new(nalgebra::DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        }
    }

    fn noise(&self, rounds: usize, dim: usize) -> Result<NoiseProcess> {
        Ok(match &self.config.noise {
            NoiseSpec::Zero => NoiseProcess::Zero,
            NoiseSpec::NcvScaled { sigma_nu2, epsilon } => {
                let epsilon = match (epsilon, &self.config.dynamics) {
                    (Some(e), _) => *e,
                    (None, DynamicsSpec::Ncv { epsilon }) => *epsilon,
                    (None, _) => return Err(Error::config("ncv-scaled noise needs `epsilon` unless the dynamics are ncv")),
                };
                Error::check_dim("ncv-scaled noise", 4, dim)?;
                NoiseProcess::NcvScaled {
                    sigma_nu2: *sigma_nu2,
                    epsilon,
                }
            }
            NoiseSpec::Constant { step } => {
                Error::check_dim("noise step", dim, step.len())?;
                NoiseProcess::Scripted(vec![Vector::from_column_slice(step); rounds])
            }
            NoiseSpec::Scripted { steps } => {
                let mut out = Vec::with_capacity(steps.len());
                for s in steps {
                    Error::check_dim("noise step", dim, s.len())?;
                    out.push(Vector::from_column_slice(s));
                }
                NoiseProcess::Scripted(out)
            }
        })
    }

    fn set(&self, dim: usize) -> Result<FeasibleSet> {
        let v = |xs: &[f64], what: &'static str| -> Result<Vector> {
            Error::check_dim(what, dim, xs.len())?;
            Ok(Vector::from_column_slice(xs))
        };
        match &self.config.set {
            SetSpec::WholeSpace => FeasibleSet::whole(dim),
            SetSpec::Box { lower, upper } => FeasibleSet::boxed(v(lower, "box lower corner")?, v(upper, "box upper corner")?),
            SetSpec::Ball { center, radius } => FeasibleSet::ball(v(center, "ball center")?, *radius),
            SetSpec::Simplex { mix } => FeasibleSet::simplex(dim, mix.unwrap_or(DEFAULT_SIMPLEX_MIX)),
        }
    }

    /// Resolves every component, generates the target path and fixes the
    /// clip threshold.
    pub fn prepare(&self) -> Result<Prepared> {
        let c = &self.config;
        let network = Arc::new(self.network()?);
        let dynamics = self.dynamics()?;
        let dim = dynamics.dim();
        let map = MirrorMap::new(c.map, dim)?;
        let set = self.set(dim)?;
        let noise = self.noise(c.rounds, dim)?;
        let target_start = match &c.target_start {
            Some(x) => {
                Error::check_dim("target start", dim, x.len())?;
                Vector::from_column_slice(x)
            }
            None => Vector::zeros(dim),
        };
        let family = match &c.loss {
            LossSpec::QuarticSensor { coords } => LossFamily::QuarticSensor {
                coords: coords.clone().unwrap_or_else(|| round_robin_coords(network.n(), dim)),
            },
            LossSpec::QuadraticTracking { amplitude } => LossFamily::QuadraticTracking { amplitude: *amplitude },
        };
        let schedule = match c.schedule {
            ScheduleSpec::Constant { eta } => StepSchedule::Constant { eta },
            ScheduleSpec::InverseSqrt { c } => StepSchedule::InverseSqrt { c },
            ScheduleSpec::StaticOptimal => StepSchedule::static_optimal(network.sigma2(), c.rounds),
        };
        let init = match &c.init {
            InitSpec::Mode(InitMode::Zero) => InitPolicy::Zero,
            InitSpec::Point(p) => {
                Error::check_dim("initial estimate", dim, p.len())?;
                InitPolicy::Point(Vector::from_column_slice(p))
            }
        };
        let bound_box = match (&c.bound.lower, &c.bound.upper) {
            (Some(lo), Some(hi)) => {
                Error::check_dim("bound box lower corner", dim, lo.len())?;
                Error::check_dim("bound box upper corner", dim, hi.len())?;
                Some(FeasibleSet::boxed(Vector::from_column_slice(lo), Vector::from_column_slice(hi))?)
            }
            (None, None) => None,
            _ => return Err(Error::config("bound box needs both `lower` and `upper`")),
        };
        if !(c.bound.delta > 0.0 && c.bound.delta < 1.0) {
            return Err(Error::config(format!("bound.delta must lie in (0, 1), got {}", c.bound.delta)));
        }
        let mut run = RunConfig {
            rounds: c.rounds,
            network,
            map,
            set,
            dynamics,
            noise,
            target_start,
            family,
            clip: None,
            schedule,
            init,
            seed: c.seed,
            granularity: c.granularity,
            execution: c.execution,
        };
        run.validate()?;
        let trajectory = Arc::new(run.generate_trajectory()?);
        let clip_source = match c.clip {
            ClipSpec::Mode(ClipMode::None) => ClipSource::None,
            ClipSpec::Limit(l) => {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(Error::config(format!("clip must be positive, got {l}")));
                }
                run.clip = Some(l);
                ClipSource::Configured
            }
            ClipSpec::Mode(ClipMode::Auto) => {
                let region = if run.set.is_compact() {
                    run.set.clone()
                } else {
                    surrogate_box(&trajectory, [], c.bound.pad)?
                };
                run.clip = Some(run.oracle(trajectory.clone())?.lipschitz_envelope(&region)?);
                ClipSource::Auto
            }
        };
        Ok(Prepared {
            run,
            trajectory,
            clip_source,
            bound: c.bound.clone(),
            bound_box,
        })
    }
}

/// Parses a TOML document; `origin` names it in diagnostics.
pub fn parse_document(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::config(format!("{origin}: {}", e.message())))
}

/// Deep merge. A table whose `kind` differs from the base's replaces it
/// wholesale, so fields of the old variant do not leak into the new one.
fn merge(base: &mut Table, overlay: Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) if b.get("kind") == o.get("kind") || o.get("kind").is_none() => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Shorthands accepted wherever a dotted key is.
pub fn expand_key(key: &str) -> &str {
    match key {
        "sigma_nu2" => "noise.sigma_nu2",
        "eta" => "schedule.eta",
        "delta" => "bound.delta",
        "epsilon" => "dynamics.epsilon",
        other => other,
    }
}

/// Parses an override value as TOML, falling back to a bare string.
pub fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    set_path(table, expand_key(key.trim()), parse_value(value.trim()))
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::config(format!("{key:?}: {part:?} is not a table"))),
        };
    }
    let leaf = parts[parts.len() - 1];
    // Switching a tagged table's kind drops the previous variant's fields.
    if leaf == "kind" && cur.get("kind") != Some(&value) {
        cur.clear();
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}
