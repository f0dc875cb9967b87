//! Decentralized online mirror descent, executed in synchronous rounds.
//!
//! Round t runs four stages for every agent i:
//!
//! 1. propagate: x_{i,t} = A x̂_{i,t}
//! 2. communicate: y_{i,t} = Σ_j W_ij x_{j,t} (barrier; uses pre-round values)
//! 3. observe: g̃_{i,t} = stochastic gradient of f_{i,t} at x_{i,t}
//! 4. mirror step: x̂_{i,t+1} = argmin_X η_t⟨x, g̃_{i,t}⟩ + D_R(x, y_{i,t})
//!
//! Stages 1, 3 and 4 are independent per agent and may run on a thread
//! pool; every agent draws from its own counter-derived stream, so the
//! result does not depend on the execution mode.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{generate_trajectory, LinearDynamics, NoiseProcess, TargetTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, MapKind, MirrorMap, Vector};
use crate::losses::{DualNorm, LossFamily, LossOracle};
use crate::network::Network;
use crate::rng::{agent_round_rng, trajectory_rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// η_t = c / √t.
    InverseSqrt { c: f64 },
    /// η = √((1 − σ₂) / T), constant over the horizon.
    StaticOptimal { sigma2: f64, horizon: usize },
}

impl StepSchedule {
    pub fn static_optimal(sigma2: f64, horizon: usize) -> Self {
        Self::StaticOptimal { sigma2, horizon }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { eta } => eta > 0.0 && eta.is_finite(),
            Self::InverseSqrt { c } => c > 0.0 && c.is_finite(),
            Self::StaticOptimal { sigma2, horizon } => (0.0..1.0).contains(&sigma2) && horizon > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::rejected(format!("invalid step-size schedule {self:?}")))
        }
    }

    /// η_t for t ≥ 1; η_0 is defined as η_1.
    pub fn eta(&self, t: usize) -> f64 {
        let t = t.max(1);
        match *self {
            Self::Constant { eta } => eta,
            Self::InverseSqrt { c } => c / (t as f64).sqrt(),
            Self::StaticOptimal { sigma2, horizon } => ((1.0 - sigma2) / horizon as f64).sqrt(),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Self::Constant { eta } => format!("constant(eta={eta})"),
            Self::InverseSqrt { c } => format!("inverse-sqrt(c={c})"),
            Self::StaticOptimal { sigma2, horizon } => {
                format!("static-optimal(sigma2={sigma2}, T={horizon}, eta={})", self.eta(1))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// Keep every agent's (x̂, x, y) for every round.
    Full,
    /// Keep per-round aggregates only.
    Summary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Serial,
    Parallel,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitPolicy {
    /// x̂_{i,1} = 0, or the set's centroid when 0 is not admissible.
    Zero,
    Point(Vector),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub rounds: usize,
    pub network: Arc<Network>,
    pub map: MirrorMap,
    pub set: FeasibleSet,
    pub dynamics: LinearDynamics,
    pub noise: NoiseProcess,
    /// x*_1.
    pub target_start: Vector,
    pub family: LossFamily,
    /// Clip stochastic gradients to this dual-norm limit.
    pub clip: Option<f64>,
    pub schedule: StepSchedule,
    pub init: InitPolicy,
    pub seed: u64,
    pub granularity: Granularity,
    pub execution: Execution,
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.map.dim();
        if self.rounds == 0 {
            return Err(Error::config("rounds must be positive"));
        }
        Error::check_dim("feasible set", d, self.set.dim())?;
        Error::check_dim("dynamics", d, self.dynamics.dim())?;
        Error::check_dim("target start", d, self.target_start.len())?;
        if let LossFamily::QuarticSensor { coords } = &self.family {
            Error::check_dim("sensor assignment (agents)", self.network.n(), coords.len())?;
        }
        if self.map.kind() == MapKind::NegativeEntropy && !matches!(self.set, FeasibleSet::Simplex { .. }) {
            return Err(Error::Unsupported("negative entropy requires the simplex".into()));
        }
        if let InitPolicy::Point(p) = &self.init {
            Error::check_dim("initial estimate", d, p.len())?;
        }
        self.schedule.validate()
    }

    fn initial_estimate(&self) -> Result<Vector> {
        let d = self.dim();
        let zero = Vector::zeros(d);
        let point = match &self.init {
            InitPolicy::Zero => {
                if self.map.kind() == MapKind::Euclidean && self.set.contains(&zero, 0.0) {
                    zero
                } else {
                    self.set.centroid().ok_or_else(|| Error::config("no admissible default initial point"))?
                }
            }
            InitPolicy::Point(p) => p.clone(),
        };
        if !self.set.contains(&point, 1e-12) {
            return Err(Error::config("initial estimate lies outside the feasible set"));
        }
        if self.map.kind() == MapKind::NegativeEntropy && point.iter().any(|&v| v <= 0.0) {
            return Err(Error::config("negative entropy needs a strictly positive initial estimate"));
        }
        Ok(point)
    }

    /// Generates the target trajectory this configuration induces.
    pub fn generate_trajectory(&self) -> Result<TargetTrajectory> {
        generate_trajectory(&self.dynamics, &self.target_start, &self.noise, self.rounds, &mut trajectory_rng(self.seed))
    }

    /// Builds the loss oracle bound to `trajectory`.
    pub fn oracle(&self, trajectory: Arc<TargetTrajectory>) -> Result<LossOracle> {
        LossOracle::new(self.family.clone(), self.network.n(), trajectory, DualNorm::for_map(self.map.kind()))?.with_clip(self.clip)
    }
}

/// One agent's iterates within a round.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    /// x̂_{i,t}, the mirror-step output from the previous round.
    pub x_hat: Vector,
    /// x_{i,t} = A x̂_{i,t}, the estimate of x*_t.
    pub x: Vector,
    /// y_{i,t} = Σ_j W_ij x_{j,t}.
    pub y: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    pub t: usize,
    pub eta: f64,
    /// (1/n) Σ_i f_t(x_{i,t}).
    pub avg_loss: f64,
    /// f_t(x*_t).
    pub opt_loss: f64,
    /// max_i ‖x_{i,t} − x̄_t‖ in the map's norm.
    pub max_disagreement: f64,
    pub clipped: u32,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub n: usize,
    pub dim: usize,
    pub map: MirrorMap,
    pub schedule: StepSchedule,
    pub sigma2: f64,
    pub clip: Option<f64>,
    pub trajectory: Arc<TargetTrajectory>,
    pub stats: Vec<RoundStats>,
    /// `agents[t - 1][i]` for rounds 1..=T (full granularity only).
    pub agents: Option<Vec<Vec<AgentState>>>,
    /// x̂_{i,T+1}.
    pub final_x_hat: Vec<Vector>,
    pub clip_counts: Vec<u64>,
    pub wall_clock: Duration,
}

impl RunRecord {
    pub fn rounds(&self) -> usize {
        self.stats.len()
    }

    pub fn is_full(&self) -> bool {
        self.agents.is_some()
    }

    /// x_{i,t} for every agent at round t (full records only).
    pub fn estimates(&self, t: usize) -> Option<impl Iterator<Item = &Vector>> {
        self.agents.as_ref().map(|a| a[t - 1].iter().map(|s| &s.x))
    }

    pub fn total_clipped(&self) -> u64 {
        self.clip_counts.iter().sum()
    }
}

/// Everything but wall-clock time.
impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.dim == other.dim
            && self.map == other.map
            && self.schedule == other.schedule
            && self.sigma2 == other.sigma2
            && self.clip == other.clip
            && self.trajectory == other.trajectory
            && self.stats == other.stats
            && self.agents == other.agents
            && self.final_x_hat == other.final_x_hat
            && self.clip_counts == other.clip_counts
    }
}

pub struct Engine {
    config: RunConfig,
    trajectory: Arc<TargetTrajectory>,
    oracle: LossOracle,
    x_hat: Vec<Vector>,
    round: usize,
    stats: Vec<RoundStats>,
    agents: Option<Vec<Vec<AgentState>>>,
    clip_counts: Vec<u64>,
    started: Instant,
}

impl Engine {
    /// Generates the target path from the config and initializes all agents.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let trajectory = Arc::new(config.generate_trajectory()?);
        Self::with_trajectory(config, trajectory)
    }

    /// Initializes against an externally supplied target path.
    pub fn with_trajectory(config: RunConfig, trajectory: Arc<TargetTrajectory>) -> Result<Self> {
        config.validate()?;
        if trajectory.rounds() < config.rounds {
            return Err(Error::config(format!(
                "trajectory covers {} rounds, {} requested",
                trajectory.rounds(),
                config.rounds
            )));
        }
        Error::check_dim("trajectory", config.dim(), trajectory.dim())?;
        let oracle = config.oracle(trajectory.clone())?;
        let start = config.initial_estimate()?;
        let n = config.network.n();
        let agents = match config.granularity {
            Granularity::Full => Some(Vec::with_capacity(config.rounds)),
            Granularity::Summary => None,
        };
        Ok(Self {
            x_hat: vec![start; n],
            round: 1,
            stats: Vec::with_capacity(config.rounds),
            agents,
            clip_counts: vec![0; n],
            trajectory,
            oracle,
            config,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn oracle(&self) -> &LossOracle {
        &self.oracle
    }

    pub fn trajectory(&self) -> &Arc<TargetTrajectory> {
        &self.trajectory
    }

    /// Next round to execute (1-based).
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round > self.config.rounds
    }

    /// Current x̂_{i,t} for all agents.
    pub fn x_hat(&self) -> &[Vector] {
        &self.x_hat
    }

    /// Executes one synchronous round and returns the agents' states in it.
    pub fn step(&mut self) -> Result<Vec<AgentState>> {
        if self.is_done() {
            return Err(Error::rejected(format!("all {} rounds already executed", self.config.rounds)));
        }
        let t = self.round;
        let cfg = &self.config;
        let n = cfg.network.n();
        let eta = cfg.schedule.eta(t);
        let parallel = cfg.execution == Execution::Parallel;

        // (1) propagate
        let x: Vec<Vector> = map_agents(parallel, n, |i| Ok(cfg.dynamics.apply(&self.x_hat[i])))?;

        // (2) communicate, in fixed j order so both execution modes agree bitwise
        let w = cfg.network.weights();
        let y: Vec<Vector> = map_agents(parallel, n, |i| {
            let mut acc = Vector::zeros(cfg.dim());
            for (j, xj) in x.iter().enumerate() {
                let wij = w.get(i, j);
                if wij != 0.0 {
                    acc.axpy(wij, xj, 1.0);
                }
            }
            Ok(acc)
        })?;

        // (3) observe and (4) mirror step
        let oracle = &self.oracle;
        let updates: Vec<(Vector, bool)> = map_agents(parallel, n, |i| {
            let tag = |e: Error| Error::Step {
                agent: i,
                round: t,
                source: Box::new(e),
            };
            let mut rng = agent_round_rng(cfg.seed, i, t);
            let sample = oracle.stochastic_gradient(i, t, &x[i], &mut rng).map_err(tag)?;
            let next = cfg.map.mirror_step(&cfg.set, &y[i], &sample.g, eta).map_err(tag)?;
            Ok((next, sample.clipped))
        })?;

        // Telemetry on x_{i,t}.
        let mut mean = Vector::zeros(cfg.dim());
        for xi in &x {
            mean += xi;
        }
        mean /= n as f64;
        let max_disagreement = x.iter().map(|xi| cfg.map.norm(&(xi - &mean))).fold(0.0, f64::max);
        let mut avg_loss = 0.0;
        for xi in &x {
            avg_loss += oracle.global_value(t, xi)?;
        }
        avg_loss /= n as f64;
        let opt_loss = oracle.global_value(t, self.trajectory.state(t))?;

        let mut clipped = 0u32;
        let states: Vec<AgentState> = self
            .x_hat
            .iter_mut()
            .zip(x)
            .zip(y)
            .zip(updates)
            .enumerate()
            .map(|(i, (((x_hat, x), y), (next, was_clipped)))| {
                if was_clipped {
                    clipped += 1;
                    self.clip_counts[i] += 1;
                }
                let prev = std::mem::replace(x_hat, next);
                AgentState { x_hat: prev, x, y }
            })
            .collect();

        self.stats.push(RoundStats {
            t,
            eta,
            avg_loss,
            opt_loss,
            max_disagreement,
            clipped,
        });
        if let Some(agents) = self.agents.as_mut() {
            agents.push(states.clone());
        }
        self.round += 1;
        Ok(states)
    }

    pub fn finish(self) -> RunRecord {
        RunRecord {
            n: self.config.network.n(),
            dim: self.config.dim(),
            map: self.config.map,
            schedule: self.config.schedule,
            sigma2: self.config.network.sigma2(),
            clip: self.config.clip,
            trajectory: self.trajectory,
            stats: self.stats,
            agents: self.agents,
            final_x_hat: self.x_hat,
            clip_counts: self.clip_counts,
            wall_clock: self.started.elapsed(),
        }
    }
}

fn map_agents<T, F>(parallel: bool, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Runs all T rounds.
pub fn run(config: RunConfig) -> Result<RunRecord> {
    let mut engine = Engine::new(config)?;
    while !engine.is_done() {
        engine.step()?;
    }
    Ok(engine.finish())
}

/// Runs against a given target path instead of generating one.
pub fn run_with_trajectory(config: RunConfig, trajectory: Arc<TargetTrajectory>) -> Result<RunRecord> {
    let mut engine = Engine::with_trajectory(config, trajectory)?;
    while !engine.is_done() {
        engine.step()?;
    }
    Ok(engine.finish())
}

/// The same run on a complete graph with uniform weights (σ₂ = 0).
pub fn run_centralized_reference(config: RunConfig) -> Result<RunRecord> {
    let network = Arc::new(Network::complete_uniform(config.network.n())?);
    run(RunConfig { network, ..config })
}
