//! Dynamic regret, network disagreement and evaluation of the regret bound
//! E_Track + E_Net + E_Stoch.

use std::fmt;

use crate::dynamics::TargetTrajectory;
use crate::engine::{RunConfig, RunRecord, StepSchedule};
use crate::error::{Error, Result};
use crate::geometry::{constants_of, FeasibleSet, MirrorMap, Vector};
use crate::losses::LossOracle;
use crate::rng::aux_rng;
use crate::textio::{fmt_f64, parse_f64, parse_usize};

/// Random probes spent by the empirical Lipschitz estimate.
pub const L_ESTIMATE_BUDGET: usize = 20_000;

/// Relative slack granted to floating-point round-off when comparing a
/// measured quantity against a bound that should dominate it exactly.
const ROUNDOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RegretReport {
    /// (1/n) Σ_i f_t(x_{i,t}) for t = 1..=T.
    pub avg_loss: Vec<f64>,
    /// f_t(x*_t).
    pub opt_loss: Vec<f64>,
    /// avg_loss − opt_loss.
    pub increments: Vec<f64>,
    /// Running sum of the increments.
    pub cumulative: Vec<f64>,
}

impl RegretReport {
    fn from_losses(avg_loss: Vec<f64>, opt_loss: Vec<f64>) -> Self {
        let increments: Vec<f64> = avg_loss.iter().zip(&opt_loss).map(|(a, o)| a - o).collect();
        let cumulative = increments
            .iter()
            .scan(0.0, |acc, inc| {
                *acc += inc;
                Some(*acc)
            })
            .collect();
        Self {
            avg_loss,
            opt_loss,
            increments,
            cumulative,
        }
    }

    pub fn rounds(&self) -> usize {
        self.increments.len()
    }

    /// Reg_T.
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Reg_T / T.
    pub fn normalized(&self) -> f64 {
        self.total() / self.rounds().max(1) as f64
    }

    /// Reg_t / t for every t.
    pub fn normalized_series(&self) -> Vec<f64> {
        self.cumulative.iter().enumerate().map(|(i, c)| c / (i + 1) as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,cum_regret,norm_regret\n");
        for (i, (c, r)) in self.cumulative.iter().zip(self.normalized_series()).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, fmt_f64(*c), fmt_f64(r)));
        }
        out
    }
}

/// One row of a regret CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegretRow {
    pub t: usize,
    pub cum_regret: f64,
    pub norm_regret: f64,
}

/// Parses a regret CSV and checks its internal consistency
/// (consecutive rounds, norm_regret = cum_regret / t).
pub fn parse_regret_csv(text: &str) -> Result<Vec<RegretRow>> {
    const WHAT: &str = "regret csv";
    let mut lines = text.lines();
    if lines.next() != Some("t,cum_regret,norm_regret") {
        return Err(Error::Parse {
            what: WHAT,
            line: 1,
            msg: "expected header \"t,cum_regret,norm_regret\"".into(),
        });
    }
    let mut rows = Vec::new();
    for (r, line) in lines.enumerate() {
        let lineno = r + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                what: WHAT,
                line: lineno,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let row = RegretRow {
            t: parse_usize(fields[0], WHAT, lineno)?,
            cum_regret: parse_f64(fields[1], WHAT, lineno)?,
            norm_regret: parse_f64(fields[2], WHAT, lineno)?,
        };
        if row.t != r + 1 {
            return Err(Error::Parse {
                what: WHAT,
                line: lineno,
                msg: "rounds must be consecutive from 1".into(),
            });
        }
        if (row.norm_regret - row.cum_regret / row.t as f64).abs() > 1e-9 * (1.0 + row.norm_regret.abs()) {
            return Err(Error::Parse {
                what: WHAT,
                line: lineno,
                msg: "norm_regret is not cum_regret / t".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            what: WHAT,
            line: 2,
            msg: "no rows".into(),
        });
    }
    Ok(rows)
}

/// Reg_T = (1/n) Σ_i Σ_t f_t(x_{i,t}) − Σ_t f_t(x*_t), with exact expected losses.
///
/// Full records are re-evaluated through `oracle`; summary records use the
/// per-round aggregates the engine computed with the same oracle.
pub fn dynamic_regret(record: &RunRecord, oracle: &LossOracle) -> Result<RegretReport> {
    if oracle.trajectory().as_ref() != record.trajectory.as_ref() {
        return Err(Error::rejected("oracle and record were built from different target paths"));
    }
    if oracle.n() != record.n {
        return Err(Error::Dimension {
            what: "oracle agents",
            expected: record.n,
            got: oracle.n(),
        });
    }
    let rounds = record.rounds();
    let mut opt = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        opt.push(oracle.global_value(t, record.trajectory.state(t))?);
    }
    let avg = match &record.agents {
        Some(agents) => {
            let mut avg = Vec::with_capacity(rounds);
            for (t, round) in (1..).zip(agents) {
                let mut total = 0.0;
                for s in round {
                    total += oracle.global_value(t, &s.x)?;
                }
                avg.push(total / record.n as f64);
            }
            avg
        }
        None => record.stats.iter().map(|s| s.avg_loss).collect(),
    };
    Ok(RegretReport::from_losses(avg, opt))
}

/// Which of the bound's hypotheses the evaluated configuration satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hypotheses {
    /// The feasible set itself is compact (no surrogate box was needed).
    pub compact_set: bool,
    /// ‖A‖ ≤ 1.
    pub non_expansive: bool,
}

impl Hypotheses {
    pub fn all(&self) -> bool {
        self.compact_set && self.non_expansive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LSource {
    /// Gradients are clipped to this value, so it bounds every served sample.
    Clip,
    /// Analytic sup of the gradient dual norm over the evaluation set.
    Envelope,
    /// Empirical supremum over random probes.
    Estimated,
}

impl LSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clip => "clip",
            Self::Envelope => "envelope",
            Self::Estimated => "estimated",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundConstants {
    pub l: f64,
    pub rsq: f64,
    pub k: f64,
    pub l_source: LSource,
    /// The compact set R², K and L were computed over.
    pub evaluation_set: FeasibleSet,
    pub hypotheses: Hypotheses,
}

/// A compact stand-in for an unbounded feasible set: the bounding box of
/// the target path and of `extra` points, widened by `pad` on every side.
pub fn surrogate_box<'a>(trajectory: &TargetTrajectory, extra: impl IntoIterator<Item = &'a Vector>, pad: f64) -> Result<FeasibleSet> {
    if !(pad >= 0.0 && pad.is_finite()) {
        return Err(Error::rejected(format!("box padding must be a finite nonnegative number, got {pad}")));
    }
    let (mut lo, mut hi) = trajectory.bounding_box();
    for p in extra {
        Error::check_dim("estimate", lo.len(), p.len())?;
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    FeasibleSet::boxed(lo.add_scalar(-pad), hi.add_scalar(pad))
}

/// Computes L, R² and K without looking at the measured regret.
///
/// A compact configured set is used as is. Otherwise `bounding_box` is used
/// when given, else [`surrogate_box`] over the target path and, for full
/// records, every estimate x_{i,t}; either way the evaluation is flagged as
/// outside the compact-set hypothesis.
pub fn estimate_constants(
    config: &RunConfig,
    oracle: &LossOracle,
    record: Option<&RunRecord>,
    bounding_box: Option<FeasibleSet>,
    pad: f64,
) -> Result<BoundConstants> {
    let compact_set = config.set.is_compact();
    let evaluation_set = if compact_set {
        config.set.clone()
    } else if let Some(b) = bounding_box {
        if !b.is_compact() {
            return Err(Error::NonCompact("the bound's evaluation box must be compact"));
        }
        b
    } else {
        let extra: Vec<&Vector> = record
            .and_then(|r| r.agents.as_ref())
            .map(|a| a.iter().flatten().map(|s| &s.x).collect())
            .unwrap_or_default();
        surrogate_box(oracle.trajectory(), extra, pad)?
    };
    let geometry = constants_of(&config.map, &evaluation_set)?;
    let (l, l_source) = match config.clip {
        Some(c) => (c, LSource::Clip),
        None => match oracle.lipschitz_envelope(&evaluation_set) {
            Ok(l) => (l, LSource::Envelope),
            Err(_) => {
                let mut rng = aux_rng(config.seed, 1);
                (oracle.estimate_l(&evaluation_set, L_ESTIMATE_BUDGET, &mut rng)?, LSource::Estimated)
            }
        },
    };
    Ok(BoundConstants {
        l,
        rsq: geometry.rsq,
        k: geometry.k,
        l_source,
        evaluation_set,
        hypotheses: Hypotheses {
            compact_set,
            non_expansive: config.dynamics.is_non_expansive(),
        },
    })
}

/// S_t = Σ_{τ=0}^{t−1} η_τ σ₂^{t−1−τ} for t = 1..=T, via S_t = σ₂ S_{t−1} + η_{t−1}.
pub fn geometric_step_sums(schedule: &StepSchedule, sigma2: f64, rounds: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rounds);
    let mut s = 0.0;
    for t in 1..=rounds {
        s = sigma2 * s + schedule.eta(t - 1);
        out.push(s);
    }
    out
}

/// Σ_t Σ_{τ=0}^{t−1} η_τ σ₂^{t−τ−1} by direct double summation, O(T²).
pub fn network_sum_naive(schedule: &StepSchedule, sigma2: f64, rounds: usize) -> f64 {
    let mut total = 0.0;
    for t in 1..=rounds {
        for tau in 0..t {
            total += schedule.eta(tau) * sigma2.powi((t - tau - 1) as i32);
        }
    }
    total
}

/// Σ_{t=1}^{T} ‖x*_{t+1} − A x*_t‖ in the map's norm.
pub fn path_variation(trajectory: &TargetTrajectory, map: &MirrorMap, rounds: usize) -> f64 {
    trajectory.noises()[..rounds].iter().map(|v| map.norm(v)).sum()
}

/// 2R²/η_{T+1} + Σ_t (K/η_{t+1}) ‖x*_{t+1} − A x*_t‖.
pub fn lemma2_rhs(constants: &BoundConstants, schedule: &StepSchedule, trajectory: &TargetTrajectory, map: &MirrorMap, rounds: usize) -> Result<f64> {
    check_rounds(trajectory, rounds)?;
    let mut total = 2.0 * constants.rsq / schedule.eta(rounds + 1);
    for (t, v) in (1..=rounds).zip(trajectory.noises()) {
        total += constants.k / schedule.eta(t + 1) * map.norm(v);
    }
    Ok(total)
}

fn check_rounds(trajectory: &TargetTrajectory, rounds: usize) -> Result<()> {
    if rounds == 0 || rounds > trajectory.rounds() {
        return Err(Error::rejected(format!(
            "horizon {rounds} not covered by a {}-round target path",
            trajectory.rounds()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub e_track: f64,
    pub e_net: f64,
    pub e_stoch: f64,
    /// The tracking part of E_Track (everything but L² Σ η_t / 2).
    pub lemma2: f64,
    pub constants: BoundConstants,
    pub schedule: StepSchedule,
    pub sigma2: f64,
    pub n: usize,
    pub rounds: usize,
    pub delta: f64,
    pub eta_final: f64,
    pub path_variation: f64,
    pub measured: Option<f64>,
}

impl BoundReport {
    pub fn total(&self) -> f64 {
        self.e_track + self.e_net + self.e_stoch
    }

    pub fn slack(&self) -> Option<f64> {
        self.measured.map(|m| self.total() - m)
    }

    pub fn with_measured(mut self, measured: f64) -> Self {
        self.measured = Some(measured);
        self
    }

    /// Every number entering the bound, in report order.
    pub fn fields(&self) -> Vec<(&'static str, ReportValue)> {
        use ReportValue::{Flag, Int, Num, Text};
        let c = &self.constants;
        let mut out = vec![
            ("e_track", Num(self.e_track)),
            ("e_net", Num(self.e_net)),
            ("e_stoch", Num(self.e_stoch)),
            ("total_bound", Num(self.total())),
            ("lemma2_rhs", Num(self.lemma2)),
        ];
        if let Some(m) = self.measured {
            out.push(("measured_regret", Num(m)));
            out.push(("slack", Num(self.total() - m)));
            out.push(("bound_holds", Flag(m <= self.total())));
        }
        out.extend([
            ("L", Num(c.l)),
            ("L_source", Text(c.l_source.as_str().to_string())),
            ("Rsq", Num(c.rsq)),
            ("K", Num(c.k)),
            ("evaluation_set", Text(describe_set(&c.evaluation_set))),
            ("delta", Num(self.delta)),
            ("sigma2", Num(self.sigma2)),
            ("n", Int(self.n)),
            ("T", Int(self.rounds)),
            ("schedule", Text(self.schedule.describe())),
            ("eta_1", Num(self.schedule.eta(1))),
            ("eta_T_plus_1", Num(self.eta_final)),
            ("path_variation", Num(self.path_variation)),
            ("hypothesis_compact_set", Flag(c.hypotheses.compact_set)),
            ("hypothesis_non_expansive", Flag(c.hypotheses.non_expansive)),
            ("within_hypotheses", Flag(c.hypotheses.all())),
        ]);
        out
    }

    /// Flat `key = value` listing.
    pub fn to_text(&self) -> String {
        self.fields().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The same listing with TOML-quoted strings.
    pub fn to_toml_lines(&self) -> String {
        self.fields().iter().map(|(k, v)| format!("{k} = {}\n", v.to_toml())).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReportValue {
    Num(f64),
    Int(usize),
    Text(String),
    Flag(bool),
}

impl ReportValue {
    pub fn to_toml(&self) -> String {
        match self {
            Self::Num(x) => toml_float(*x),
            Self::Text(s) => format!("{s:?}"),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for ReportValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Num(x) => f.write_str(&fmt_f64(*x)),
            Self::Int(n) => write!(f, "{n}"),
            Self::Text(s) => f.write_str(s),
            Self::Flag(b) => write!(f, "{b}"),
        }
    }
}

/// A float in TOML syntax, 17 significant digits.
pub fn toml_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        fmt_f64(x)
    }
}

pub fn describe_set(set: &FeasibleSet) -> String {
    let list = |v: &Vector| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
    match set {
        FeasibleSet::WholeSpace { dim } => format!("whole-space(dim={dim})"),
        FeasibleSet::Box { lower, upper } => format!("box(lower=[{}], upper=[{}])", list(lower), list(upper)),
        FeasibleSet::Ball { center, radius } => format!("ball(center=[{}], radius={})", list(center), fmt_f64(*radius)),
        FeasibleSet::Simplex { dim, mix } => format!("simplex(dim={dim}, mix={})", fmt_f64(*mix)),
    }
}

/// Evaluates E_Track, E_Net and E_Stoch for horizon `rounds`.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_bound(
    constants: &BoundConstants,
    schedule: &StepSchedule,
    trajectory: &TargetTrajectory,
    map: &MirrorMap,
    sigma2: f64,
    n: usize,
    rounds: usize,
    delta: f64,
) -> Result<BoundReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::rejected(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(0.0..1.0).contains(&sigma2) {
        return Err(Error::rejected(format!("sigma2 must lie in [0, 1), got {sigma2}")));
    }
    let c = constants;
    if !(c.l >= 0.0 && c.rsq >= 0.0 && c.k >= 0.0) || !(c.l.is_finite() && c.rsq.is_finite() && c.k.is_finite()) {
        return Err(Error::rejected("bound constants must be finite and nonnegative"));
    }
    schedule.validate()?;
    let lemma2 = lemma2_rhs(c, schedule, trajectory, map, rounds)?;
    let eta_sum: f64 = (1..=rounds).map(|t| schedule.eta(t)).sum();
    let e_track = lemma2 + c.l * c.l * eta_sum / 2.0;
    let net_sum: f64 = geometric_step_sums(schedule, sigma2, rounds).iter().sum();
    let e_net = 4.0 * c.l * c.l * (n as f64).sqrt() * net_sum;
    let e_stoch = 8.0 * c.l * c.rsq.sqrt() * (-(rounds as f64) * delta.ln()).sqrt();
    Ok(BoundReport {
        e_track,
        e_net,
        e_stoch,
        lemma2,
        constants: c.clone(),
        schedule: *schedule,
        sigma2,
        n,
        rounds,
        delta,
        eta_final: schedule.eta(rounds + 1),
        path_variation: path_variation(trajectory, map, rounds),
        measured: None,
    })
}

/// Bound for a finished run, with the measured regret attached.
pub fn bound_for_record(record: &RunRecord, regret: &RegretReport, constants: &BoundConstants, delta: f64) -> Result<BoundReport> {
    Ok(theorem1_bound(
        constants,
        &record.schedule,
        &record.trajectory,
        &record.map,
        record.sigma2,
        record.n,
        record.rounds(),
        delta,
    )?
    .with_measured(regret.total()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
    pub within_hypotheses: bool,
}

impl Verdict {
    /// Only a violation under the bound's hypotheses counts against it.
    pub fn is_violation(&self) -> bool {
        !self.holds && self.within_hypotheses
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.holds { "holds" } else { "violated" };
        write!(f, "bound {status}: measured {:.6e} vs bound {:.6e}", self.measured, self.bound)?;
        if !self.within_hypotheses {
            write!(f, " (outside hypotheses)")?;
        }
        Ok(())
    }
}

pub fn check_bound(measured: f64, report: &BoundReport) -> Verdict {
    Verdict {
        measured,
        bound: report.total(),
        holds: measured <= report.total(),
        within_hypotheses: report.constants.hypotheses.all(),
    }
}

/// Largest violation count over `runs` seeds still consistent with a
/// violation probability of at most δ: nδ plus a one-sided 95% binomial margin.
pub fn allowed_violations(runs: usize, delta: f64) -> usize {
    let n = runs as f64;
    (n * delta + 1.96 * (n * delta * (1.0 - delta)).sqrt()).floor() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisagreementReport {
    /// max_i ‖x_{i,t} − x̄_t‖ for t = 1..=T.
    pub measured: Vec<f64>,
    /// L √n S_t.
    pub bound: Vec<f64>,
    /// Number of (i, t) with ‖x_{i,t} − x̄_t‖ above the bound.
    pub violations: usize,
}

impl DisagreementReport {
    /// max_t measured_t / bound_t.
    pub fn worst_ratio(&self) -> f64 {
        self.measured.iter().zip(&self.bound).map(|(m, b)| m / b).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,measured,bound\n");
        for (t, (m, b)) in (1..).zip(self.measured.iter().zip(&self.bound)) {
            out.push_str(&format!("{t},{},{}\n", fmt_f64(*m), fmt_f64(*b)));
        }
        out
    }
}

/// Measured disagreement against the per-round bound L√n Σ_{τ<t} η_τ σ₂^{t−1−τ}.
pub fn disagreement(record: &RunRecord, l: f64) -> Result<DisagreementReport> {
    let agents = record
        .agents
        .as_ref()
        .ok_or_else(|| Error::rejected("disagreement needs a full-granularity record"))?;
    let sums = geometric_step_sums(&record.schedule, record.sigma2, record.rounds());
    let scale = l * (record.n as f64).sqrt();
    let mut measured = Vec::with_capacity(agents.len());
    let mut bound = Vec::with_capacity(agents.len());
    let mut violations = 0;
    for (round, s) in agents.iter().zip(sums) {
        let mut mean = Vector::zeros(record.dim);
        for a in round {
            mean += &a.x;
        }
        mean /= record.n as f64;
        let b = scale * s;
        let mut worst = 0.0f64;
        for a in round {
            let dev = record.map.norm(&(&a.x - &mean));
            if dev > b * (1.0 + ROUNDOFF) + f64::MIN_POSITIVE {
                violations += 1;
            }
            worst = worst.max(dev);
        }
        measured.push(worst);
        bound.push(b);
    }
    Ok(DisagreementReport {
        measured,
        bound,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::dynamics::{generate_trajectory, LinearDynamics, NoiseProcess};
    use crate::engine::{run, Execution, Granularity, InitPolicy};
    use crate::geometry::MapKind;
    use crate::losses::{DualNorm, LossFamily};
    use crate::network::{Network, Topology};
    use crate::rng::trajectory_rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn unit_constants(l: f64, rsq: f64, k: f64) -> BoundConstants {
        BoundConstants {
            l,
            rsq,
            k,
            l_source: LSource::Envelope,
            evaluation_set: FeasibleSet::boxed(v(&[0.0]), v(&[1.0])).unwrap(),
            hypotheses: Hypotheses {
                compact_set: true,
                non_expansive: true,
            },
        }
    }

    fn path(noise: NoiseProcess, rounds: usize) -> TargetTrajectory {
        generate_trajectory(&LinearDynamics::identity(1).unwrap(), &v(&[0.0]), &noise, rounds, &mut trajectory_rng(0)).unwrap()
    }

    fn scalar_config(rounds: usize) -> RunConfig {
        RunConfig {
            rounds,
            network: Arc::new(Network::complete_uniform(1).unwrap()),
            map: MirrorMap::euclidean(1).unwrap(),
            set: FeasibleSet::whole(1).unwrap(),
            dynamics: LinearDynamics::identity(1).unwrap(),
            noise: NoiseProcess::Zero,
            target_start: v(&[1.0]),
            family: LossFamily::QuadraticTracking { amplitude: 0.0 },
            clip: None,
            schedule: StepSchedule::Constant { eta: 0.5 },
            init: InitPolicy::Zero,
            seed: 0,
            granularity: Granularity::Full,
            execution: Execution::Serial,
        }
    }

    #[test]
    fn regret_of_a_frozen_estimate() {
        // Overwrite every estimate with 0 so each round costs ½.
        let cfg = scalar_config(10);
        let record = run(cfg.clone()).unwrap();
        let mut frozen = record.clone();
        for round in frozen.agents.as_mut().unwrap() {
            round[0].x = v(&[0.0]);
        }
        let oracle = cfg.oracle(record.trajectory.clone()).unwrap();
        let report = dynamic_regret(&frozen, &oracle).unwrap();
        assert!((report.total() - 5.0).abs() < 1e-12);
        assert!((report.normalized() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn regret_is_zero_at_the_comparator() {
        let cfg = scalar_config(10);
        let mut record = run(cfg.clone()).unwrap();
        let traj = record.trajectory.clone();
        for (t, round) in (1..).zip(record.agents.as_mut().unwrap()) {
            round[0].x = traj.state(t).clone();
        }
        let oracle = cfg.oracle(traj).unwrap();
        assert_eq!(dynamic_regret(&record, &oracle).unwrap().total(), 0.0);
    }

    #[test]
    fn regret_series_is_consistent_and_round_trips() {
        let cfg = scalar_config(50);
        let record = run(cfg.clone()).unwrap();
        let oracle = cfg.oracle(record.trajectory.clone()).unwrap();
        let report = dynamic_regret(&record, &oracle).unwrap();
        let sum: f64 = report.increments.iter().sum();
        assert!((sum - report.total()).abs() <= 1e-9);
        let rows = parse_regret_csv(&report.to_csv()).unwrap();
        for (row, c) in rows.iter().zip(&report.cumulative) {
            assert_eq!(row.cum_regret, *c);
        }
        let summary = run(RunConfig {
            granularity: Granularity::Summary,
            ..cfg
        })
        .unwrap();
        let from_summary = dynamic_regret(&summary, &oracle).unwrap();
        assert!((from_summary.total() - report.total()).abs() <= 1e-9);
    }

    #[test]
    fn regret_csv_rejects_tampering() {
        let good = "t,cum_regret,norm_regret\n1,2.0,2.0\n2,3.0,1.5\n";
        assert_eq!(parse_regret_csv(good).unwrap().len(), 2);
        assert!(parse_regret_csv("t,cum_regret,norm_regret\n1,2.0,2.0\n2,3.0,1.6\n").is_err());
        assert!(parse_regret_csv("t,cum_regret,norm_regret\n1,2.0,2.0\n3,3.0,1.0\n").is_err());
        assert!(parse_regret_csv("t,regret\n1,2.0\n").is_err());
        assert!(parse_regret_csv("t,cum_regret,norm_regret\n").is_err());
    }

    #[test]
    fn regret_rejects_foreign_oracle() {
        let cfg = scalar_config(10);
        let record = run(cfg.clone()).unwrap();
        let other = Arc::new(path(NoiseProcess::Scripted(vec![v(&[0.1]); 10]), 10));
        let oracle = cfg.oracle(other).unwrap();
        assert!(dynamic_regret(&record, &oracle).is_err());
    }

    #[test]
    fn stochastic_term_example() {
        let traj = path(NoiseProcess::Zero, 100);
        let map = MirrorMap::euclidean(1).unwrap();
        let report = theorem1_bound(&unit_constants(1.0, 1.0, 1.0), &StepSchedule::Constant { eta: 0.1 }, &traj, &map, 0.5, 4, 100, (-1.0f64).exp()).unwrap();
        assert!((report.e_stoch - 80.0).abs() < 1e-12);
    }

    #[test]
    fn network_term_example() {
        let traj = path(NoiseProcess::Zero, 10);
        let map = MirrorMap::euclidean(1).unwrap();
        let report = theorem1_bound(&unit_constants(1.0, 1.0, 1.0), &StepSchedule::Constant { eta: 0.1 }, &traj, &map, 0.0, 4, 10, 0.1).unwrap();
        assert!((report.e_net - 8.0).abs() < 1e-12);
    }

    #[test]
    fn tracking_term_without_motion() {
        let traj = path(NoiseProcess::Zero, 30);
        let map = MirrorMap::euclidean(1).unwrap();
        let s = StepSchedule::InverseSqrt { c: 0.7 };
        let c = unit_constants(2.0, 3.0, 5.0);
        let report = theorem1_bound(&c, &s, &traj, &map, 0.3, 4, 30, 0.1).unwrap();
        let eta_sum: f64 = (1..=30).map(|t| 0.7 / (t as f64).sqrt()).sum();
        let expected = 2.0 * 3.0 / (0.7 / 31f64.sqrt()) + 4.0 * eta_sum / 2.0;
        assert!((report.e_track - expected).abs() <= 1e-12 * expected);
        assert!((report.lemma2 - 2.0 * 3.0 / s.eta(31)).abs() <= 1e-12);
        assert_eq!(report.total(), report.e_track + report.e_net + report.e_stoch);
        assert!(report.e_track >= 0.0 && report.e_net >= 0.0 && report.e_stoch >= 0.0);
    }

    #[test]
    fn lemma2_with_constant_motion() {
        let c_motion = 0.3;
        let traj = path(NoiseProcess::Scripted(vec![v(&[c_motion]); 40]), 40);
        let map = MirrorMap::euclidean(1).unwrap();
        let c = unit_constants(1.5, 2.0, 1.25);
        let eta = 0.2;
        let s = StepSchedule::Constant { eta };
        let rhs = lemma2_rhs(&c, &s, &traj, &map, 40).unwrap();
        let expected = 2.0 * 2.0 / eta + 40.0 * 1.25 * c_motion / eta;
        assert!((rhs - expected).abs() <= 1e-12 * expected);
        let report = theorem1_bound(&c, &s, &traj, &map, 0.5, 9, 40, 0.05).unwrap();
        assert!((report.e_track - 1.5 * 1.5 * 40.0 * eta / 2.0 - rhs).abs() <= 1e-12 * rhs);
    }

    #[test]
    fn recursion_matches_double_sum() {
        for &sigma2 in &[0.0, 0.3, 0.9, 0.999] {
            for s in [StepSchedule::Constant { eta: 0.1 }, StepSchedule::InverseSqrt { c: 1.3 }] {
                for rounds in [1usize, 2, 17, 200] {
                    let fast: f64 = geometric_step_sums(&s, sigma2, rounds).iter().sum();
                    let slow = network_sum_naive(&s, sigma2, rounds);
                    assert!((fast - slow).abs() <= 1e-9 * slow.max(1.0), "{sigma2} {s:?} {rounds}");
                }
            }
        }
    }

    #[test]
    fn bound_grows_with_constants() {
        let traj = path(NoiseProcess::Scripted(vec![v(&[0.05]); 50]), 50);
        let map = MirrorMap::euclidean(1).unwrap();
        let s = StepSchedule::Constant { eta: 0.1 };
        let base = theorem1_bound(&unit_constants(1.0, 1.0, 1.0), &s, &traj, &map, 0.5, 4, 50, 0.1).unwrap().with_measured(3.0);
        let doubled = theorem1_bound(&unit_constants(2.0, 2.0, 1.0), &s, &traj, &map, 0.5, 4, 50, 0.1).unwrap().with_measured(3.0);
        assert!(doubled.slack().unwrap() > base.slack().unwrap());
    }

    #[test]
    fn bound_rejects_bad_inputs() {
        let traj = path(NoiseProcess::Zero, 5);
        let map = MirrorMap::euclidean(1).unwrap();
        let s = StepSchedule::Constant { eta: 0.1 };
        let c = unit_constants(1.0, 1.0, 1.0);
        assert!(theorem1_bound(&c, &s, &traj, &map, 0.5, 4, 5, 0.0).is_err());
        assert!(theorem1_bound(&c, &s, &traj, &map, 0.5, 4, 5, 1.0).is_err());
        assert!(theorem1_bound(&c, &s, &traj, &map, 0.5, 4, 6, 0.5).is_err());
        assert!(theorem1_bound(&unit_constants(f64::NAN, 1.0, 1.0), &s, &traj, &map, 0.5, 4, 5, 0.5).is_err());
    }

    #[test]
    fn verdict_flags_outside_hypotheses() {
        let traj = path(NoiseProcess::Zero, 5);
        let map = MirrorMap::euclidean(1).unwrap();
        let mut c = unit_constants(1.0, 1.0, 1.0);
        c.hypotheses.non_expansive = false;
        let report = theorem1_bound(&c, &StepSchedule::Constant { eta: 0.1 }, &traj, &map, 0.5, 4, 5, 0.5).unwrap();
        let verdict = check_bound(1e9, &report);
        assert!(!verdict.holds && !verdict.within_hypotheses && !verdict.is_violation());
        assert!(verdict.to_string().contains("outside hypotheses"));
    }

    #[test]
    fn allowed_violation_margin() {
        assert_eq!(allowed_violations(50, 0.1), 9);
        assert_eq!(allowed_violations(100, 0.0), 0);
    }

    #[test]
    fn complete_graph_disagreement_bound() {
        let network = Arc::new(Network::complete_uniform(4).unwrap());
        let cfg = RunConfig {
            network,
            family: LossFamily::QuadraticTracking { amplitude: 0.5 },
            clip: Some(1.0),
            rounds: 50,
            ..scalar_config(50)
        };
        let record = run(cfg).unwrap();
        let report = disagreement(&record, 1.0).unwrap();
        for b in &report.bound {
            assert!((b - 2.0 * 0.5).abs() < 1e-15);
        }
        assert_eq!(report.violations, 0);
        let tight = disagreement(&record, 1e-6).unwrap();
        assert!(tight.violations > 0);
    }

    #[test]
    fn disagreement_needs_full_record() {
        let record = run(RunConfig {
            granularity: Granularity::Summary,
            ..scalar_config(5)
        })
        .unwrap();
        assert!(disagreement(&record, 1.0).is_err());
    }

    #[test]
    fn honest_constants_for_a_box() {
        let network = Arc::new(Network::metropolis(&Topology::Grid { rows: 3, cols: 3 }).unwrap());
        let set = FeasibleSet::boxed(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        let cfg = RunConfig {
            network,
            map: MirrorMap::euclidean(2).unwrap(),
            set: set.clone(),
            dynamics: LinearDynamics::identity(2).unwrap(),
            target_start: v(&[0.3, -0.2]),
            family: LossFamily::QuadraticTracking { amplitude: 0.5 },
            ..scalar_config(20)
        };
        let record = run(cfg.clone()).unwrap();
        let oracle = cfg.oracle(record.trajectory.clone()).unwrap();
        let c = estimate_constants(&cfg, &oracle, Some(&record), None, 1.0).unwrap();
        assert!((c.rsq - 4.0).abs() < 1e-12);
        assert!((c.k - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(c.l_source, LSource::Envelope);
        assert!(c.hypotheses.all());
        // Every served gradient respects L.
        let mut rng = aux_rng(3, 3);
        for _ in 0..10_000 {
            let x = set.sample(&mut rng).unwrap();
            let g = oracle.stochastic_gradient(0, 1, &x, &mut rng).unwrap().g;
            assert!(DualNorm::for_map(MapKind::Euclidean).of(&g) <= c.l);
        }
    }

    #[test]
    fn surrogate_box_covers_path_and_estimates() {
        let cfg = RunConfig {
            noise: NoiseProcess::Scripted(vec![v(&[0.5]); 8]),
            ..scalar_config(8)
        };
        let record = run(cfg.clone()).unwrap();
        let oracle = cfg.oracle(record.trajectory.clone()).unwrap();
        let c = estimate_constants(&cfg, &oracle, Some(&record), None, 0.25).unwrap();
        assert!(!c.hypotheses.compact_set && c.hypotheses.non_expansive);
        let FeasibleSet::Box { lower, upper } = &c.evaluation_set else { panic!() };
        assert_eq!(lower[0], -0.25);
        assert_eq!(upper[0], 1.0 + 8.0 * 0.5 + 0.25);
        let clipped = RunConfig { clip: Some(0.75), ..cfg };
        let c = estimate_constants(&clipped, &oracle, None, None, 0.0).unwrap();
        assert_eq!((c.l, c.l_source), (0.75, LSource::Clip));
    }

    #[test]
    fn bound_text_lists_every_input() {
        let traj = path(NoiseProcess::Zero, 5);
        let map = MirrorMap::euclidean(1).unwrap();
        let report = theorem1_bound(&unit_constants(1.0, 1.0, 1.0), &StepSchedule::Constant { eta: 0.1 }, &traj, &map, 0.5, 4, 5, 0.5)
            .unwrap()
            .with_measured(0.25);
        let text = report.to_text();
        for key in ["e_track", "e_net", "e_stoch", "total_bound", "L", "Rsq", "K", "delta", "sigma2", "schedule", "measured_regret", "within_hypotheses"] {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
        }
    }
}
