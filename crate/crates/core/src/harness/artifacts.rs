//! Run artifacts on disk: estimates.csv, manifest.txt, and rebuilding a
//! record from them.

use std::sync::Arc;
use std::time::Duration;

use toml::{Table, Value};

use crate::analysis::{describe_set, toml_float, BoundReport, RegretReport};
use crate::dynamics::TargetTrajectory;
use crate::engine::{AgentState, RoundStats, RunConfig, RunRecord};
use crate::error::{Error, Result};
use crate::geometry::{MapKind, Vector};
use crate::losses::LossOracle;
use crate::textio::{fmt_f64, parse_f64, parse_usize};

use super::config::{Experiment, Prepared};

pub const REGRET_CSV: &str = "regret.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const MANIFEST: &str = "manifest.txt";
pub const BOUND_REPORT: &str = "bound_report.txt";
pub const DISAGREEMENT_CSV: &str = "disagreement.csv";

/// Manifest keys that legitimately differ between otherwise identical runs.
pub const VOLATILE_MANIFEST_KEYS: &[&str] = &["wall_clock_seconds", "execution"];

fn header(dim: usize) -> String {
    let mut h = String::from("t,agent");
    for prefix in ["xhat", "x", "y"] {
        for k in 1..=dim {
            h.push_str(&format!(",{prefix}{k}"));
        }
    }
    h
}

/// One row per (t, agent) with x̂_{i,t}, x_{i,t}, y_{i,t}; the final rows
/// (t = T + 1) carry x̂_{i,T+1} only.
pub fn estimates_csv(record: &RunRecord) -> Result<String> {
    let agents = record
        .agents
        .as_ref()
        .ok_or_else(|| Error::rejected("estimates need a full-granularity record"))?;
    let d = record.dim;
    let mut out = header(d);
    out.push('\n');
    let push = |out: &mut String, v: &Vector| {
        for x in v.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
    };
    for (t, round) in (1..).zip(agents) {
        for (i, s) in round.iter().enumerate() {
            out.push_str(&format!("{t},{i}"));
            push(&mut out, &s.x_hat);
            push(&mut out, &s.x);
            push(&mut out, &s.y);
            out.push('\n');
        }
    }
    let t = agents.len() + 1;
    for (i, x_hat) in record.final_x_hat.iter().enumerate() {
        out.push_str(&format!("{t},{i}"));
        push(&mut out, x_hat);
        out.push_str(&",".repeat(2 * d));
        out.push('\n');
    }
    Ok(out)
}

/// Per-round agent states and the final x̂ row.
pub type ParsedEstimates = (Vec<Vec<AgentState>>, Vec<Vector>);

pub fn parse_estimates_csv(text: &str, n: usize, dim: usize, rounds: usize) -> Result<ParsedEstimates> {
    const WHAT: &str = "estimates csv";
    let mut lines = text.lines();
    if lines.next() != Some(header(dim).as_str()) {
        return Err(Error::Parse {
            what: WHAT,
            line: 1,
            msg: format!("expected header {:?}", header(dim)),
        });
    }
    let mut agents = Vec::with_capacity(rounds);
    let mut final_x_hat = Vec::with_capacity(n);
    let mut count = 0;
    for (r, line) in lines.enumerate() {
        let lineno = r + 2;
        let (t, i) = (r / n + 1, r % n);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + 3 * dim {
            return Err(Error::Parse {
                what: WHAT,
                line: lineno,
                msg: format!("expected {} fields, found {}", 2 + 3 * dim, fields.len()),
            });
        }
        if parse_usize(fields[0], WHAT, lineno)? != t || parse_usize(fields[1], WHAT, lineno)? != i {
            return Err(Error::Parse {
                what: WHAT,
                line: lineno,
                msg: format!("expected round {t}, agent {i}"),
            });
        }
        let block = |b: usize| -> Result<Vector> {
            let vals = fields[2 + b * dim..2 + (b + 1) * dim]
                .iter()
                .map(|f| parse_f64(f, WHAT, lineno))
                .collect::<Result<Vec<_>>>()?;
            Ok(Vector::from_vec(vals))
        };
        if t <= rounds {
            if i == 0 {
                agents.push(Vec::with_capacity(n));
            }
            agents[t - 1].push(AgentState {
                x_hat: block(0)?,
                x: block(1)?,
                y: block(2)?,
            });
        } else if t == rounds + 1 {
            if fields[2 + dim..].iter().any(|f| !f.is_empty()) {
                return Err(Error::Parse {
                    what: WHAT,
                    line: lineno,
                    msg: "final rows carry x̂ only".into(),
                });
            }
            final_x_hat.push(block(0)?);
        } else {
            return Err(Error::Parse {
                what: WHAT,
                line: lineno,
                msg: format!("round {t} beyond T + 1 = {}", rounds + 1),
            });
        }
        count += 1;
    }
    if count != n * (rounds + 1) {
        return Err(Error::Parse {
            what: WHAT,
            line: count + 1,
            msg: format!("expected {} rows, found {count}", n * (rounds + 1)),
        });
    }
    Ok((agents, final_x_hat))
}

/// Rebuilds a full record from stored agent states.
pub fn record_from_states(
    run: &RunConfig,
    trajectory: Arc<TargetTrajectory>,
    oracle: &LossOracle,
    agents: Vec<Vec<AgentState>>,
    final_x_hat: Vec<Vector>,
) -> Result<RunRecord> {
    let n = run.network.n();
    let mut stats = Vec::with_capacity(agents.len());
    for (t, round) in (1..).zip(&agents) {
        let mut mean = Vector::zeros(run.dim());
        let mut avg_loss = 0.0;
        for s in round {
            mean += &s.x;
            avg_loss += oracle.global_value(t, &s.x)?;
        }
        mean /= n as f64;
        stats.push(RoundStats {
            t,
            eta: run.schedule.eta(t),
            avg_loss: avg_loss / n as f64,
            opt_loss: oracle.global_value(t, trajectory.state(t))?,
            max_disagreement: round.iter().map(|s| run.map.norm(&(&s.x - &mean))).fold(0.0, f64::max),
            clipped: 0,
        });
    }
    Ok(RunRecord {
        n,
        dim: run.dim(),
        map: run.map,
        schedule: run.schedule,
        sigma2: run.network.sigma2(),
        clip: run.clip,
        trajectory,
        stats,
        agents: Some(agents),
        final_x_hat,
        clip_counts: vec![0; n],
        wall_clock: Duration::ZERO,
    })
}

/// manifest.txt: run facts, regret, every bound input, and the full
/// configuration echo under `[config]`. Valid TOML.
pub fn manifest(experiment: &Experiment, prepared: &Prepared, record: &RunRecord, regret: &RegretReport, bound: &BoundReport) -> String {
    let run = &prepared.run;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    kv("version", format!("{:?}", env!("CARGO_PKG_VERSION")));
    kv("preset", format!("{:?}", experiment.config.preset.clone().unwrap_or_default()));
    kv("seed", run.seed.to_string());
    kv("rounds", run.rounds.to_string());
    kv("agents", run.network.n().to_string());
    kv("dim", run.dim().to_string());
    kv("sigma2", toml_float(run.network.sigma2()));
    kv("dynamics_norm", toml_float(run.dynamics.spectral_norm()));
    let map = match run.map.kind() {
        MapKind::Euclidean => "euclidean",
        MapKind::NegativeEntropy => "negative-entropy",
    };
    kv("map", format!("{map:?}"));
    kv("set", format!("{:?}", describe_set(&run.set)));
    kv("loss", format!("{:?}", run.family.name()));
    kv("schedule", format!("{:?}", run.schedule.describe()));
    kv("clip", run.clip.map(toml_float).unwrap_or_else(|| "\"none\"".into()));
    kv("clip_source", format!("{:?}", prepared.clip_source.as_str()));
    kv("clipped_samples", record.total_clipped().to_string());
    kv("granularity", format!("{:?}", if record.is_full() { "full" } else { "summary" }));
    kv("execution", format!("{:?}", format!("{:?}", run.execution).to_lowercase()));
    kv("wall_clock_seconds", toml_float(record.wall_clock.as_secs_f64()));
    out.push_str("\n[regret]\n");
    out.push_str(&format!("cumulative = {}\n", toml_float(regret.total())));
    out.push_str(&format!("normalized = {}\n", toml_float(regret.normalized())));
    out.push_str("\n[bound]\n");
    out.push_str(&bound.to_toml_lines());
    out.push('\n');
    let mut echo = Table::new();
    echo.insert("config".into(), Value::Table(experiment.table.clone()));
    out.push_str(&toml::to_string(&echo).unwrap_or_default());
    out
}

/// Drops the volatile lines so two manifests can be compared for equality.
pub fn stable_manifest(text: &str) -> String {
    text.lines()
        .filter(|l| !VOLATILE_MANIFEST_KEYS.iter().any(|k| l.starts_with(&format!("{k} = "))))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// The `[config]` table of a manifest.
pub fn manifest_experiment(text: &str) -> Result<Experiment> {
    let mut doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config(format!("manifest: {}", e.message())))?;
    match doc.remove("config") {
        Some(Value::Table(t)) => Experiment::from_table(t),
        _ => Err(Error::config("manifest has no [config] table")),
    }
}
