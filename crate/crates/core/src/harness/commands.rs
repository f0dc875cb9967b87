//! The CLI subcommands as library functions: run, sweep, check, validate,
//! trajectory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::analysis::{
    allowed_violations, bound_for_record, check_bound, disagreement, dynamic_regret, estimate_constants, parse_regret_csv,
    BoundConstants, BoundReport, DisagreementReport, RegretReport, Verdict,
};
use crate::dynamics::TargetTrajectory;
use crate::engine::{run_with_trajectory, Granularity, RunRecord};
use crate::error::{Error, Result};
use crate::network::ValidationReport;
use crate::textio::{fmt_f64, read_to_string, write_atomic};

use super::artifacts::{
    estimates_csv, manifest, manifest_experiment, parse_estimates_csv, record_from_states, BOUND_REPORT, DISAGREEMENT_CSV,
    ESTIMATES_CSV, MANIFEST, REGRET_CSV, TRAJECTORY_CSV,
};
use super::config::{expand_key, Experiment, Prepared};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CHECK_SUMMARY_CSV: &str = "check_summary.csv";

/// A finished run with everything derived from it.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub prepared: Prepared,
    pub record: RunRecord,
    pub regret: RegretReport,
    pub constants: BoundConstants,
    pub bound: BoundReport,
}

/// Runs the experiment in memory and evaluates regret and the bound.
pub fn execute(experiment: &Experiment) -> Result<RunOutput> {
    let prepared = experiment.prepare()?;
    let record = run_with_trajectory(prepared.run.clone(), prepared.trajectory.clone())?;
    let oracle = prepared.run.oracle(record.trajectory.clone())?;
    let regret = dynamic_regret(&record, &oracle)?;
    let constants = estimate_constants(&prepared.run, &oracle, Some(&record), prepared.bound_box.clone(), prepared.bound.pad)?;
    let bound = bound_for_record(&record, &regret, &constants, prepared.bound.delta)?;
    Ok(RunOutput {
        prepared,
        record,
        regret,
        constants,
        bound,
    })
}

/// Writes files into `dir`, deleting every file of the batch if one fails.
struct Batch {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Batch {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        let result = write_atomic(&path, contents.as_bytes());
        if result.is_ok() {
            self.written.push(path);
        }
        result
    }

    fn abort(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Writes a run's artifacts. On failure nothing of this batch is left behind.
pub fn write_run_artifacts(dir: &Path, experiment: &Experiment, output: &RunOutput) -> Result<()> {
    let mut batch = Batch::new(dir)?;
    let result = (|| {
        batch.write(REGRET_CSV, &output.regret.to_csv())?;
        batch.write(TRAJECTORY_CSV, &output.record.trajectory.to_csv())?;
        if output.record.is_full() {
            batch.write(ESTIMATES_CSV, &estimates_csv(&output.record)?)?;
        }
        batch.write(
            MANIFEST,
            &manifest(experiment, &output.prepared, &output.record, &output.regret, &output.bound),
        )
    })();
    if result.is_err() {
        batch.abort();
    }
    result
}

pub fn cmd_run(experiment: &Experiment, out: &Path) -> Result<RunOutput> {
    let output = execute(experiment)?;
    write_run_artifacts(out, experiment, &output)?;
    Ok(output)
}

/// Dumps the target path only.
pub fn cmd_trajectory(experiment: &Experiment, out: &Path) -> Result<Arc<TargetTrajectory>> {
    let prepared = experiment.prepare()?;
    let mut batch = Batch::new(out)?;
    if let Err(e) = batch.write(TRAJECTORY_CSV, &prepared.trajectory.to_csv()) {
        batch.abort();
        return Err(e);
    }
    Ok(prepared.trajectory)
}

/// Checks the network and weight matrix only.
pub fn cmd_validate(experiment: &Experiment) -> Result<ValidationReport> {
    Ok(experiment.network()?.validate())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepSpec {
    /// Dotted config key or shorthand such as `sigma_nu2`.
    pub param: String,
    pub values: Vec<String>,
    pub seeds: usize,
    /// Keep every `stride`-th round (and the last) in sweep.csv.
    pub stride: usize,
    /// Also write each run's full artifacts under `runs/`.
    pub keep_runs: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep needs at least one value"));
        }
        if self.seeds == 0 {
            return Err(Error::config("sweep needs at least one seed"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub normalized_series: Vec<f64>,
    pub regret: f64,
    pub normalized: f64,
}

/// Runs the experiment once per (value, seed), seeds counting up from the
/// configured one. Runs execute in parallel; output order is fixed.
pub fn cmd_sweep(experiment: &Experiment, spec: &SweepSpec, out: &Path) -> Result<Vec<SweepRun>> {
    spec.validate()?;
    let key = expand_key(&spec.param).to_string();
    let base_seed = experiment.config.seed;
    let mut jobs = Vec::new();
    for value in &spec.values {
        let with_value = experiment.with_override(&format!("{key}={value}"))?;
        for s in 0..spec.seeds as u64 {
            let seed = base_seed.wrapping_add(s);
            let mut e = with_value.with_override(&format!("seed={seed}"))?;
            if !spec.keep_runs {
                e = e.with_override("granularity=\"summary\"")?;
            }
            jobs.push((value.clone(), seed, e));
        }
    }
    let outputs: Vec<RunOutput> = jobs.par_iter().map(|(_, _, e)| execute(e)).collect::<Result<_>>()?;

    let mut batch = Batch::new(out)?;
    let result = (|| {
        let mut sweep = String::from("param,value,seed,t,norm_regret\n");
        let mut summary = String::from("param,value,seed,norm_regret,cum_regret\n");
        let mut runs = Vec::with_capacity(jobs.len());
        for ((value, seed, e), o) in jobs.iter().zip(&outputs) {
            let series = o.regret.normalized_series();
            let last = series.len();
            for (t, r) in (1..).zip(&series) {
                if t % spec.stride == 0 || t == last {
                    sweep.push_str(&format!("{},{},{},{},{}\n", spec.param, value, seed, t, fmt_f64(*r)));
                }
            }
            summary.push_str(&format!(
                "{},{},{},{},{}\n",
                spec.param,
                value,
                seed,
                fmt_f64(o.regret.normalized()),
                fmt_f64(o.regret.total())
            ));
            if spec.keep_runs {
                let dir = out.join("runs").join(format!("{}={}", spec.param, sanitize(value))).join(format!("seed={seed}"));
                write_run_artifacts(&dir, e, o)?;
            }
            runs.push(SweepRun {
                value: value.clone(),
                seed: *seed,
                regret: o.regret.total(),
                normalized: o.regret.normalized(),
                normalized_series: series,
            });
        }
        batch.write(SWEEP_CSV, &sweep)?;
        batch.write(SUMMARY_CSV, &summary)?;
        Ok(runs)
    })();
    if result.is_err() {
        batch.abort();
        let _ = fs::remove_dir_all(out.join("runs"));
    }
    result
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Outcome of checking one run directory.
#[derive(Clone, Debug)]
pub struct RunCheck {
    pub dir: PathBuf,
    pub bound: BoundReport,
    pub verdict: Verdict,
    pub disagreement: Option<DisagreementReport>,
    /// The disagreement bound needs ‖A‖ ≤ 1.
    pub disagreement_applies: bool,
}

impl RunCheck {
    pub fn disagreement_violations(&self) -> usize {
        match (&self.disagreement, self.disagreement_applies) {
            (Some(d), true) => d.violations,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub runs: Vec<RunCheck>,
    pub delta: f64,
    /// In-hypothesis bound violations.
    pub bound_violations: usize,
    pub allowed_violations: usize,
    pub disagreement_violations: usize,
}

impl CheckOutcome {
    /// True when the violation frequency is consistent with δ and the
    /// deterministic disagreement bound never failed.
    pub fn passed(&self) -> bool {
        self.bound_violations <= self.allowed_violations && self.disagreement_violations == 0
    }

    pub fn outside_hypotheses(&self) -> usize {
        self.runs.iter().filter(|r| !r.verdict.within_hypotheses).count()
    }
}

/// Re-derives regret, the bound and the disagreement series from stored
/// artifacts. `dir` is a run directory or a tree of them (a kept sweep).
pub fn cmd_check(dir: &Path, delta: Option<f64>) -> Result<CheckOutcome> {
    let dirs = run_dirs(dir)?;
    let checks: Vec<RunCheck> = dirs.par_iter().map(|d| check_run(d, delta)).collect::<Result<_>>()?;
    let delta = checks.first().map(|c| c.bound.delta).unwrap_or(0.1);
    let bound_violations = checks.iter().filter(|c| c.verdict.is_violation()).count();
    let outcome = CheckOutcome {
        delta,
        bound_violations,
        allowed_violations: allowed_violations(checks.len(), delta),
        disagreement_violations: checks.iter().map(|c| c.disagreement_violations()).sum(),
        runs: checks,
    };
    if outcome.runs.len() > 1 {
        let mut csv = String::from("run,measured,bound,holds,within_hypotheses,disagreement_violations\n");
        for r in &outcome.runs {
            let rel = r.dir.strip_prefix(dir).unwrap_or(&r.dir);
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rel.display(),
                fmt_f64(r.verdict.measured),
                fmt_f64(r.verdict.bound),
                r.verdict.holds,
                r.verdict.within_hypotheses,
                r.disagreement_violations()
            ));
        }
        write_atomic(&dir.join(CHECK_SUMMARY_CSV), csv.as_bytes())?;
    }
    Ok(outcome)
}

fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::config(format!("{}: not a directory", dir.display())));
    }
    if dir.join(MANIFEST).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                if path.join(MANIFEST).is_file() {
                    found.push(path);
                } else {
                    stack.push(path);
                }
            }
        }
    }
    if found.is_empty() {
        return Err(Error::config(format!("{}: no {MANIFEST} found", dir.display())));
    }
    found.sort();
    Ok(found)
}

fn check_run(dir: &Path, delta: Option<f64>) -> Result<RunCheck> {
    let experiment = manifest_experiment(&read_to_string(&dir.join(MANIFEST))?)?;
    let prepared = experiment.prepare()?;
    let run = &prepared.run;
    let trajectory = Arc::new(TargetTrajectory::read_csv(&dir.join(TRAJECTORY_CSV), run.dynamics.clone())?);
    if trajectory != prepared.trajectory {
        return Err(Error::rejected(format!(
            "{}: {TRAJECTORY_CSV} does not match the configured target path",
            dir.display()
        )));
    }
    let oracle = run.oracle(trajectory.clone())?;
    let estimates = dir.join(ESTIMATES_CSV);
    let record = if run.granularity == Granularity::Full && estimates.is_file() {
        let (agents, final_x_hat) = parse_estimates_csv(&read_to_string(&estimates)?, run.network.n(), run.dim(), run.rounds)?;
        record_from_states(run, trajectory, &oracle, agents, final_x_hat)?
    } else {
        // No stored estimates: re-run, which is deterministic in (config, seed).
        run_with_trajectory(run.clone(), trajectory)?
    };
    let regret = dynamic_regret(&record, &oracle)?;
    let stored = parse_regret_csv(&read_to_string(&dir.join(REGRET_CSV))?)?;
    if stored.len() != regret.rounds() {
        return Err(Error::rejected(format!(
            "{}: {REGRET_CSV} has {} rounds, expected {}",
            dir.display(),
            stored.len(),
            regret.rounds()
        )));
    }
    for (row, c) in stored.iter().zip(&regret.cumulative) {
        if (row.cum_regret - c).abs() > 1e-9 * c.abs().max(1.0) {
            return Err(Error::rejected(format!(
                "{}: {REGRET_CSV} disagrees with the recomputed regret at t = {}",
                dir.display(),
                row.t
            )));
        }
    }
    let constants = estimate_constants(run, &oracle, Some(&record), prepared.bound_box.clone(), prepared.bound.pad)?;
    let delta = delta.unwrap_or(prepared.bound.delta);
    let bound = bound_for_record(&record, &regret, &constants, delta)?;
    let verdict = check_bound(regret.total(), &bound);
    let disagreement = if record.is_full() { Some(disagreement(&record, constants.l)?) } else { None };
    write_atomic(&dir.join(BOUND_REPORT), bound.to_text().as_bytes())?;
    if let Some(d) = &disagreement {
        write_atomic(&dir.join(DISAGREEMENT_CSV), d.to_csv().as_bytes())?;
    }
    Ok(RunCheck {
        dir: dir.to_path_buf(),
        verdict,
        disagreement,
        disagreement_applies: constants.hypotheses.non_expansive,
        bound,
    })
}
