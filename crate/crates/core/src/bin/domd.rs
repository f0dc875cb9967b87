use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use domd::harness::{cmd_check, cmd_run, cmd_sweep, cmd_trajectory, cmd_validate, Experiment, SweepSpec};
use domd::Result;

const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "domd", version, about = "Decentralized online mirror descent for multi-agent target tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// Built-in preset: ncv-grid25, static-quadratic, complete-graph-centralized, custom.
    #[arg(long)]
    preset: Option<String>,
    /// TOML config file layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set noise.sigma_nu2=0.25 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Confidence parameter of the regret bound.
    #[arg(long)]
    delta: Option<f64>,
}

impl Source {
    fn load(&self) -> Result<Experiment> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(d) = self.delta {
            overrides.push(format!("bound.delta={d}"));
        }
        Experiment::load(self.preset.as_deref(), self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write regret, trajectory, estimates and manifest.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run once per (value, seed) and write sweep.csv and summary.csv.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
        /// Config key to vary, e.g. sigma_nu2 or schedule.eta.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Also keep each run's artifacts under OUT/runs.
        #[arg(long)]
        keep_runs: bool,
    },
    /// Recompute regret, the regret bound and disagreement from stored artifacts.
    Check {
        /// A run directory, or a directory of kept sweep runs.
        dir: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Validate the network and its weight matrix.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// Write the target path only.
    Trajectory {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run { source, out } => {
            let experiment = source.load()?;
            let o = cmd_run(&experiment, &out)?;
            println!("rounds {}  agents {}  sigma2 {:.6}", o.record.rounds(), o.record.n, o.record.sigma2);
            println!("regret {:.6e}  normalized {:.6e}", o.regret.total(), o.regret.normalized());
            println!("bound {:.6e}  (E_Track {:.3e}, E_Net {:.3e}, E_Stoch {:.3e})", o.bound.total(), o.bound.e_track, o.bound.e_net, o.bound.e_stoch);
            if o.record.total_clipped() > 0 {
                println!("clipped samples {}", o.record.total_clipped());
            }
            println!("artifacts in {}", out.display());
            Ok(0)
        }
        Command::Sweep {
            source,
            out,
            param,
            values,
            seeds,
            stride,
            keep_runs,
        } => {
            let experiment = source.load()?;
            let spec = SweepSpec {
                param,
                values: values.into_iter().filter(|v| !v.trim().is_empty()).collect(),
                seeds,
                stride,
                keep_runs,
            };
            let runs = cmd_sweep(&experiment, &spec, &out)?;
            for value in &spec.values {
                let terminal: Vec<f64> = runs.iter().filter(|r| &r.value == value).map(|r| r.normalized).collect();
                let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
                println!("{}={value}: mean normalized regret {mean:.6e} over {} seeds", spec.param, terminal.len());
            }
            println!("artifacts in {}", out.display());
            Ok(0)
        }
        Command::Check { dir, delta } => {
            let outcome = cmd_check(&dir, delta)?;
            for r in &outcome.runs {
                println!("{}: {}", r.dir.display(), r.verdict);
                if let Some(d) = &r.disagreement {
                    let note = if r.disagreement_applies { "" } else { " (outside hypotheses)" };
                    println!("  disagreement violations {}{note}", d.violations);
                }
            }
            let outside = outcome.outside_hypotheses();
            if outside > 0 {
                eprintln!("warning: {outside} run(s) outside the bound's hypotheses (unbounded set or expansive dynamics)");
            }
            println!(
                "in-hypothesis bound violations {} of {} (allowed {} at delta {}); disagreement violations {}",
                outcome.bound_violations,
                outcome.runs.len(),
                outcome.allowed_violations,
                outcome.delta,
                outcome.disagreement_violations
            );
            Ok(if outcome.passed() { 0 } else { EXIT_VIOLATION })
        }
        Command::Validate { source } => {
            let report = cmd_validate(&source.load()?)?;
            print!("{report}");
            Ok(if report.passed() { 0 } else { EXIT_CONFIG })
        }
        Command::Trajectory { source, out } => {
            let traj = cmd_trajectory(&source.load()?, &out)?;
            println!("{} rounds written to {}", traj.rounds(), out.display());
            Ok(0)
        }
    }
}
