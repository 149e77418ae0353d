use clap::{Parser, Subcommand};
use resched_cli::experiment::{self, RunError, RunSettings};
use resched_cli::replay;
use resched_core::analytics::LogicVersion;
use resched_core::scenario::{ScenarioConfig, ScenarioError};
use resched_core::situation::SituationModel;
use resched_service::engine::Engine;
use resched_service::ServiceConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "resched", version, about = "Production re-scheduling: experiments, replay and the service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate baseline and optimized schedules with paired failure draws.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// `run` over several seeds plus a summary table.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated list; `a..b` ranges are inclusive.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic scenario.
    Generate {
        #[arg(long)]
        lines: usize,
        #[arg(long)]
        recipes: usize,
        #[arg(long)]
        orders: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute analytics and situations from an event log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// `default` or `key=value` overrides, e.g. `min_trials=10`.
        #[arg(long)]
        logic: Option<String>,
        /// Take the situation model from this scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Wall milliseconds per simulated minute.
        #[arg(long)]
        realtime: Option<u64>,
    },
}

enum Failure {
    Validation(String),
    Internal(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = |p: &str| Failure::Validation(format!("bad seed list entry {p:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(part))?;
            let b: u64 = b.trim().parse().map_err(|_| bad(part))?;
            if a > b {
                return Err(bad(part));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if out.is_empty() {
        return Err(Failure::Validation("at least one seed is required".into()));
    }
    Ok(out)
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario, seed, out } => {
            let sc = ScenarioConfig::load(&scenario)?;
            let report = experiment::run(&sc, seed, &RunSettings::default())?;
            experiment::write_artifacts(&report, &out)?;
            println!(
                "{} seed {}: usage {} -> {} ({:.2}%), stddev {:.4} -> {:.4} ({:.2}%), {} generations, {:.1}s",
                report.scenario,
                report.seed,
                report.baseline.total_usage,
                report.optimized.total_usage,
                report.usage_reduction_pct,
                report.baseline.utilization_stddev,
                report.optimized.utilization_stddev,
                report.stddev_reduction_pct,
                report.generations_run,
                report.wall_time
            );
        }
        Command::Compare { scenario, seeds, out } => {
            let sc = ScenarioConfig::load(&scenario)?;
            let seeds = parse_seeds(&seeds)?;
            let cmp = experiment::compare(&sc, &seeds, &RunSettings::default())?;
            cmp.write(&out)?;
            print!("{}", cmp.table());
            let wall: f64 = cmp.reports.iter().map(|r| r.wall_time).sum();
            println!("wall time {wall:.1}s");
        }
        Command::Generate {
            lines,
            recipes,
            orders,
            seed,
            out,
        } => {
            let sc = resched_core::generator::generate(lines, recipes, orders, seed)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            sc.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Replay { log, logic, scenario } => {
            let logic: LogicVersion = logic
                .as_deref()
                .unwrap_or("default")
                .parse()
                .map_err(Failure::Validation)?;
            let model = match scenario {
                Some(p) => ScenarioConfig::load(p)?.situation_model,
                None => SituationModel::default(),
            };
            // An unreadable or corrupt log is bad input, not an internal fault.
            let summary = replay::replay(&log, logic, &model).map_err(|e| Failure::Validation(e.to_string()))?;
            print!("{}", summary.render());
        }
        Command::Serve { config, realtime } => {
            let mut cfg = ServiceConfig::load(&config).map_err(|e| Failure::Validation(e.to_string()))?;
            if realtime.is_some() {
                cfg.realtime_ms_per_minute = realtime;
            }
            let engine = Engine::open(cfg).map_err(|e| Failure::Internal(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
            rt.block_on(resched_service::http::serve(engine))
                .map_err(|e| Failure::Internal(e.to_string()))?;
        }
    }
    Ok(())
}
