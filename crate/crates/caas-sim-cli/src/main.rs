use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use caas_sim_core::control::ControllerVariant;
use caas_sim_core::experiment::{
    load_scenario, run_experiment, ExperimentSpec, ScenarioSource, EXPERIMENT_SCHEMA,
};
use caas_sim_core::simulation::{generate_paper_schedule, EstimatorVariant, PaperScheduleConfig};

#[derive(Parser)]
#[command(
    name = "caas-sim",
    about = "Discrete-event simulator for container-fleet resource management",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorInterval {
    #[value(name = "60")]
    Fast,
    #[value(name = "300")]
    Standard,
}

impl MonitorInterval {
    fn seconds(self) -> f64 {
        match self {
            MonitorInterval::Fast => 60.0,
            MonitorInterval::Standard => 300.0,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a controller/estimator/seed sweep and emit CSV series plus a JSON report.
    Run {
        /// Scenario file; omitted means the built-in canonical schedule.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Base RNG seed; consecutive seeds are derived when --runs > 1.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of consecutive seeds to sweep.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Output directory for CSV series, raw run logs and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for parallel cells.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Monitoring cadence in seconds.
        #[arg(long, value_enum, default_value = "300")]
        monitor_interval: MonitorInterval,
        /// Controllers to sweep (default: all).
        #[arg(long, value_delimiter = ',', value_parser = parse_controller)]
        controllers: Vec<ControllerVariant>,
        /// Estimators to sweep (default: kalman).
        #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
        estimators: Vec<EstimatorVariant>,
    },
    /// Generate the canonical workload schedule as a scenario JSON file.
    GenScenario {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "300")]
        monitor_interval: MonitorInterval,
        /// Requested time-to-completion in seconds.
        #[arg(long, default_value_t = 7620.0)]
        ttc: f64,
    },
    /// Validate a scenario file against the schema and invariants.
    Validate { scenario: PathBuf },
}

fn parse_controller(s: &str) -> Result<ControllerVariant, String> {
    s.parse()
}

fn parse_estimator(s: &str) -> Result<EstimatorVariant, String> {
    s.parse()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            runs,
            out,
            workers,
            monitor_interval,
            controllers,
            estimators,
        } => {
            let source = match scenario {
                Some(path) => ScenarioSource::File { path },
                None => ScenarioSource::Paper {
                    schedule: PaperScheduleConfig::default(),
                },
            };
            let controllers = if controllers.is_empty() {
                ControllerVariant::all().to_vec()
            } else {
                controllers
            };
            let estimators = if estimators.is_empty() {
                vec![EstimatorVariant::Kalman]
            } else {
                estimators
            };
            let spec = ExperimentSpec {
                schema: EXPERIMENT_SCHEMA.to_string(),
                scenario: source,
                controllers,
                estimators,
                seeds: (seed..seed + runs.max(1)).collect(),
                monitoring_interval: Some(monitor_interval.seconds()),
            };
            let report = run_experiment(&spec, out.as_deref(), workers.max(1))?;
            println!("{}", report.to_json());
            Ok(())
        }
        Command::GenScenario {
            seed,
            out,
            monitor_interval,
            ttc,
        } => {
            let cfg = PaperScheduleConfig {
                requested_ttc: ttc,
                ..PaperScheduleConfig::default()
            };
            let mut scenario = generate_paper_schedule(seed, &cfg);
            scenario.monitoring_interval = monitor_interval.seconds();
            let json = scenario.to_json();
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            println!(
                "ok: {} workloads, seed {}, interval {}s",
                s.workloads.len(),
                s.rng_seed,
                s.monitoring_interval
            );
            Ok(())
        }
    }
}
