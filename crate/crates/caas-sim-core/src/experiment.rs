//! Experiment orchestration: controller/estimator/seed sweeps, CSV series
//! emission and the machine-readable metrics report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::ControllerVariant;
use crate::error::{Error, Result};
use crate::simulation::{
    generate_paper_schedule, Engine, EstimatorVariant, PaperScheduleConfig, PredictionLog,
    Scenario, SimulationResult,
};

pub const EXPERIMENT_SCHEMA: &str = "caas-sim/experiment/v1";
pub const REPORT_SCHEMA: &str = "caas-sim/report/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ScenarioSource {
    /// The canonical 30-workload schedule, regenerated per seed.
    Paper {
        #[serde(default)]
        schedule: PaperScheduleConfig,
    },
    /// A scenario file; its rng_seed is overridden per sweep seed.
    File { path: PathBuf },
    /// An inline scenario definition.
    Inline { scenario: Box<Scenario> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub schema: String,
    pub scenario: ScenarioSource,
    pub controllers: Vec<ControllerVariant>,
    pub estimators: Vec<EstimatorVariant>,
    pub seeds: Vec<u64>,
    /// Optional monitoring-cadence override, seconds.
    #[serde(default)]
    pub monitoring_interval: Option<f64>,
}

impl ExperimentSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: &str| Error::ScenarioInvalid {
            field: name.to_string(),
            reason: reason.to_string(),
        };
        if self.schema != EXPERIMENT_SCHEMA {
            return Err(field("schema", &format!("expected `{EXPERIMENT_SCHEMA}`")));
        }
        if self.controllers.is_empty() {
            return Err(field("controllers", "at least one controller required"));
        }
        if self.estimators.is_empty() {
            return Err(field("estimators", "at least one estimator required"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed required"));
        }
        Ok(())
    }
}

/// Fully expanded identifier of one experiment cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub controller: ControllerVariant,
    pub estimator: EstimatorVariant,
    pub seed: u64,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!(
            "{}_{}_{}",
            self.controller.name(),
            self.estimator.name(),
            self.seed
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerReport {
    pub final_cost_mean: f64,
    pub final_costs: BTreeMap<u64, f64>,
    pub lb_mean: f64,
    /// Mean excess of final cost over the lower bound, percent.
    pub excess_over_lb_pct: f64,
    pub max_instances: u64,
    pub ttc_met: usize,
    pub ttc_total: usize,
    pub ttc_violations: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EstimatorClassReport {
    /// Mean seconds from arrival to a reliable prediction.
    pub mean_time_to_reliable: f64,
    /// Mean absolute error of the converged prediction, percent.
    pub mean_mae_pct: f64,
    pub converged: usize,
    pub total: usize,
    /// Workload/type pairs that never converged.
    pub flagged: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub per_class: BTreeMap<String, EstimatorClassReport>,
    pub overall: EstimatorClassReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub controllers: BTreeMap<String, ControllerReport>,
    pub estimators: BTreeMap<String, EstimatorReport>,
    pub lb_mean: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

/// Percentage MAE of the converged prediction against the true mean CUS at
/// the convergence instant. `None` when the estimator never converged.
pub fn compute_mae(log: &PredictionLog) -> Option<f64> {
    let t_init = log.t_init?;
    let point = log
        .points
        .iter()
        .find(|p| (p.t_seconds - t_init).abs() <= 1e-9)?;
    if point.true_mean <= 0.0 {
        return None;
    }
    Some(100.0 * (point.prediction - point.true_mean).abs() / point.true_mean)
}

fn resolve_scenario(source: &ScenarioSource, seed: u64) -> Result<Scenario> {
    let scenario = match source {
        ScenarioSource::Paper { schedule } => generate_paper_schedule(seed, schedule),
        ScenarioSource::File { path } => {
            let mut s = load_scenario(path)?;
            s.rng_seed = seed;
            s
        }
        ScenarioSource::Inline { scenario } => {
            let mut s = (**scenario).clone();
            s.rng_seed = seed;
            s
        }
    };
    Ok(scenario)
}

/// Runs one experiment cell.
pub fn run_cell(spec: &ExperimentSpec, key: &CellKey) -> Result<SimulationResult> {
    let mut scenario = resolve_scenario(&spec.scenario, key.seed)?;
    scenario.controller_variant = key.controller;
    scenario.estimator.variant = key.estimator;
    if let Some(interval) = spec.monitoring_interval {
        scenario.monitoring_interval = interval;
    }
    Engine::run(scenario).map_err(|e| Error::ExperimentCell {
        controller: key.controller.name().to_string(),
        estimator: key.estimator.name().to_string(),
        seed: key.seed,
        source: Box::new(e),
    })
}

/// Executes every (controller, estimator, seed) combination, writes one
/// CSV series per cell plus raw run logs and a JSON summary under
/// `out_dir` (when given), and returns the aggregated report.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<MetricsReport> {
    spec.validate()?;
    let mut keys = Vec::new();
    for &controller in &spec.controllers {
        for &estimator in &spec.estimators {
            for &seed in &spec.seeds {
                keys.push(CellKey {
                    controller,
                    estimator,
                    seed,
                });
            }
        }
    }

    let results: Vec<Result<SimulationResult>> = if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::EngineFault(format!("thread pool: {e}")))?;
        pool.install(|| keys.par_iter().map(|key| run_cell(spec, key)).collect())
    } else {
        keys.iter().map(|key| run_cell(spec, key)).collect()
    };

    let mut cells: BTreeMap<CellKey, SimulationResult> = BTreeMap::new();
    for (key, result) in keys.into_iter().zip(results) {
        cells.insert(key, result?);
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let runs_dir = dir.join("runs");
        fs::create_dir_all(&runs_dir)?;
        for (key, result) in &cells {
            write_cost_csv(&dir.join(format!("cost_{}.csv", key.label())), result)?;
            let raw =
                serde_json::to_string(&(key, result)).expect("run log serialization cannot fail");
            fs::write(runs_dir.join(format!("{}.json", key.label())), raw)?;
        }
    }

    let report = assemble_report(&cells);
    if let Some(dir) = out_dir {
        fs::write(dir.join("report.json"), report.to_json())?;
    }
    Ok(report)
}

/// Rebuilds the metrics report from the raw run logs persisted by
/// `run_experiment`; the result equals the originally emitted report.
pub fn regenerate_report(out_dir: &Path) -> Result<MetricsReport> {
    let runs_dir = out_dir.join("runs");
    let mut cells: BTreeMap<CellKey, SimulationResult> = BTreeMap::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    paths.sort();
    for path in paths {
        let text = fs::read_to_string(&path)?;
        let (key, result): (CellKey, SimulationResult) = serde_json::from_str(&text)?;
        cells.insert(key, result);
    }
    Ok(assemble_report(&cells))
}

fn write_cost_csv(path: &Path, result: &SimulationResult) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["t_seconds", "cumulative_cost", "fleet_size", "n_star"])?;
    for p in &result.cumulative_cost_series {
        writer.write_record([
            p.t_seconds.to_string(),
            p.cumulative_cost.to_string(),
            p.fleet_size.to_string(),
            p.n_star.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn assemble_report(cells: &BTreeMap<CellKey, SimulationResult>) -> MetricsReport {
    let mut controllers = BTreeMap::new();
    let mut estimators = BTreeMap::new();
    let mut all_lbs = Vec::new();

    let controller_names: Vec<ControllerVariant> = {
        let mut v: Vec<_> = cells.keys().map(|k| k.controller).collect();
        v.sort();
        v.dedup();
        v
    };
    for controller in controller_names {
        let runs: Vec<&SimulationResult> = cells
            .iter()
            .filter(|(k, _)| k.controller == controller)
            .map(|(_, r)| r)
            .collect();
        let final_costs: BTreeMap<u64, f64> = cells
            .iter()
            .filter(|(k, _)| k.controller == controller)
            .map(|(k, r)| (k.seed, r.final_cost))
            .collect();
        let cost_mean = runs.iter().map(|r| r.final_cost).sum::<f64>() / runs.len() as f64;
        let lb_mean = runs.iter().map(|r| r.lb).sum::<f64>() / runs.len() as f64;
        let excess = runs
            .iter()
            .map(|r| {
                if r.lb > 0.0 {
                    100.0 * (r.final_cost - r.lb) / r.lb
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / runs.len() as f64;
        let (met, total) = runs.iter().fold((0, 0), |(m, t), r| {
            let (rm, rt) = r.ttc_compliance();
            (m + rm, t + rt)
        });
        let mut violations: Vec<String> =
            runs.iter().flat_map(|r| r.ttc_violations.clone()).collect();
        violations.sort();
        violations.dedup();
        all_lbs.extend(runs.iter().map(|r| r.lb));
        controllers.insert(
            controller.name().to_string(),
            ControllerReport {
                final_cost_mean: cost_mean,
                final_costs,
                lb_mean,
                excess_over_lb_pct: excess,
                max_instances: runs.iter().map(|r| r.max_instances).max().unwrap_or(0),
                ttc_met: met,
                ttc_total: total,
                ttc_violations: violations,
            },
        );
    }

    let estimator_names: Vec<EstimatorVariant> = {
        let mut v: Vec<_> = cells.keys().map(|k| k.estimator).collect();
        v.sort();
        v.dedup();
        v
    };
    for estimator in estimator_names {
        // class -> (times, maes, flagged, total)
        type ClassAccum = (Vec<f64>, Vec<f64>, Vec<String>, usize);
        let mut per_class: BTreeMap<String, ClassAccum> = BTreeMap::new();
        for (key, result) in cells.iter().filter(|(k, _)| k.estimator == estimator) {
            for (pair, log) in &result.prediction_log {
                let entry = per_class.entry(log.workload_class.clone()).or_default();
                entry.3 += 1;
                match (log.time_to_reliable, compute_mae(log)) {
                    (Some(ttr), Some(mae)) => {
                        entry.0.push(ttr);
                        entry.1.push(mae);
                    }
                    _ => entry.2.push(format!("{}@seed{}", pair, key.seed)),
                }
            }
        }
        let mk = |times: &[f64], maes: &[f64], flagged: Vec<String>, total: usize| {
            EstimatorClassReport {
                mean_time_to_reliable: mean(times),
                mean_mae_pct: mean(maes),
                converged: times.len(),
                total,
                flagged,
            }
        };
        let mut overall_times = Vec::new();
        let mut overall_maes = Vec::new();
        let mut overall_flagged = Vec::new();
        let mut overall_total = 0;
        let mut class_reports = BTreeMap::new();
        for (class, (times, maes, flagged, total)) in per_class {
            overall_times.extend_from_slice(&times);
            overall_maes.extend_from_slice(&maes);
            overall_flagged.extend_from_slice(&flagged);
            overall_total += total;
            class_reports.insert(class, mk(&times, &maes, flagged, total));
        }
        estimators.insert(
            estimator.name().to_string(),
            EstimatorReport {
                per_class: class_reports,
                overall: mk(
                    &overall_times,
                    &overall_maes,
                    overall_flagged,
                    overall_total,
                ),
            },
        );
    }

    MetricsReport {
        schema: REPORT_SCHEMA.to_string(),
        controllers,
        estimators,
        lb_mean: mean(&all_lbs),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
