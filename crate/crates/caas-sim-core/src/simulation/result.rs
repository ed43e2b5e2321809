//! Run outputs: time series, completion records and prediction logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostPoint {
    pub t_seconds: f64,
    pub cumulative_cost: f64,
    /// Active CUs at this instant.
    pub fleet_size: u64,
    /// Demand-side optimal fleet size at this instant.
    pub n_star: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub finish_time: f64,
    /// Completed on or before the confirmed (possibly extended) deadline.
    pub ttc_met: bool,
    /// Absolute confirmed deadline, if the workload was ever confirmed.
    pub confirmed_deadline: Option<f64>,
}

/// One prediction-log row for a (workload, data type) pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub t_seconds: f64,
    /// Measurement in effect (zero-order held between completions).
    pub measurement: f64,
    pub prediction: f64,
    /// True mean CUS of the ground-truth process at this instant.
    pub true_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionLog {
    pub workload_class: String,
    pub points: Vec<PredictionPoint>,
    /// Monitoring instant (absolute seconds) of convergence, if reached.
    pub t_init: Option<f64>,
    /// Seconds from workload arrival to convergence.
    pub time_to_reliable: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationResult {
    pub cumulative_cost_series: Vec<CostPoint>,
    pub per_workload_completion: BTreeMap<String, CompletionRecord>,
    /// Keyed by "workload_id/data_type".
    pub prediction_log: BTreeMap<String, PredictionLog>,
    /// Peak number of live (billed) instances at any time.
    pub max_instances: u64,
    pub final_cost: f64,
    /// Full-occupancy lower bound for the billing cost.
    pub lb: f64,
    pub total_cus_consumed: f64,
    pub finish_time: f64,
    pub ttc_violations: Vec<String>,
}

impl SimulationResult {
    pub fn ttc_compliance(&self) -> (usize, usize) {
        let met = self
            .per_workload_completion
            .values()
            .filter(|c| c.ttc_met)
            .count();
        (met, self.per_workload_completion.len())
    }
}
