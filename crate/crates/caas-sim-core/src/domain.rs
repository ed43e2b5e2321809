//! Core data model: workloads, the instance fleet and its billing ledger.
//!
//! Demand is measured in compute-unit seconds (CUS): one processor core
//! reserved for one second. Supply is measured in compute units (CUs).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a data type within a workload (e.g. "image", "video").
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DataTypeId(pub String);

impl DataTypeId {
    pub fn new(id: impl Into<String>) -> Self {
        DataTypeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for DataTypeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadStatus {
    /// Submitted, accumulating measurements; no confirmed deadline yet.
    Bootstrapping,
    /// Reliable prediction reached, TTC confirmed (possibly extended).
    Confirmed,
    Completed,
    Cancelled,
}

/// A user job: remaining item counts per data type, a completion deadline
/// and the service rate currently allocated to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workload {
    pub id: String,
    /// Simulation time of submission, seconds.
    pub arrival_time: f64,
    pub remaining_items: BTreeMap<DataTypeId, u64>,
    /// Absolute completion deadline, seconds. Remaining TTC at time `t` is
    /// `deadline - t`.
    pub deadline: f64,
    pub status: WorkloadStatus,
    /// CUs allocated for the next monitoring interval. Fractional values
    /// mean one CU time-shared for that fraction of the interval.
    pub service_rate: f64,
}

impl Workload {
    pub fn new(
        id: impl Into<String>,
        arrival_time: f64,
        items: BTreeMap<DataTypeId, u64>,
        deadline: f64,
    ) -> Self {
        Workload {
            id: id.into(),
            arrival_time,
            remaining_items: items,
            deadline,
            status: WorkloadStatus::Bootstrapping,
            service_rate: 0.0,
        }
    }

    /// Required CUS to complete this workload: sum over data types of
    /// remaining items times the per-item CUS prediction.
    ///
    /// Every data type with pending items must have a prediction; a missing
    /// one means the caller must keep the workload in `Bootstrapping`.
    pub fn required_cus(&self, predictions: &BTreeMap<DataTypeId, f64>) -> Result<f64> {
        let mut total = 0.0;
        for (dt, &count) in &self.remaining_items {
            if count == 0 {
                continue;
            }
            let b_hat = predictions
                .get(dt)
                .ok_or_else(|| Error::EstimatorNotReady {
                    workload: self.id.clone(),
                    data_type: dt.0.clone(),
                })?;
            total += count as f64 * b_hat;
        }
        Ok(total)
    }

    pub fn remaining_total_items(&self) -> u64 {
        self.remaining_items.values().sum()
    }
}

pub type InstanceId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceState {
    /// Launched and billed, but not yet usable (startup delay).
    Starting,
    Active,
    Terminated,
}

/// One reserved cloud instance. Billed by the quantum from launch,
/// regardless of whether it executed anything.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: InstanceId,
    /// CUs (cores) on this instance. Controllers assume 1.
    pub cu_count: u32,
    /// Seconds of already-billed time left before the next quantum charge.
    pub remaining_prepaid: f64,
    pub state: InstanceState,
    /// Seconds until a Starting instance becomes Active.
    pub start_delay_remaining: f64,
    /// Scheduled to terminate at the next billing renewal instead of
    /// renewing. Already-billed time is never thrown away: a scale-down
    /// keeps the instance serving until its prepaid quantum runs out.
    #[serde(default)]
    pub lapse_at_renewal: bool,
}

/// The set of reserved instances plus the billing model they share.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFleet {
    pub instances: BTreeMap<InstanceId, InstanceRecord>,
    /// Billing quantum in seconds (hourly for EC2 spot).
    pub billing_quantum: f64,
    /// Currency per quantum per CU.
    pub unit_price: f64,
    next_id: InstanceId,
}

impl InstanceFleet {
    pub fn new(billing_quantum: f64, unit_price: f64) -> Self {
        InstanceFleet {
            instances: BTreeMap::new(),
            billing_quantum,
            unit_price,
            next_id: 0,
        }
    }

    /// Launches a new instance in `Starting` state with a full prepaid
    /// quantum; the caller records the charge on the ledger.
    pub fn launch(&mut self, cu_count: u32, start_delay: f64) -> InstanceId {
        let id = self.next_id;
        self.next_id += 1;
        let state = if start_delay <= 0.0 {
            InstanceState::Active
        } else {
            InstanceState::Starting
        };
        self.instances.insert(
            id,
            InstanceRecord {
                instance_id: id,
                cu_count,
                remaining_prepaid: self.billing_quantum,
                state,
                start_delay_remaining: start_delay.max(0.0),
                lapse_at_renewal: false,
            },
        );
        id
    }

    /// Live instances (Starting or Active) not scheduled to lapse — the
    /// capacity the platform is committed to paying for again.
    pub fn committed_count(&self) -> u64 {
        self.instances
            .values()
            .filter(|i| i.state != InstanceState::Terminated && !i.lapse_at_renewal)
            .map(|i| i.cu_count as u64)
            .sum()
    }

    /// Total active CUs. Starting instances are usable capacity only once
    /// their startup delay elapses, so they are excluded here.
    pub fn total_cus(&self) -> u64 {
        self.instances
            .values()
            .filter(|i| i.state == InstanceState::Active)
            .map(|i| i.cu_count as u64)
            .sum()
    }

    /// Total prepaid CU-seconds still available on active instances.
    pub fn total_prepaid_cus_seconds(&self) -> f64 {
        self.instances
            .values()
            .filter(|i| i.state == InstanceState::Active)
            .map(|i| i.cu_count as f64 * i.remaining_prepaid)
            .sum()
    }

    /// Instances still billed (Starting or Active).
    pub fn live_count(&self) -> u64 {
        self.instances
            .values()
            .filter(|i| i.state != InstanceState::Terminated)
            .count() as u64
    }
}

/// Cumulative monetary accounting for one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BillingLedger {
    /// Billed quantums per instance, with the instance's CU count.
    pub quantums_billed: BTreeMap<InstanceId, (u64, u32)>,
    /// CU-seconds actually spent executing tasks (drives the lower bound).
    pub cus_consumed: f64,
}

impl BillingLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_quantum(&mut self, instance_id: InstanceId, cu_count: u32) {
        let entry = self
            .quantums_billed
            .entry(instance_id)
            .or_insert((0, cu_count));
        entry.0 += 1;
        entry.1 = cu_count;
    }

    pub fn record_execution(&mut self, cus: f64) {
        self.cus_consumed += cus;
    }

    /// Total cost is derived from the quantum counts so that it is exactly
    /// reproducible from the ledger contents.
    pub fn total_cost(&self, unit_price: f64) -> f64 {
        self.quantums_billed
            .values()
            .map(|&(quantums, cus)| quantums as f64 * cus as f64 * unit_price)
            .sum()
    }

    pub fn total_quantums(&self) -> u64 {
        self.quantums_billed.values().map(|&(q, _)| q).sum()
    }
}

/// Lower bound for the billing cost: what the run would have cost if every
/// billed CU-second had executed a task, rounded up to whole quantums.
pub fn lb_cost(ledger: &BillingLedger, fleet: &InstanceFleet) -> f64 {
    if ledger.cus_consumed <= 0.0 {
        return 0.0;
    }
    let quantums = (ledger.cus_consumed / fleet.billing_quantum).ceil();
    quantums * fleet.unit_price
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(pairs: &[(&str, u64)]) -> BTreeMap<DataTypeId, u64> {
        pairs
            .iter()
            .map(|(k, v)| (DataTypeId::new(*k), *v))
            .collect()
    }

    fn preds(pairs: &[(&str, f64)]) -> BTreeMap<DataTypeId, f64> {
        pairs
            .iter()
            .map(|(k, v)| (DataTypeId::new(*k), *v))
            .collect()
    }

    #[test]
    fn required_cus_empty_workload_is_zero() {
        let w = Workload::new("w0", 0.0, items(&[("img", 0)]), 100.0);
        assert_eq!(w.required_cus(&preds(&[])).unwrap(), 0.0);
    }

    #[test]
    fn required_cus_single_type() {
        let w = Workload::new("w0", 0.0, items(&[("img", 10)]), 100.0);
        assert_eq!(w.required_cus(&preds(&[("img", 3.0)])).unwrap(), 30.0);
    }

    #[test]
    fn required_cus_two_types_sum() {
        let w = Workload::new("w0", 0.0, items(&[("img", 5), ("vid", 2)]), 100.0);
        let r = w
            .required_cus(&preds(&[("img", 2.0), ("vid", 7.5)]))
            .unwrap();
        assert_eq!(r, 25.0);
    }

    #[test]
    fn required_cus_missing_prediction_errors() {
        let w = Workload::new("w0", 0.0, items(&[("img", 5), ("vid", 2)]), 100.0);
        let err = w.required_cus(&preds(&[("img", 2.0)])).unwrap_err();
        assert!(matches!(err, Error::EstimatorNotReady { .. }));
    }

    #[test]
    fn total_cus_counts_only_active() {
        let mut fleet = InstanceFleet::new(3600.0, 0.0081);
        assert_eq!(fleet.total_cus(), 0);
        fleet.launch(1, 0.0);
        fleet.launch(1, 0.0);
        fleet.launch(1, 0.0);
        fleet.launch(1, 120.0); // still Starting
        assert_eq!(fleet.total_cus(), 3);
    }

    #[test]
    fn total_cus_sums_cu_counts() {
        let mut fleet = InstanceFleet::new(3600.0, 0.0081);
        fleet.launch(1, 0.0);
        fleet.launch(4, 0.0);
        assert_eq!(fleet.total_cus(), 5);
    }

    #[test]
    fn prepaid_cus_seconds() {
        let mut fleet = InstanceFleet::new(3600.0, 0.0081);
        assert_eq!(fleet.total_prepaid_cus_seconds(), 0.0);
        let a = fleet.launch(1, 0.0);
        fleet.instances.get_mut(&a).unwrap().remaining_prepaid = 1800.0;
        assert_eq!(fleet.total_prepaid_cus_seconds(), 1800.0);

        let b = fleet.launch(2, 0.0);
        fleet.instances.get_mut(&a).unwrap().remaining_prepaid = 600.0;
        fleet.instances.get_mut(&b).unwrap().remaining_prepaid = 100.0;
        assert_eq!(fleet.total_prepaid_cus_seconds(), 800.0);
    }

    #[test]
    fn lb_cost_zero_and_single_quantum() {
        let fleet = InstanceFleet::new(3600.0, 0.0081);
        let mut ledger = BillingLedger::new();
        assert_eq!(lb_cost(&ledger, &fleet), 0.0);
        ledger.record_execution(3600.0);
        assert_eq!(lb_cost(&ledger, &fleet), 0.0081);
    }

    #[test]
    fn lb_cost_rounds_up_to_whole_quantums() {
        let fleet = InstanceFleet::new(3600.0, 0.0081);
        let mut ledger = BillingLedger::new();
        ledger.record_execution(3601.0);
        assert_eq!(lb_cost(&ledger, &fleet), 2.0 * 0.0081);
    }

    #[test]
    fn ledger_cost_from_quantums() {
        let mut ledger = BillingLedger::new();
        ledger.charge_quantum(0, 1);
        ledger.charge_quantum(0, 1);
        ledger.charge_quantum(1, 2);
        assert_eq!(ledger.total_quantums(), 3);
        assert_eq!(ledger.total_cost(0.01), 2.0 * 0.01 + 2.0 * 0.01);
    }
}
