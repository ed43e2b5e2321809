//! Scenario definition, validation and the canonical 30-workload schedule.

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationConfig;
use crate::control::{ControllerConfig, ControllerVariant};
use crate::error::{Error, Result};

pub const SCENARIO_SCHEMA: &str = "caas-sim/scenario/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorVariant {
    Kalman,
    AdHoc,
    Arma,
}

impl EstimatorVariant {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorVariant::Kalman => "kalman",
            EstimatorVariant::AdHoc => "adhoc",
            EstimatorVariant::Arma => "arma",
        }
    }

    pub fn all() -> [EstimatorVariant; 3] {
        [
            EstimatorVariant::Kalman,
            EstimatorVariant::AdHoc,
            EstimatorVariant::Arma,
        ]
    }
}

impl std::str::FromStr for EstimatorVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "kalman" => Ok(EstimatorVariant::Kalman),
            "adhoc" | "ad_hoc" => Ok(EstimatorVariant::AdHoc),
            "arma" => Ok(EstimatorVariant::Arma),
            other => Err(format!("unknown estimator variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub variant: EstimatorVariant,
    /// Process-noise variance assumed by the Kalman filter.
    pub sigma_z_sq: f64,
    /// Measurement-noise variance assumed by the Kalman filter.
    pub sigma_v_sq: f64,
    /// Fixed gain of the ad-hoc estimator.
    pub kappa_fixed: f64,
    /// Weight of the newest sample in the moving-average estimator.
    pub delta: f64,
    /// Weight of the middle sample.
    pub gamma: f64,
    /// Convergence window for the moving-average estimator. Zero picks the
    /// monitoring-interval default (3 at 5-min, 10 at 1-min).
    pub window: usize,
    pub window_threshold: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            variant: EstimatorVariant::Kalman,
            sigma_z_sq: 0.5,
            sigma_v_sq: 0.5,
            kappa_fixed: 0.1,
            delta: 0.8,
            gamma: 0.15,
            window: 0,
            window_threshold: 0.20,
        }
    }
}

impl EstimatorConfig {
    /// Window defaults follow the monitoring cadence: three samples at
    /// 5-min monitoring, ten at 1-min.
    pub fn effective_window(&self, monitoring_interval: f64) -> usize {
        if self.window > 0 {
            self.window
        } else if monitoring_interval <= 60.0 {
            10
        } else {
            3
        }
    }
}

/// Synthetic ground-truth model: each task's CUS is drawn around a
/// per-type mean that follows a random walk across monitoring intervals;
/// measurements add zero-mean Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Std-dev of the per-interval random walk of the true mean CUS,
    /// as a fraction of the initial mean.
    pub walk_sigma_frac: f64,
    /// Std-dev of per-task CUS around the current mean, as a fraction of
    /// the initial mean.
    pub task_sigma_frac: f64,
    /// Std-dev of the measurement noise added to interval means, as a
    /// fraction of the initial mean.
    pub measurement_sigma_frac: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            walk_sigma_frac: 0.10,
            task_sigma_frac: 0.25,
            measurement_sigma_frac: 0.30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeSpec {
    pub data_type: String,
    pub items: u64,
    /// Initial true mean CUS per item.
    pub mean_cus: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub id: String,
    /// Workload class label used for metric grouping (e.g. "face_detection").
    pub class: String,
    pub arrival_time: f64,
    /// Requested TTC, seconds from arrival.
    pub requested_ttc: f64,
    pub types: Vec<TypeSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    pub rng_seed: u64,
    /// Monitoring cadence, seconds (60 or 300 in the canonical setups).
    pub monitoring_interval: f64,
    pub instance_startup_delay: f64,
    pub billing_quantum: f64,
    pub unit_price: f64,
    /// Non-termination guard: abort past
    /// `last_arrival + horizon_factor * max(requested_ttc)`.
    pub horizon_factor: f64,
    pub controller_variant: ControllerVariant,
    pub controller: ControllerConfig,
    pub estimator: EstimatorConfig,
    pub allocation: AllocationConfig,
    pub noise: NoiseConfig,
    pub workloads: Vec<WorkloadSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema: SCENARIO_SCHEMA.to_string(),
            rng_seed: 0,
            monitoring_interval: 300.0,
            instance_startup_delay: 120.0,
            billing_quantum: 3600.0,
            unit_price: 0.0081,
            horizon_factor: 10.0,
            controller_variant: ControllerVariant::Aimd,
            controller: ControllerConfig::default(),
            estimator: EstimatorConfig::default(),
            allocation: AllocationConfig::default(),
            noise: NoiseConfig::default(),
            workloads: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(json)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: String| Error::ScenarioInvalid {
            field: name.to_string(),
            reason,
        };
        if self.schema != SCENARIO_SCHEMA {
            return Err(field(
                "schema",
                format!("expected `{SCENARIO_SCHEMA}`, got `{}`", self.schema),
            ));
        }
        if self.monitoring_interval <= 0.0 {
            return Err(field("monitoring_interval", "must be positive".into()));
        }
        if self.billing_quantum <= 0.0 {
            return Err(field("billing_quantum", "must be positive".into()));
        }
        if self.unit_price < 0.0 {
            return Err(field("unit_price", "must be non-negative".into()));
        }
        if self.instance_startup_delay < 0.0 {
            return Err(field(
                "instance_startup_delay",
                "must be non-negative".into(),
            ));
        }
        if self.horizon_factor <= 0.0 {
            return Err(field("horizon_factor", "must be positive".into()));
        }
        let c = &self.controller;
        if c.alpha <= 0.0 {
            return Err(field("controller.alpha", "must be positive".into()));
        }
        if c.beta <= 0.0 || c.beta > 1.0 {
            return Err(field(
                "controller.beta",
                format!("must be in (0, 1], got {}", c.beta),
            ));
        }
        if c.n_min > c.n_max {
            return Err(field("controller.n_min", "must not exceed n_max".into()));
        }
        if c.history_len == 0 {
            return Err(field("controller.history_len", "must be positive".into()));
        }
        if c.as_step == 0 {
            return Err(field("controller.as_step", "must be positive".into()));
        }
        let a = &self.allocation;
        if a.per_workload_cap <= 0.0 {
            return Err(field(
                "allocation.per_workload_cap",
                "must be positive".into(),
            ));
        }
        if a.beta <= 0.0 || a.beta > 1.0 {
            return Err(field(
                "allocation.beta",
                format!("must be in (0, 1], got {}", a.beta),
            ));
        }
        if a.alpha <= 0.0 {
            return Err(field("allocation.alpha", "must be positive".into()));
        }
        if a.bootstrap_rate < 0.0 {
            return Err(field(
                "allocation.bootstrap_rate",
                "must be non-negative".into(),
            ));
        }
        let e = &self.estimator;
        if e.delta + e.gamma > 1.0 {
            return Err(field(
                "estimator.delta",
                format!("delta + gamma = {} exceeds 1", e.delta + e.gamma),
            ));
        }
        if e.sigma_z_sq < 0.0 || e.sigma_v_sq < 0.0 {
            return Err(field(
                "estimator.sigma_z_sq",
                "noise variances must be non-negative".into(),
            ));
        }
        if !(e.window_threshold > 0.0 && e.window_threshold < 1.0) {
            return Err(field(
                "estimator.window_threshold",
                "must be in (0, 1)".into(),
            ));
        }
        let mut last_arrival = f64::NEG_INFINITY;
        for (i, w) in self.workloads.iter().enumerate() {
            if w.arrival_time < 0.0 {
                return Err(field(
                    &format!("workloads[{i}].arrival_time"),
                    "must be non-negative".into(),
                ));
            }
            if w.arrival_time < last_arrival {
                return Err(field(
                    &format!("workloads[{i}].arrival_time"),
                    "arrival times must be nondecreasing".into(),
                ));
            }
            last_arrival = w.arrival_time;
            if w.requested_ttc <= 0.0 {
                return Err(field(
                    &format!("workloads[{i}].requested_ttc"),
                    "must be positive".into(),
                ));
            }
            if w.types.is_empty() {
                return Err(field(
                    &format!("workloads[{i}].types"),
                    "must not be empty".into(),
                ));
            }
            for (j, t) in w.types.iter().enumerate() {
                if t.items == 0 {
                    return Err(field(
                        &format!("workloads[{i}].types[{j}].items"),
                        "must be positive".into(),
                    ));
                }
                if t.mean_cus <= 0.0 {
                    return Err(field(
                        &format!("workloads[{i}].types[{j}].mean_cus"),
                        "must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn max_requested_ttc(&self) -> f64 {
        self.workloads
            .iter()
            .map(|w| w.requested_ttc)
            .fold(0.0, f64::max)
    }

    pub fn last_arrival(&self) -> f64 {
        self.workloads
            .iter()
            .map(|w| w.arrival_time)
            .fold(0.0, f64::max)
    }
}

/// Knobs for the canonical 30-workload schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaperScheduleConfig {
    /// Requested TTC applied to every workload, seconds.
    pub requested_ttc: f64,
    /// Arrival spacing, seconds.
    pub arrival_spacing: f64,
    /// Zero-based schedule positions of the two large transcoding
    /// workloads (200 and 300 items).
    pub large_transcode_positions: [usize; 2],
    /// Initial mean CUS per item for each class.
    pub face_mean_cus: f64,
    pub transcode_mean_cus: f64,
    pub feature_mean_cus: f64,
    pub sift_mean_cus: f64,
}

impl Default for PaperScheduleConfig {
    fn default() -> Self {
        PaperScheduleConfig {
            requested_ttc: 7620.0, // the 2h07m setting
            arrival_spacing: 300.0,
            large_transcode_positions: [9, 19],
            face_mean_cus: 30.0,
            transcode_mean_cus: 100.0,
            feature_mean_cus: 30.0,
            sift_mean_cus: 30.0,
        }
    }
}

/// Generates the canonical schedule: thirty workloads arriving every five
/// minutes — eight face-detection-like (1-1000 items), eight
/// transcode-like including two large ones with 200 and 300 items, seven
/// feature-extraction-like and seven SIFT-like.
pub fn generate_paper_schedule(seed: u64, cfg: &PaperScheduleConfig) -> Scenario {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    struct Class {
        label: &'static str,
        data_type: &'static str,
        count: usize,
    }
    let classes = [
        Class {
            label: "face_detection",
            data_type: "image",
            count: 8,
        },
        Class {
            label: "transcoding",
            data_type: "video",
            count: 8,
        },
        Class {
            label: "feature_extraction",
            data_type: "image",
            count: 7,
        },
        Class {
            label: "sift",
            data_type: "image",
            count: 7,
        },
    ];

    // Deterministic interleaving: spread the classes across the schedule,
    // then pin the two large transcoding workloads to their positions.
    let mut order: Vec<usize> = Vec::with_capacity(30);
    let mut remaining: Vec<usize> = classes.iter().map(|c| c.count).collect();
    let mut cursor = 0usize;
    while order.len() < 30 {
        if remaining[cursor % 4] > 0 {
            order.push(cursor % 4);
            remaining[cursor % 4] -= 1;
        }
        cursor += 1;
    }

    let mut large_iter = [200u64, 300u64].into_iter();
    let mut transcode_positions: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 1)
        .map(|(i, _)| i)
        .collect();
    // Move two transcoding slots onto the requested large positions when
    // possible; otherwise the large workloads take the natural slots.
    for (slot, &want) in cfg.large_transcode_positions.iter().enumerate() {
        if let Some(pos) = transcode_positions.iter().position(|&p| p == want) {
            transcode_positions.swap(slot, pos);
        }
    }
    let large_slots: Vec<usize> = transcode_positions.iter().take(2).copied().collect();

    let mut workloads = Vec::with_capacity(30);
    for (idx, &class_idx) in order.iter().enumerate() {
        let class = &classes[class_idx];
        let (items, mean_cus) = match class.label {
            "face_detection" => (rng.gen_range(1..=1000), cfg.face_mean_cus),
            "transcoding" => {
                if large_slots.contains(&idx) {
                    (
                        large_iter
                            .next()
                            .expect("exactly two large transcode workloads"),
                        cfg.transcode_mean_cus,
                    )
                } else {
                    (rng.gen_range(1..=20), cfg.transcode_mean_cus)
                }
            }
            "feature_extraction" => (rng.gen_range(1..=500), cfg.feature_mean_cus),
            _ => (rng.gen_range(1..=500), cfg.sift_mean_cus),
        };
        workloads.push(WorkloadSpec {
            id: format!("w{idx:02}_{}", class.label),
            class: class.label.to_string(),
            arrival_time: cfg.arrival_spacing * idx as f64,
            requested_ttc: cfg.requested_ttc,
            types: vec![TypeSpec {
                data_type: class.data_type.to_string(),
                items,
                mean_cus,
            }],
        });
    }

    Scenario {
        rng_seed: seed,
        workloads,
        ..Scenario::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule_has_thirty_workloads_every_five_minutes() {
        let s = generate_paper_schedule(7, &PaperScheduleConfig::default());
        assert_eq!(s.workloads.len(), 30);
        for (k, w) in s.workloads.iter().enumerate() {
            assert_eq!(w.arrival_time, 300.0 * k as f64);
        }
        s.validate().unwrap();
    }

    #[test]
    fn paper_schedule_class_counts() {
        let s = generate_paper_schedule(3, &PaperScheduleConfig::default());
        let count = |class: &str| s.workloads.iter().filter(|w| w.class == class).count();
        assert_eq!(count("face_detection"), 8);
        assert_eq!(count("transcoding"), 8);
        assert_eq!(count("feature_extraction"), 7);
        assert_eq!(count("sift"), 7);
    }

    #[test]
    fn paper_schedule_contains_large_transcode_workloads() {
        let s = generate_paper_schedule(11, &PaperScheduleConfig::default());
        let mut large: Vec<u64> = s
            .workloads
            .iter()
            .filter(|w| w.class == "transcoding")
            .map(|w| w.types[0].items)
            .filter(|&n| n >= 200)
            .collect();
        large.sort_unstable();
        assert_eq!(large, vec![200, 300]);
    }

    #[test]
    fn paper_schedule_is_deterministic() {
        let a = generate_paper_schedule(42, &PaperScheduleConfig::default());
        let b = generate_paper_schedule(42, &PaperScheduleConfig::default());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn scenario_round_trip() {
        let s = generate_paper_schedule(5, &PaperScheduleConfig::default());
        let json = s.to_json();
        let back = Scenario::from_json(&json).unwrap();
        assert_eq!(json, back.to_json());
    }

    #[test]
    fn validation_names_offending_field() {
        let mut s = generate_paper_schedule(5, &PaperScheduleConfig::default());
        s.controller.beta = 1.5;
        match s.validate() {
            Err(Error::ScenarioInvalid { field, .. }) => assert_eq!(field, "controller.beta"),
            other => panic!("expected named-field error, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_decreasing_arrivals() {
        let mut s = generate_paper_schedule(5, &PaperScheduleConfig::default());
        s.workloads[1].arrival_time = 0.0;
        s.workloads[0].arrival_time = 100.0;
        assert!(s.validate().is_err());
    }
}
