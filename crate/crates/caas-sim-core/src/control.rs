//! Fleet-size controllers behind a single interface, plus the
//! termination-selection rule.
//!
//! AIMD is the platform's controller; Reactive, the moving-average and
//! linear-regression predictors, and the utilization-threshold autoscaler
//! are the benchmarks it is compared against.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::{InstanceFleet, InstanceId, InstanceState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerVariant {
    Aimd,
    Reactive,
    Mwa,
    Lr,
    UtilizationAs,
}

impl ControllerVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerVariant::Aimd => "aimd",
            ControllerVariant::Reactive => "reactive",
            ControllerVariant::Mwa => "mwa",
            ControllerVariant::Lr => "lr",
            ControllerVariant::UtilizationAs => "utilization_as",
        }
    }

    pub fn all() -> [ControllerVariant; 5] {
        [
            ControllerVariant::Aimd,
            ControllerVariant::Reactive,
            ControllerVariant::Mwa,
            ControllerVariant::Lr,
            ControllerVariant::UtilizationAs,
        ]
    }
}

impl std::str::FromStr for ControllerVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aimd" => Ok(ControllerVariant::Aimd),
            "reactive" => Ok(ControllerVariant::Reactive),
            "mwa" => Ok(ControllerVariant::Mwa),
            "lr" => Ok(ControllerVariant::Lr),
            "utilization_as" | "as" => Ok(ControllerVariant::UtilizationAs),
            other => Err(format!("unknown controller variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Additive increase, CUs per step.
    pub alpha: f64,
    /// Multiplicative decrease factor, in (0, 1].
    pub beta: f64,
    pub n_min: f64,
    pub n_max: f64,
    /// Samples kept for the MWA/LR history window.
    pub history_len: usize,
    /// Scale-up threshold for the utilization autoscaler.
    pub as_utilization_threshold: f64,
    /// Instances added/removed per autoscaler step.
    pub as_step: u32,
    /// Autoscaler evaluation cadence, seconds.
    pub as_interval: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            alpha: 5.0,
            beta: 0.9,
            n_min: 10.0,
            n_max: 100.0,
            history_len: 6,
            as_utilization_threshold: 0.20,
            as_step: 1,
            as_interval: 300.0,
        }
    }
}

/// One AIMD step: grow additively while demand meets or exceeds supply,
/// shrink multiplicatively otherwise, clamped to the fleet bounds.
pub fn aimd_step(n_tot: f64, n_star: f64, cfg: &ControllerConfig) -> f64 {
    if n_tot <= n_star {
        (n_tot + cfg.alpha).min(cfg.n_max)
    } else {
        (cfg.beta * n_tot).max(cfg.n_min)
    }
}

/// Direct compensation: the next fleet size is the optimal one, clamped.
pub fn reactive_step(n_star: f64, cfg: &ControllerConfig) -> f64 {
    n_star.clamp(cfg.n_min, cfg.n_max)
}

/// Mean of the trailing optimal-fleet history (current plus up to five
/// previous samples); averages whatever prefix exists during warm-up.
/// The platform-wide fleet bounds are applied at actuation, not here.
pub fn mwa_step(history: &VecDeque<f64>, cfg: &ControllerConfig) -> f64 {
    if history.is_empty() {
        return cfg.n_min;
    }
    history.iter().sum::<f64>() / history.len() as f64
}

/// Least-squares line over the trailing history, evaluated one step ahead.
/// Falls back to the reactive rule with fewer than two samples.
pub fn lr_step(history: &VecDeque<f64>, cfg: &ControllerConfig) -> f64 {
    let n = history.len();
    if n < 2 {
        return match history.back() {
            Some(&last) => reactive_step(last, cfg),
            None => cfg.n_min,
        };
    }
    // x = 0..n-1 (oldest first), extrapolate at x = n.
    let xs_mean = (n as f64 - 1.0) / 2.0;
    let ys_mean = history.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in history.iter().enumerate() {
        let dx = i as f64 - xs_mean;
        num += dx * (y - ys_mean);
        den += dx * dx;
    }
    let slope = num / den;
    let intercept = ys_mean - slope * xs_mean;
    let predicted = intercept + slope * n as f64;
    predicted.clamp(cfg.n_min, cfg.n_max)
}

/// Utilization-threshold autoscaler: adds instances while average CPU
/// utilization exceeds the threshold, removes them otherwise. Consults no
/// CUS prediction.
pub fn utilization_as_step(avg_utilization: f64, n_instances: f64, cfg: &ControllerConfig) -> f64 {
    let step = cfg.as_step as f64;
    if avg_utilization > cfg.as_utilization_threshold {
        (n_instances + step).min(cfg.n_max)
    } else {
        (n_instances - step).max(cfg.n_min)
    }
}

/// Controller-specific memory carried between monitoring instants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerState {
    pub variant: ControllerVariant,
    /// Continuous fleet target; actuation requests `ceil(n_target)`.
    pub n_target: f64,
    /// Trailing optimal-fleet samples (MWA/LR).
    pub history: VecDeque<f64>,
}

impl ControllerState {
    pub fn new(variant: ControllerVariant, cfg: &ControllerConfig) -> Self {
        ControllerState {
            variant,
            n_target: cfg.n_min,
            history: VecDeque::with_capacity(cfg.history_len),
        }
    }

    /// Advances the controller one monitoring instant and returns the new
    /// continuous fleet target. `avg_utilization` is only consulted by the
    /// utilization autoscaler.
    pub fn step(&mut self, n_star: f64, avg_utilization: f64, cfg: &ControllerConfig) -> f64 {
        self.n_target = match self.variant {
            ControllerVariant::Aimd => aimd_step(self.n_target, n_star, cfg),
            ControllerVariant::Reactive => reactive_step(n_star, cfg),
            ControllerVariant::Mwa => {
                self.push_history(n_star, cfg);
                mwa_step(&self.history, cfg)
            }
            ControllerVariant::Lr => {
                self.push_history(n_star, cfg);
                lr_step(&self.history, cfg)
            }
            ControllerVariant::UtilizationAs => {
                utilization_as_step(avg_utilization, self.n_target, cfg)
            }
        };
        // Fleet bounds apply to every controller for comparability.
        self.n_target = self.n_target.clamp(cfg.n_min, cfg.n_max);
        self.n_target
    }

    /// Instance count the platform should actuate toward.
    pub fn target_instances(&self) -> u64 {
        self.n_target.ceil() as u64
    }

    fn push_history(&mut self, n_star: f64, cfg: &ControllerConfig) {
        if self.history.len() == cfg.history_len {
            self.history.pop_front();
        }
        self.history.push_back(n_star);
    }
}

/// Termination selection: the `count` active instances with the smallest
/// remaining prepaid time, ties broken by instance id. Returns the chosen
/// ids and the shortfall when fewer active instances exist than requested.
pub fn select_terminations(fleet: &InstanceFleet, count: usize) -> (Vec<InstanceId>, usize) {
    let mut active: Vec<&crate::domain::InstanceRecord> = fleet
        .instances
        .values()
        .filter(|i| i.state == InstanceState::Active)
        .collect();
    active.sort_by(|a, b| {
        a.remaining_prepaid
            .partial_cmp(&b.remaining_prepaid)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.instance_id.cmp(&b.instance_id))
    });
    let shortfall = count.saturating_sub(active.len());
    let chosen = active.iter().take(count).map(|i| i.instance_id).collect();
    (chosen, shortfall)
}
