//! Proportional-fair service-rate allocation under TTC constraints.
//!
//! Each confirmed workload's optimal rate is its required CUS divided by
//! its remaining TTC — the maximizer of `r*ln(s) - d*s`. When the optimal
//! fleet size differs from the actual one beyond the AIMD headroom, all
//! rates are scaled by a common factor, preserving proportions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationConfig {
    /// Per-workload CU cap.
    pub per_workload_cap: f64,
    /// AIMD additive constant, shared with the fleet controller.
    pub alpha: f64,
    /// AIMD multiplicative constant, in (0, 1].
    pub beta: f64,
    /// Rate granted to workloads still accumulating measurements.
    pub bootstrap_rate: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig {
            per_workload_cap: 10.0,
            alpha: 5.0,
            beta: 0.9,
            bootstrap_rate: 1.0,
        }
    }
}

/// Demand-side description of one workload for a single monitoring instant.
#[derive(Debug, Clone)]
pub struct WorkloadDemand {
    pub id: String,
    pub kind: DemandKind,
}

#[derive(Debug, Clone, Copy)]
pub enum DemandKind {
    /// TTC confirmed: required CUS and remaining seconds until deadline.
    Confirmed {
        required_cus: f64,
        remaining_ttc: f64,
    },
    /// Pre-confirmation warm-up; receives the fixed bootstrap rate.
    Bootstrapping,
    /// Deadline already passed but work remains: runs at the cap and is
    /// reported as a TTC violation.
    Expired { required_cus: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Exact,
    Downscaled,
    Upscaled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Final (clamped) service rate per workload.
    pub rates: BTreeMap<String, f64>,
    /// Demand-side optimal fleet size.
    pub n_star: f64,
    pub regime: Regime,
    /// Rates after proportional scaling, before the per-workload clamp.
    /// These satisfy the regime sum contracts.
    pub unclamped_rates: BTreeMap<String, f64>,
    /// Workloads whose deadline has passed with work remaining.
    pub expired: Vec<String>,
}

/// Maximizer of `f(s) = r*ln(s) - d*s`: the ratio of required CUS to
/// remaining TTC. A zero requirement yields a zero rate.
pub fn optimal_rate(required_cus: f64, remaining_ttc: f64) -> Result<f64> {
    if remaining_ttc <= 0.0 {
        return Err(Error::DeadlineExpired {
            workload: String::new(),
            remaining_ttc,
        });
    }
    if required_cus <= 0.0 {
        return Ok(0.0);
    }
    Ok(required_cus / remaining_ttc)
}

/// Demand-side optimal fleet size: sum of optimal rates over confirmed
/// workloads plus the bootstrap rate per warming-up workload. Expired
/// workloads demand the per-workload cap.
pub fn optimal_fleet(demands: &[WorkloadDemand], cfg: &AllocationConfig) -> f64 {
    demands
        .iter()
        .map(|d| match d.kind {
            DemandKind::Confirmed {
                required_cus,
                remaining_ttc,
            } => required_cus / remaining_ttc,
            DemandKind::Bootstrapping => cfg.bootstrap_rate,
            DemandKind::Expired { .. } => cfg.per_workload_cap,
        })
        .sum()
}

/// Computes per-workload service rates for one monitoring instant.
///
/// If the optimal fleet size exceeds the actual one by more than the AIMD
/// additive headroom, rates are downscaled by `(n_tot + alpha) / n_star`;
/// if it falls below `beta * n_tot`, rates are upscaled by
/// `beta * n_tot / n_star`; otherwise the optimal rates are used as-is.
/// Per-workload cap clamping happens after scaling; clamped surplus is not
/// redistributed within the same instant.
pub fn allocate(demands: &[WorkloadDemand], n_tot: f64, cfg: &AllocationConfig) -> AllocationPlan {
    let mut expired = Vec::new();
    let mut optimal: Vec<(String, f64)> = Vec::with_capacity(demands.len());
    let mut fixed: Vec<(String, f64)> = Vec::new();
    for d in demands {
        match d.kind {
            DemandKind::Confirmed {
                required_cus,
                remaining_ttc,
            } => {
                optimal.push((d.id.clone(), required_cus / remaining_ttc));
            }
            DemandKind::Bootstrapping => optimal.push((d.id.clone(), cfg.bootstrap_rate)),
            DemandKind::Expired { .. } => {
                expired.push(d.id.clone());
                fixed.push((d.id.clone(), cfg.per_workload_cap));
            }
        }
    }

    let n_star_scalable: f64 = optimal.iter().map(|(_, s)| s).sum();
    let n_star = n_star_scalable + fixed.iter().map(|(_, s)| s).sum::<f64>();

    let (regime, factor) = if n_star_scalable <= 0.0 {
        (Regime::Exact, 1.0)
    } else if n_star_scalable > n_tot + cfg.alpha {
        (Regime::Downscaled, (n_tot + cfg.alpha) / n_star_scalable)
    } else if n_star_scalable < cfg.beta * n_tot {
        (Regime::Upscaled, cfg.beta * n_tot / n_star_scalable)
    } else {
        (Regime::Exact, 1.0)
    };

    let mut unclamped_rates = BTreeMap::new();
    let mut rates = BTreeMap::new();
    for (id, s_opt) in optimal {
        let scaled = s_opt * factor;
        unclamped_rates.insert(id.clone(), scaled);
        rates.insert(id, scaled.min(cfg.per_workload_cap));
    }
    for (id, s) in fixed {
        unclamped_rates.insert(id.clone(), s);
        rates.insert(id, s);
    }

    AllocationPlan {
        rates,
        n_star,
        regime,
        unclamped_rates,
        expired,
    }
}

/// Confirms (or minimally extends) a requested TTC so that the optimal
/// rate does not exceed the per-workload cap.
pub fn confirm_ttc(required_cus: f64, requested_ttc: f64, per_workload_cap: f64) -> f64 {
    if required_cus <= 0.0 {
        return requested_ttc;
    }
    if requested_ttc > 0.0 && required_cus / requested_ttc <= per_workload_cap {
        requested_ttc
    } else {
        required_cus / per_workload_cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn confirmed(id: &str, r: f64, d: f64) -> WorkloadDemand {
        WorkloadDemand {
            id: id.to_string(),
            kind: DemandKind::Confirmed {
                required_cus: r,
                remaining_ttc: d,
            },
        }
    }

    #[test]
    fn optimal_rate_ratio() {
        assert_eq!(optimal_rate(100.0, 50.0).unwrap(), 2.0);
        assert_eq!(optimal_rate(0.0, 50.0).unwrap(), 0.0);
        assert!((optimal_rate(70.0, 100.0).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn optimal_rate_expired_deadline_errors() {
        assert!(matches!(
            optimal_rate(10.0, 0.0),
            Err(Error::DeadlineExpired { .. })
        ));
        assert!(matches!(
            optimal_rate(10.0, -5.0),
            Err(Error::DeadlineExpired { .. })
        ));
    }

    #[test]
    fn optimal_rate_is_the_maximizer() {
        // f(s) = r*ln(s) - d*s must peak at the returned rate.
        let (r, d) = (70.0, 100.0);
        let s_star = optimal_rate(r, d).unwrap();
        let f = |s: f64| r * s.ln() - d * s;
        for eps in [1e-4, 1e-3, 1e-2] {
            assert!(f(s_star + eps) < f(s_star));
            assert!(f(s_star - eps) < f(s_star));
        }
    }

    #[test]
    fn optimal_fleet_sums_rates() {
        let cfg = AllocationConfig::default();
        assert_eq!(optimal_fleet(&[], &cfg), 0.0);
        let ds = vec![confirmed("a", 100.0, 50.0), confirmed("b", 70.0, 100.0)];
        assert!((optimal_fleet(&ds, &cfg) - 2.7).abs() < 1e-12);
    }

    #[test]
    fn optimal_fleet_adds_bootstrap_rate() {
        let cfg = AllocationConfig::default();
        let ds = vec![
            confirmed("a", 300.0, 100.0),
            WorkloadDemand {
                id: "b".into(),
                kind: DemandKind::Bootstrapping,
            },
        ];
        assert!((optimal_fleet(&ds, &cfg) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn allocate_downscales() {
        let cfg = AllocationConfig::default();
        // n_star = 20, n_tot = 10, alpha = 5 -> factor 0.75
        let ds = vec![confirmed("a", 1200.0, 100.0), confirmed("b", 800.0, 100.0)];
        let plan = allocate(&ds, 10.0, &cfg);
        assert_eq!(plan.regime, Regime::Downscaled);
        assert!((plan.unclamped_rates["a"] - 9.0).abs() < 1e-9);
        assert!((plan.unclamped_rates["b"] - 6.0).abs() < 1e-9);
        let sum: f64 = plan.unclamped_rates.values().sum();
        assert!((sum - 15.0).abs() < 1e-9);
    }

    #[test]
    fn allocate_upscales() {
        let cfg = AllocationConfig::default();
        // n_star = 5, n_tot = 10, beta = 0.9 -> factor 1.8
        let ds = vec![confirmed("a", 300.0, 100.0), confirmed("b", 200.0, 100.0)];
        let plan = allocate(&ds, 10.0, &cfg);
        assert_eq!(plan.regime, Regime::Upscaled);
        assert!((plan.unclamped_rates["a"] - 5.4).abs() < 1e-9);
        assert!((plan.unclamped_rates["b"] - 3.6).abs() < 1e-9);
    }

    #[test]
    fn allocate_exact_inside_band() {
        let cfg = AllocationConfig::default();
        // n_star = 12, n_tot = 10: 9 <= 12 <= 15 -> unchanged
        let ds = vec![confirmed("a", 700.0, 100.0), confirmed("b", 500.0, 100.0)];
        let plan = allocate(&ds, 10.0, &cfg);
        assert_eq!(plan.regime, Regime::Exact);
        assert!((plan.unclamped_rates["a"] - 7.0).abs() < 1e-12);
        assert!((plan.unclamped_rates["b"] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn allocate_no_demand_is_exact_zero() {
        let cfg = AllocationConfig::default();
        let ds = vec![confirmed("a", 0.0, 100.0)];
        let plan = allocate(&ds, 10.0, &cfg);
        assert_eq!(plan.regime, Regime::Exact);
        assert_eq!(plan.rates["a"], 0.0);
    }

    #[test]
    fn allocate_clamps_after_scaling() {
        let cfg = AllocationConfig {
            per_workload_cap: 10.0,
            ..Default::default()
        };
        let ds = vec![confirmed("a", 4000.0, 100.0), confirmed("b", 100.0, 100.0)];
        // n_star = 41 > 10 + 5 -> factor 15/41; a scales to ~14.6, clamped to 10
        let plan = allocate(&ds, 10.0, &cfg);
        assert_eq!(plan.rates["a"], 10.0);
        assert!(plan.unclamped_rates["a"] > 10.0);
        // surplus is not redistributed: b keeps its scaled rate
        assert!((plan.rates["b"] - plan.unclamped_rates["b"]).abs() < 1e-12);
    }

    #[test]
    fn allocate_expired_runs_at_cap() {
        let cfg = AllocationConfig::default();
        let ds = vec![
            confirmed("a", 500.0, 100.0),
            WorkloadDemand {
                id: "late".into(),
                kind: DemandKind::Expired { required_cus: 50.0 },
            },
        ];
        let plan = allocate(&ds, 10.0, &cfg);
        assert_eq!(plan.rates["late"], cfg.per_workload_cap);
        assert_eq!(plan.expired, vec!["late".to_string()]);
    }

    #[test]
    fn confirm_ttc_keeps_feasible_request() {
        assert_eq!(confirm_ttc(500.0, 100.0, 10.0), 100.0);
    }

    #[test]
    fn confirm_ttc_extends_to_cap() {
        assert_eq!(confirm_ttc(2000.0, 100.0, 10.0), 200.0);
    }

    #[test]
    fn confirm_ttc_zero_requirement_confirms_anything() {
        assert_eq!(confirm_ttc(0.0, 42.0, 10.0), 42.0);
    }

    #[test]
    fn confirm_ttc_output_respects_cap() {
        for (r, d) in [(1.0, 1.0), (5000.0, 10.0), (3.0, 9999.0), (100.0, 0.0)] {
            let confirmed = confirm_ttc(r, d, 10.0);
            assert!(confirmed > 0.0 || r == 0.0);
            if r > 0.0 {
                assert!(r / confirmed <= 10.0 + 1e-12);
            }
        }
    }
}
