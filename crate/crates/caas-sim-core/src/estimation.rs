//! Per-(workload, data-type) CUS predictors and convergence detection.
//!
//! Three estimators are provided: a scalar Kalman filter (the platform's
//! predictor), a fixed-gain variant of the same recurrence, and a
//! second-order weighted moving average over normalized measurements.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar Kalman filter over a random-walk CUS process with Gaussian
/// measurement noise. The prediction update consumes the previous
/// instant's measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KalmanState {
    pub b_hat: f64,
    /// Posterior error covariance.
    pub pi: f64,
    /// Prior covariance from the last update.
    pub pi_minus: f64,
    /// Gain from the last update, in [0, 1].
    pub kappa: f64,
    pub sigma_z_sq: f64,
    pub sigma_v_sq: f64,
    pub update_count: u64,
}

impl KalmanState {
    /// Standard initialization: b_hat = pi = 0, both noise variances 0.5.
    pub fn new() -> Self {
        Self::with_variances(0.5, 0.5)
    }

    pub fn with_variances(sigma_z_sq: f64, sigma_v_sq: f64) -> Self {
        KalmanState {
            b_hat: 0.0,
            pi: 0.0,
            pi_minus: 0.0,
            kappa: 0.0,
            sigma_z_sq,
            sigma_v_sq,
            update_count: 0,
        }
    }

    /// One filter step: prior covariance, gain, state correction toward the
    /// measurement, posterior covariance. Returns the new prediction.
    pub fn update(&mut self, measurement: f64) -> Result<f64> {
        if measurement < 0.0 {
            return Err(Error::NegativeMeasurement { value: measurement });
        }
        self.pi_minus = self.pi + self.sigma_z_sq;
        self.kappa = self.pi_minus / (self.pi_minus + self.sigma_v_sq);
        self.b_hat += self.kappa * (measurement - self.b_hat);
        self.pi = (1.0 - self.kappa) * self.pi_minus;
        self.update_count += 1;
        Ok(self.b_hat)
    }
}

impl Default for KalmanState {
    fn default() -> Self {
        Self::new()
    }
}

/// Fixed-gain estimator: the Kalman correction step with a constant
/// scaling coefficient instead of the adaptive gain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdHocState {
    pub b_hat: f64,
    pub kappa_fixed: f64,
    pub update_count: u64,
}

impl AdHocState {
    pub fn new() -> Self {
        Self::with_gain(0.1)
    }

    pub fn with_gain(kappa_fixed: f64) -> Self {
        AdHocState {
            b_hat: 0.0,
            kappa_fixed,
            update_count: 0,
        }
    }

    pub fn update(&mut self, measurement: f64) -> Result<f64> {
        if measurement < 0.0 {
            return Err(Error::NegativeMeasurement { value: measurement });
        }
        self.b_hat += self.kappa_fixed * (measurement - self.b_hat);
        self.update_count += 1;
        Ok(self.b_hat)
    }
}

impl Default for AdHocState {
    fn default() -> Self {
        Self::new()
    }
}

/// Second-order weighted moving average over the last three normalized
/// measurements. Before three entries exist the latest value is returned
/// as a naive prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmaState {
    history: VecDeque<f64>,
    pub delta: f64,
    pub gamma: f64,
}

impl ArmaState {
    pub fn new(delta: f64, gamma: f64) -> Result<Self> {
        if delta + gamma > 1.0 {
            return Err(Error::EstimatorConfig {
                reason: format!(
                    "delta + gamma = {} exceeds 1; the third weight 1-delta-gamma must be valid",
                    delta + gamma
                ),
            });
        }
        Ok(ArmaState {
            history: VecDeque::with_capacity(3),
            delta,
            gamma,
        })
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    pub fn update(&mut self, b_norm_new: f64) -> Result<f64> {
        if b_norm_new < 0.0 {
            return Err(Error::NegativeMeasurement { value: b_norm_new });
        }
        if self.history.len() == 3 {
            self.history.pop_back();
        }
        self.history.push_front(b_norm_new);
        if self.history.len() < 3 {
            return Ok(b_norm_new);
        }
        let newest = self.history[0];
        let mid = self.history[1];
        let oldest = self.history[2];
        Ok(self.delta * newest + self.gamma * mid + (1.0 - self.delta - self.gamma) * oldest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceStatus {
    pub converged: bool,
    /// Monitoring-instant index of the first reliable prediction.
    pub t_init: Option<usize>,
}

impl ConvergenceStatus {
    pub fn not_converged() -> Self {
        ConvergenceStatus {
            converged: false,
            t_init: None,
        }
    }

    pub fn at(t_init: usize) -> Self {
        ConvergenceStatus {
            converged: true,
            t_init: Some(t_init),
        }
    }
}

/// Underdamped estimators (Kalman, fixed-gain) are deemed reliable at the
/// first strict decrease of the prediction series. Ties are not descents.
pub fn detect_convergence_slope(series: &[f64]) -> ConvergenceStatus {
    for t in 1..series.len() {
        if series[t] < series[t - 1] {
            return ConvergenceStatus::at(t);
        }
    }
    ConvergenceStatus::not_converged()
}

/// Moving-average estimators converge once every prediction in the
/// trailing window deviates from the window mean by at most
/// `threshold * mean`.
pub fn detect_convergence_window(
    series: &[f64],
    window: usize,
    threshold: f64,
) -> ConvergenceStatus {
    assert!(window >= 2, "window must be at least 2");
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must be in (0,1)"
    );
    for t in window - 1..series.len() {
        let win = &series[t + 1 - window..=t];
        let mean = win.iter().sum::<f64>() / window as f64;
        if mean == 0.0 {
            // All-zero windows count as converged; a zero mean with
            // nonzero entries cannot.
            if win.iter().all(|&v| v == 0.0) {
                return ConvergenceStatus::at(t);
            }
            continue;
        }
        if win.iter().all(|&v| (v - mean).abs() <= threshold * mean) {
            return ConvergenceStatus::at(t);
        }
    }
    ConvergenceStatus::not_converged()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kalman_first_update_covariances() {
        let mut k = KalmanState::new();
        k.update(10.0).unwrap();
        assert!((k.pi_minus - 0.5).abs() < 1e-12);
        assert!((k.kappa - 0.5).abs() < 1e-12);
        assert!((k.pi - 0.25).abs() < 1e-12);
        assert!((k.b_hat - 5.0).abs() < 1e-12);
    }

    #[test]
    fn kalman_converges_to_constant_stream() {
        let mut k = KalmanState::new();
        let mut prev_err = f64::INFINITY;
        for _ in 0..50 {
            k.update(7.0).unwrap();
            let err = (k.b_hat - 7.0).abs();
            assert!(err <= prev_err);
            prev_err = err;
        }
        assert!((k.b_hat - 7.0).abs() < 1e-6);
    }

    #[test]
    fn kalman_steady_state_gain_is_golden_ratio_conjugate() {
        let mut k = KalmanState::new();
        for _ in 0..100 {
            k.update(3.0).unwrap();
        }
        let expected = (5.0_f64.sqrt() - 1.0) / 2.0;
        assert!((k.kappa - expected).abs() < 1e-6, "kappa = {}", k.kappa);
    }

    #[test]
    fn kalman_gain_sequence_independent_of_data() {
        let mut a = KalmanState::new();
        let mut b = KalmanState::new();
        for i in 0..40 {
            a.update(i as f64).unwrap();
            b.update(1000.0 - 7.0 * i as f64 % 13.0).unwrap();
            assert_eq!(a.kappa, b.kappa);
            assert_eq!(a.pi, b.pi);
        }
    }

    #[test]
    fn kalman_rejects_negative_measurement() {
        let mut k = KalmanState::new();
        assert!(k.update(-1.0).is_err());
    }

    #[test]
    fn adhoc_step_from_zero() {
        let mut a = AdHocState::new();
        assert!((a.update(10.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adhoc_fixed_point() {
        let mut a = AdHocState::new();
        a.b_hat = 5.0;
        assert_eq!(a.update(5.0).unwrap(), 5.0);
    }

    #[test]
    fn adhoc_geometric_convergence() {
        let mut a = AdHocState::new();
        let c = 4.0;
        let mut err = c;
        for _ in 0..30 {
            a.update(c).unwrap();
            let new_err = (a.b_hat - c).abs();
            assert!((new_err - 0.9 * err).abs() < 1e-9);
            err = new_err;
        }
    }

    #[test]
    fn arma_constant_history() {
        let mut a = ArmaState::new(0.4, 0.3).unwrap();
        a.update(10.0).unwrap();
        a.update(10.0).unwrap();
        assert_eq!(a.update(10.0).unwrap(), 10.0);
    }

    #[test]
    fn arma_degenerate_weights_select_newest() {
        let mut a = ArmaState::new(1.0, 0.0).unwrap();
        a.update(5.0).unwrap();
        a.update(3.0).unwrap();
        assert_eq!(a.update(7.0).unwrap(), 7.0);
    }

    #[test]
    fn arma_hand_weighted_sum() {
        let mut a = ArmaState::new(0.5, 0.3).unwrap();
        a.update(6.0).unwrap();
        a.update(8.0).unwrap();
        let p = a.update(10.0).unwrap();
        assert!((p - 8.6).abs() < 1e-12);
    }

    #[test]
    fn arma_warmup_returns_latest() {
        let mut a = ArmaState::new(0.8, 0.15).unwrap();
        assert_eq!(a.update(4.0).unwrap(), 4.0);
        assert_eq!(a.update(9.0).unwrap(), 9.0);
    }

    #[test]
    fn arma_rejects_invalid_weights() {
        assert!(ArmaState::new(0.8, 0.3).is_err());
    }

    #[test]
    fn slope_detects_first_strict_decrease() {
        let s = detect_convergence_slope(&[0.0, 4.0, 7.0, 6.5, 6.0]);
        assert_eq!(s.t_init, Some(3));
    }

    #[test]
    fn slope_ignores_monotone_series() {
        let s = detect_convergence_slope(&[0.0, 1.0, 2.0, 2.0, 3.0]);
        assert!(!s.converged);
    }

    #[test]
    fn slope_ties_are_not_descents() {
        let s = detect_convergence_slope(&[0.0, 5.0, 5.0, 4.9]);
        assert_eq!(s.t_init, Some(3));
    }

    #[test]
    fn slope_is_permanent() {
        let series = [0.0, 4.0, 7.0, 6.5, 9.0, 2.0];
        let first = detect_convergence_slope(&series[..4]);
        let later = detect_convergence_slope(&series);
        assert_eq!(first.t_init, later.t_init);
    }

    #[test]
    fn window_zero_deviation_converges() {
        let s = detect_convergence_window(&[10.0, 10.0, 10.0], 3, 0.2);
        assert_eq!(s.t_init, Some(2));
    }

    #[test]
    fn window_within_threshold_converges() {
        // mean 11, max deviation 2 < 0.2 * 11 = 2.2
        let s = detect_convergence_window(&[10.0, 13.0, 10.0], 3, 0.2);
        assert!(s.converged);
    }

    #[test]
    fn window_beyond_threshold_does_not_converge() {
        // mean 11.67, deviation 3.33 > 2.33
        let s = detect_convergence_window(&[10.0, 15.0, 10.0], 3, 0.2);
        assert!(!s.converged);
    }

    #[test]
    fn window_all_zero_converges() {
        let s = detect_convergence_window(&[0.0, 0.0, 0.0], 3, 0.2);
        assert!(s.converged);
    }

    #[test]
    fn window_zero_mean_with_nonzero_entries_not_converged() {
        let s = detect_convergence_window(&[-1.0, 1.0, 0.0], 3, 0.2);
        assert!(!s.converged);
    }
}
