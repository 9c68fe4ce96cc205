//! Choice of `β` by minimizing an estimated mean squared error,
//!
//! ```text
//! MSE(β) = ‖θ̂_β − θ_P‖² + trace(Σ_β(θ̂_β)) / K
//! ```
//!
//! where `θ_P` is a pilot estimate. Using `θ̂_β` itself as the pilot drops the
//! bias term and leaves the variance criterion.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::divergence::{Beta, CountsTable};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::model::{TestPlan, ThetaParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pilot {
    /// `θ_P = θ̂_β` for the given `β`.
    Beta(Beta),
    /// A fixed pilot estimate.
    Theta(ThetaParams),
    /// Each grid point is its own pilot; the bias term vanishes.
    SelfPilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub grid: Vec<f64>,
    pub pilot: Pilot,
    /// Settings for each fit; its `beta` and `start` are overridden.
    pub fit: FitConfig,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            grid: uniform_grid(100, 1.0),
            pilot: Pilot::Beta(Beta::new(0.4).expect("valid β")),
            fit: FitConfig::new(Beta::MLE),
        }
    }
}

/// `points` equally spaced values from 0 to `max` inclusive.
pub fn uniform_grid(points: usize, max: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("β grid is empty"));
        }
        if self.grid.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::invalid("β grid values must be finite and non-negative"));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("β grid must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub beta: f64,
    pub theta_hat: Option<ThetaParams>,
    pub mse_hat: Option<f64>,
    pub bias_term: Option<f64>,
    pub variance_term: Option<f64>,
    pub converged: bool,
    /// Why the point was excluded, if it was.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub pilot_theta: Option<ThetaParams>,
    pub records: Vec<TuningRecord>,
    pub best_beta: f64,
}

impl TuningResult {
    pub fn best(&self) -> &TuningRecord {
        self.records.iter().find(|r| r.beta == self.best_beta).expect("best β is a grid point")
    }
}

pub fn tune(plan: &TestPlan, counts: &CountsTable, config: &TuningConfig) -> Result<TuningResult> {
    config.validate()?;
    config.fit.validate()?;

    let pilot_theta = match config.pilot {
        Pilot::Beta(beta) => {
            let pilot_config = FitConfig { beta, start: None, ..config.fit.clone() };
            let res = fit(plan, counts, &pilot_config).map_err(|e| Error::PilotFailed(Box::new(e)))?;
            if !res.converged {
                return Err(Error::PilotFailed(Box::new(Error::invalid(format!(
                    "pilot fit at β = {beta} did not converge"
                )))));
            }
            Some(res.theta_hat)
        }
        Pilot::Theta(theta) => {
            theta.validate()?;
            Some(theta)
        }
        Pilot::SelfPilot => None,
    };

    let mut records = Vec::with_capacity(config.grid.len());
    let mut warm: Option<ThetaParams> = None;
    for &b in &config.grid {
        let beta = Beta::new(b)?;
        let fit_config = FitConfig { beta, start: warm, ..config.fit.clone() };
        let record = match fit(plan, counts, &fit_config) {
            Ok(res) => {
                if res.converged {
                    warm = Some(res.theta_hat);
                }
                if res.local_optima.len() > 1 {
                    debug!("β = {b}: {} local optima, kept objective {}", res.local_optima.len(), res.objective);
                }
                let bias = match pilot_theta {
                    Some(p) => (res.theta_hat.to_vector() - p.to_vector()).norm_squared(),
                    None => 0.0,
                };
                let variance = res.covariance.map(|c| c.trace());
                let note = match (res.converged, variance) {
                    (false, _) => Some("fit did not converge".to_string()),
                    (true, None) => Some("covariance unavailable".to_string()),
                    _ => None,
                };
                TuningRecord {
                    beta: b,
                    theta_hat: Some(res.theta_hat),
                    mse_hat: variance.map(|v| bias + v),
                    bias_term: Some(bias),
                    variance_term: variance,
                    converged: res.converged,
                    note,
                }
            }
            Err(e) => TuningRecord {
                beta: b,
                theta_hat: None,
                mse_hat: None,
                bias_term: None,
                variance_term: None,
                converged: false,
                note: Some(e.to_string()),
            },
        };
        records.push(record);
    }

    let mut best: Option<(f64, f64)> = None;
    for r in &records {
        if let (true, Some(mse)) = (r.converged, r.mse_hat) {
            if best.is_none_or(|(_, m)| mse < m) {
                best = Some((r.beta, mse));
            }
        }
    }
    let (best_beta, _) = best.ok_or_else(|| Error::invalid("no grid point produced a converged fit"))?;
    Ok(TuningResult { pilot_theta, records, best_beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn grid_shape() {
        let g = uniform_grid(100, 1.0);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[99], 1.0);
        assert_eq!(uniform_grid(1, 1.0), vec![0.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        let (plan, counts) = fixtures::bdc();
        for grid in [vec![], vec![0.2, 0.1], vec![-0.1, 0.5], vec![0.1, 0.1]] {
            let config = TuningConfig { grid, ..TuningConfig::default() };
            assert!(tune(&plan, &counts, &config).is_err());
        }
    }

    #[test]
    fn single_point_grid_selects_it() {
        let (plan, counts) = fixtures::bdc();
        let config = TuningConfig { grid: vec![0.25], ..TuningConfig::default() };
        let res = tune(&plan, &counts, &config).unwrap();
        assert_eq!(res.best_beta, 0.25);
    }

    #[test]
    fn self_pilot_has_no_bias() {
        let (plan, counts) = fixtures::bdc();
        let config = TuningConfig { grid: uniform_grid(11, 1.0), pilot: Pilot::SelfPilot, ..TuningConfig::default() };
        let res = tune(&plan, &counts, &config).unwrap();
        assert!(res.pilot_theta.is_none());
        for r in &res.records {
            assert_eq!(r.bias_term, Some(0.0));
            assert_eq!(r.mse_hat, r.variance_term);
        }
    }

    #[test]
    fn mse_is_bias_plus_variance() {
        let (plan, counts) = fixtures::bdc();
        let config = TuningConfig { grid: uniform_grid(6, 1.0), ..TuningConfig::default() };
        let res = tune(&plan, &counts, &config).unwrap();
        for r in &res.records {
            let (m, b, v) = (r.mse_hat.unwrap(), r.bias_term.unwrap(), r.variance_term.unwrap());
            assert!((m - (b + v)).abs() <= 1e-12 * m.abs().max(1.0));
            assert!(b >= 0.0 && v > 0.0);
        }
    }
}
