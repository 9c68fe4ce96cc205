//! Scenario presets for the bundled simulation studies.

use serde::{Deserialize, Serialize};

use super::{Contamination, ScenarioSpec};
use crate::model::{TestCondition, TestPlan, ThetaParams};

/// Seed used by the shipped presets and the acceptance suite.
pub const DEFAULT_SEED: u64 = 20_210_301;
/// Desk-scale replication count.
pub const DEFAULT_REPLICATIONS: usize = 500;
/// Replication count of the full-scale studies.
pub const FULL_REPLICATIONS: usize = 5000;

pub const BALANCED_STRESSES: [f64; 4] = [35.0, 45.0, 55.0, 65.0];
/// Contaminated value of `θ21` in the outlying cell.
pub const CONTAMINATED_THETA21: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reliability {
    Low,
    Moderate,
    High,
}

impl Reliability {
    pub fn theta(self) -> ThetaParams {
        let (t10, t20) = match self {
            Reliability::Low => (0.008, 0.0008),
            Reliability::Moderate => (0.004, 0.0004),
            Reliability::High => (0.001, 0.0001),
        };
        ThetaParams::from_array([t10, 0.05, t20, 0.08])
    }

    pub fn inspection_times(self) -> [f64; 3] {
        match self {
            Reliability::Low => [5.0, 10.0, 20.0],
            Reliability::Moderate => [7.0, 15.0, 25.0],
            Reliability::High => [10.0, 20.0, 30.0],
        }
    }

    pub fn plan(self, devices: u64) -> TestPlan {
        TestPlan::balanced(&self.inspection_times(), &BALANCED_STRESSES, devices).expect("preset plan is valid")
    }
}

/// `θ` with `θ21` replaced by the contaminated value.
pub fn contaminated(theta: &ThetaParams) -> ThetaParams {
    ThetaParams { theta21: CONTAMINATED_THETA21, ..*theta }
}

/// Balanced 12-condition scenario, optionally with condition 0 contaminated.
pub fn reliability(level: Reliability, devices: u64, contaminate: bool, replications: usize, seed: u64) -> ScenarioSpec {
    let theta = level.theta();
    ScenarioSpec {
        plan: level.plan(devices),
        true_theta: theta,
        contamination: contaminate.then(|| Contamination { cells: vec![0], theta: contaminated(&theta) }),
        replications,
        seed,
    }
}

pub fn wald_level_theta() -> ThetaParams {
    ThetaParams::from_array([0.004, 0.05, 0.0004, 0.08])
}

pub fn wald_power_theta() -> ThetaParams {
    ThetaParams::from_array([0.004, 0.05, 0.0004, 0.09])
}

/// Null value of `θ21` in the Wald studies.
pub const WALD_NULL_THETA21: f64 = 0.08;

/// Unbalanced plan of the accelerated life test, `K = 300`.
pub fn unbalanced_alt_plan() -> TestPlan {
    const ROWS: [(f64, f64, u64); 12] = [
        (35.0, 10.0, 50),
        (45.0, 10.0, 40),
        (55.0, 10.0, 20),
        (65.0, 10.0, 40),
        (35.0, 20.0, 20),
        (45.0, 20.0, 20),
        (55.0, 20.0, 30),
        (65.0, 20.0, 20),
        (35.0, 30.0, 20),
        (45.0, 30.0, 20),
        (55.0, 30.0, 10),
        (65.0, 30.0, 10),
    ];
    TestPlan {
        conditions: ROWS
            .iter()
            .map(|&(x, it, k)| TestCondition { inspection_time: it, stress: x, devices: k })
            .collect(),
    }
}

pub fn unbalanced_alt_theta() -> ThetaParams {
    ThetaParams::from_array([0.001, 0.05, 0.0001, 0.08])
}

pub fn unbalanced_alt(replications: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        plan: unbalanced_alt_plan(),
        true_theta: unbalanced_alt_theta(),
        contamination: None,
        replications,
        seed,
    }
}

/// Contamination grids for the unbalanced study, one per parameter, each
/// starting at the true value.
pub fn unbalanced_sweeps() -> Vec<(usize, Vec<f64>)> {
    let linspace = |from: f64, to: f64, n: usize| -> Vec<f64> {
        (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect()
    };
    vec![
        (0, linspace(0.001, 0.01, 8)),
        (1, linspace(0.05, 0.12, 8)),
        (2, linspace(0.0001, 0.001, 8)),
        (3, linspace(0.08, 0.15, 8)),
    ]
}

/// Devices per condition along the x-axis of the balanced studies.
pub const SAMPLE_SIZES: [u64; 6] = [50, 100, 150, 200, 250, 300];
