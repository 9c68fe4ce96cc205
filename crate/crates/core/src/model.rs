//! Exponential competing-risks model for one-shot devices.
//!
//! For a condition with inspection time `IT` and stress `x`, the two causes
//! fail at rates `λ_r = θ_r0 · exp(θ_r1 · x)`. With `s = λ1 + λ2`:
//!
//! ```text
//! π0 = exp(-s·IT)            survive
//! π1 = (λ1/s)·(1 - π0)       failed from cause 1
//! π2 = (λ2/s)·(1 - π0)       failed from cause 2
//! ```

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec4 = Vector4<f64>;

/// Floor applied to `λ1 + λ2` before dividing by it.
const MIN_RATE_SUM: f64 = 1e-300;
/// Above this exponent `exp(-s·IT)` is treated as underflowed.
const EXP_UNDERFLOW: f64 = 700.0;

/// One test condition: inspection time, stress level and number of devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestCondition {
    pub inspection_time: f64,
    pub stress: f64,
    pub devices: u64,
}

impl TestCondition {
    pub fn new(inspection_time: f64, stress: f64, devices: u64) -> Result<Self> {
        if !(inspection_time > 0.0) || !inspection_time.is_finite() {
            return Err(Error::invalid(format!(
                "inspection time must be positive and finite, got {inspection_time}"
            )));
        }
        if !stress.is_finite() {
            return Err(Error::invalid("stress must be finite"));
        }
        Ok(Self { inspection_time, stress, devices })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    pub conditions: Vec<TestCondition>,
}

impl TestPlan {
    pub fn new(conditions: Vec<TestCondition>) -> Result<Self> {
        let plan = Self { conditions };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::invalid("test plan has no conditions"));
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if !(c.inspection_time > 0.0) || !c.inspection_time.is_finite() || !c.stress.is_finite() {
                return Err(Error::invalid(format!("condition {i} has an invalid inspection time or stress")));
            }
        }
        if self.total_devices() == 0 {
            return Err(Error::invalid("test plan has no devices"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Total number of devices `K = Σ K_i`.
    pub fn total_devices(&self) -> u64 {
        self.conditions.iter().map(|c| c.devices).sum()
    }

    /// Weights `K_i / K`.
    pub fn weights(&self) -> Vec<f64> {
        let total = self.total_devices() as f64;
        self.conditions.iter().map(|c| c.devices as f64 / total).collect()
    }

    /// The same conditions with every `K_i` multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            conditions: self
                .conditions
                .iter()
                .map(|c| TestCondition { devices: c.devices * factor, ..*c })
                .collect(),
        }
    }

    /// The same conditions with `devices` devices in each.
    pub fn with_devices(&self, devices: u64) -> Self {
        Self {
            conditions: self.conditions.iter().map(|c| TestCondition { devices, ..*c }).collect(),
        }
    }

    /// Balanced plan crossing every inspection time with every stress level.
    /// Stress varies fastest, so condition 0 is the first time at the first stress.
    pub fn balanced(inspection_times: &[f64], stresses: &[f64], devices: u64) -> Result<Self> {
        let mut conditions = Vec::with_capacity(inspection_times.len() * stresses.len());
        for &it in inspection_times {
            for &x in stresses {
                conditions.push(TestCondition::new(it, x, devices)?);
            }
        }
        Self::new(conditions)
    }
}

/// Rate-model parameters `θ = (θ10, θ11, θ20, θ21)`, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    pub theta10: f64,
    pub theta11: f64,
    pub theta20: f64,
    pub theta21: f64,
}

impl ThetaParams {
    pub const NAMES: [&'static str; 4] = ["theta10", "theta11", "theta20", "theta21"];

    pub fn new(theta10: f64, theta11: f64, theta20: f64, theta21: f64) -> Result<Self> {
        let theta = Self { theta10, theta11, theta20, theta21 };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.as_array()) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.theta10, self.theta11, self.theta20, self.theta21]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { theta10: a[0], theta11: a[1], theta20: a[2], theta21: a[3] }
    }

    pub fn to_vector(&self) -> Vec4 {
        Vec4::from(self.as_array())
    }

    pub fn from_vector(v: &Vec4) -> Self {
        Self::from_array([v[0], v[1], v[2], v[3]])
    }

    /// Log-parameters `η = log θ`, the space the optimizer works in.
    pub fn to_eta(&self) -> Vec4 {
        self.to_vector().map(f64::ln)
    }

    pub fn from_eta(eta: &Vec4) -> Self {
        Self::from_vector(&eta.map(f64::exp))
    }

    /// Index of a parameter by its name (`theta10`, ...).
    pub fn index_of(name: &str) -> Option<usize> {
        Self::NAMES.iter().position(|n| *n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbs {
    pub p_survive: f64,
    pub p_cause1: f64,
    pub p_cause2: f64,
}

impl CellProbs {
    pub fn as_array(&self) -> [f64; 3] {
        [self.p_survive, self.p_cause1, self.p_cause2]
    }
}

/// Derivatives of the three cell probabilities with respect to θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellProbGradients {
    pub d_survive: Vec4,
    pub d_cause1: Vec4,
    pub d_cause2: Vec4,
    /// `∂(λ1 + λ2)/∂θ`
    pub l: Vec4,
    /// `∂(λ1/(λ1 + λ2))/∂θ`
    pub r: Vec4,
}

impl CellProbGradients {
    pub fn as_array(&self) -> [Vec4; 3] {
        [self.d_survive, self.d_cause1, self.d_cause2]
    }
}

pub fn failure_rates(theta: &ThetaParams, cond: &TestCondition) -> Result<(f64, f64)> {
    let rate = |cause: u8, base: f64, slope: f64| {
        let exponent = slope * cond.stress;
        let lambda = base * exponent.exp();
        if lambda.is_finite() {
            Ok(lambda)
        } else {
            Err(Error::RateOverflow { cause, exponent })
        }
    };
    Ok((
        rate(1, theta.theta10, theta.theta11)?,
        rate(2, theta.theta20, theta.theta21)?,
    ))
}

/// `(π0, 1 - π0)` for total rate `s` over `it`, computed without cancellation.
fn survival_split(s: f64, it: f64) -> (f64, f64) {
    let e = s * it;
    if e > EXP_UNDERFLOW {
        ((-e).exp(), 1.0)
    } else {
        ((-e).exp(), -(-e).exp_m1())
    }
}

pub fn cell_probs(theta: &ThetaParams, cond: &TestCondition) -> Result<CellProbs> {
    let (l1, l2) = failure_rates(theta, cond)?;
    let s = (l1 + l2).max(MIN_RATE_SUM);
    let (p0, q) = survival_split(s, cond.inspection_time);
    Ok(CellProbs { p_survive: p0, p_cause1: l1 / s * q, p_cause2: l2 / s * q })
}

pub fn cell_prob_gradients(theta: &ThetaParams, cond: &TestCondition) -> Result<CellProbGradients> {
    let (l1, l2) = failure_rates(theta, cond)?;
    let x = cond.stress;
    let it = cond.inspection_time;
    let s = (l1 + l2).max(MIN_RATE_SUM);
    let (p0, q) = survival_split(s, it);

    let l = Vec4::new(l1 / theta.theta10, l1 * x, l2 / theta.theta20, l2 * x);
    let r = Vec4::new(1.0 / theta.theta10, x, -1.0 / theta.theta20, -x) * (l1 * l2 / (s * s));

    let decay = l * (it * p0);
    Ok(CellProbGradients {
        d_survive: -decay,
        d_cause1: decay * (l1 / s) + r * q,
        d_cause2: decay * (l2 / s) - r * q,
        l,
        r,
    })
}

/// Lifetime summaries at one stress level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantities {
    pub stress: f64,
    /// `1 / (λ1 + λ2)`
    pub mean_lifetime: f64,
    /// `1 / λ1`
    pub mean_lifetime_cause1: f64,
    /// `1 / λ2`
    pub mean_lifetime_cause2: f64,
    /// Probability a failure is due to cause 1.
    pub prob_cause1: f64,
    pub prob_cause2: f64,
}

pub fn quantities_of_interest(theta: &ThetaParams, stress: f64) -> Result<Quantities> {
    let cond = TestCondition { inspection_time: 1.0, stress, devices: 1 };
    let (l1, l2) = failure_rates(theta, &cond)?;
    let s = l1 + l2;
    Ok(Quantities {
        stress,
        mean_lifetime: 1.0 / s,
        mean_lifetime_cause1: 1.0 / l1,
        mean_lifetime_cause2: 1.0 / l2,
        prob_cause1: l1 / s,
        prob_cause2: l2 / s,
    })
}
