//! Weighted divergences between observed cell proportions and the model.
//!
//! For `β > 0` the objective is the weighted density power divergence with
//! its θ-free term dropped:
//!
//! ```text
//! Σ_i (K_i/K) [ Σ_r π_ir^(β+1) − ((β+1)/β) Σ_r p̂_ir π_ir^β ]
//! ```
//!
//! and `β = 0` uses the weighted Kullback-Leibler divergence, whose minimizer
//! is the maximum likelihood estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cell_prob_gradients, cell_probs, failure_rates, CellProbs, TestPlan, ThetaParams, Vec4};

/// Floor for probabilities inside logarithms.
const LOG_FLOOR: f64 = 1e-12;

/// Observed outcomes for one condition. Counts are normally integral but
/// fractional values (expected counts) are accepted in-process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub n_survive: f64,
    pub n_cause1: f64,
    pub n_cause2: f64,
}

impl CountsRow {
    pub fn new(n_survive: u64, n_cause1: u64, n_cause2: u64) -> Self {
        Self { n_survive: n_survive as f64, n_cause1: n_cause1 as f64, n_cause2: n_cause2 as f64 }
    }

    /// Expected counts `K · π`, generally not integral.
    pub fn expected(devices: u64, probs: &CellProbs) -> Self {
        let k = devices as f64;
        Self { n_survive: k * probs.p_survive, n_cause1: k * probs.p_cause1, n_cause2: k * probs.p_cause2 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.n_survive, self.n_cause1, self.n_cause2]
    }

    pub fn total(&self) -> f64 {
        self.n_survive + self.n_cause1 + self.n_cause2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub rows: Vec<CountsRow>,
}

impl CountsTable {
    pub fn new(rows: Vec<CountsRow>) -> Self {
        Self { rows }
    }

    /// Checks the table against `plan`: same length, non-negative counts, and
    /// each row summing to its condition's `K_i`.
    pub fn validate(&self, plan: &TestPlan) -> Result<()> {
        if self.rows.len() != plan.len() {
            return Err(Error::invalid(format!(
                "counts table has {} rows but the plan has {} conditions",
                self.rows.len(),
                plan.len()
            )));
        }
        for (i, (row, cond)) in self.rows.iter().zip(&plan.conditions).enumerate() {
            if row.as_array().iter().any(|n| !(*n >= 0.0) || !n.is_finite()) {
                return Err(Error::invalid(format!("condition {i} has a negative or non-finite count")));
            }
            let k = cond.devices as f64;
            if (row.total() - k).abs() > 1e-9 * k.max(1.0) {
                return Err(Error::invalid(format!(
                    "condition {i}: counts sum to {} but {} devices were tested",
                    row.total(),
                    cond.devices
                )));
            }
        }
        Ok(())
    }

    /// Observed proportions `p̂_i = n_i / K_i`; rows with `K_i = 0` give zeros.
    pub fn proportions(&self) -> Vec<[f64; 3]> {
        self.rows
            .iter()
            .map(|row| {
                let k = row.total();
                if k > 0.0 {
                    row.as_array().map(|n| n / k)
                } else {
                    [0.0; 3]
                }
            })
            .collect()
    }
}

/// DPD tuning parameter, `β ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Beta(f64);

impl Beta {
    pub const MLE: Beta = Beta(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 && value.is_finite() {
            Ok(Beta(value))
        } else {
            Err(Error::invalid(format!("β must be a finite non-negative number, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_mle(self) -> bool {
        self.0 == 0.0
    }
}

impl std::fmt::Display for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

pub(crate) fn check_aligned(plan: &TestPlan, counts: &CountsTable) -> Result<()> {
    plan.validate()?;
    counts.validate(plan)
}

/// `Σ_i (K_i/K) Σ_r p̂_ir log(p̂_ir / π_ir)`.
///
/// Zero counts contribute nothing. A positive count in a cell whose model
/// probability is exactly zero makes the divergence `f64::INFINITY`.
pub fn weighted_kl(plan: &TestPlan, counts: &CountsTable, theta: &ThetaParams) -> Result<f64> {
    check_aligned(plan, counts)?;
    let weights = plan.weights();
    let mut total = 0.0;
    for (i, (cond, p_hat)) in plan.conditions.iter().zip(counts.proportions()).enumerate() {
        let pi = cell_probs(theta, cond)?.as_array();
        let mut row = 0.0;
        for r in 0..3 {
            if p_hat[r] == 0.0 {
                continue;
            }
            if pi[r] <= 0.0 {
                return Ok(f64::INFINITY);
            }
            row += p_hat[r] * (p_hat[r].ln() - pi[r].max(LOG_FLOOR).ln());
        }
        total += weights[i] * row;
    }
    Ok(total)
}

/// Multinomial log-likelihood `Σ_i Σ_r n_ir log π_ir` (without the
/// combinatorial constant).
pub fn log_likelihood(plan: &TestPlan, counts: &CountsTable, theta: &ThetaParams) -> Result<f64> {
    check_aligned(plan, counts)?;
    let mut total = 0.0;
    for (cond, row) in plan.conditions.iter().zip(&counts.rows) {
        let pi = cell_probs(theta, cond)?.as_array();
        for (n, p) in row.as_array().into_iter().zip(pi) {
            if n > 0.0 {
                total += n * p.ln();
            }
        }
    }
    Ok(total)
}

/// Weighted DPD for `β > 0`, θ-free term dropped.
pub fn weighted_dpd(plan: &TestPlan, counts: &CountsTable, theta: &ThetaParams, beta: Beta) -> Result<f64> {
    if beta.is_mle() {
        return Err(Error::invalid("weighted_dpd requires β > 0; use weighted_kl for β = 0"));
    }
    check_aligned(plan, counts)?;
    let b = beta.value();
    let weights = plan.weights();
    let mut total = 0.0;
    for (i, (cond, p_hat)) in plan.conditions.iter().zip(counts.proportions()).enumerate() {
        let pi = cell_probs(theta, cond)?.as_array();
        let mut power_sum = 0.0;
        let mut cross = 0.0;
        for r in 0..3 {
            power_sum += pi[r].powf(b + 1.0);
            cross += p_hat[r] * pi[r].powf(b);
        }
        total += weights[i] * (power_sum - (b + 1.0) / b * cross);
    }
    Ok(total)
}

/// `weighted_kl` for `β = 0`, `weighted_dpd` otherwise.
pub fn objective(plan: &TestPlan, counts: &CountsTable, theta: &ThetaParams, beta: Beta) -> Result<f64> {
    if beta.is_mle() {
        weighted_kl(plan, counts, theta)
    } else {
        weighted_dpd(plan, counts, theta, beta)
    }
}

/// Analytic gradient of [`objective`] with respect to θ.
pub fn dpd_gradient(plan: &TestPlan, counts: &CountsTable, theta: &ThetaParams, beta: Beta) -> Result<Vec4> {
    check_aligned(plan, counts)?;
    let props = counts.proportions();
    Ok(value_and_gradient(plan, &props, theta, beta, false)?.1)
}

/// Objective value and gradient in one pass over the conditions.
///
/// With `shifted` set, the `β > 0` value is offset by the θ-free constant
/// `(β+1)/β` so that it stays O(1) as `β → 0`; the gradient is unchanged.
pub(crate) fn value_and_gradient(
    plan: &TestPlan,
    props: &[[f64; 3]],
    theta: &ThetaParams,
    beta: Beta,
    shifted: bool,
) -> Result<(f64, Vec4)> {
    let b = beta.value();
    let weights = plan.weights();
    let mut value = 0.0;
    let mut grad = Vec4::zeros();
    for (i, (cond, p_hat)) in plan.conditions.iter().zip(props).enumerate() {
        let pi = cell_probs(theta, cond)?.as_array();
        let u = cell_prob_gradients(theta, cond)?.as_array();
        let w = weights[i];
        if beta.is_mle() {
            for r in 0..3 {
                if p_hat[r] == 0.0 {
                    continue;
                }
                if pi[r] <= 0.0 {
                    return Ok((f64::INFINITY, Vec4::repeat(f64::NAN)));
                }
                value += w * p_hat[r] * (p_hat[r].ln() - pi[r].max(LOG_FLOOR).ln());
                grad -= u[r] * (w * p_hat[r] / pi[r]);
            }
        } else {
            let mut row = 0.0;
            for r in 0..3 {
                let pow_b = pi[r].powf(b);
                row += pi[r] * pow_b;
                row -= if shifted {
                    (b + 1.0) * p_hat[r] * (b * pi[r].ln()).exp_m1() / b
                } else {
                    (b + 1.0) / b * p_hat[r] * pow_b
                };
                // π^(β-1)(π - p̂) written so that empty cells with π = 0 stay finite
                let mut coef = pow_b;
                if p_hat[r] > 0.0 {
                    coef -= p_hat[r] * pi[r].powf(b - 1.0);
                }
                grad += u[r] * (w * (b + 1.0) * coef);
            }
            value += w * row;
        }
    }
    Ok((value, grad))
}

/// Terms of the closed-form estimating equations, per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatingTerms {
    /// Left-hand side exactly as typeset: `Γ*_i` is added to every component.
    pub printed: Vec4,
    /// Left-hand side with `Γ*_i` multiplied by the direction `r_i`.
    pub with_direction: Vec4,
    pub gamma: Vec<f64>,
    pub gamma_star: Vec<f64>,
}

/// Evaluates the closed-form estimating equations in terms of the per-condition
/// scalars `Γ_i` and `Γ*_i`.
///
/// The `with_direction` variant equals `K/(β+1)` times [`dpd_gradient`]; the
/// `printed` variant adds the scalar `(1−π0)^β Γ*_i` to each component instead
/// and is kept as a diagnostic.
pub fn estimating_equation_terms(
    plan: &TestPlan,
    counts: &CountsTable,
    theta: &ThetaParams,
    beta: Beta,
) -> Result<EstimatingTerms> {
    check_aligned(plan, counts)?;
    let b = beta.value();
    let mut printed = Vec4::zeros();
    let mut with_direction = Vec4::zeros();
    let mut gamma = Vec::with_capacity(plan.len());
    let mut gamma_star = Vec::with_capacity(plan.len());
    for (cond, p) in plan.conditions.iter().zip(counts.proportions()) {
        let (l1, l2) = failure_rates(theta, cond)?;
        let s = l1 + l2;
        let pi = cell_probs(theta, cond)?;
        let grads = cell_prob_gradients(theta, cond)?;
        let q = 1.0 - pi.p_survive;
        let dev1 = l1 / s * q - p[1];
        let dev2 = l2 / s * q - p[2];
        let g = (l1.powf(b) * dev1 + l2.powf(b) * dev2) / s.powf(b);
        let g_star = (l1.powf(b - 1.0) * dev1 - l2.powf(b - 1.0) * dev2) / s.powf(b - 1.0);
        let k = cond.devices as f64;
        let p0 = pi.p_survive;
        let lead = grads.l
            * (-p0 * cond.inspection_time * (p0.powf(b - 1.0) * (p0 - p[0]) - q.powf(b - 1.0) * g));
        let tail = q.powf(b) * g_star;
        printed += (lead + Vec4::repeat(tail)) * k;
        with_direction += (lead + grads.r * tail) * k;
        gamma.push(g);
        gamma_star.push(g_star);
    }
    Ok(EstimatingTerms { printed, with_direction, gamma, gamma_star })
}

/// Left-hand side of the estimating equations as typeset (see
/// [`estimating_equation_terms`]).
pub fn estimating_equation_residual(
    plan: &TestPlan,
    counts: &CountsTable,
    theta: &ThetaParams,
    beta: Beta,
) -> Result<Vec4> {
    Ok(estimating_equation_terms(plan, counts, theta, beta)?.printed)
}

/// Mean absolute discrepancy between observed and fitted cell rates,
/// `(1/(3I)) Σ_i Σ_r |n_ir − K_i π_ir| / K_i`.
pub fn estimated_error(plan: &TestPlan, counts: &CountsTable, theta: &ThetaParams) -> Result<f64> {
    check_aligned(plan, counts)?;
    let mut total = 0.0;
    for (cond, row) in plan.conditions.iter().zip(&counts.rows) {
        let k = cond.devices as f64;
        if k == 0.0 {
            continue;
        }
        let pi = cell_probs(theta, cond)?.as_array();
        for (n, p) in row.as_array().into_iter().zip(pi) {
            total += (n - k * p).abs() / k;
        }
    }
    Ok(total / (3.0 * plan.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::TestCondition;
    use approx::assert_relative_eq;

    fn model_point_data(theta: &ThetaParams) -> (TestPlan, CountsTable) {
        let plan = TestPlan::balanced(&[7.0, 15.0, 25.0], &[35.0, 45.0, 55.0, 65.0], 100).unwrap();
        let rows = plan
            .conditions
            .iter()
            .map(|c| CountsRow::expected(c.devices, &cell_probs(theta, c).unwrap()))
            .collect();
        (plan, CountsTable::new(rows))
    }

    #[test]
    fn kl_vanishes_at_model_point() {
        let theta = ThetaParams::new(0.004, 0.05, 0.0004, 0.08).unwrap();
        let (plan, counts) = model_point_data(&theta);
        assert!(weighted_kl(&plan, &counts, &theta).unwrap().abs() < 1e-14);
    }

    #[test]
    fn kl_is_infinite_on_support_violation() {
        let plan = TestPlan::new(vec![TestCondition::new(10.0, 2.0, 5).unwrap()]).unwrap();
        let counts = CountsTable::new(vec![CountsRow::new(3, 1, 1)]);
        let theta = ThetaParams::new(0.001, 50.0, 0.001, 0.1).unwrap();
        assert_eq!(weighted_kl(&plan, &counts, &theta).unwrap(), f64::INFINITY);
        let (value, _) = value_and_gradient(&plan, &counts.proportions(), &theta, Beta::MLE, false).unwrap();
        assert_eq!(value, f64::INFINITY);
    }

    #[test]
    fn kl_tracks_log_likelihood() {
        let (plan, counts) = fixtures::bdc();
        let k = plan.total_devices() as f64;
        let a = ThetaParams::new(0.00089, 1.3191, 0.00028, 2.493).unwrap();
        let b = ThetaParams::new(0.001, 1.2, 0.0003, 2.4).unwrap();
        let lhs = weighted_kl(&plan, &counts, &a).unwrap() - weighted_kl(&plan, &counts, &b).unwrap();
        let rhs = -(log_likelihood(&plan, &counts, &a).unwrap() - log_likelihood(&plan, &counts, &b).unwrap()) / k;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn dpd_beta_one_at_model_point() {
        let theta = ThetaParams::new(0.01, 0.3, 0.004, 0.5).unwrap();
        let cond = TestCondition::new(8.0, 1.5, 40).unwrap();
        let plan = TestPlan::new(vec![cond]).unwrap();
        let pi = cell_probs(&theta, &cond).unwrap();
        let counts = CountsTable::new(vec![CountsRow::expected(40, &pi)]);
        let value = weighted_dpd(&plan, &counts, &theta, Beta::new(1.0).unwrap()).unwrap();
        let squares: f64 = pi.as_array().iter().map(|p| p * p).sum();
        assert_relative_eq!(value, -squares, max_relative = 1e-14);
    }

    #[test]
    fn dpd_rejects_zero_beta() {
        let (plan, counts) = fixtures::bdc();
        let theta = ThetaParams::new(0.001, 1.0, 0.001, 1.0).unwrap();
        assert!(weighted_dpd(&plan, &counts, &theta, Beta::MLE).is_err());
    }

    #[test]
    fn shifted_value_differs_by_constant() {
        let (plan, counts) = fixtures::bdc();
        let props = counts.proportions();
        let beta = Beta::new(0.3).unwrap();
        for theta in [
            ThetaParams::new(0.001, 1.0, 0.0005, 2.0).unwrap(),
            ThetaParams::new(0.003, 0.5, 0.0002, 2.6).unwrap(),
        ] {
            let plain = weighted_dpd(&plan, &counts, &theta, beta).unwrap();
            let (shifted, _) = value_and_gradient(&plan, &props, &theta, beta, true).unwrap();
            assert_relative_eq!(shifted - plain, 1.3 / 0.3, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_model_point() {
        let theta = ThetaParams::new(0.004, 0.05, 0.0004, 0.08).unwrap();
        let (plan, counts) = model_point_data(&theta);
        for b in [0.0, 0.3, 1.0] {
            let g = dpd_gradient(&plan, &counts, &theta, Beta::new(b).unwrap()).unwrap();
            assert!(g.amax() < 1e-10, "β={b}: {g}");
        }
    }

    #[test]
    fn gammas_vanish_for_symmetric_model_point() {
        let theta = ThetaParams::new(0.02, 0.4, 0.02, 0.4).unwrap();
        let plan = TestPlan::balanced(&[3.0, 6.0], &[0.5, 1.5], 50).unwrap();
        let rows = plan
            .conditions
            .iter()
            .map(|c| CountsRow::expected(c.devices, &cell_probs(&theta, c).unwrap()))
            .collect();
        let counts = CountsTable::new(rows);
        for b in [0.0, 0.5, 1.0] {
            let terms = estimating_equation_terms(&plan, &counts, &theta, Beta::new(b).unwrap()).unwrap();
            for (g, gs) in terms.gamma.iter().zip(&terms.gamma_star) {
                assert!(g.abs() < 1e-15 && gs.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gamma_at_beta_one_matches_hand_expansion() {
        // one cell, λ1 = 0.02, λ2 = 0.01, IT = 10, p̂ = (0.7, 0.2, 0.1)
        let theta = ThetaParams::new(0.02, 0.1, 0.01, 0.1).unwrap();
        let cond = TestCondition::new(10.0, 0.0, 10).unwrap();
        let plan = TestPlan::new(vec![cond]).unwrap();
        let counts = CountsTable::new(vec![CountsRow::new(7, 2, 1)]);
        let terms = estimating_equation_terms(&plan, &counts, &theta, Beta::new(1.0).unwrap()).unwrap();
        let q = 1.0 - (-0.3f64).exp();
        let a1 = 2.0 / 3.0;
        let a2 = 1.0 / 3.0;
        let expected = a1 * (a1 * q - 0.2) + a2 * (a2 * q - 0.1);
        assert_relative_eq!(terms.gamma[0], expected, max_relative = 1e-13);
        let expected_star = (a1 * q - 0.2) - (a2 * q - 0.1);
        assert_relative_eq!(terms.gamma_star[0], expected_star, max_relative = 1e-12);
    }

    #[test]
    fn direction_variant_matches_gradient() {
        let (plan, counts) = fixtures::bdc();
        let theta = ThetaParams::new(0.0011, 1.1, 0.0004, 2.3).unwrap();
        let k = plan.total_devices() as f64;
        for b in [0.0, 0.25, 0.5, 1.0] {
            let beta = Beta::new(b).unwrap();
            let grad = dpd_gradient(&plan, &counts, &theta, beta).unwrap() * (k / (1.0 + b));
            let terms = estimating_equation_terms(&plan, &counts, &theta, beta).unwrap();
            assert_relative_eq!(terms.with_direction, grad, max_relative = 1e-9);
            assert!((terms.printed - grad).amax() > 1e-6 * grad.amax());
        }
    }

    #[test]
    fn estimated_error_zero_for_perfect_fit() {
        let theta = ThetaParams::new(0.004, 0.05, 0.0004, 0.08).unwrap();
        let (plan, counts) = model_point_data(&theta);
        assert!(estimated_error(&plan, &counts, &theta).unwrap() < 1e-15);
    }

    #[test]
    fn estimated_error_ignores_condition_order() {
        let (plan, counts) = fixtures::bdc();
        let theta = ThetaParams::new(0.00089, 1.3191, 0.00028, 2.493).unwrap();
        let base = estimated_error(&plan, &counts, &theta).unwrap();
        let order = [5, 2, 0, 4, 1, 3];
        let plan2 = TestPlan::new(order.iter().map(|&i| plan.conditions[i]).collect()).unwrap();
        let counts2 = CountsTable::new(order.iter().map(|&i| counts.rows[i]).collect());
        assert_relative_eq!(estimated_error(&plan2, &counts2, &theta).unwrap(), base, max_relative = 1e-14);
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let (plan, mut counts) = fixtures::bdc();
        counts.rows[0].n_cause1 += 1.0;
        let theta = ThetaParams::new(0.001, 1.0, 0.001, 1.0).unwrap();
        assert!(weighted_kl(&plan, &counts, &theta).is_err());
        counts.rows.pop();
        assert!(estimated_error(&plan, &counts, &theta).is_err());
    }
}
