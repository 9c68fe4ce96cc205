//! Minimum divergence estimation and its sandwich covariance.
//!
//! The estimator `θ̂_β` minimizes the weighted DPD (or the weighted
//! Kullback-Leibler divergence when `β = 0`). Its asymptotic covariance is
//! `Σ_β = J_β⁻¹ K_β J_β⁻¹`, with
//!
//! ```text
//! J_β = Σ_i Σ_r (K_i/K) u_ir u_irᵀ π_ir^(β-1)
//! K_β = Σ_i Σ_r (K_i/K) u_ir u_irᵀ π_ir^(2β-1) − Σ_i (K_i/K) ξ_i ξ_iᵀ
//! ξ_i = Σ_r u_ir π_ir^β
//! ```
//!
//! where `u_ir = ∂π_ir/∂θ`. `θ̂_β` has covariance about `Σ_β / K`.

use std::cmp::Ordering;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{check_aligned, objective, value_and_gradient, Beta, CountsTable};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_condition, symmetric_inverse, to_dynamic, to_fixed, Mat4, MAX_CONDITION};
use crate::model::{cell_prob_gradients, cell_probs, TestPlan, ThetaParams, Vec4};
use crate::optim::Bfgs;

/// Box on `η = log θ`.
pub const ETA_LOWER: f64 = -30.0;
pub const ETA_UPPER: f64 = 10.0;

const FALLBACK_START: [f64; 4] = [0.001, 0.1, 0.001, 0.1];
const DEFAULT_SEED: u64 = 0x5eed_0d9d;
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub beta: Beta,
    /// Starting point; the moment-based heuristic is used when absent.
    pub start: Option<ThetaParams>,
    pub max_iterations: usize,
    /// Tolerance on the Euclidean norm of the gradient in `η = log θ`.
    pub gradient_tolerance: f64,
    /// Number of starts: the base start plus `multi_start - 1` perturbations.
    pub multi_start: usize,
    /// Seed for the restart perturbations.
    pub seed: u64,
}

impl FitConfig {
    pub fn new(beta: Beta) -> Self {
        Self {
            beta,
            start: None,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            multi_start: 5,
            seed: DEFAULT_SEED,
        }
    }

    pub fn with_start(mut self, start: ThetaParams) -> Self {
        self.start = Some(start);
        self
    }

    pub fn with_multi_start(mut self, n: usize) -> Self {
        self.multi_start = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::invalid("gradient tolerance must be positive"));
        }
        if self.max_iterations == 0 || self.multi_start == 0 {
            return Err(Error::invalid("max_iterations and multi_start must be at least 1"));
        }
        if let Some(start) = &self.start {
            start.validate()?;
        }
        Ok(())
    }
}

/// A local optimum reached from one of the starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub theta: ThetaParams,
    pub objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ThetaParams,
    pub beta: Beta,
    /// Weighted KL (`β = 0`) or weighted DPD without its θ-free term.
    pub objective: f64,
    /// Gradient norm in `η = log θ` at `theta_hat`.
    pub gradient_norm: f64,
    pub converged: bool,
    pub boundary_hit: bool,
    /// `Σ_β(θ̂) / K`, absent when `J_β` is ill-conditioned.
    pub covariance: Option<Mat4>,
    pub iterations: usize,
    /// Distinct optima found across the starts, best first.
    pub local_optima: Vec<LocalOptimum>,
}

impl FitResult {
    /// Square roots of the covariance diagonal.
    pub fn standard_errors(&self) -> Option<[f64; 4]> {
        self.covariance.map(|c| [0, 1, 2, 3].map(|i| c[(i, i)].max(0.0).sqrt()))
    }
}

/// Requires two free cells per non-empty condition, at least four in total,
/// and two distinct stress levels.
fn check_identified(plan: &TestPlan) -> Result<()> {
    let used: Vec<_> = plan.conditions.iter().filter(|c| c.devices > 0).collect();
    let informative = 2 * used.len();
    if informative < 4 {
        return Err(Error::Unidentified(format!(
            "{informative} informative cells; the 4-parameter model needs at least 4"
        )));
    }
    let first = used[0].stress;
    if used.iter().all(|c| c.stress == first) {
        return Err(Error::Unidentified("all conditions share one stress level".into()));
    }
    Ok(())
}

/// Moment-based starting point.
///
/// Per condition the total hazard is estimated from the survival proportion
/// (kept within `[1/(2K_i), 1 − 1/(2K_i)]`) as `−log(p̂0)/IT`; its logarithm is
/// regressed on stress with weights `K_i`, and the intercept is split between
/// the causes by their overall failure shares.
pub fn default_start(plan: &TestPlan, counts: &CountsTable) -> ThetaParams {
    heuristic_start(plan, counts).unwrap_or_else(|| ThetaParams::from_array(FALLBACK_START))
}

fn heuristic_start(plan: &TestPlan, counts: &CountsTable) -> Option<ThetaParams> {
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let (mut f1, mut f2) = (0.0, 0.0);
    for (cond, row) in plan.conditions.iter().zip(&counts.rows) {
        if cond.devices == 0 {
            continue;
        }
        let k = cond.devices as f64;
        let floor = 0.5 / k;
        let surv = (row.n_survive / k).clamp(floor, 1.0 - floor);
        let hazard = -surv.ln() / cond.inspection_time;
        let y = hazard.ln();
        let x = cond.stress;
        sw += k;
        sx += k * x;
        sy += k * y;
        sxx += k * x * x;
        sxy += k * x * y;
        f1 += row.n_cause1;
        f2 += row.n_cause2;
    }
    let det = sw * sxx - sx * sx;
    if !(det > 1e-12 * sw * sxx.max(1.0)) {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let slope = slope.max(1e-3);
    let share1 = (f1 + 0.5) / (f1 + f2 + 1.0);
    let base = intercept.exp();
    let theta = ThetaParams::from_array([share1 * base, slope, (1.0 - share1) * base, slope]);
    let eta = theta.to_eta().map(|v| v.clamp(ETA_LOWER, ETA_UPPER));
    let theta = ThetaParams::from_eta(&eta);
    theta.validate().ok().map(|_| theta)
}

fn compare_candidates(a: &LocalOptimum, b: &LocalOptimum) -> Ordering {
    if (a.objective - b.objective).abs() > TIE_TOLERANCE {
        return a.objective.total_cmp(&b.objective);
    }
    a.gradient_norm
        .total_cmp(&b.gradient_norm)
        .then_with(|| {
            a.theta
                .as_array()
                .iter()
                .zip(b.theta.as_array().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Minimizes the weighted divergence selected by `config.beta`.
///
/// Non-convergence is not an error: the best point found is returned with
/// `converged = false`.
pub fn fit(plan: &TestPlan, counts: &CountsTable, config: &FitConfig) -> Result<FitResult> {
    check_aligned(plan, counts)?;
    config.validate()?;
    check_identified(plan)?;

    let props = counts.proportions();
    let beta = config.beta;
    let base = config.start.unwrap_or_else(|| default_start(plan, counts));
    let base_eta = base.to_eta();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![base_eta];
    for _ in 1..config.multi_start {
        starts.push(base_eta + Vec4::from_fn(|_, _| rng.random_range(-1.0..=1.0)));
    }

    let bfgs = Bfgs {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        lower: ETA_LOWER,
        upper: ETA_UPPER,
    };
    let eval = |eta: &Vec4| -> Result<(f64, Vec4)> {
        let theta = ThetaParams::from_eta(eta);
        let (v, g) = value_and_gradient(plan, &props, &theta, beta, true)?;
        Ok((v, g.component_mul(&theta.to_vector())))
    };

    let mut candidates = Vec::new();
    let mut total_iterations = 0;
    let mut boundary_hit = false;
    for start in &starts {
        let start_ok = matches!(eval(start), Ok((v, _)) if v.is_finite());
        if !start_ok {
            continue;
        }
        let out = match bfgs.minimize(eval, start) {
            Ok(out) => out,
            Err(e) => {
                debug!("start {start:?} failed: {e}");
                continue;
            }
        };
        total_iterations += out.iterations;
        boundary_hit |= out.boundary_hit;
        let theta = ThetaParams::from_eta(&out.x);
        candidates.push((
            LocalOptimum {
                theta,
                objective: objective(plan, counts, &theta, beta)?,
                gradient_norm: out.gradient_norm,
                converged: out.converged,
            },
            out.boundary_hit,
        ));
    }
    if candidates.is_empty() {
        return Err(Error::InfiniteObjective);
    }

    candidates.sort_by(|a, b| compare_candidates(&a.0, &b.0));
    let (best, best_boundary) = candidates[0].clone();
    let mut local_optima: Vec<LocalOptimum> = Vec::new();
    for (c, _) in candidates {
        let distinct = local_optima.iter().all(|o| {
            let (a, b) = (o.theta.to_eta(), c.theta.to_eta());
            (a - b).amax() > 1e-4
        });
        if distinct {
            local_optima.push(c);
        }
    }
    if local_optima.len() > 1 {
        debug!("β = {beta}: {} distinct local optima: {local_optima:?}", local_optima.len());
    }

    let covariance = match sandwich(plan, &best.theta, beta).and_then(|p| covariance(&p, plan.total_devices())) {
        Ok(c) => Some(c),
        Err(e) => {
            debug!("β = {beta}: covariance unavailable: {e}");
            None
        }
    };

    Ok(FitResult {
        theta_hat: best.theta,
        beta,
        objective: best.objective,
        gradient_norm: best.gradient_norm,
        converged: best.converged,
        boundary_hit: best_boundary || (boundary_hit && !best.converged),
        covariance,
        iterations: total_iterations,
        local_optima,
    })
}

/// The two halves of the sandwich and the per-condition `ξ_i` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    pub j_matrix: Mat4,
    pub k_matrix: Mat4,
    pub xi_vectors: Vec<Vec4>,
}

pub fn sandwich(plan: &TestPlan, theta: &ThetaParams, beta: Beta) -> Result<SandwichParts> {
    plan.validate()?;
    theta.validate()?;
    let b = beta.value();
    let weights = plan.weights();
    let mut j = Mat4::zeros();
    let mut k = Mat4::zeros();
    let mut xi_vectors = Vec::with_capacity(plan.len());
    for (i, cond) in plan.conditions.iter().enumerate() {
        let pi = cell_probs(theta, cond)?.as_array();
        let u = cell_prob_gradients(theta, cond)?.as_array();
        let mut xi = Vec4::zeros();
        if weights[i] > 0.0 {
            for r in 0..3 {
                if pi[r] <= 0.0 && b < 1.0 {
                    return Err(Error::SingularCell { condition: i, cell: r });
                }
                let outer = u[r] * u[r].transpose();
                j += outer * (weights[i] * pi[r].powf(b - 1.0));
                k += outer * (weights[i] * pi[r].powf(2.0 * b - 1.0));
                xi += u[r] * pi[r].powf(b);
            }
            k -= xi * xi.transpose() * weights[i];
        }
        xi_vectors.push(xi);
    }
    let j = (j + j.transpose()) * 0.5;
    let k = (k + k.transpose()) * 0.5;
    Ok(SandwichParts { j_matrix: j, k_matrix: k, xi_vectors })
}

/// `Σ_β = J⁻¹ K J⁻¹`, without the `1/K` factor.
pub fn asymptotic_covariance(parts: &SandwichParts) -> Result<Mat4> {
    let j = to_dynamic(&parts.j_matrix);
    let condition_number = symmetric_condition(&j);
    if !(condition_number <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition_number });
    }
    let j_inv = to_fixed(&symmetric_inverse(&j)?);
    let sigma = j_inv * parts.k_matrix * j_inv;
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// Finite-sample covariance `Σ_β / K` of the estimator.
pub fn covariance(parts: &SandwichParts, total_devices: u64) -> Result<Mat4> {
    if total_devices == 0 {
        return Err(Error::invalid("total device count must be positive"));
    }
    Ok(asymptotic_covariance(parts)? / total_devices as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::CountsRow;
    use crate::fixtures;
    use crate::model::TestCondition;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn moderate_plan(k: u64) -> TestPlan {
        TestPlan::balanced(&[7.0, 15.0, 25.0], &[35.0, 45.0, 55.0, 65.0], k).unwrap()
    }

    fn expected_counts(plan: &TestPlan, theta: &ThetaParams) -> CountsTable {
        CountsTable::new(
            plan.conditions
                .iter()
                .map(|c| CountsRow::expected(c.devices, &cell_probs(theta, c).unwrap()))
                .collect(),
        )
    }

    #[test]
    fn recovers_model_point_exactly() {
        let truth = ThetaParams::new(0.004, 0.05, 0.0004, 0.08).unwrap();
        let plan = moderate_plan(100);
        let counts = expected_counts(&plan, &truth);
        for b in [0.0, 0.3, 1.0] {
            let res = fit(&plan, &counts, &FitConfig::new(Beta::new(b).unwrap())).unwrap();
            assert!(res.converged, "β={b}");
            for (a, t) in res.theta_hat.as_array().iter().zip(truth.as_array()) {
                assert!((a - t).abs() <= 1e-6 * t.max(1e-3), "β={b}: {a} vs {t}");
            }
        }
    }

    #[test]
    fn bdc_mle_close_to_published() {
        let (plan, counts) = fixtures::bdc();
        let res = fit(&plan, &counts, &FitConfig::new(Beta::MLE)).unwrap();
        assert!(res.converged);
        let t = res.theta_hat;
        assert!((t.theta10 - 0.00089).abs() < 1e-5);
        assert!((t.theta11 - 1.3191).abs() < 1e-3);
        assert!((t.theta20 - 0.00028).abs() < 1e-5);
        assert!((t.theta21 - 2.493).abs() < 1e-2);
        let se = res.standard_errors().unwrap();
        assert!(se.iter().all(|s| *s > 0.0 && s.is_finite()));
    }

    #[test]
    fn single_stress_level_is_unidentified() {
        let plan = TestPlan::new(vec![
            TestCondition::new(5.0, 1.0, 10).unwrap(),
            TestCondition::new(9.0, 1.0, 10).unwrap(),
        ])
        .unwrap();
        let counts = CountsTable::new(vec![CountsRow::new(8, 1, 1), CountsRow::new(5, 3, 2)]);
        assert!(matches!(fit(&plan, &counts, &FitConfig::new(Beta::MLE)), Err(Error::Unidentified(_))));
        let one = TestPlan::new(vec![plan.conditions[0]]).unwrap();
        let counts = CountsTable::new(vec![counts.rows[0]]);
        assert!(matches!(fit(&one, &counts, &FitConfig::new(Beta::MLE)), Err(Error::Unidentified(_))));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let (plan, counts) = fixtures::bdc();
        let mut config = FitConfig::new(Beta::MLE).with_multi_start(1);
        config.max_iterations = 2;
        let res = fit(&plan, &counts, &config).unwrap();
        assert!(!res.converged);
        assert!(res.gradient_norm > config.gradient_tolerance);
        assert!(res.covariance.is_some());
    }

    #[test]
    fn invalid_config_rejected() {
        let (plan, counts) = fixtures::bdc();
        let mut config = FitConfig::new(Beta::MLE);
        config.multi_start = 0;
        assert!(fit(&plan, &counts, &config).is_err());
    }

    #[test]
    fn mle_sandwich_collapses_to_fisher() {
        let theta = ThetaParams::new(0.004, 0.05, 0.0004, 0.08).unwrap();
        let parts = sandwich(&moderate_plan(10), &theta, Beta::MLE).unwrap();
        for xi in &parts.xi_vectors {
            assert!(xi.amax() < 1e-12 * parts.j_matrix.amax().sqrt().max(1.0));
        }
        assert_relative_eq!(parts.j_matrix, parts.k_matrix, max_relative = 1e-10);
        let sigma = asymptotic_covariance(&parts).unwrap();
        let j_inv = parts.j_matrix.try_inverse().unwrap();
        assert_relative_eq!(sigma, j_inv, max_relative = 1e-6);
    }

    #[test]
    fn sandwich_symmetric_and_j_positive_definite() {
        let theta = ThetaParams::new(0.003, 0.07, 0.0006, 0.06).unwrap();
        let parts = sandwich(&moderate_plan(10), &theta, Beta::new(0.5).unwrap()).unwrap();
        assert_relative_eq!(parts.j_matrix, parts.j_matrix.transpose(), epsilon = 1e-10);
        assert_relative_eq!(parts.k_matrix, parts.k_matrix.transpose(), epsilon = 1e-10);
        let eig = SymmetricEigen::new(parts.j_matrix).eigenvalues;
        assert!(eig.iter().all(|e| *e > 0.0), "{eig}");
    }

    #[test]
    fn single_condition_is_not_invertible() {
        let theta = ThetaParams::new(0.01, 0.2, 0.005, 0.3).unwrap();
        let plan = TestPlan::new(vec![TestCondition::new(5.0, 1.0, 50).unwrap()]).unwrap();
        let parts = sandwich(&plan, &theta, Beta::new(0.3).unwrap()).unwrap();
        let sv = parts.j_matrix.singular_values();
        assert!(sv[2] <= 1e-10 * sv[0] && sv[3] <= 1e-10 * sv[0]);
        assert!(matches!(covariance(&parts, 50), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn doubling_devices_halves_covariance() {
        let theta = ThetaParams::new(0.004, 0.05, 0.0004, 0.08).unwrap();
        let plan = moderate_plan(30);
        let beta = Beta::new(0.4).unwrap();
        let c1 = covariance(&sandwich(&plan, &theta, beta).unwrap(), plan.total_devices()).unwrap();
        let doubled = plan.scaled(2);
        let c2 = covariance(&sandwich(&doubled, &theta, beta).unwrap(), doubled.total_devices()).unwrap();
        assert_relative_eq!(c1 * 0.5, c2, max_relative = 1e-10);
    }

    #[test]
    fn zero_probability_cell_is_singular() {
        let theta = ThetaParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let plan = TestPlan::new(vec![
            TestCondition::new(1e4, 5.0, 10).unwrap(),
            TestCondition::new(1.0, 1.0, 10).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            sandwich(&plan, &theta, Beta::new(0.2).unwrap()),
            Err(Error::SingularCell { condition: 0, cell: 0 })
        ));
    }
}
