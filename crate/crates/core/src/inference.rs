//! Wald-type tests of `m(θ) = 0` built on a minimum DPD estimate, with an
//! asymptotic power approximation and the matching sample-size formula.
//!
//! The statistic is `W = K m(θ̂)ᵀ (Mᵀ Σ_β(θ̂) M)⁻¹ m(θ̂)` with `M = ∂mᵀ/∂θ`,
//! asymptotically `χ²_r` under the null. Chi-square and normal distribution
//! functions come from `statrs`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::divergence::Beta;
use crate::error::{Error, Result};
use crate::estimation::{asymptotic_covariance, covariance, sandwich, FitResult};
use crate::linalg::{rank, symmetric_inverse, to_dynamic};
use crate::model::{TestPlan, ThetaParams};

/// Relative step for finite-difference Jacobians.
const FD_STEP: f64 = 1e-6;

/// A null hypothesis `m(θ) = 0` with `r = dim()` restrictions.
pub trait Hypothesis {
    fn dim(&self) -> usize;

    fn value(&self, theta: &ThetaParams) -> DVector<f64>;

    /// `M(θ) = ∂mᵀ/∂θ`, a `4 × r` matrix. Central differences by default.
    fn jacobian(&self, theta: &ThetaParams) -> DMatrix<f64> {
        finite_difference_jacobian(self, theta)
    }
}

pub fn finite_difference_jacobian<H: Hypothesis + ?Sized>(hyp: &H, theta: &ThetaParams) -> DMatrix<f64> {
    let base = theta.as_array();
    let mut jac = DMatrix::zeros(4, hyp.dim());
    for j in 0..4 {
        let h = FD_STEP * base[j].abs().max(f64::MIN_POSITIVE);
        let mut up = base;
        let mut down = base;
        up[j] += h;
        down[j] -= h;
        let diff = (hyp.value(&ThetaParams::from_array(up)) - hyp.value(&ThetaParams::from_array(down))) / (2.0 * h);
        jac.row_mut(j).copy_from(&diff.transpose());
    }
    jac
}

/// Linear restrictions `L θ = c`, so `m(θ) = Lθ − c` and `M = Lᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    /// `r × 4`
    pub matrix_l: DMatrix<f64>,
    pub offset_c: DVector<f64>,
}

impl LinearConstraint {
    pub fn new(matrix_l: DMatrix<f64>, offset_c: DVector<f64>) -> Result<Self> {
        let r = matrix_l.nrows();
        if matrix_l.ncols() != 4 {
            return Err(Error::invalid("constraint matrix must have 4 columns"));
        }
        if !(1..=4).contains(&r) {
            return Err(Error::invalid(format!("constraint must have between 1 and 4 rows, got {r}")));
        }
        if offset_c.len() != r {
            return Err(Error::invalid("constraint offset length must match the number of rows"));
        }
        if matrix_l.iter().chain(offset_c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("constraint entries must be finite"));
        }
        if rank(&matrix_l) < r {
            return Err(Error::invalid("constraint rows are linearly dependent"));
        }
        Ok(Self { matrix_l, offset_c })
    }

    /// `θ_j = value` for each `(j, value)`.
    pub fn fix_parameters(fixed: &[(usize, f64)]) -> Result<Self> {
        let mut l = DMatrix::zeros(fixed.len(), 4);
        let mut c = DVector::zeros(fixed.len());
        for (row, &(j, v)) in fixed.iter().enumerate() {
            if j >= 4 {
                return Err(Error::invalid(format!("parameter index {j} out of range")));
            }
            l[(row, j)] = 1.0;
            c[row] = v;
        }
        Self::new(l, c)
    }
}

impl Hypothesis for LinearConstraint {
    fn dim(&self) -> usize {
        self.matrix_l.nrows()
    }

    fn value(&self, theta: &ThetaParams) -> DVector<f64> {
        &self.matrix_l * DVector::from_column_slice(&theta.as_array()) - &self.offset_c
    }

    fn jacobian(&self, _theta: &ThetaParams) -> DMatrix<f64> {
        self.matrix_l.transpose()
    }
}

/// A general restriction given as a closure, with an optional analytic Jacobian.
pub struct FnHypothesis<F, J = fn(&ThetaParams) -> DMatrix<f64>> {
    dim: usize,
    value: F,
    jacobian: Option<J>,
}

impl<F> FnHypothesis<F>
where
    F: Fn(&ThetaParams) -> DVector<f64>,
{
    pub fn new(dim: usize, value: F) -> Self {
        Self { dim, value, jacobian: None }
    }
}

impl<F, J> FnHypothesis<F, J>
where
    F: Fn(&ThetaParams) -> DVector<f64>,
    J: Fn(&ThetaParams) -> DMatrix<f64>,
{
    pub fn with_jacobian(dim: usize, value: F, jacobian: J) -> Self {
        Self { dim, value, jacobian: Some(jacobian) }
    }
}

impl<F, J> Hypothesis for FnHypothesis<F, J>
where
    F: Fn(&ThetaParams) -> DVector<f64>,
    J: Fn(&ThetaParams) -> DMatrix<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &ThetaParams) -> DVector<f64> {
        (self.value)(theta)
    }

    fn jacobian(&self, theta: &ThetaParams) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(theta),
            None => finite_difference_jacobian(self, theta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub alpha: f64,
    /// Upper `α` point of `χ²_df`.
    pub critical_value: f64,
    pub reject: bool,
    /// Decisions at the conventional levels 0.01, 0.05 and 0.10.
    pub reject_at: Vec<(f64, bool)>,
}

fn chi_squared(df: usize) -> ChiSquared {
    ChiSquared::new(df as f64).expect("degrees of freedom are positive")
}

/// Upper `α` point of `χ²_df`.
pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    chi_squared(df).inverse_cdf(1.0 - alpha)
}

/// `P(χ²_df > x)`.
pub fn chi2_upper_tail(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        chi_squared(df).sf(x)
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("significance level must lie in (0, 1), got {alpha}")))
    }
}

fn check_dims<H: Hypothesis + ?Sized>(hyp: &H, theta: &ThetaParams) -> Result<DMatrix<f64>> {
    let r = hyp.dim();
    if !(1..=4).contains(&r) {
        return Err(Error::invalid(format!("hypothesis must have between 1 and 4 restrictions, got {r}")));
    }
    let m = hyp.jacobian(theta);
    if m.nrows() != 4 || m.ncols() != r {
        return Err(Error::invalid("hypothesis Jacobian must be 4 × r"));
    }
    if rank(&m) < r {
        return Err(Error::invalid("hypothesis Jacobian is rank deficient"));
    }
    Ok(m)
}

/// `m ᵀ (Mᵀ C M)⁻¹ m` together with `Q⁻¹ m`.
fn quadratic_form(m_val: &DVector<f64>, jac: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let q = jac.transpose() * cov * jac;
    let q_inv = symmetric_inverse(&q)?;
    let q_inv_m = &q_inv * m_val;
    Ok((m_val.dot(&q_inv_m), q_inv_m))
}

pub fn wald_test<H: Hypothesis + ?Sized>(fit: &FitResult, plan: &TestPlan, hyp: &H, alpha: f64) -> Result<WaldResult> {
    check_alpha(alpha)?;
    if !fit.converged {
        return Err(Error::invalid("Wald test requires a converged fit"));
    }
    let theta = &fit.theta_hat;
    let jac = check_dims(hyp, theta)?;
    let cov = match fit.covariance {
        Some(c) => c,
        None => covariance(&sandwich(plan, theta, fit.beta)?, plan.total_devices())?,
    };
    let (statistic, _) = quadratic_form(&hyp.value(theta), &jac, &to_dynamic(&cov))?;
    let statistic = statistic.max(0.0);
    let df = hyp.dim();
    let critical_value = chi2_critical(df, alpha);
    Ok(WaldResult {
        statistic,
        df,
        p_value: chi2_upper_tail(df, statistic),
        alpha,
        critical_value,
        reject: statistic > critical_value,
        reject_at: [0.01, 0.05, 0.10].map(|a| (a, statistic > chi2_critical(df, a))).to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub approx_power: f64,
    /// `ℓ_β(θ*, θ*) = m(θ*)ᵀ (Mᵀ Σ_β M)⁻¹ m(θ*)`
    pub ell_value: f64,
    /// `σ_{W,β}(θ*)`
    pub sigma_w: f64,
    pub total_devices: u64,
}

struct PowerInputs {
    ell: f64,
    sigma2: f64,
    critical: f64,
}

fn power_inputs<H: Hypothesis + ?Sized>(
    theta_star: &ThetaParams,
    plan: &TestPlan,
    hyp: &H,
    beta: Beta,
    alpha: f64,
) -> Result<PowerInputs> {
    check_alpha(alpha)?;
    theta_star.validate()?;
    let jac = check_dims(hyp, theta_star)?;
    let sigma = to_dynamic(&asymptotic_covariance(&sandwich(plan, theta_star, beta)?)?);
    let (ell, q_inv_m) = quadratic_form(&hyp.value(theta_star), &jac, &sigma)?;
    let dell = &jac * q_inv_m * 2.0;
    let sigma2 = dell.dot(&(&sigma * &dell));
    if !(ell > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::DegenerateAlternative { ell, sigma2 });
    }
    Ok(PowerInputs { ell, sigma2, critical: chi2_critical(hyp.dim(), alpha) })
}

/// Normal approximation to the power of the level-`α` Wald test when the
/// true parameter is `theta_star`, for the devices in `plan`.
pub fn power_approx<H: Hypothesis + ?Sized>(
    theta_star: &ThetaParams,
    plan: &TestPlan,
    hyp: &H,
    beta: Beta,
    alpha: f64,
) -> Result<PowerResult> {
    let inputs = power_inputs(theta_star, plan, hyp, beta, alpha)?;
    let total_devices = plan.total_devices();
    let k = total_devices as f64;
    let sigma_w = inputs.sigma2.sqrt();
    let z = (inputs.critical / k.sqrt() - k.sqrt() * inputs.ell) / sigma_w;
    Ok(PowerResult { approx_power: standard_normal().sf(z), ell_value: inputs.ell, sigma_w, total_devices })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    /// `⌊K*⌋ + 1`
    pub total: u64,
    /// The unrounded root `K*` of the power equation.
    pub k_star: f64,
    /// `total` split across conditions in proportion to the plan's weights.
    pub allocation: Vec<u64>,
}

impl SampleSize {
    /// `shape` with its device counts replaced by the allocation.
    pub fn plan(&self, shape: &TestPlan) -> TestPlan {
        TestPlan {
            conditions: shape
                .conditions
                .iter()
                .zip(&self.allocation)
                .map(|(c, &devices)| crate::model::TestCondition { devices, ..*c })
                .collect(),
        }
    }
}

/// `shape` rescaled to `total` devices, split by largest remainder.
pub fn allocate_plan(shape: &TestPlan, total: u64) -> TestPlan {
    let allocation = allocate(total, &shape.weights());
    SampleSize { total, k_star: total as f64, allocation }.plan(shape)
}

/// Largest-remainder split of `total` proportional to `weights`.
fn allocate(total: u64, weights: &[f64]) -> Vec<u64> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut alloc: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let mut short = total - alloc.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order.into_iter().cycle() {
        if short == 0 {
            break;
        }
        alloc[i] += 1;
        short -= 1;
    }
    alloc
}

/// Smallest total sample size whose approximate power reaches `target_power`.
///
/// Only the relative device counts of `plan_shape` matter. For targets below
/// one half the smaller root of the power equation is the one that solves it.
pub fn required_sample_size<H: Hypothesis + ?Sized>(
    theta_star: &ThetaParams,
    plan_shape: &TestPlan,
    hyp: &H,
    beta: Beta,
    alpha: f64,
    target_power: f64,
) -> Result<SampleSize> {
    if !(target_power > 0.0 && target_power < 1.0) {
        return Err(Error::invalid(format!("target power must lie in (0, 1), got {target_power}")));
    }
    let inputs = power_inputs(theta_star, plan_shape, hyp, beta, alpha)?;
    let quantile = standard_normal().inverse_cdf(1.0 - target_power);
    let a = inputs.sigma2 * quantile * quantile;
    let b = 2.0 * inputs.ell * inputs.critical;
    let root = (a * (a + 2.0 * b)).sqrt();
    let k_star = if target_power >= 0.5 { a + b + root } else { a + b - root } / (2.0 * inputs.ell * inputs.ell);
    if !(k_star.is_finite()) || k_star >= 1e18 {
        return Err(Error::invalid(format!("required sample size {k_star:e} is not representable")));
    }
    let total = k_star.floor() as u64 + 1;
    Ok(SampleSize { total, k_star, allocation: allocate(total, &plan_shape.weights()) })
}
