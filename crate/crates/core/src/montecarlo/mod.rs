//! Seeded simulation studies with outlying-cell contamination.
//!
//! Each replication draws its counts from a ChaCha stream selected by
//! `(seed, replication index)`, so results do not depend on how replications
//! are scheduled across threads. Contaminated conditions draw from the
//! probabilities of a perturbed parameter vector instead of the true one.

pub mod presets;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{Beta, CountsRow, CountsTable};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::inference::{wald_test, Hypothesis};
use crate::model::{cell_probs, CellProbs, TestCondition, TestPlan, ThetaParams};

/// Conditions whose data come from `theta` rather than the true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub cells: Vec<usize>,
    pub theta: ThetaParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub plan: TestPlan,
    pub true_theta: ThetaParams,
    pub contamination: Option<Contamination>,
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.true_theta.validate()?;
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if let Some(c) = &self.contamination {
            c.theta.validate()?;
            if let Some(bad) = c.cells.iter().find(|&&i| i >= self.plan.len()) {
                return Err(Error::invalid(format!(
                    "contaminated cell {bad} is outside the plan ({} conditions)",
                    self.plan.len()
                )));
            }
        }
        Ok(())
    }

    /// Probabilities each condition's counts are drawn from.
    pub fn generating_probs(&self) -> Result<Vec<CellProbs>> {
        self.plan
            .conditions
            .iter()
            .enumerate()
            .map(|(i, cond)| {
                let theta = match &self.contamination {
                    Some(c) if c.cells.contains(&i) => &c.theta,
                    _ => &self.true_theta,
                };
                cell_probs(theta, cond)
            })
            .collect()
    }
}

/// Random stream for one replication.
pub fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Multinomial draw of `K_i` devices as two conditional binomials: survivors
/// first, then cause 1 among the failures.
pub fn generate_counts<R: Rng + ?Sized>(cond: &TestCondition, probs: &CellProbs, rng: &mut R) -> CountsRow {
    let k = cond.devices;
    let n0 = draw_binomial(k, probs.p_survive, rng);
    let failed_mass = probs.p_cause1 + probs.p_cause2;
    let share1 = if failed_mass > 0.0 { probs.p_cause1 / failed_mass } else { 0.5 };
    let n1 = draw_binomial(k - n0, share1, rng);
    CountsRow::new(n0, n1, k - n0 - n1)
}

fn draw_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    let p = p.clamp(0.0, 1.0);
    if n == 0 || p == 0.0 {
        0
    } else if p == 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("probability in [0, 1]").sample(rng)
    }
}

/// Counts for one replication of a scenario.
pub fn simulate_counts(spec: &ScenarioSpec, probs: &[CellProbs], replication: usize) -> CountsTable {
    let mut rng = replication_rng(spec.seed, replication);
    CountsTable::new(
        spec.plan
            .conditions
            .iter()
            .zip(probs)
            .map(|(cond, p)| generate_counts(cond, p, &mut rng))
            .collect(),
    )
}

/// Estimator errors against the true parameters over the converged replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub beta: f64,
    pub replications: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    pub rmse: [f64; 4],
    pub mae: [f64; 4],
    pub mbe: [f64; 4],
    /// `sqrt(mean ‖θ̂ − θ‖²)`
    pub rmse_aggregate: f64,
    /// `mean Σ_j |θ̂_j − θ_j|`
    pub mae_aggregate: f64,
    /// `mean Σ_j (θ̂_j − θ_j)`
    pub mbe_aggregate: f64,
}

impl ErrorSummary {
    fn from_estimates(beta: f64, truth: &ThetaParams, estimates: &[Option<ThetaParams>]) -> Self {
        let t = truth.as_array();
        let mut sq = [0.0; 4];
        let mut abs = [0.0; 4];
        let mut bias = [0.0; 4];
        let mut n = 0usize;
        for est in estimates.iter().flatten() {
            let e = est.as_array();
            for j in 0..4 {
                let d = e[j] - t[j];
                sq[j] += d * d;
                abs[j] += d.abs();
                bias[j] += d;
            }
            n += 1;
        }
        let denom = n.max(1) as f64;
        let nan_if_empty = |v: f64| if n == 0 { f64::NAN } else { v };
        let rmse = sq.map(|s| nan_if_empty((s / denom).sqrt()));
        let mae = abs.map(|s| nan_if_empty(s / denom));
        let mbe = bias.map(|s| nan_if_empty(s / denom));
        Self {
            beta,
            replications: estimates.len(),
            converged: n,
            convergence_rate: n as f64 / estimates.len().max(1) as f64,
            rmse,
            mae,
            mbe,
            rmse_aggregate: nan_if_empty((sq.iter().sum::<f64>() / denom).sqrt()),
            mae_aggregate: nan_if_empty(abs.iter().sum::<f64>() / denom),
            mbe_aggregate: nan_if_empty(bias.iter().sum::<f64>() / denom),
        }
    }
}

fn fit_or_none(plan: &TestPlan, counts: &CountsTable, config: &FitConfig) -> Option<crate::estimation::FitResult> {
    match fit(plan, counts, config) {
        Ok(res) if res.converged => Some(res),
        Ok(_) => None,
        Err(e) => {
            debug!("replication fit failed at β = {}: {e}", config.beta);
            None
        }
    }
}

fn parse_betas(betas: &[f64]) -> Result<Vec<Beta>> {
    if betas.is_empty() {
        return Err(Error::invalid("no β values given"));
    }
    betas.iter().map(|&b| Beta::new(b)).collect()
}

/// Fits every `β` on every replication and summarizes the estimation errors.
pub fn run_efficiency_study(spec: &ScenarioSpec, betas: &[f64], fit_config: &FitConfig) -> Result<Vec<ErrorSummary>> {
    spec.validate()?;
    let betas = parse_betas(betas)?;
    let probs = spec.generating_probs()?;
    let per_rep: Vec<Vec<Option<ThetaParams>>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let counts = simulate_counts(spec, &probs, rep);
            betas
                .iter()
                .map(|&beta| {
                    let config = FitConfig { beta, ..fit_config.clone() };
                    fit_or_none(&spec.plan, &counts, &config).map(|r| r.theta_hat)
                })
                .collect()
        })
        .collect();
    Ok(betas
        .iter()
        .enumerate()
        .map(|(j, beta)| {
            let estimates: Vec<_> = per_rep.iter().map(|row| row[j]).collect();
            ErrorSummary::from_estimates(beta.value(), &spec.true_theta, &estimates)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPowerSummary {
    pub beta: f64,
    pub alpha: f64,
    /// Replications where the test could be computed.
    pub valid: usize,
    pub rejections: usize,
    /// Share of valid replications rejecting: the empirical level under the
    /// null, the empirical power otherwise.
    pub proportion: f64,
}

/// Empirical rejection rate of the Wald-type test for each `β`.
pub fn run_level_power_study<H: Hypothesis + Sync + ?Sized>(
    spec: &ScenarioSpec,
    hypothesis: &H,
    betas: &[f64],
    alpha: f64,
    fit_config: &FitConfig,
) -> Result<Vec<LevelPowerSummary>> {
    spec.validate()?;
    let betas = parse_betas(betas)?;
    let probs = spec.generating_probs()?;
    let per_rep: Vec<Vec<Option<bool>>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let counts = simulate_counts(spec, &probs, rep);
            betas
                .iter()
                .map(|&beta| {
                    let config = FitConfig { beta, ..fit_config.clone() };
                    let res = fit_or_none(&spec.plan, &counts, &config)?;
                    wald_test(&res, &spec.plan, hypothesis, alpha).ok().map(|w| w.reject)
                })
                .collect()
        })
        .collect();
    Ok(betas
        .iter()
        .enumerate()
        .map(|(j, beta)| {
            let decisions: Vec<bool> = per_rep.iter().filter_map(|row| row[j]).collect();
            let rejections = decisions.iter().filter(|&&d| d).count();
            LevelPowerSummary {
                beta: beta.value(),
                alpha,
                valid: decisions.len(),
                rejections,
                proportion: if decisions.is_empty() { f64::NAN } else { rejections as f64 / decisions.len() as f64 },
            }
        })
        .collect())
}

/// Wald p-values at `fit_config.beta`, one per replication whose fit and test
/// succeeded, in replication order.
pub fn wald_p_values<H: Hypothesis + Sync + ?Sized>(spec: &ScenarioSpec, hypothesis: &H, fit_config: &FitConfig) -> Result<Vec<f64>> {
    spec.validate()?;
    let probs = spec.generating_probs()?;
    let p: Vec<Option<f64>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let counts = simulate_counts(spec, &probs, rep);
            let res = fit_or_none(&spec.plan, &counts, fit_config)?;
            wald_test(&res, &spec.plan, hypothesis, 0.05).ok().map(|w| w.p_value)
        })
        .collect();
    Ok(p.into_iter().flatten().collect())
}

/// One contamination sweep: parameter `parameter` of the contaminated cells
/// takes each of `values` in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub parameter: usize,
    pub values: Vec<f64>,
    /// Indexed `[value][β]`.
    pub summaries: Vec<Vec<ErrorSummary>>,
}

/// Sweeps contamination of `cells` one parameter at a time. Every sweep point
/// reuses `base.seed`, so the sweeps share their random numbers.
pub fn run_contamination_sweeps(
    base: &ScenarioSpec,
    cells: &[usize],
    sweeps: &[(usize, Vec<f64>)],
    betas: &[f64],
    fit_config: &FitConfig,
) -> Result<Vec<SweepSummary>> {
    sweeps
        .iter()
        .map(|(parameter, values)| {
            if *parameter >= 4 {
                return Err(Error::invalid(format!("parameter index {parameter} out of range")));
            }
            let summaries = values
                .iter()
                .map(|&v| {
                    let mut theta = base.true_theta.as_array();
                    theta[*parameter] = v;
                    let spec = ScenarioSpec {
                        contamination: Some(Contamination { cells: cells.to_vec(), theta: ThetaParams::new(theta[0], theta[1], theta[2], theta[3])? }),
                        ..base.clone()
                    };
                    run_efficiency_study(&spec, betas, fit_config)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepSummary { parameter: *parameter, values: values.clone(), summaries })
        })
        .collect()
}

/// The unbalanced accelerated-life-test study: the 12-condition plan with
/// condition 0 contaminated, one parameter swept at a time.
pub fn run_unbalanced_study(betas: &[f64], replications: usize, seed: u64, fit_config: &FitConfig) -> Result<Vec<SweepSummary>> {
    let base = presets::unbalanced_alt(replications, seed);
    run_contamination_sweeps(&base, &[0], &presets::unbalanced_sweeps(), betas, fit_config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities() {
        let cond = TestCondition::new(1.0, 1.0, 37).unwrap();
        let probs = CellProbs { p_survive: 1.0, p_cause1: 0.0, p_cause2: 0.0 };
        let mut rng = replication_rng(1, 0);
        for _ in 0..50 {
            assert_eq!(generate_counts(&cond, &probs, &mut rng), CountsRow::new(37, 0, 0));
        }
    }

    #[test]
    fn cause_share_matches_probability() {
        let cond = TestCondition::new(1.0, 1.0, 20).unwrap();
        let probs = CellProbs { p_survive: 0.6, p_cause1: 0.3, p_cause2: 0.1 };
        let mut rng = replication_rng(7, 3);
        let draws = 10_000;
        let mean: f64 = (0..draws).map(|_| generate_counts(&cond, &probs, &mut rng).n_cause1 / 20.0).sum::<f64>() / draws as f64;
        let se = (0.3f64 * 0.7 / 20.0 / draws as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn same_seed_same_counts() {
        let spec = presets::reliability(presets::Reliability::Moderate, 50, false, 3, 11);
        let probs = spec.generating_probs().unwrap();
        assert_eq!(simulate_counts(&spec, &probs, 2), simulate_counts(&spec, &probs, 2));
        assert_ne!(simulate_counts(&spec, &probs, 1), simulate_counts(&spec, &probs, 2));
        for row in simulate_counts(&spec, &probs, 0).rows {
            assert_eq!(row.total(), 50.0);
        }
    }

    #[test]
    fn contamination_outside_plan_rejected() {
        let mut spec = presets::reliability(presets::Reliability::Low, 10, true, 1, 0);
        spec.contamination.as_mut().unwrap().cells = vec![12];
        assert!(spec.validate().is_err());
        spec.contamination = None;
        spec.replications = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn summary_invariants() {
        let truth = ThetaParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let ests = vec![
            Some(ThetaParams::from_array([1.5, 0.8, 1.0, 1.2])),
            None,
            Some(ThetaParams::from_array([0.9, 0.7, 1.3, 1.1])),
        ];
        let s = ErrorSummary::from_estimates(0.0, &truth, &ests);
        assert_eq!(s.converged, 2);
        for j in 0..4 {
            assert!(s.rmse[j] >= s.mae[j] - 1e-15);
            assert!(s.mbe[j].abs() <= s.mae[j] + 1e-15);
        }
        assert!((s.mbe[0] - 0.2).abs() < 1e-12);
    }
}
