use oneshot_dpd::divergence::{log_likelihood, objective, Beta, CountsTable};
use oneshot_dpd::estimation::{fit, FitConfig};
use oneshot_dpd::fixtures;
use oneshot_dpd::model::{TestPlan, ThetaParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn beta(b: f64) -> Beta {
    Beta::new(b).unwrap()
}

#[test]
fn condition_order_does_not_matter() {
    let (plan, counts) = fixtures::bdc();
    let order = [4, 1, 5, 0, 3, 2];
    let plan2 = TestPlan::new(order.iter().map(|&i| plan.conditions[i]).collect()).unwrap();
    let counts2 = CountsTable::new(order.iter().map(|&i| counts.rows[i]).collect());
    for b in [0.0, 0.3] {
        let a = fit(&plan, &counts, &FitConfig::new(beta(b))).unwrap();
        let c = fit(&plan2, &counts2, &FitConfig::new(beta(b))).unwrap();
        for (x, y) in a.theta_hat.as_array().iter().zip(c.theta_hat.as_array()) {
            assert!((x - y).abs() <= 1e-6 * x.abs(), "β = {b}: {x} vs {y}");
        }
    }
}

#[test]
fn mle_maximizes_likelihood() {
    let (plan, counts) = fixtures::bdc();
    let res = fit(&plan, &counts, &FitConfig::new(Beta::MLE)).unwrap();
    let best = log_likelihood(&plan, &counts, &res.theta_hat).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let centre = res.theta_hat.as_array();
    for _ in 0..1000 {
        let t = centre.map(|v| v * (1.0 + rng.random_range(-0.05..0.05)));
        let ll = log_likelihood(&plan, &counts, &ThetaParams::from_array(t)).unwrap();
        assert!(ll <= best + 1e-9, "{ll} > {best} at {t:?}");
    }
}

#[test]
fn small_beta_approaches_mle() {
    let (plan, counts) = fixtures::bdc();
    let mle = fit(&plan, &counts, &FitConfig::new(Beta::MLE)).unwrap().theta_hat.as_array();
    let near = fit(&plan, &counts, &FitConfig::new(beta(1e-4))).unwrap().theta_hat.as_array();
    for j in 0..4 {
        assert!((near[j] - mle[j]).abs() <= 1e-2 * mle[j], "component {j}: {} vs {}", near[j], mle[j]);
    }
}

#[test]
fn warm_start_reaches_cold_start_objective() {
    let (plan, counts) = fixtures::bdc();
    for b in [0.1, 0.5, 0.8] {
        let cold = fit(&plan, &counts, &FitConfig::new(beta(b))).unwrap();
        let warm_from = fit(&plan, &counts, &FitConfig::new(beta(b - 0.05))).unwrap().theta_hat;
        let warm = fit(&plan, &counts, &FitConfig::new(beta(b)).with_start(warm_from).with_multi_start(1)).unwrap();
        assert!(warm.converged && cold.converged);
        assert!(warm.objective <= cold.objective + 1e-9, "β = {b}: warm {} cold {}", warm.objective, cold.objective);
    }
}

#[test]
fn converged_fits_are_stationary() {
    let (plan, counts) = fixtures::bdc();
    for b in [0.0, 0.2, 0.5, 1.0] {
        let res = fit(&plan, &counts, &FitConfig::new(beta(b))).unwrap();
        assert!(res.converged);
        assert!(res.gradient_norm <= 1e-8);
        let value = objective(&plan, &counts, &res.theta_hat, beta(b)).unwrap();
        for cand in &res.local_optima {
            assert!(value <= objective(&plan, &counts, &cand.theta, beta(b)).unwrap() + 1e-12);
        }
    }
}

#[test]
fn fits_are_repeatable() {
    let (plan, counts) = fixtures::bdc();
    let a = fit(&plan, &counts, &FitConfig::new(beta(0.4))).unwrap();
    let b = fit(&plan, &counts, &FitConfig::new(beta(0.4))).unwrap();
    assert_eq!(a, b);
}
