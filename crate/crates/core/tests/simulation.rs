use oneshot_dpd::divergence::Beta;
use oneshot_dpd::estimation::FitConfig;
use oneshot_dpd::montecarlo::presets::{self, Reliability, DEFAULT_SEED};
use oneshot_dpd::montecarlo::{run_contamination_sweeps, run_efficiency_study, Contamination};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn identical_across_thread_counts() {
    let spec = presets::reliability(Reliability::Moderate, 50, true, 40, DEFAULT_SEED);
    let config = FitConfig::new(Beta::MLE);
    let one = in_pool(1, || run_efficiency_study(&spec, &[0.0, 0.5], &config).unwrap());
    let four = in_pool(4, || run_efficiency_study(&spec, &[0.0, 0.5], &config).unwrap());
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
}

#[test]
fn trivial_contamination_matches_pure_data() {
    let pure = presets::reliability(Reliability::Low, 50, false, 30, 5);
    let trivial = presets::reliability(Reliability::Low, 50, false, 30, 5);
    let trivial = oneshot_dpd::montecarlo::ScenarioSpec {
        contamination: Some(Contamination { cells: vec![0], theta: pure.true_theta }),
        ..trivial
    };
    let config = FitConfig::new(Beta::MLE);
    assert_eq!(
        run_efficiency_study(&pure, &[0.0, 0.3], &config).unwrap(),
        run_efficiency_study(&trivial, &[0.0, 0.3], &config).unwrap()
    );
}

#[test]
fn summaries_are_consistent() {
    let spec = presets::reliability(Reliability::High, 100, true, 50, 3);
    for s in run_efficiency_study(&spec, &[0.0, 0.4, 1.0], &FitConfig::new(Beta::MLE)).unwrap() {
        assert!(s.convergence_rate > 0.9);
        for j in 0..4 {
            assert!(s.rmse[j].is_finite());
            assert!(s.rmse[j] >= s.mbe[j].abs());
            assert!(s.mbe[j].abs() <= s.mae[j] + 1e-15);
        }
    }
}

#[test]
fn sweep_starts_at_pure_data() {
    let base = presets::unbalanced_alt(30, 8);
    let config = FitConfig::new(Beta::MLE);
    let pure = run_efficiency_study(&base, &[0.0, 0.6], &config).unwrap();
    let sweeps = vec![(3, vec![0.08, 0.15])];
    let out = run_contamination_sweeps(&base, &[0], &sweeps, &[0.0, 0.6], &config).unwrap();
    assert_eq!(out[0].summaries[0], pure);
}

fn theta21_null() -> oneshot_dpd::inference::LinearConstraint {
    oneshot_dpd::inference::LinearConstraint::fix_parameters(&[(3, presets::WALD_NULL_THETA21)]).unwrap()
}

#[test]
fn null_p_values_are_near_uniform() {
    use oneshot_dpd::montecarlo::{wald_p_values, ScenarioSpec};
    let spec = ScenarioSpec {
        true_theta: presets::wald_level_theta(),
        ..presets::reliability(Reliability::Moderate, 200, false, 500, DEFAULT_SEED)
    };
    let mut p = wald_p_values(&spec, &theta21_null(), &FitConfig::new(Beta::MLE)).unwrap();
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let ks = p
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max);
    assert!(p.len() >= 490);
    assert!(ks <= 0.1, "Kolmogorov-Smirnov distance {ks}");
}

#[test]
fn contaminated_null_level_ordering() {
    let theta = presets::wald_level_theta();
    let spec = oneshot_dpd::montecarlo::ScenarioSpec {
        true_theta: theta,
        contamination: Some(Contamination { cells: vec![0], theta: presets::contaminated(&theta) }),
        ..presets::reliability(Reliability::Moderate, 200, false, 500, DEFAULT_SEED)
    };
    let levels = oneshot_dpd::montecarlo::run_level_power_study(&spec, &theta21_null(), &[0.0, 0.4], 0.05, &FitConfig::new(Beta::MLE)).unwrap();
    let gap = |i: usize| (levels[i].proportion - 0.05).abs();
    assert!(gap(1) <= gap(0), "levels {} and {}", levels[0].proportion, levels[1].proportion);
}

#[test]
fn unbalanced_sweeps_grow_with_contamination() {
    let base = presets::unbalanced_alt(500, DEFAULT_SEED);
    let betas = [0.0, 0.6];
    let out = run_contamination_sweeps(&base, &[0], &presets::unbalanced_sweeps(), &betas, &FitConfig::new(Beta::MLE)).unwrap();
    for sweep in &out {
        for b in 0..betas.len() {
            let rmse: Vec<f64> = sweep.summaries.iter().map(|s| s[b].rmse_aggregate).collect();
            let median: Vec<f64> = rmse
                .windows(3)
                .map(|w| {
                    let mut w = w.to_vec();
                    w.sort_by(f64::total_cmp);
                    w[1]
                })
                .collect();
            let drops = median.windows(2).filter(|w| w[1] < w[0]).count();
            assert!(drops <= 1, "parameter {} β = {}: {rmse:?}", sweep.parameter, betas[b]);
        }
    }
    let theta21 = out.iter().find(|s| s.parameter == 3).unwrap();
    let last = theta21.summaries.last().unwrap();
    assert!(last[0].rmse_aggregate > last[1].rmse_aggregate);
}
