use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use oneshot_dpd::divergence::Beta;
use oneshot_dpd::estimation::FitConfig;
use oneshot_dpd::inference::LinearConstraint;
use oneshot_dpd::montecarlo::presets::{self, Reliability};
use oneshot_dpd::montecarlo::{
    run_contamination_sweeps, run_efficiency_study, run_level_power_study, Contamination, ErrorSummary,
    LevelPowerSummary, ScenarioSpec,
};
use oneshot_dpd::model::{TestPlan, ThetaParams};
use serde::{Deserialize, Serialize};

use super::{num, Output, SolverArgs};
use crate::constraint::parse_constraint;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    LowReliability,
    ModerateReliability,
    HighReliability,
    UnbalancedAlt,
    WaldLevel,
    WaldPower,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "scenario", conflicts_with = "scenario")]
    pub preset: Option<Preset>,
    /// JSON scenario file
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
    pub betas: Vec<f64>,
    /// Replications per scenario [default: 500, or 5000 with --full]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Run the full 5000-replication studies
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Devices per condition for the balanced presets
    #[arg(long, value_delimiter = ',')]
    pub sample_sizes: Vec<u64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// Contents of a `--scenario` file. With `test` set the study reports
/// rejection rates, otherwise estimation errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenario: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestSpec {
    pub constraint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEcho {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Everything needed to rerun a study, written next to its results.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationEcho {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub study: String,
    pub true_theta: ThetaParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contamination: Option<Contamination>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inspection_times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stresses: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_sizes: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<TestPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<Vec<SweepEcho>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_hypothesis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub betas: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub out: PathBuf,
    pub files: Vec<String>,
    pub config: SimulationEcho,
}

const ERROR_COLUMNS: [&str; 19] = [
    "beta",
    "replications",
    "converged",
    "convergence_rate",
    "rmse",
    "mae",
    "mbe",
    "rmse_theta10",
    "rmse_theta11",
    "rmse_theta20",
    "rmse_theta21",
    "mae_theta10",
    "mae_theta11",
    "mae_theta20",
    "mae_theta21",
    "mbe_theta10",
    "mbe_theta11",
    "mbe_theta20",
    "mbe_theta21",
];

fn error_fields(s: &ErrorSummary) -> Vec<String> {
    let mut v = vec![
        s.beta.to_string(),
        s.replications.to_string(),
        s.converged.to_string(),
        s.convergence_rate.to_string(),
        s.rmse_aggregate.to_string(),
        s.mae_aggregate.to_string(),
        s.mbe_aggregate.to_string(),
    ];
    for arr in [&s.rmse, &s.mae, &s.mbe] {
        v.extend(arr.iter().map(f64::to_string));
    }
    v
}

const WALD_COLUMNS: [&str; 5] = ["beta", "alpha", "valid", "rejections", "proportion"];

fn wald_fields(s: &LevelPowerSummary) -> Vec<String> {
    vec![s.beta.to_string(), s.alpha.to_string(), s.valid.to_string(), s.rejections.to_string(), s.proportion.to_string()]
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(keys: &[&str], metrics: &[&str]) -> Self {
        Self { header: keys.iter().chain(metrics).map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, keys: Vec<String>, metrics: Vec<String>) {
        self.rows.push(keys.into_iter().chain(metrics).collect());
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| CliError::Parse(format!("{}: {e}", path.display()));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn data_label(contaminated: bool) -> String {
    if contaminated { "contaminated" } else { "pure" }.to_string()
}

fn reliability(preset: Preset) -> Option<Reliability> {
    match preset {
        Preset::LowReliability => Some(Reliability::Low),
        Preset::ModerateReliability => Some(Reliability::Moderate),
        Preset::HighReliability => Some(Reliability::High),
        _ => None,
    }
}

struct Study {
    echo: SimulationEcho,
    file: &'static str,
    table: Table,
    summary: String,
}

pub fn run(args: &SimulateArgs) -> Result<Output> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Validation(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    for &b in &args.betas {
        Beta::new(b)?;
    }
    if args.reps == Some(0) {
        return Err(CliError::Validation("--reps must be at least 1".into()));
    }
    let fit = args.solver.config(Beta::MLE);
    fit.validate()?;
    let study = match (args.preset, &args.scenario) {
        (Some(preset), _) => run_preset(preset, args, &fit)?,
        (None, Some(path)) => run_scenario(path, args, &fit)?,
        (None, None) => return Err(CliError::Parse("give --preset or --scenario".into())),
    };
    fs::create_dir_all(&args.out)?;
    study.table.write(&args.out.join(study.file))?;
    let config = serde_json::to_string_pretty(&study.echo).map_err(|e| CliError::Numerical(e.to_string()))?;
    fs::write(args.out.join("config.json"), config + "\n")?;
    let report = SimulateReport {
        out: args.out.clone(),
        files: vec![study.file.to_string(), "config.json".to_string()],
        config: study.echo,
    };
    let mut text = study.summary;
    writeln!(text, "\nwrote {} and config.json to {}", study.file, args.out.display()).unwrap();
    Output::new(&report, text)
}

fn replications(args: &SimulateArgs) -> usize {
    args.reps.unwrap_or(if args.full { presets::FULL_REPLICATIONS } else { presets::DEFAULT_REPLICATIONS })
}

fn sample_sizes(args: &SimulateArgs) -> Result<Vec<u64>> {
    if args.sample_sizes.contains(&0) {
        return Err(CliError::Validation("sample sizes must be positive".into()));
    }
    Ok(if args.sample_sizes.is_empty() { presets::SAMPLE_SIZES.to_vec() } else { args.sample_sizes.clone() })
}

fn run_preset(preset: Preset, args: &SimulateArgs, fit: &FitConfig) -> Result<Study> {
    let reps = replications(args);
    let seed = args.seed.unwrap_or(presets::DEFAULT_SEED);
    let moderate = Reliability::Moderate;
    let echo = |study: &str, theta: ThetaParams| SimulationEcho {
        preset: Some(preset),
        study: study.to_string(),
        true_theta: theta,
        contamination: None,
        inspection_times: None,
        stresses: None,
        sample_sizes: None,
        plan: None,
        sweeps: None,
        null_hypothesis: None,
        alpha: None,
        betas: args.betas.clone(),
        replications: reps,
        seed,
        fit: fit.clone(),
    };
    let mut summary = String::new();
    match preset {
        Preset::LowReliability | Preset::ModerateReliability | Preset::HighReliability => {
            let level = reliability(preset).expect("reliability preset");
            let sizes = sample_sizes(args)?;
            let mut table = Table::new(&["data", "k_i"], &ERROR_COLUMNS);
            writeln!(summary, "{:<13} {:>6} {:>6} {:>12}", "data", "K_i", "beta", "rmse").unwrap();
            for contaminate in [false, true] {
                for &k in &sizes {
                    let spec = presets::reliability(level, k, contaminate, reps, seed);
                    for s in run_efficiency_study(&spec, &args.betas, fit)? {
                        writeln!(summary, "{:<13} {k:>6} {:>6} {:>12}", data_label(contaminate), s.beta, num(s.rmse_aggregate))
                            .unwrap();
                        table.push(vec![data_label(contaminate), k.to_string()], error_fields(&s));
                    }
                }
            }
            let theta = level.theta();
            let mut e = echo("efficiency", theta);
            e.contamination = Some(Contamination { cells: vec![0], theta: presets::contaminated(&theta) });
            e.inspection_times = Some(level.inspection_times().to_vec());
            e.stresses = Some(presets::BALANCED_STRESSES.to_vec());
            e.sample_sizes = Some(sizes);
            Ok(Study { echo: e, file: "efficiency.csv", table, summary })
        }
        Preset::WaldLevel | Preset::WaldPower => {
            let (theta, study) = if preset == Preset::WaldLevel {
                (presets::wald_level_theta(), "level")
            } else {
                (presets::wald_power_theta(), "power")
            };
            let null = format!("theta21={}", presets::WALD_NULL_THETA21);
            let hyp = parse_constraint(&null)?;
            let sizes = sample_sizes(args)?;
            let mut table = Table::new(&["data", "k_i"], &WALD_COLUMNS);
            writeln!(summary, "{:<13} {:>6} {:>6} {:>10}", "data", "K_i", "beta", study).unwrap();
            for contaminate in [false, true] {
                for &k in &sizes {
                    let spec = ScenarioSpec {
                        true_theta: theta,
                        contamination: contaminate
                            .then(|| Contamination { cells: vec![0], theta: presets::contaminated(&theta) }),
                        ..presets::reliability(moderate, k, false, reps, seed)
                    };
                    for s in run_level_power_study(&spec, &hyp, &args.betas, args.alpha, fit)? {
                        writeln!(summary, "{:<13} {k:>6} {:>6} {:>10.4}", data_label(contaminate), s.beta, s.proportion)
                            .unwrap();
                        table.push(vec![data_label(contaminate), k.to_string()], wald_fields(&s));
                    }
                }
            }
            let mut e = echo(study, theta);
            e.contamination = Some(Contamination { cells: vec![0], theta: presets::contaminated(&theta) });
            e.inspection_times = Some(moderate.inspection_times().to_vec());
            e.stresses = Some(presets::BALANCED_STRESSES.to_vec());
            e.sample_sizes = Some(sizes);
            e.null_hypothesis = Some(null);
            e.alpha = Some(args.alpha);
            Ok(Study { echo: e, file: "wald.csv", table, summary })
        }
        Preset::UnbalancedAlt => {
            let base = presets::unbalanced_alt(reps, seed);
            let sweeps = presets::unbalanced_sweeps();
            let results = run_contamination_sweeps(&base, &[0], &sweeps, &args.betas, fit)?;
            let mut table = Table::new(&["parameter", "value"], &ERROR_COLUMNS);
            writeln!(summary, "{:<9} {:>10} {:>6} {:>12}", "parameter", "value", "beta", "rmse").unwrap();
            for sweep in &results {
                let name = ThetaParams::NAMES[sweep.parameter];
                for (v, per_beta) in sweep.values.iter().zip(&sweep.summaries) {
                    for s in per_beta {
                        writeln!(summary, "{name:<9} {:>10} {:>6} {:>12}", num(*v), s.beta, num(s.rmse_aggregate)).unwrap();
                        table.push(vec![name.to_string(), v.to_string()], error_fields(s));
                    }
                }
            }
            let mut e = echo("unbalanced", base.true_theta);
            e.plan = Some(base.plan);
            e.sweeps = Some(
                sweeps
                    .into_iter()
                    .map(|(j, values)| SweepEcho { parameter: ThetaParams::NAMES[j].to_string(), values })
                    .collect(),
            );
            Ok(Study { echo: e, file: "unbalanced.csv", table, summary })
        }
    }
}

fn run_scenario(path: &Path, args: &SimulateArgs, fit: &FitConfig) -> Result<Study> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let mut spec = file.scenario;
    if let Some(r) = args.reps {
        spec.replications = r;
    } else if args.full {
        spec.replications = presets::FULL_REPLICATIONS;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let mut summary = String::new();
    let echo = SimulationEcho {
        preset: None,
        study: if file.test.is_some() { "wald" } else { "efficiency" }.to_string(),
        true_theta: spec.true_theta,
        contamination: spec.contamination.clone(),
        inspection_times: None,
        stresses: None,
        sample_sizes: None,
        plan: Some(spec.plan.clone()),
        sweeps: None,
        null_hypothesis: file.test.as_ref().map(|t| t.constraint.clone()),
        alpha: file.test.as_ref().map(|_| args.alpha),
        betas: args.betas.clone(),
        replications: spec.replications,
        seed: spec.seed,
        fit: fit.clone(),
    };
    let table = match &file.test {
        Some(t) => {
            let hyp: LinearConstraint = parse_constraint(&t.constraint)?;
            let mut table = Table::new(&[], &WALD_COLUMNS);
            writeln!(summary, "{:>6} {:>10}", "beta", "rejection").unwrap();
            for s in run_level_power_study(&spec, &hyp, &args.betas, args.alpha, fit)? {
                writeln!(summary, "{:>6} {:>10.4}", s.beta, s.proportion).unwrap();
                table.push(Vec::new(), wald_fields(&s));
            }
            table
        }
        None => {
            let mut table = Table::new(&[], &ERROR_COLUMNS);
            writeln!(summary, "{:>6} {:>12}", "beta", "rmse").unwrap();
            for s in run_efficiency_study(&spec, &args.betas, fit)? {
                writeln!(summary, "{:>6} {:>12}", s.beta, num(s.rmse_aggregate)).unwrap();
                table.push(Vec::new(), error_fields(&s));
            }
            table
        }
    };
    Ok(Study { echo, file: "summary.csv", table, summary })
}
