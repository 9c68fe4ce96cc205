use std::fmt::Write;
use std::path::PathBuf;

use oneshot_dpd::divergence::Beta;
use oneshot_dpd::inference::{allocate_plan, power_approx, required_sample_size};
use oneshot_dpd::model::ThetaParams;
use serde::Serialize;

use super::{beta_label, num, parse_beta, HypothesisArgs, Output};
use crate::dataset::read_plan;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, clap::Args)]
pub struct PowerArgs {
    /// True parameter values theta10,theta11,theta20,theta21
    #[arg(long, value_delimiter = ',', required = true)]
    pub theta_star: Vec<f64>,
    /// Plan CSV; its device counts set the allocation across conditions
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub hypothesis: HypothesisArgs,
    #[arg(long, default_value = "mle", value_parser = parse_beta)]
    pub beta: Beta,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Total number of devices, allocated in proportion to the plan
    #[arg(long, conflicts_with = "target_power")]
    pub k: Option<u64>,
    /// Report the smallest total sample size reaching this power
    #[arg(long)]
    pub target_power: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerReport {
    pub theta_star: ThetaParams,
    pub hypothesis: String,
    pub beta: f64,
    pub alpha: f64,
    pub target_power: Option<f64>,
    /// Unrounded root of the power equation, when a target was given.
    pub k_star: Option<f64>,
    pub total_devices: u64,
    pub allocation: Vec<u64>,
    pub approx_power: f64,
    pub ell_value: f64,
    pub sigma_w: f64,
}

pub fn run(args: &PowerArgs) -> Result<Output> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Validation(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let t = &args.theta_star;
    if t.len() != 4 {
        return Err(CliError::Parse(format!("--theta-star needs 4 values, got {}", t.len())));
    }
    let theta = ThetaParams::new(t[0], t[1], t[2], t[3])?;
    let hyp = args.hypothesis.load()?;
    let shape = read_plan(&args.plan)?;
    let (plan, k_star) = match (args.k, args.target_power) {
        (_, Some(target)) => {
            let n = required_sample_size(&theta, &shape, &hyp, args.beta, args.alpha, target)?;
            (n.plan(&shape), Some(n.k_star))
        }
        (Some(k), None) => {
            if k == 0 {
                return Err(CliError::Validation("--k must be at least 1".into()));
            }
            (allocate_plan(&shape, k), None)
        }
        (None, None) => (shape, None),
    };
    let p = power_approx(&theta, &plan, &hyp, args.beta, args.alpha)?;
    let report = PowerReport {
        theta_star: theta,
        hypothesis: args.hypothesis.describe(),
        beta: args.beta.value(),
        alpha: args.alpha,
        target_power: args.target_power,
        k_star,
        total_devices: p.total_devices,
        allocation: plan.conditions.iter().map(|c| c.devices).collect(),
        approx_power: p.approx_power,
        ell_value: p.ell_value,
        sigma_w: p.sigma_w,
    };
    let mut s = String::new();
    writeln!(s, "H0: {} at β = {}, α = {}", report.hypothesis, beta_label(report.beta), report.alpha).unwrap();
    if let (Some(target), Some(k)) = (report.target_power, report.k_star) {
        writeln!(s, "target power     {target}").unwrap();
        writeln!(s, "K*               {}", num(k)).unwrap();
    }
    writeln!(s, "total devices    {}", report.total_devices).unwrap();
    let alloc: Vec<String> = report.allocation.iter().map(u64::to_string).collect();
    writeln!(s, "allocation       {}", alloc.join(", ")).unwrap();
    writeln!(s, "approx. power    {:.4}", report.approx_power).unwrap();
    writeln!(s, "ℓ(θ*)            {}", num(report.ell_value)).unwrap();
    writeln!(s, "σ                {}", num(report.sigma_w)).unwrap();
    Output::new(&report, s)
}
