use std::fmt::Write;
use std::path::PathBuf;

use oneshot_dpd::divergence::{estimated_error, Beta};
use oneshot_dpd::estimation::fit;
use oneshot_dpd::model::{quantities_of_interest, Quantities, ThetaParams};
use serde::Serialize;

use super::{beta_label, num, parse_beta, stress_levels, Output, SolverArgs};
use crate::dataset::read_dataset;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, clap::Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Tuning parameter, or "mle" for β = 0
    #[arg(long, default_value = "mle", value_parser = parse_beta)]
    pub beta: Beta,
    /// Stress levels for the lifetime summaries; defaults to those in the data
    #[arg(long, value_delimiter = ',')]
    pub stress_levels: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub beta: f64,
    pub theta_hat: ThetaParams,
    pub standard_errors: Option<[f64; 4]>,
    pub objective: f64,
    pub estimated_error: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub boundary_hit: bool,
    pub iterations: usize,
    pub local_optima: usize,
    pub quantities: Vec<Quantities>,
}

pub fn run(args: &FitArgs) -> Result<Output> {
    let data = read_dataset(&args.data)?;
    let res = fit(&data.plan, &data.counts, &args.solver.config(args.beta))?;
    let quantities = stress_levels(&args.stress_levels, &data.plan)
        .into_iter()
        .map(|x| quantities_of_interest(&res.theta_hat, x))
        .collect::<oneshot_dpd::Result<Vec<_>>>()?;
    let report = FitReport {
        beta: res.beta.value(),
        theta_hat: res.theta_hat,
        standard_errors: res.standard_errors(),
        objective: res.objective,
        estimated_error: estimated_error(&data.plan, &data.counts, &res.theta_hat)?,
        gradient_norm: res.gradient_norm,
        converged: res.converged,
        boundary_hit: res.boundary_hit,
        iterations: res.iterations,
        local_optima: res.local_optima.len(),
        quantities,
    };
    let mut out = Output::new(&report, render(&report))?;
    if !report.converged {
        out.failure = Some(CliError::Numerical(format!(
            "optimizer did not converge: gradient norm {:e} after {} iterations",
            report.gradient_norm, report.iterations
        )));
    }
    Ok(out)
}

fn render(r: &FitReport) -> String {
    let mut s = String::new();
    let status = if r.converged { "converged" } else { "NOT converged" };
    writeln!(s, "β = {}: {status} after {} iterations", beta_label(r.beta), r.iterations).unwrap();
    if r.boundary_hit {
        writeln!(s, "warning: an estimate reached the search bounds").unwrap();
    }
    writeln!(s, "\n{:<10} {:>14} {:>14}", "parameter", "estimate", "std. error").unwrap();
    for (j, name) in ThetaParams::NAMES.iter().enumerate() {
        let se = r.standard_errors.map(|v| num(v[j])).unwrap_or_else(|| "n/a".into());
        writeln!(s, "{name:<10} {:>14} {se:>14}", num(r.theta_hat.as_array()[j])).unwrap();
    }
    writeln!(s, "\nobjective        {}", num(r.objective)).unwrap();
    writeln!(s, "estimated error  {:.4}", r.estimated_error).unwrap();
    writeln!(s, "gradient norm    {:.3e}", r.gradient_norm).unwrap();
    s.push('\n');
    s.push_str(&quantities_table(&r.quantities));
    s
}

pub(crate) fn quantities_table(qs: &[Quantities]) -> String {
    let mut s = String::new();
    writeln!(s, "{:>8} {:>12} {:>12} {:>12} {:>10} {:>10}", "stress", "E (cause 1)", "E (cause 2)", "E", "P cause 1", "P cause 2")
        .unwrap();
    for q in qs {
        writeln!(
            s,
            "{:>8} {:>12.3} {:>12.3} {:>12.3} {:>10.4} {:>10.4}",
            q.stress,
            q.mean_lifetime_cause1,
            q.mean_lifetime_cause2,
            q.mean_lifetime,
            q.prob_cause1,
            q.prob_cause2
        )
        .unwrap();
    }
    s
}
