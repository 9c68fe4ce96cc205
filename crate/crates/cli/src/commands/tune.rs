use std::fmt::Write;
use std::path::PathBuf;

use oneshot_dpd::divergence::Beta;
use oneshot_dpd::model::{quantities_of_interest, Quantities, ThetaParams};
use oneshot_dpd::tuning::{tune, uniform_grid, Pilot, TuningConfig};
use serde::Serialize;

use super::{num, stress_levels, Output, SolverArgs};
use crate::dataset::read_dataset;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, clap::Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub grid_max: f64,
    /// Explicit grid; overrides --grid-points and --grid-max
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    /// Pilot: a β value, "self", or four comma-separated parameter values
    #[arg(long, default_value = "0.4")]
    pub pilot: String,
    #[arg(long, value_delimiter = ',')]
    pub stress_levels: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

pub fn parse_pilot(s: &str) -> Result<Pilot> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("self") {
        return Ok(Pilot::SelfPilot);
    }
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Parse(format!("pilot '{s}' is not 'self', a β value, or four parameter values")))?;
    match values[..] {
        [b] => Ok(Pilot::Beta(Beta::new(b)?)),
        [a, b, c, d] => Ok(Pilot::Theta(ThetaParams::new(a, b, c, d)?)),
        _ => Err(CliError::Parse(format!("pilot '{s}' must have one or four values"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneRow {
    pub beta: f64,
    pub converged: bool,
    pub theta_hat: Option<ThetaParams>,
    pub quantities: Vec<Quantities>,
    pub bias_term: Option<f64>,
    pub variance_term: Option<f64>,
    pub mse_hat: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneReport {
    pub pilot: String,
    pub pilot_theta: Option<ThetaParams>,
    pub best_beta: f64,
    pub rows: Vec<TuneRow>,
}

pub fn run(args: &TuneArgs) -> Result<Output> {
    let pilot = parse_pilot(&args.pilot)?;
    let grid = if args.grid.is_empty() {
        if args.grid_points == 0 || !(args.grid_max > 0.0) || !args.grid_max.is_finite() {
            return Err(CliError::Validation("grid needs at least one point and a positive finite maximum".into()));
        }
        uniform_grid(args.grid_points, args.grid_max)
    } else {
        args.grid.clone()
    };
    let data = read_dataset(&args.data)?;
    let config = TuningConfig { grid, pilot, fit: args.solver.config(Beta::MLE) };
    let result = tune(&data.plan, &data.counts, &config)?;
    let levels = stress_levels(&args.stress_levels, &data.plan);
    let rows = result
        .records
        .iter()
        .map(|r| {
            let quantities = match &r.theta_hat {
                Some(t) => levels.iter().map(|&x| quantities_of_interest(t, x)).collect::<oneshot_dpd::Result<_>>()?,
                None => Vec::new(),
            };
            Ok(TuneRow {
                beta: r.beta,
                converged: r.converged,
                theta_hat: r.theta_hat,
                quantities,
                bias_term: r.bias_term,
                variance_term: r.variance_term,
                mse_hat: r.mse_hat,
                note: r.note.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = TuneReport { pilot: args.pilot.clone(), pilot_theta: result.pilot_theta, best_beta: result.best_beta, rows };
    Output::new(&report, render(&report, &levels))
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "-".into())
}

fn render(r: &TuneReport, levels: &[f64]) -> String {
    let mut s = String::new();
    write!(s, "{:>8} {:>12} {:>10} {:>12} {:>10}", "beta", "theta10", "theta11", "theta20", "theta21").unwrap();
    for x in levels {
        write!(s, " {:>10}", format!("E1(x={x})")).unwrap();
    }
    for x in levels {
        write!(s, " {:>10}", format!("E(x={x})")).unwrap();
    }
    for x in levels {
        write!(s, " {:>9}", format!("P1(x={x})")).unwrap();
    }
    writeln!(s, " {:>12} {:>12} {:>12}", "bias", "variance", "mse").unwrap();
    for row in &r.rows {
        write!(s, "{:>8.4}", row.beta).unwrap();
        match &row.theta_hat {
            Some(t) => write!(s, " {:>12.5} {:>10.4} {:>12.5} {:>10.4}", t.theta10, t.theta11, t.theta20, t.theta21).unwrap(),
            None => write!(s, " {:>12} {:>10} {:>12} {:>10}", "-", "-", "-", "-").unwrap(),
        }
        for q in &row.quantities {
            write!(s, " {:>10.3}", q.mean_lifetime_cause1).unwrap();
        }
        for q in &row.quantities {
            write!(s, " {:>10.3}", q.mean_lifetime).unwrap();
        }
        for q in &row.quantities {
            write!(s, " {:>9.4}", q.prob_cause1).unwrap();
        }
        write!(s, " {:>12} {:>12} {:>12}", opt(row.bias_term), opt(row.variance_term), opt(row.mse_hat)).unwrap();
        if let Some(note) = &row.note {
            write!(s, "  ({note})").unwrap();
        }
        s.push('\n');
    }
    writeln!(s, "\npilot: {}", r.pilot).unwrap();
    writeln!(s, "best beta: {}", num(r.best_beta)).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pilot_forms() {
        assert_eq!(parse_pilot("self").unwrap(), Pilot::SelfPilot);
        assert_eq!(parse_pilot("0.4").unwrap(), Pilot::Beta(Beta::new(0.4).unwrap()));
        assert!(matches!(parse_pilot("0.001,1.3,0.0003,2.5").unwrap(), Pilot::Theta(_)));
        assert!(parse_pilot("1,2").is_err());
        assert!(parse_pilot("abc").is_err());
    }
}
