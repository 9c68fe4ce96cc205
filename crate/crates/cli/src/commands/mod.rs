pub mod fit;
pub mod power;
pub mod simulate;
pub mod tune;

use std::path::PathBuf;

use clap::ValueEnum;
use oneshot_dpd::divergence::Beta;
use oneshot_dpd::estimation::FitConfig;
use oneshot_dpd::inference::LinearConstraint;
use oneshot_dpd::model::TestPlan;
use serde::Serialize;

use crate::constraint::{parse_constraint, read_constraint_file};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

/// A finished report in both renderings, plus an optional failure that should
/// still set the exit status after the report is shown.
#[derive(Debug)]
pub struct Output {
    pub text: String,
    pub json: String,
    pub failure: Option<CliError>,
}

impl Output {
    pub fn new<T: Serialize>(report: &T, text: String) -> Result<Self> {
        let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Numerical(e.to_string()))?;
        Ok(Self { text, json, failure: None })
    }

    pub fn render(&self, format: Format) -> &str {
        match format {
            Format::Text => &self.text,
            Format::Json => &self.json,
        }
    }
}

/// `mle` or a non-negative number.
pub fn parse_beta(s: &str) -> std::result::Result<Beta, String> {
    if s.eq_ignore_ascii_case("mle") {
        return Ok(Beta::MLE);
    }
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is neither 'mle' nor a number"))?;
    Beta::new(v).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, clap::Args)]
pub struct SolverArgs {
    /// Number of optimizer starts
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    /// Gradient tolerance on the log-parameter scale
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
}

impl SolverArgs {
    pub fn config(&self, beta: Beta) -> FitConfig {
        FitConfig {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.tolerance,
            ..FitConfig::new(beta).with_multi_start(self.starts)
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct HypothesisArgs {
    /// Fixed values, e.g. "theta21=0.08" or "theta11=1.3,theta21=2.5"
    #[arg(long, required_unless_present = "constraint_file", conflicts_with = "constraint_file")]
    pub constraint: Option<String>,
    /// CSV with columns theta10,theta11,theta20,theta21,value; one row per constraint
    #[arg(long)]
    pub constraint_file: Option<PathBuf>,
}

impl HypothesisArgs {
    pub fn load(&self) -> Result<LinearConstraint> {
        match (&self.constraint, &self.constraint_file) {
            (Some(spec), _) => parse_constraint(spec),
            (None, Some(path)) => read_constraint_file(path),
            (None, None) => Err(CliError::Parse("no constraint given".into())),
        }
    }

    pub fn describe(&self) -> String {
        match (&self.constraint, &self.constraint_file) {
            (Some(spec), _) => spec.clone(),
            (None, Some(path)) => path.display().to_string(),
            (None, None) => String::new(),
        }
    }
}

/// Requested stress levels, or the distinct levels of the plan in order of
/// appearance.
pub fn stress_levels(requested: &[f64], plan: &TestPlan) -> Vec<f64> {
    if !requested.is_empty() {
        return requested.to_vec();
    }
    let mut out: Vec<f64> = Vec::new();
    for c in &plan.conditions {
        if !out.contains(&c.stress) {
            out.push(c.stress);
        }
    }
    out
}

/// Six significant digits, switching to exponent form for very large or
/// very small magnitudes.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

pub fn beta_label(beta: f64) -> String {
    if beta == 0.0 {
        "0 (MLE)".into()
    } else {
        num(beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(num(0.000890257), "0.000890257");
        assert_eq!(num(1.318945), "1.31895");
        assert_eq!(num(150.2034), "150.203");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(1.5e-9), "1.50000e-9");
        assert_eq!(num(2.5e7), "2.50000e7");
    }

    #[test]
    fn beta_parsing() {
        assert!(parse_beta("MLE").unwrap().is_mle());
        assert_eq!(parse_beta("0.4").unwrap().value(), 0.4);
        assert!(parse_beta("-1").is_err());
        assert!(parse_beta("x").is_err());
    }
}
