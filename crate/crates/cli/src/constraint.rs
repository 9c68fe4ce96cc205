//! Hypothesis specifications: `name=value` lists or a coefficient file.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use oneshot_dpd::inference::LinearConstraint;
use oneshot_dpd::model::ThetaParams;

use crate::error::{CliError, Result};

/// Parses `"theta21=0.08"` or several such terms separated by commas or
/// semicolons, each fixing one parameter.
pub fn parse_constraint(spec: &str) -> Result<LinearConstraint> {
    let mut fixed = Vec::new();
    for term in spec.split([',', ';']).map(str::trim).filter(|t| !t.is_empty()) {
        let (name, value) = term
            .split_once('=')
            .ok_or_else(|| CliError::Parse(format!("constraint term '{term}' is not of the form name=value")))?;
        let name = name.trim();
        let idx = ThetaParams::index_of(name).ok_or_else(|| {
            CliError::Validation(format!(
                "unknown parameter '{name}'; expected one of {}",
                ThetaParams::NAMES.join(", ")
            ))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Parse(format!("constraint value '{}' is not a number", value.trim())))?;
        fixed.push((idx, value));
    }
    if fixed.is_empty() {
        return Err(CliError::Parse("empty constraint".into()));
    }
    Ok(LinearConstraint::fix_parameters(&fixed)?)
}

/// Reads rows `theta10,theta11,theta20,theta21,value` describing `Lθ = c`.
pub fn read_constraint_file(path: &Path) -> Result<LinearConstraint> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Parse(e.to_string()))?.clone();
    let mut names: Vec<&str> = ThetaParams::NAMES.to_vec();
    names.push("value");
    let index: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| CliError::Parse(format!("{}: missing column '{n}'", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut coefficients = Vec::new();
    let mut offsets = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (k, &i) in index.iter().enumerate() {
            let raw = rec.get(i).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| {
                CliError::Parse(format!("{}: line {line}: column '{}': cannot parse '{raw}'", path.display(), names[k]))
            })?;
            if k < 4 {
                coefficients.push(v);
            } else {
                offsets.push(v);
            }
        }
    }
    if offsets.is_empty() {
        return Err(CliError::Parse(format!("{}: no constraint rows", path.display())));
    }
    let rows = offsets.len();
    Ok(LinearConstraint::new(DMatrix::from_row_slice(rows, 4, &coefficients), DVector::from_vec(offsets))?)
}
