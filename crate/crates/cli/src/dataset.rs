//! Comma-separated dataset and plan files.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use csv::StringRecord;
use oneshot_dpd::divergence::{CountsRow, CountsTable};
use oneshot_dpd::model::{TestCondition, TestPlan};

use crate::error::{CliError, Result};

pub const DATASET_COLUMNS: [&str; 7] =
    ["condition_id", "inspection_time", "stress", "devices", "n_survive", "n_cause1", "n_cause2"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub plan: TestPlan,
    pub counts: CountsTable,
}

struct Columns {
    index: Vec<Option<usize>>,
}

impl Columns {
    fn locate(headers: &StringRecord, wanted: &[&str], required: &[&str]) -> Result<Self> {
        let index: Vec<Option<usize>> =
            wanted.iter().map(|w| headers.iter().position(|h| h.trim() == *w)).collect();
        for (name, idx) in wanted.iter().zip(&index) {
            if idx.is_none() && required.contains(name) {
                return Err(CliError::Parse(format!("line 1: missing column '{name}'")));
            }
        }
        Ok(Self { index })
    }

    fn raw<'r>(&self, record: &'r StringRecord, col: usize) -> Option<&'r str> {
        self.index[col].and_then(|i| record.get(i)).map(str::trim)
    }
}

fn field<T: std::str::FromStr>(record: &StringRecord, cols: &Columns, col: usize, name: &str, line: u64) -> Result<T> {
    let raw = cols
        .raw(record, col)
        .ok_or_else(|| CliError::Parse(format!("line {line}: missing value for '{name}'")))?;
    raw.parse()
        .map_err(|_| CliError::Parse(format!("line {line}: column '{name}': cannot parse '{raw}'")))
}

fn records<R: Read>(reader: R) -> Result<(StringRecord, Vec<(u64, StringRecord)>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::Parse(format!("header: {e}")))?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Err(CliError::Parse("empty file: expected a header row".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Parse(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    if out.is_empty() {
        return Err(CliError::Parse("no data rows".into()));
    }
    Ok((headers, out))
}

fn condition(record: &StringRecord, cols: &Columns, line: u64) -> Result<TestCondition> {
    let it: f64 = field(record, cols, 1, "inspection_time", line)?;
    let x: f64 = field(record, cols, 2, "stress", line)?;
    let k: u64 = field(record, cols, 3, "devices", line)?;
    TestCondition::new(it, x, k).map_err(|e| CliError::Validation(format!("line {line}: {e}")))
}

fn unique_id(seen: &mut HashSet<String>, id: String, line: u64) -> Result<String> {
    if !seen.insert(id.clone()) {
        return Err(CliError::Validation(format!("line {line}: duplicate condition_id '{id}'")));
    }
    Ok(id)
}

pub fn parse_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let (headers, rows) = records(reader)?;
    let cols = Columns::locate(&headers, &DATASET_COLUMNS, &DATASET_COLUMNS)?;
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    let mut conditions = Vec::new();
    let mut counts = Vec::new();
    for (line, rec) in rows {
        let id: String = field(&rec, &cols, 0, "condition_id", line)?;
        ids.push(unique_id(&mut seen, id, line)?);
        let cond = condition(&rec, &cols, line)?;
        let n0: u64 = field(&rec, &cols, 4, "n_survive", line)?;
        let n1: u64 = field(&rec, &cols, 5, "n_cause1", line)?;
        let n2: u64 = field(&rec, &cols, 6, "n_cause2", line)?;
        if n0 + n1 + n2 != cond.devices {
            return Err(CliError::Validation(format!(
                "line {line}: counts {n0} + {n1} + {n2} do not add up to {} devices",
                cond.devices
            )));
        }
        conditions.push(cond);
        counts.push(CountsRow::new(n0, n1, n2));
    }
    let plan = TestPlan::new(conditions)?;
    let counts = CountsTable::new(counts);
    counts.validate(&plan)?;
    Ok(Dataset { ids, plan, counts })
}

/// Reads a plan: `inspection_time`, `stress` and `devices` are required, an
/// optional `condition_id` must be unique, and other columns are ignored.
pub fn parse_plan<R: Read>(reader: R) -> Result<TestPlan> {
    let (headers, rows) = records(reader)?;
    let cols = Columns::locate(&headers, &DATASET_COLUMNS[..4], &DATASET_COLUMNS[1..4])?;
    let mut seen = HashSet::new();
    let mut conditions = Vec::new();
    for (line, rec) in rows {
        if cols.index[0].is_some() {
            let id: String = field(&rec, &cols, 0, "condition_id", line)?;
            unique_id(&mut seen, id, line)?;
        }
        conditions.push(condition(&rec, &cols, line)?);
    }
    Ok(TestPlan::new(conditions)?)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(open(path)?).map_err(|e| prefix(path, e))
}

pub fn read_plan(path: &Path) -> Result<TestPlan> {
    parse_plan(open(path)?).map_err(|e| prefix(path, e))
}

fn prefix(path: &Path, e: CliError) -> CliError {
    let p = path.display();
    match e {
        CliError::Parse(m) => CliError::Parse(format!("{p}: {m}")),
        CliError::Validation(m) => CliError::Validation(format!("{p}: {m}")),
        CliError::Numerical(m) => CliError::Numerical(format!("{p}: {m}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "condition_id,inspection_time,stress,devices,n_survive,n_cause1,n_cause2\n";

    #[test]
    fn reads_rows() {
        let text = format!("{HEADER}a,9.37,1,72,70,2,0\nb,9.37,2,25,22,3,0\n");
        let ds = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.ids, ["a", "b"]);
        assert_eq!(ds.plan.total_devices(), 97);
        assert_eq!(ds.counts.rows[1], CountsRow::new(22, 3, 0));
    }

    #[test]
    fn column_order_is_free() {
        let text = "n_cause2,n_cause1,n_survive,devices,stress,inspection_time,condition_id\n0,2,70,72,1,9.37,a\n0,3,22,25,2,9.37,b\n";
        let ds = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.plan.conditions[0].inspection_time, 9.37);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = format!("{HEADER}a,9.37,1,72,70,2,0\nb,9.37,two,25,22,3,0\n");
        match parse_dataset(bad.as_bytes()) {
            Err(CliError::Parse(m)) => assert!(m.contains("line 3") && m.contains("stress"), "{m}"),
            other => panic!("{other:?}"),
        }
        let mismatch = format!("{HEADER}a,9.37,1,72,70,2,1\n");
        assert!(matches!(parse_dataset(mismatch.as_bytes()), Err(CliError::Validation(m)) if m.contains("line 2")));
        let dup = format!("{HEADER}a,9.37,1,72,70,2,0\na,9.37,2,25,22,3,0\n");
        assert!(matches!(parse_dataset(dup.as_bytes()), Err(CliError::Validation(m)) if m.contains("duplicate")));
    }

    #[test]
    fn empty_inputs_are_parse_errors() {
        assert!(matches!(parse_dataset("".as_bytes()), Err(CliError::Parse(_))));
        assert!(matches!(parse_dataset(HEADER.as_bytes()), Err(CliError::Parse(_))));
        assert!(matches!(parse_dataset("condition_id,stress\n1,2\n".as_bytes()), Err(CliError::Parse(m)) if m.contains("inspection_time")));
    }

    #[test]
    fn plan_ignores_count_columns() {
        let text = format!("{HEADER}a,9.37,1,72,70,2,0\n");
        assert_eq!(parse_plan(text.as_bytes()).unwrap().total_devices(), 72);
        let bare = "inspection_time,stress,devices\n7,35,10\n";
        assert_eq!(parse_plan(bare.as_bytes()).unwrap().len(), 1);
    }
}
