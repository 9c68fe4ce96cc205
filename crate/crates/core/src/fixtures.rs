//! Bundled datasets.

use crate::divergence::{CountsRow, CountsTable};
use crate::model::{TestCondition, TestPlan};

/// Benzidine dihydrochloride liver-tumour experiment in mice.
///
/// Six conditions: three sacrifice times (9.37, 14.07, 18.7) crossed with two
/// doses coded as stress 1 (60 ppm) and 2 (400 ppm). Cause 1 is death without
/// tumour, cause 2 death with tumour.
pub fn bdc() -> (TestPlan, CountsTable) {
    const ROWS: [(f64, f64, [u64; 3]); 6] = [
        (9.37, 1.0, [70, 2, 0]),
        (9.37, 2.0, [22, 3, 0]),
        (14.07, 1.0, [48, 1, 0]),
        (14.07, 2.0, [14, 4, 17]),
        (18.7, 1.0, [35, 4, 7]),
        (18.7, 2.0, [1, 1, 9]),
    ];
    let conditions = ROWS
        .iter()
        .map(|&(it, x, n)| TestCondition { inspection_time: it, stress: x, devices: n.iter().sum() })
        .collect();
    let rows = ROWS.iter().map(|&(_, _, n)| CountsRow::new(n[0], n[1], n[2])).collect();
    (TestPlan { conditions }, CountsTable::new(rows))
}
