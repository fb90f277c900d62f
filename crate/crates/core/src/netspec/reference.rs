//! Reference architecture tables for the full-size MF and CBMF models,
//! used by `count-params` to compare exact counts against printed figures.

use super::{count_params, format_count, ModelSpec};
use crate::error::Result;
use serde::Serialize;

/// Printed parameter column for the weighted layers, in layer order.
pub const MF_ROWS: [&str; 13] = [
    "320", "9,248", "18.50k", "36.93k", "73.86k", "147.58k", "295.17k", "590.08k", "1.18M",
    "2.36M", "17.31M", "443.14K", "2,025",
];

pub const CBMF_ROWS: [&str; 16] = [
    "320", "9,248", "18.50k", "36.93k", "73.86k", "147.58k", "295.17k", "590.08k", "1.18M",
    "2.36M", "17.31M", "443.14K", "7,497", "309.50K", "148.22K", "2,025",
];

pub const MF_PRINTED_TOTAL: &str = "22.93M";
pub const CBMF_PRINTED_TOTAL: &str = "22.93M";

#[derive(Clone, Debug, Serialize)]
pub struct RowCheck {
    pub layer: String,
    pub exact: usize,
    pub formatted: String,
    pub printed: String,
    pub matches: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TableCheck {
    pub rows: Vec<RowCheck>,
    pub exact_total: usize,
    pub printed_total: String,
    pub total_matches: bool,
}

impl TableCheck {
    pub fn all_rows_match(&self) -> bool {
        self.rows.iter().all(|r| r.matches)
    }
}

/// Compares a spec's weighted-layer counts against printed figures using
/// the table's rounding rule (case of the `k`/`K` suffix ignored).
pub fn check_against(spec: &ModelSpec, printed: &[&str], printed_total: &str) -> Result<TableCheck> {
    let report = count_params(spec)?;
    let weighted: Vec<_> = report.layers.iter().filter(|l| l.params > 0).collect();
    let rows = weighted
        .iter()
        .zip(printed.iter().map(|s| s.to_string()).chain(std::iter::repeat(String::new())))
        .map(|(l, p)| {
            let formatted = format_count(l.params);
            RowCheck {
                layer: l.name.clone(),
                exact: l.params,
                matches: formatted.eq_ignore_ascii_case(&p),
                formatted,
                printed: p,
            }
        })
        .collect::<Vec<_>>();
    let mut rows = rows;
    for p in printed.iter().skip(weighted.len()) {
        rows.push(RowCheck {
            layer: "<missing>".into(),
            exact: 0,
            formatted: String::new(),
            printed: p.to_string(),
            matches: false,
        });
    }
    Ok(TableCheck {
        rows,
        exact_total: report.total,
        printed_total: printed_total.to_string(),
        total_matches: format_count(report.total).eq_ignore_ascii_case(printed_total),
    })
}
