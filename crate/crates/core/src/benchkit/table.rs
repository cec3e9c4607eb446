//! Plain-text and JSON result tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub json: String,
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// One row per report in the given order; one accuracy column per
/// commonsense type seen in any report.
pub fn render_table(reports: &[NamedReport]) -> Result<RenderedTable> {
    if reports.is_empty() {
        return Err(Error::Config("render_table needs at least one report".into()));
    }
    let types: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| r.report.by_type.keys().map(String::as_str))
        .collect();
    let mut header = vec!["method".to_string(), "accuracy".into(), "links".into()];
    header.extend(types.iter().map(|t| t.to_string()));
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![
            r.name.clone(),
            pct(r.report.overall.accuracy),
            r.report.overall.total.to_string(),
        ];
        for t in &types {
            row.push(r.report.by_type.get(*t).map_or("-".into(), |b| pct(b.accuracy)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(text, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(text, "{}", "-".repeat(total));
        }
    }
    let json = serde_json::to_string_pretty(reports).map_err(|e| Error::Config(e.to_string()))?;
    Ok(RenderedTable { text, json })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchkit::eval::Bucket;

    fn report(acc: f64) -> EvalReport {
        let mut r = EvalReport::default();
        r.overall = Bucket {
            correct: (acc * 10.0) as usize,
            total: 10,
            accuracy: acc,
        };
        r.by_type.insert("mental".into(), r.overall);
        r
    }

    #[test]
    fn rows_follow_input_order_and_json_round_trips() {
        let reports = vec![
            NamedReport {
                name: "model".into(),
                report: report(0.9),
            },
            NamedReport {
                name: "random".into(),
                report: report(0.3),
            },
        ];
        let t = render_table(&reports).unwrap();
        let lines: Vec<&str> = t.text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("model"));
        assert!(lines[3].starts_with("random"));
        assert!(lines[2].contains("90.0"));
        let back: Vec<NamedReport> = serde_json::from_str(&t.json).unwrap();
        assert_eq!(back, reports);
    }

    #[test]
    fn empty_rejected() {
        assert!(render_table(&[]).is_err());
    }
}
