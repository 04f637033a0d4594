//! Text tables and CSV output for run reports.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::Metric;
use super::runner::RunReport;
use crate::error::Result;
use crate::signals::{write_csv, Column};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

impl RunReport {
    /// `pred_<name>` (forecasts on their target steps) and `err_<name>`
    /// (signed, post-warmup) for every estimator.
    pub fn csv_columns(&self) -> Vec<Column> {
        let mut cols = Vec::with_capacity(2 * self.estimators.len());
        for e in &self.estimators {
            cols.push(Column {
                name: format!("pred_{}", e.name),
                values: e.aligned_predictions(self.horizon),
            });
            cols.push(Column {
                name: format!("err_{}", e.name),
                values: e.errors.clone(),
            });
        }
        cols
    }
}

/// Power of ten that brings the largest entry of a column into `[1, 10)`;
/// zero for columns whose entries are all below 10.
pub fn column_exponent(values: &[Option<f64>]) -> i32 {
    let max = values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if max >= 10.0 && max.is_finite() {
        max.log10().floor() as i32
    } else {
        0
    }
}

fn metric_label(metric: Metric) -> &'static str {
    match metric {
        Metric::AbsSum => "sum|e|",
        Metric::SqSum => "sum e^2",
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (w, cell) in width.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            for (k, cell) in row.iter().enumerate() {
                let pad = width[k] - cell.chars().count();
                if k == 0 {
                    out.push_str(cell);
                    out.push_str(&" ".repeat(pad));
                } else {
                    out.push_str("  ");
                    out.push_str(&" ".repeat(pad));
                    out.push_str(cell);
                }
            }
            out.push('\n');
        };
        line(&mut out, &self.header);
        let total: usize = width.iter().sum::<usize>() + 2 * (cols - 1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for row in &self.rows {
            line(&mut out, row);
        }
        out
    }
}

fn window_header(metric: Metric, window: (usize, usize), exponent: i32) -> String {
    let base = format!("{} [{}, {}]", metric_label(metric), window.0, window.1);
    if exponent == 0 {
        base
    } else {
        format!("{base} x1e{exponent}")
    }
}

fn scaled(v: Option<f64>, exponent: i32) -> String {
    match v {
        Some(v) => format!("{:.4}", v / 10f64.powi(exponent)),
        None => "-".into(),
    }
}

/// One row per estimator: accumulated error per window (common power-of-ten
/// scale per column), stepping time and status.
pub fn render_table(report: &RunReport) -> String {
    let windows = &report.windows;
    let columns: Vec<Vec<Option<f64>>> = (0..windows.len())
        .map(|k| report.estimators.iter().map(|e| e.accumulated[k]).collect())
        .collect();
    let exps: Vec<i32> = columns.iter().map(|c| column_exponent(c)).collect();

    let mut header = vec!["estimator".to_string()];
    header.extend(
        windows
            .iter()
            .zip(&exps)
            .map(|(&w, &x)| window_header(report.metric, w, x)),
    );
    header.push("time [s]".into());
    header.push("status".into());

    let rows = report
        .estimators
        .iter()
        .enumerate()
        .map(|(r, e)| {
            let mut row = vec![e.name.clone()];
            row.extend(columns.iter().zip(&exps).map(|(c, &x)| scaled(c[r], x)));
            row.push(format!("{:.3}", e.seconds));
            row.push(if e.failure.is_some() { "failed" } else { "ok" }.into());
            row
        })
        .collect();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "seed {}  horizon {}  warmup {}  steps {}",
        report.seed,
        report.horizon,
        report.warmup,
        report.measurement.len()
    );
    out.push_str(&Table { header, rows }.render());
    for e in &report.estimators {
        if let Some(msg) = &e.failure {
            let _ = writeln!(out, "{}: {msg}", e.name);
        }
    }
    out
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// Median over seeds of a per-report value, `None` when no report has it.
pub fn median_over<F>(reports: &[RunReport], f: F) -> Option<f64>
where
    F: Fn(&RunReport) -> Option<f64>,
{
    let mut values: Vec<f64> = reports.iter().filter_map(f).collect();
    median(&mut values)
}

/// Per-estimator medians over several seeds of the same roster.
pub fn render_summary(reports: &[RunReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let names: Vec<&str> = first.estimators.iter().map(|e| e.name.as_str()).collect();
    let windows = &first.windows;
    let columns: Vec<Vec<Option<f64>>> = (0..windows.len())
        .map(|k| {
            names
                .iter()
                .map(|n| median_over(reports, |r| r.accumulated(n, k)))
                .collect()
        })
        .collect();
    let exps: Vec<i32> = columns.iter().map(|c| column_exponent(c)).collect();

    let mut header = vec!["estimator".to_string()];
    header.extend(
        windows
            .iter()
            .zip(&exps)
            .map(|(&w, &x)| window_header(first.metric, w, x)),
    );
    header.push("time [s]".into());
    header.push("failed".into());
    let rows = names
        .iter()
        .enumerate()
        .map(|(r, name)| {
            let mut row = vec![name.to_string()];
            row.extend(columns.iter().zip(&exps).map(|(c, &x)| scaled(c[r], x)));
            let t = median_over(reports, |rep| rep.estimator(name).map(|e| e.seconds));
            row.push(t.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into()));
            let failed = reports
                .iter()
                .filter(|rep| rep.estimator(name).is_some_and(|e| e.failure.is_some()))
                .count();
            row.push(format!("{failed}/{}", reports.len()));
            row
        })
        .collect();

    let seeds: Vec<String> = reports.iter().map(|r| r.seed.to_string()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "median over seeds {}", seeds.join(", "));
    out.push_str(&Table { header, rows }.render());
    out
}

/// Writes a report as a text table or as CSV (trajectory plus prediction and
/// error columns).
pub fn emit_report<W: Write>(report: &RunReport, format: ReportFormat, mut out: W) -> Result<()> {
    match format {
        ReportFormat::Table => {
            out.write_all(render_table(report).as_bytes())?;
            Ok(())
        }
        ReportFormat::Csv => write_csv(out, &report.trajectory()?, &report.csv_columns()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_rule() {
        assert_eq!(column_exponent(&[Some(9.99), None]), 0);
        assert_eq!(column_exponent(&[Some(10.0)]), 1);
        assert_eq!(column_exponent(&[Some(1.2e4), Some(3.0)]), 4);
        assert_eq!(column_exponent(&[Some(-5.5e5)]), 5);
        assert_eq!(column_exponent(&[None]), 0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn table_alignment() {
        let t = Table {
            header: vec!["a".into(), "bb".into()],
            rows: vec![vec!["long".into(), "1".into()]],
        };
        assert_eq!(t.render(), "a     bb\n--------\nlong   1\n");
    }
}
