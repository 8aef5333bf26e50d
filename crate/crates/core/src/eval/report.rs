//! Correlation reports and their CSV / plain-text renderings.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{IqtError, Result};
use crate::eval::metrics::{krcc, plcc_poly3, srcc};

pub const REPORT_HEADER: [&str; 6] = ["config_id", "srcc", "krcc", "plcc", "main_score", "n"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationReport {
    pub srcc: f64,
    pub krcc: f64,
    pub plcc: f64,
    /// `plcc + srcc`.
    pub main_score: f64,
    pub n_samples: usize,
}

impl CorrelationReport {
    pub fn from_scores(pred: &[f64], mos: &[f64]) -> Result<Self> {
        let srcc = srcc(pred, mos)?;
        let krcc = krcc(pred, mos)?;
        let plcc = plcc_poly3(pred, mos)?;
        Ok(CorrelationReport {
            srcc,
            krcc,
            plcc,
            main_score: plcc + srcc,
            n_samples: pred.len(),
        })
    }
}

/// One labelled line of a report table; `Err` marks a failed configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub config_id: String,
    pub outcome: std::result::Result<CorrelationReport, String>,
}

fn fields(row: &ReportRow) -> [String; 6] {
    match &row.outcome {
        Ok(r) => [
            row.config_id.clone(),
            r.srcc.to_string(),
            r.krcc.to_string(),
            r.plcc.to_string(),
            r.main_score.to_string(),
            r.n_samples.to_string(),
        ],
        Err(_) => [
            row.config_id.clone(),
            "failed".into(),
            "failed".into(),
            "failed".into(),
            "failed".into(),
            "0".into(),
        ],
    }
}

/// CSV `config_id,srcc,krcc,plcc,main_score,n`; values round-trip exactly.
pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| IqtError::Contract(format!("report csv: {e}"));
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(fields(row)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| IqtError::Contract(format!("report csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_report_csv(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_csv(rows)?).map_err(|e| IqtError::io(path, e))
}

/// Aligned plain-text table; `columns` gives extra descriptive cells per row.
pub fn report_table(title: &str, extra_headers: &[&str], rows: &[(ReportRow, Vec<String>)]) -> String {
    let mut headers: Vec<String> = vec!["No.".into()];
    headers.extend(extra_headers.iter().map(|h| h.to_string()));
    headers.extend(["SRCC", "KRCC", "PLCC", "Main", "n"].map(String::from));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(row, extra)| {
            let mut cells = vec![row.config_id.clone()];
            cells.extend(extra.iter().cloned());
            match &row.outcome {
                Ok(r) => cells.extend([
                    format!("{:.4}", r.srcc),
                    format!("{:.4}", r.krcc),
                    format!("{:.4}", r.plcc),
                    format!("{:.4}", r.main_score),
                    r.n_samples.to_string(),
                ]),
                Err(e) => cells.push(format!("failed: {e}")),
            }
            cells
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(String::len).collect();
    for cells in &body {
        let aligned = if cells.len() == headers.len() { cells.len() } else { cells.len() - 1 };
        for (w, c) in widths.iter_mut().zip(&cells[..aligned]) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| match widths.get(i) {
                Some(&w) => format!("{c:<w$}"),
                None => c.clone(),
            })
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let head = line(&headers);
    let _ = writeln!(out, "{head}");
    let _ = writeln!(out, "{}", "-".repeat(head.chars().count()));
    for cells in &body {
        let _ = writeln!(out, "{}", line(cells));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<ReportRow> {
        let pred = [0.1, 0.4, 0.35, 0.8, 0.9, 0.2, 0.55];
        let mos = [1.0, 3.0, 3.5, 4.0, 4.8, 1.5, 2.9];
        vec![
            ReportRow {
                config_id: "7".into(),
                outcome: Ok(CorrelationReport::from_scores(&pred, &mos).unwrap()),
            },
            ReportRow {
                config_id: "8".into(),
                outcome: Err("diverged".into()),
            },
        ]
    }

    #[test]
    fn main_score_is_exact_sum_in_csv() {
        let text = report_csv(&sample_rows()).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), REPORT_HEADER);
        let mut checked = 0;
        for rec in reader.records() {
            let rec = rec.unwrap();
            if &rec[1] == "failed" {
                continue;
            }
            let srcc: f64 = rec[1].parse().unwrap();
            let plcc: f64 = rec[3].parse().unwrap();
            let main: f64 = rec[4].parse().unwrap();
            assert_eq!(main, plcc + srcc);
            checked += 1;
        }
        assert_eq!(checked, 1);
    }

    #[test]
    fn oracle_scores_are_perfect() {
        let mos = [1.0, 2.0, 2.0, 3.5, 4.0, 5.0];
        let r = CorrelationReport::from_scores(&mos, &mos).unwrap();
        assert!((r.srcc - 1.0).abs() < 1e-12 && (r.krcc - 1.0).abs() < 1e-12 && (r.plcc - 1.0).abs() < 1e-12);
        assert_eq!(r.main_score, r.plcc + r.srcc);
    }

    #[test]
    fn table_lists_every_row() {
        let rows: Vec<(ReportRow, Vec<String>)> = sample_rows()
            .into_iter()
            .map(|r| (r, vec!["diff".to_string(), "ref".to_string()]))
            .collect();
        let t = report_table("Routing", &["Encoder", "Decoder"], &rows);
        assert!(t.contains("Encoder") && t.contains("failed: diverged"));
        assert_eq!(t.lines().count(), 5);
    }
}
