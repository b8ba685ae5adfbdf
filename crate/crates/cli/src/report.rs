use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lanesafe::sim::{read_summary, SimSummary};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub predictor: String,
    pub peak_rai: f64,
    pub mean_rai: f64,
    pub min_gap: Option<f64>,
    pub peak_decel: f64,
    pub completion_time: Option<f64>,
    pub collision: bool,
}

impl From<&SimSummary> for ReportRow {
    fn from(s: &SimSummary) -> Self {
        Self {
            scenario: s.scenario.clone(),
            predictor: s.predictor.clone(),
            peak_rai: s.peak_rai,
            mean_rai: s.mean_rai,
            min_gap: s.min_gap,
            peak_decel: s.peak_decel,
            completion_time: s.completion_time,
            collision: s.collision,
        }
    }
}

/// Rows sorted by peak RAI, lowest (safest) first; ties keep input order.
pub fn build_rows(summaries: &[SimSummary]) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = summaries.iter().map(ReportRow::from).collect();
    rows.sort_by(|a, b| a.peak_rai.total_cmp(&b.peak_rai));
    rows
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:<12} {:>9} {:>9} {:>9} {:>11} {:>11} {:>9}",
        "scenario", "predictor", "peak_rai", "mean_rai", "min_gap", "peak_decel", "completion", "collision"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<18} {:<12} {:>9.4} {:>9.4} {:>9} {:>11.3} {:>11} {:>9}",
            r.scenario,
            r.predictor,
            r.peak_rai,
            r.mean_rai,
            opt(r.min_gap, 2),
            r.peak_decel,
            opt(r.completion_time, 1),
            r.collision
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub csv: PathBuf,
    pub text_path: PathBuf,
    pub rows: Vec<ReportRow>,
    pub text: String,
}

pub fn report(summaries: &[PathBuf], out: &Path) -> Result<ReportOutput, CliError> {
    if summaries.len() < 2 {
        return Err(CliError::Validation("report needs at least two summary files".into()));
    }
    let mut loaded = Vec::with_capacity(summaries.len());
    for p in summaries {
        if !p.is_file() {
            return Err(CliError::Validation(format!("summary not found: {}", p.display())));
        }
        loaded.push(read_summary(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?);
    }
    let rows = build_rows(&loaded);
    let text = render_table(&rows);
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let csv = out.join("report.csv");
    let err = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", csv.display()));
    let mut w = csv::Writer::from_path(&csv).map_err(err)?;
    for r in &rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let text_path = out.join("report.txt");
    std::fs::write(&text_path, &text).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(ReportOutput {
        csv,
        text_path,
        rows,
        text,
    })
}
