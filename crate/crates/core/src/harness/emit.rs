//! CSV, JSON and text-table output.

use std::fmt::Write as _;
use std::path::Path;

use super::config::OutputFormat;
use super::sweep::SweepReport;
use crate::error::Result;

pub const CSV_HEADER: [&str; 8] = ["env", "mediator", "k", "metric", "agent", "mean", "std", "seeds"];

fn agent_label(agent: Option<usize>) -> String {
    agent.map_or_else(|| "all".to_string(), |a| a.to_string())
}

pub fn to_csv(report: &SweepReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            report.env.name().to_string(),
            report.mediator.name().to_string(),
            report.k.to_string(),
            r.metric.clone(),
            agent_label(r.agent),
            format!("{:.3}", r.mean),
            format!("{:.3}", r.std),
            r.seeds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

pub fn to_json(report: &SweepReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(text: &str) -> Result<SweepReport> {
    Ok(serde_json::from_str(text)?)
}

/// Metrics as rows, agents as columns, `mean ± std` in each cell.
pub fn to_table(report: &SweepReport) -> String {
    let n = report.num_agents;
    let mut metrics: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    let mut header = vec!["metric".to_string(), "all".to_string()];
    header.extend((0..n).map(|i| format!("agent{i}")));
    let mut lines = vec![header];
    for m in metrics {
        let mut line = vec![m.to_string()];
        for agent in std::iter::once(None).chain((0..n).map(Some)) {
            line.push(match report.row(m, agent) {
                Some(r) => format!("{:.3} ± {:.3}", r.mean, r.std),
                None => "-".into(),
            });
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "env={} mediator={} k={} seeds={} failed={:?}",
        report.env,
        report.mediator,
        report.k,
        report.per_seed.len(),
        report.failed
    );
    for line in lines {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<width$}", width = w))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

pub fn render(report: &SweepReport, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => to_csv(report),
        OutputFormat::Json => to_json(report),
        OutputFormat::Table => Ok(to_table(report)),
    }
}

/// Write `report` to `path` in `format`.
pub fn emit(report: &SweepReport, format: OutputFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render(report, format)?)?;
    Ok(())
}
