//! Report emission: one JSON file with full per-record detail, a CSV
//! summary, and a Markdown table per run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, HarnessResult};
use crate::metrics::MetricsReport;

/// Scalar view of one evaluation record (masks live in the per-image
/// artifact files).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDetail {
    pub id: String,
    pub y: usize,
    pub z: f64,
    pub y_prime: usize,
    pub z_prime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_target: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patched_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

/// One table cell of the benchmark: an explainer, optionally a patch
/// scale, and the metrics over the surviving records. `report` is absent
/// when the cell is undefined (for example no successful attacks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub explainer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricsReport>,
    #[serde(default)]
    pub records: Vec<RecordDetail>,
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct EmittedPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub markdown: PathBuf,
}

pub fn percent(value: f64) -> String {
    format!("{:.2}%", value * 100.0)
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "n/a".to_string(),
    }
}

/// Writes `<stem>.json`, `<stem>.csv`, and `<stem>.md` under `out_dir`.
pub fn emit_report(rows: &[ReportRow], out_dir: &Path, stem: &str) -> HarnessResult<EmittedPaths> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no report rows to emit".into()));
    }
    fs::create_dir_all(out_dir)?;
    let paths = EmittedPaths {
        json: out_dir.join(format!("{stem}.json")),
        csv: out_dir.join(format!("{stem}.csv")),
        markdown: out_dir.join(format!("{stem}.md")),
    };

    let json = serde_json::to_string_pretty(rows)?;
    fs::write(&paths.json, json)?;
    fs::write(&paths.csv, render_csv(rows))?;
    fs::write(&paths.markdown, render_markdown(rows))?;
    Ok(paths)
}

/// Reads back a `<stem>.json` report file.
pub fn load_report_rows(path: &Path) -> HarnessResult<Vec<ReportRow>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("explainer,scale,n,I,I_strict,I_coverage\n");
    for row in rows {
        let scale = fmt_opt(row.scale);
        match &row.report {
            Some(report) => {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.explainer,
                    scale,
                    report.n,
                    report.impact_score,
                    report.impact_strict,
                    fmt_opt(report.impact_coverage),
                ));
            }
            None => {
                out.push_str(&format!("{},{},0,n/a,n/a,n/a\n", row.explainer, scale));
            }
        }
    }
    out
}

fn impact_cell(report: Option<&MetricsReport>) -> String {
    match report {
        Some(r) => format!("{} / {}", percent(r.impact_score), percent(r.impact_strict)),
        None => "n/a".to_string(),
    }
}

fn coverage_cell(report: Option<&MetricsReport>) -> String {
    match report.and_then(|r| r.impact_coverage) {
        Some(c) => percent(c),
        None => "n/a".to_string(),
    }
}

fn render_markdown(rows: &[ReportRow]) -> String {
    let scaled = rows.iter().any(|r| r.scale.is_some());
    if scaled {
        render_markdown_by_scale(rows)
    } else {
        render_markdown_flat(rows)
    }
}

fn render_markdown_flat(rows: &[ReportRow]) -> String {
    let any_coverage = rows
        .iter()
        .any(|r| r.report.as_ref().is_some_and(|m| m.impact_coverage.is_some()));
    let mut out = String::new();
    if any_coverage {
        out.push_str("| Method | I_coverage | I / I_strict |\n|---|---|---|\n");
    } else {
        out.push_str("| Method | I / I_strict |\n|---|---|\n");
    }
    for row in rows {
        let report = row.report.as_ref();
        if any_coverage {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                row.explainer,
                coverage_cell(report),
                impact_cell(report)
            ));
        } else {
            out.push_str(&format!("| {} | {} |\n", row.explainer, impact_cell(report)));
        }
    }
    out
}

fn render_markdown_by_scale(rows: &[ReportRow]) -> String {
    // stable first-appearance order for explainers and scales
    let mut explainers: Vec<String> = Vec::new();
    let mut scales: Vec<Option<f64>> = Vec::new();
    for row in rows {
        if !explainers.contains(&row.explainer) {
            explainers.push(row.explainer.clone());
        }
        if !scales.iter().any(|s| s == &row.scale) {
            scales.push(row.scale);
        }
    }
    let mut out = String::from("| Scale |");
    for name in &explainers {
        out.push_str(&format!(" {name} I_coverage | {name} I / I_strict |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &explainers {
        out.push_str("---|---|");
    }
    out.push('\n');
    for scale in &scales {
        out.push_str(&format!("| {} |", fmt_opt(*scale)));
        for name in &explainers {
            let report = rows
                .iter()
                .find(|r| &r.explainer == name && &r.scale == scale)
                .and_then(|r| r.report.as_ref());
            out.push_str(&format!(
                " {} | {} |",
                coverage_cell(report),
                impact_cell(report)
            ));
        }
        out.push('\n');
    }
    out
}
