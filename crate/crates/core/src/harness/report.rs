//! Grouped (mean, std) tables and their CSV / JSON / markdown forms.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::catalog::PromptCategory;
use super::records::{EvaluationRecord, NO_DEFENSE};
use crate::attacks::AttackMethod;
use crate::error::{invalid, Error, Result};
use crate::metrics::{aggregate, Metric, MetricDirection, MetricGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One row per method, baseline first.
    Method,
    MethodCategory,
    MethodPurification,
    /// Defense rows per (method, ε).
    Budget,
    /// Defense rows per design, with the component checklist.
    Design,
    /// Defense rows per (feature backbone, method).
    Backbone,
}

impl Grouping {
    pub const ALL: [Grouping; 6] = [
        Grouping::Method,
        Grouping::MethodCategory,
        Grouping::MethodPurification,
        Grouping::Budget,
        Grouping::Design,
        Grouping::Backbone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Grouping::Method => "method",
            Grouping::MethodCategory => "method_category",
            Grouping::MethodPurification => "method_purification",
            Grouping::Budget => "budget",
            Grouping::Design => "design",
            Grouping::Backbone => "backbone",
        }
    }

    pub fn key_columns(self) -> Vec<&'static str> {
        match self {
            Grouping::Method => vec!["method"],
            Grouping::MethodCategory => vec!["method", "category"],
            Grouping::MethodPurification => vec!["method", "purification"],
            Grouping::Budget => vec!["method", "epsilon"],
            Grouping::Design => vec!["design", "recognizer", "codec", "pixel", "feature"],
            Grouping::Backbone => vec!["backbone", "method"],
        }
    }

    fn keys(self, r: &EvaluationRecord) -> Option<Vec<String>> {
        let defense_only = matches!(self, Grouping::Budget | Grouping::Design | Grouping::Backbone);
        if defense_only && r.is_baseline() {
            return None;
        }
        Some(match self {
            Grouping::Method => vec![r.method.clone()],
            Grouping::MethodCategory => vec![r.method.clone(), r.category.name().to_string()],
            Grouping::MethodPurification => vec![r.method.clone(), r.purification.clone()],
            Grouping::Budget => vec![r.method.clone(), format_budget(r.epsilon?)],
            Grouping::Design => {
                let mut keys = vec![r.method.clone()];
                let checks = r.method.parse::<AttackMethod>().map(|m| m.components()).unwrap_or_default();
                keys.extend(checks.iter().map(|c| if *c { "✓".to_string() } else { String::new() }));
                keys
            }
            Grouping::Backbone => vec![r.backbone.clone(), r.method.clone()],
        })
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grouping::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| invalid(format!("unknown grouping `{s}`")))
    }
}

fn format_budget(eps: f64) -> String {
    format!("{eps}")
}

fn rank_of(value: &str, order: &[&str]) -> Option<usize> {
    order.iter().position(|o| *o == value)
}

fn method_rank(v: &str) -> Option<usize> {
    if v == NO_DEFENSE {
        return Some(0);
    }
    AttackMethod::ALL.iter().position(|m| m.name() == v).map(|i| i + 1)
}

/// Orders one key column: known vocabularies by their canonical position,
/// budgets numerically, everything else lexically.
fn compare_key(column: &str, a: &str, b: &str) -> Ordering {
    let ranked = |f: &dyn Fn(&str) -> Option<usize>| match (f(a), f(b)) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    };
    match column {
        "method" => ranked(&method_rank),
        "design" => ranked(&|v| AttackMethod::DESIGNS.iter().position(|m| m.name() == v)),
        "category" => ranked(&|v| v.parse::<PromptCategory>().ok().map(|c| c as usize)),
        "purification" => ranked(&|v| {
            rank_of(v, &["none", "blur", "rotate", "jpeg60", "jpeg75", "jpeg90", "color_jitter", "external"])
        }),
        "epsilon" => match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => x.total_cmp(&y),
            _ => a.cmp(b),
        },
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricHeader {
    pub name: String,
    pub label: String,
    pub group: MetricGroup,
    pub direction: MetricDirection,
    /// `↑` or `↓`: which way a stronger defense moves the metric.
    pub arrow: String,
}

impl From<Metric> for MetricHeader {
    fn from(m: Metric) -> Self {
        Self {
            name: m.name().to_string(),
            label: m.label().to_string(),
            group: m.group(),
            direction: m.direction(),
            arrow: m.direction().arrow().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Records whose value entered this cell.
    pub record_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub keys: Vec<String>,
    /// One entry per metric header; `None` where no record has a value.
    pub cells: Vec<Option<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub grouping: Grouping,
    pub key_columns: Vec<String>,
    pub metrics: Vec<MetricHeader>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Groups `records` and aggregates each metric (mean, population std).
    pub fn build(records: &[EvaluationRecord], grouping: Grouping) -> Self {
        let mut groups: BTreeMap<Vec<String>, Vec<&EvaluationRecord>> = BTreeMap::new();
        for r in records {
            if let Some(k) = grouping.keys(r) {
                groups.entry(k).or_default().push(r);
            }
        }
        let columns = grouping.key_columns();
        let mut rows: Vec<ReportRow> = groups
            .into_iter()
            .map(|(keys, members)| ReportRow {
                keys,
                cells: Metric::ALL
                    .iter()
                    .map(|m| {
                        let (ids, values): (Vec<String>, Vec<f64>) = members
                            .iter()
                            .filter_map(|r| r.metric(*m).map(|v| (r.record_id.clone(), v)))
                            .unzip();
                        aggregate(&values).map(|a| Cell {
                            mean: a.mean,
                            std: a.std,
                            count: a.count,
                            record_ids: ids,
                        })
                    })
                    .collect(),
            })
            .collect();
        rows.sort_by(|a, b| {
            columns
                .iter()
                .zip(a.keys.iter().zip(&b.keys))
                .map(|(c, (x, y))| compare_key(c, x, y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        });
        Self {
            grouping,
            key_columns: columns.into_iter().map(String::from).collect(),
            metrics: Metric::ALL.into_iter().map(MetricHeader::from).collect(),
            rows,
        }
    }

    pub fn row(&self, keys: &[&str]) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.keys.iter().map(String::as_str).eq(keys.iter().copied()))
    }

    pub fn cell(&self, keys: &[&str], metric: Metric) -> Option<&Cell> {
        let i = self.metrics.iter().position(|h| h.name == metric.name())?;
        self.row(keys)?.cells[i].as_ref()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = self.key_columns.clone();
        for m in &self.metrics {
            h.push(format!("{}_mean", m.name));
            h.push(format!("{}_std", m.name));
        }
        h
    }

    fn value_cells(row: &ReportRow, null: &str) -> Vec<String> {
        row.cells
            .iter()
            .flat_map(|c| match c {
                Some(c) => [format!("{:.3}", c.mean), format!("{:.3}", c.std)],
                None => [null.to_string(), null.to_string()],
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let line = |cells: Vec<String>| cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
        out.push_str(&line(self.header()));
        out.push('\n');
        for row in &self.rows {
            let mut cells = row.keys.clone();
            cells.extend(Self::value_cells(row, ""));
            out.push_str(&line(cells));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut header = self.key_columns.clone();
        for m in &self.metrics {
            header.push(format!("{} {} mean", m.label, m.arrow));
            header.push(format!("{} {} std", m.label, m.arrow));
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let _ = writeln!(out, "| {} |", cells.iter().map(|c| c.replace('|', "\\|")).collect::<Vec<_>>().join(" | "));
        };
        line(&mut out, &header);
        line(&mut out, &vec!["---".to_string(); header.len()]);
        for row in &self.rows {
            let mut cells = row.keys.clone();
            cells.extend(Self::value_cells(row, "-"));
            line(&mut out, &cells);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(invalid(format!("unknown report format `{s}`"))),
        }
    }
}

pub fn render(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
        ReportFormat::Markdown => report.to_markdown(),
    }
}

/// Writes `<dir>/<stem>.<ext>` for each format; returns the paths.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>, stem: &str, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    formats
        .iter()
        .map(|f| {
            let path = dir.join(format!("{stem}.{}", f.extension()));
            std::fs::write(&path, render(report, *f))?;
            Ok(path)
        })
        .collect()
}
