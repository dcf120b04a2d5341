//! Result tables in markdown, CSV and JSON, plus normal-map images.
//!
//! Markdown and CSV round to one decimal, half away from zero, applied to
//! the shortest decimal representation of the value (so 18.75 gives
//! "18.8" even though binary rounding would not). JSON keeps full
//! precision and holds everything needed to re-render the other formats.

pub mod ppm;

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{NormalStats, SegStats};
use crate::pipeline::{Metrics, RunRecord, Stage, Task};
use crate::synthdata::SEG_CLASS_NAMES;

pub use ppm::{normals_to_rgb, parse_ppm, render_normals, write_ppm, Image};

pub const NORMAL_COLUMNS: [&str; 6] = ["Mean", "Median", "RMSE", "11.25", "22.5", "30"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Md,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(Self::Md),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}` (md, csv, json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalRow {
    pub model: String,
    pub region: Option<String>,
    pub stats: NormalStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegRow {
    pub model: String,
    pub stats: SegStats,
}

/// Whether the distilled model beat its baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub candidate: String,
    pub baseline: String,
    pub metric: String,
    pub candidate_value: f64,
    pub baseline_value: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub task: Task,
    pub normals: Vec<NormalRow>,
    pub segmentation: Vec<SegRow>,
    pub trends: Vec<Trend>,
}

/// One decimal, half away from zero, on the shortest decimal form.
pub fn round1(x: f64) -> String {
    if !x.is_finite() {
        return "n/a".into();
    }
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let frac = frac.as_bytes();
    let mut digits: Vec<u8> = int.bytes().map(|b| b - b'0').collect();
    digits.push(frac.first().map_or(0, |b| b - b'0'));
    if frac.get(1).is_some_and(|&b| b >= b'5') {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let (last, head) = digits.split_last().expect("at least two digits");
    let negative = x < 0.0 && digits.iter().any(|&d| d != 0);
    let head: String = head.iter().map(|d| char::from(b'0' + d)).collect();
    format!("{}{}.{}", if negative { "-" } else { "" }, head, last)
}

fn normal_values(s: &NormalStats) -> [f64; 6] {
    [s.mean_deg, s.median_deg, s.rmse_deg, s.pct_11_25, s.pct_22_5, s.pct_30]
}

fn trend_of(report_rows: &Report, candidate: Stage, baseline: Stage) -> Option<Trend> {
    let (c, b) = (candidate.model_tag(), baseline.model_tag());
    if candidate.is_segmentation() {
        let get = |tag: &str| report_rows.segmentation.iter().find(|r| r.model == tag).map(|r| r.stats.mean_iou);
        let (cv, bv) = (get(c)?, get(b)?);
        Some(Trend {
            candidate: c.into(),
            baseline: b.into(),
            metric: "mIoU".into(),
            candidate_value: cv,
            baseline_value: bv,
            holds: cv >= bv,
        })
    } else {
        let get = |tag: &str| {
            report_rows
                .normals
                .iter()
                .find(|r| r.model == tag && r.region.is_none())
                .map(|r| r.stats.mean_deg)
        };
        let (cv, bv) = (get(c)?, get(b)?);
        Some(Trend {
            candidate: c.into(),
            baseline: b.into(),
            metric: "mean angular error".into(),
            candidate_value: cv,
            baseline_value: bv,
            holds: cv <= bv,
        })
    }
}

/// Collects the tables of every stage the manifest ran, in execution order.
pub fn build_report(record: &RunRecord) -> Result<Report> {
    let mut report = Report {
        run_id: record.run_id.clone(),
        task: record.manifest.task,
        normals: Vec::new(),
        segmentation: Vec::new(),
        trends: Vec::new(),
    };
    let stages = record.manifest.ordered_stages();
    let mut regions = Vec::new();
    for &stage in &stages {
        let tag = stage.model_tag();
        let missing = || Error::MissingTable {
            stage: stage.name().into(),
            model: tag.into(),
        };
        let table = record.table(tag, None).ok_or_else(missing)?;
        match &table.metrics {
            Metrics::Normals(stats) => {
                report.normals.push(NormalRow {
                    model: tag.into(),
                    region: None,
                    stats: stats.clone(),
                });
                for t in record.tables.iter().filter(|t| t.model == tag && t.region.is_some()) {
                    if let Metrics::Normals(stats) = &t.metrics {
                        regions.push(NormalRow {
                            model: tag.into(),
                            region: t.region.clone(),
                            stats: stats.clone(),
                        });
                    }
                }
            }
            Metrics::Segmentation(stats) => report.segmentation.push(SegRow {
                model: tag.into(),
                stats: stats.clone(),
            }),
        }
    }
    report.normals.extend(regions);
    for (candidate, baseline) in [(Stage::FinetuneG, Stage::FinetuneF), (Stage::SegOurs, Stage::SegScratch)] {
        if let Some(t) = trend_of(&report, candidate, baseline) {
            report.trends.push(t);
        }
    }
    Ok(report)
}

pub fn emit_report(record: &RunRecord, format: Format) -> Result<String> {
    Ok(render(&build_report(record)?, format))
}

pub fn parse_report_json(text: &str) -> Result<Report> {
    Ok(serde_json::from_str(text)?)
}

fn trend_line(t: &Trend) -> String {
    let (op, scale) = if t.metric == "mIoU" { (">=", 100.0) } else { ("<=", 1.0) };
    format!(
        "Trend: {} {} {} {} {} {}: {}",
        t.metric,
        t.candidate,
        round1(scale * t.candidate_value),
        op,
        t.baseline,
        round1(scale * t.baseline_value),
        if t.holds { "holds" } else { "does not hold" }
    )
}

fn seg_cells(s: &SegStats) -> Vec<String> {
    let mut cells: Vec<String> = s
        .per_class_iou
        .iter()
        .map(|v| v.map_or_else(|| "-".to_string(), |v| round1(100.0 * v)))
        .collect();
    cells.push(round1(100.0 * s.mean_iou));
    cells
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Md => render_md(report),
        Format::Csv => render_csv(report),
    }
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn md_rule(n: usize) -> String {
    format!("|{}\n", "---|".repeat(n))
}

fn render_md(r: &Report) -> String {
    let mut out = format!("# Run {}\n\n", r.run_id);
    let overall: Vec<&NormalRow> = r.normals.iter().filter(|n| n.region.is_none()).collect();
    if !overall.is_empty() {
        out.push_str("## Surface normals (angular error in degrees, % of pixels within threshold)\n\n");
        let mut head = vec!["Model".to_string()];
        head.extend(NORMAL_COLUMNS.iter().map(|c| c.to_string()));
        out.push_str(&md_row(&head));
        out.push_str(&md_rule(head.len()));
        for row in overall {
            let mut cells = vec![row.model.clone()];
            cells.extend(normal_values(&row.stats).iter().map(|&v| round1(v)));
            out.push_str(&md_row(&cells));
        }
        out.push('\n');
    }
    let regional: Vec<&NormalRow> = r.normals.iter().filter(|n| n.region.is_some()).collect();
    if !regional.is_empty() {
        out.push_str("## Surface normals by region\n\n");
        let mut head = vec!["Model".to_string(), "Region".to_string()];
        head.extend(NORMAL_COLUMNS.iter().map(|c| c.to_string()));
        out.push_str(&md_row(&head));
        out.push_str(&md_rule(head.len()));
        for row in regional {
            let mut cells = vec![row.model.clone(), row.region.clone().unwrap_or_default()];
            cells.extend(normal_values(&row.stats).iter().map(|&v| round1(v)));
            out.push_str(&md_row(&cells));
        }
        out.push('\n');
    }
    if !r.segmentation.is_empty() {
        out.push_str("## Segmentation (IoU %)\n\n");
        let mut head = vec!["Model".to_string()];
        head.extend(SEG_CLASS_NAMES.iter().map(|c| c.to_string()));
        head.push("mIoU".into());
        out.push_str(&md_row(&head));
        out.push_str(&md_rule(head.len()));
        for row in &r.segmentation {
            let mut cells = vec![row.model.clone()];
            cells.extend(seg_cells(&row.stats));
            out.push_str(&md_row(&cells));
        }
        out.push_str("\n\"-\" marks a class absent from both prediction and ground truth; it is left out of mIoU.\n\n");
    }
    for t in &r.trends {
        out.push_str(&trend_line(t));
        out.push('\n');
    }
    out
}

fn render_csv(r: &Report) -> String {
    let mut out = String::new();
    if !r.normals.is_empty() {
        out.push_str("model,region,");
        out.push_str(&NORMAL_COLUMNS.join(","));
        out.push('\n');
        for row in &r.normals {
            let vals: Vec<String> = normal_values(&row.stats).iter().map(|&v| round1(v)).collect();
            let _ = writeln!(out, "{},{},{}", csv_field(&row.model), csv_field(row.region.as_deref().unwrap_or("")), vals.join(","));
        }
    }
    if !r.segmentation.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "model,{},mIoU", SEG_CLASS_NAMES.join(","));
        for row in &r.segmentation {
            let _ = writeln!(out, "{},{}", csv_field(&row.model), seg_cells(&row.stats).join(","));
        }
    }
    for t in &r.trends {
        let _ = writeln!(out, "# {}", trend_line(t));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
