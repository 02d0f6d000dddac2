//! Experiment reports: per-run rows, box-plot summaries, CSV and SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub fold: usize,
    pub repeat: usize,
    pub macro_pr_auc: f64,
    pub macro_f1: f64,
    pub per_class_ap: Vec<f64>,
    /// Component indices the fold's model used.
    pub selected: Vec<usize>,
}

/// Box-plot statistics; quartiles use linear interpolation between order
/// statistics, whiskers are the extreme points within 1.5 IQR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub min: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("no values to summarise".into()));
        }
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        let q1 = quantile(&s, 0.25);
        let q3 = quantile(&s, 0.75);
        let iqr = q3 - q1;
        let lo_fence = q1 - 1.5 * iqr;
        let hi_fence = q3 + 1.5 * iqr;
        Ok(Self {
            n: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: quantile(&s, 0.5),
            q1,
            q3,
            whisker_low: *s.iter().find(|&&x| x >= lo_fence).unwrap(),
            whisker_high: *s.iter().rev().find(|&&x| x <= hi_fence).unwrap(),
            min: s[0],
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Short name of the feature configuration, e.g. `sm+fnc`.
    pub label: String,
    pub classes: Vec<String>,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<MetricSummary>,
    pub config: serde_json::Value,
}

impl ExperimentReport {
    pub fn new(label: String, classes: Vec<String>, seed: u64, rows: Vec<ReportRow>, config: serde_json::Value) -> Result<Self> {
        let mut summary = Vec::new();
        for (name, values) in Self::metric_columns(&classes, &rows) {
            summary.push(MetricSummary {
                metric: name,
                stats: BoxStats::from_values(&values)?,
            });
        }
        Ok(Self {
            label,
            classes,
            seed,
            rows,
            summary,
            config,
        })
    }

    fn metric_columns(classes: &[String], rows: &[ReportRow]) -> Vec<(String, Vec<f64>)> {
        let mut cols = vec![
            ("macro_pr_auc".to_string(), rows.iter().map(|r| r.macro_pr_auc).collect()),
            ("macro_f1".to_string(), rows.iter().map(|r| r.macro_f1).collect()),
        ];
        for (c, name) in classes.iter().enumerate() {
            cols.push((format!("ap_{name}"), rows.iter().map(|r| r.per_class_ap[c]).collect()));
        }
        cols
    }

    pub fn metric(&self, name: &str) -> Option<&BoxStats> {
        self.summary.iter().find(|m| m.metric == name).map(|m| &m.stats)
    }
}

pub const REPORT_HEADER: &str = "config,fold,repeat,metric,value\n";
pub const SUMMARY_HEADER: &str = "config,metric,n,mean,median,q1,q3,whisker_low,whisker_high,min,max\n";

/// Rows of `report.csv` (without header).
pub fn report_csv_rows(r: &ExperimentReport) -> String {
    let mut out = String::new();
    for row in &r.rows {
        let _ = writeln!(out, "{},{},{},macro_pr_auc,{}", r.label, row.fold, row.repeat, row.macro_pr_auc);
        let _ = writeln!(out, "{},{},{},macro_f1,{}", r.label, row.fold, row.repeat, row.macro_f1);
        for (c, name) in r.classes.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},ap_{},{}", r.label, row.fold, row.repeat, name, row.per_class_ap[c]);
        }
    }
    out
}

pub fn summary_csv_rows(r: &ExperimentReport) -> String {
    let mut out = String::new();
    for m in &r.summary {
        let s = &m.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.label, m.metric, s.n, s.mean, s.median, s.q1, s.q3, s.whisker_low, s.whisker_high, s.min, s.max
        );
    }
    out
}

/// Box plots of macro PR-AUC and macro F1, one pair per report.
pub fn render_svg(reports: &[ExperimentReport]) -> String {
    let metrics = ["macro_pr_auc", "macro_f1"];
    let box_w = 36.0;
    let group_w = 110.0;
    let (left, top, plot_h) = (60.0, 30.0, 300.0);
    let width = left + group_w * reports.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 60.0;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let colors = ["#4477aa", "#ee6677"];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{x2}" y1="{yv:.1}" y2="{yv:.1}" stroke="#dddddd"/><text x="{tx}" y="{ty:.1}" text-anchor="end">{v:.1}</text>"##,
            x2 = width - 20.0,
            yv = y(v),
            tx = left - 6.0,
            ty = y(v) + 4.0
        );
    }
    for (g, r) in reports.iter().enumerate() {
        let gx = left + group_w * g as f64 + 15.0;
        for (mi, m) in metrics.iter().enumerate() {
            let Some(st) = r.metric(m) else { continue };
            let x = gx + mi as f64 * (box_w + 8.0);
            let cx = x + box_w / 2.0;
            let c = colors[mi];
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="{c}"/>"#,
                y(st.whisker_high),
                y(st.whisker_low)
            );
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{box_w}" height="{:.1}" fill="{c}" fill-opacity="0.35" stroke="{c}"/>"#,
                y(st.q3),
                (y(st.q1) - y(st.q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" x2="{x2:.1}" y1="{ym:.1}" y2="{ym:.1}" stroke="black" stroke-width="2"/>"#,
                x2 = x + box_w,
                ym = y(st.median)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            gx + box_w + 4.0,
            top + plot_h + 18.0,
            escape(&r.label)
        );
    }
    for (mi, m) in metrics.iter().enumerate() {
        let lx = left + mi as f64 * 120.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{}" y="{:.1}">{m}</text>"#,
            top + plot_h + 32.0,
            colors[mi],
            lx + 14.0,
            top + plot_h + 41.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `report.csv`, `summary.csv`, `report.json` and `report.svg`.
pub fn write_reports(dir: impl AsRef<Path>, reports: &[ExperimentReport]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut report = REPORT_HEADER.to_string();
    let mut summary = SUMMARY_HEADER.to_string();
    for r in reports {
        report.push_str(&report_csv_rows(r));
        summary.push_str(&summary_csv_rows(r));
    }
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    };
    write("report.csv", &report)?;
    write("summary.csv", &summary)?;
    write("report.json", &serde_json::to_string_pretty(reports)?)?;
    write("report.svg", &render_svg(reports))
}
