use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, HarnessError, ScoreStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Md,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Format, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "md" => Ok(Format::Md),
            other => Err(format!("unknown report format {other:?} (expected csv or md)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowValue {
    Score { mean: f64, stderr: f64, n: usize },
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub attack: String,
    pub layout: String,
    pub value: RowValue,
}

/// Result table plus free-form `key: value` metadata (Markdown only).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub title: String,
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

fn cells(row: &ReportRow) -> [String; 6] {
    let (mean, stderr, n) = match row.value {
        RowValue::Score { mean, stderr, n } => (format!("{mean:.3}"), format!("{stderr:.3}"), n.to_string()),
        RowValue::Skipped => ("skipped".into(), "skipped".into(), "0".into()),
    };
    [row.method.clone(), row.attack.clone(), row.layout.clone(), mean, stderr, n]
}

const HEADER: [&str; 6] = ["method", "attack", "layout", "mean", "stderr", "n"];

impl Report {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for row in &self.rows {
            w.write_record(cells(row)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "# {}\n", self.title);
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "- {k}: {v}");
        }
        if !self.metadata.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "| {} |", HEADER.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(HEADER.len()));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", cells(row).join(" | "));
        }
        out
    }

    /// Methods × attacks grid of `mean ± stderr`, rows and columns in first-seen order.
    pub fn to_grid_markdown(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut attacks: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
            if !attacks.contains(&r.attack.as_str()) {
                attacks.push(&r.attack);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "| method | {} |", attacks.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(attacks.len()));
        for m in &methods {
            let cols: Vec<String> = attacks
                .iter()
                .map(|a| match self.rows.iter().find(|r| r.method == *m && r.attack == *a).map(|r| r.value) {
                    Some(RowValue::Score { mean, stderr, .. }) => format!("{mean:.1} ± {stderr:.1}"),
                    Some(RowValue::Skipped) => "skipped".into(),
                    None => "-".into(),
                })
                .collect();
            let _ = writeln!(out, "| {m} | {} |", cols.join(" | "));
        }
        out
    }

    /// Rows parsed back from [`Report::to_csv`] output.
    pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>, HarnessError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| HarnessError::Log(e.to_string()))?;
            let bad = |what: &str| HarnessError::Log(format!("report row {:?}: {what}", rec));
            if rec.len() != HEADER.len() {
                return Err(bad("wrong column count"));
            }
            let value = if &rec[3] == "skipped" {
                RowValue::Skipped
            } else {
                RowValue::Score {
                    mean: rec[3].parse().map_err(|_| bad("bad mean"))?,
                    stderr: rec[4].parse().map_err(|_| bad("bad stderr"))?,
                    n: rec[5].parse().map_err(|_| bad("bad n"))?,
                }
            };
            rows.push(ReportRow { method: rec[0].into(), attack: rec[1].into(), layout: rec[2].into(), value });
        }
        Ok(rows)
    }
}

/// Writes the report in `format`. Output depends only on the report contents.
pub fn emit_report(report: &Report, format: Format, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = match format {
        Format::Csv => report.to_csv(),
        Format::Md => report.to_markdown(),
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// How to assemble one report row from named episode groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub method: String,
    pub attack: String,
    /// Episode-log groups pooled into this row (one per agent).
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub skipped: bool,
}

/// Everything besides the episode log needed to rebuild a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub title: String,
    pub layout: String,
    pub metadata: Vec<[String; 2]>,
    pub rows: Vec<RowSpec>,
}

impl ReportSpec {
    /// Pools each row's groups: the mean is over every (agent, state) mean,
    /// the error over all pooled episodes.
    pub fn build(&self, groups: &[(String, Vec<EpisodeRecord>)]) -> Result<Report, HarnessError> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let value = if r.skipped {
                RowValue::Skipped
            } else {
                let mut parts = Vec::new();
                for name in &r.groups {
                    let log = groups
                        .iter()
                        .find(|(g, _)| g == name)
                        .map(|(_, log)| log.clone())
                        .ok_or_else(|| HarnessError::Log(format!("episode group {name} missing")))?;
                    parts.push((ScoreStats::from_episodes(&log), log));
                }
                let st = ScoreStats::combine(&parts);
                RowValue::Score { mean: st.grand_mean, stderr: st.pooled_stderr, n: st.n }
            };
            rows.push(ReportRow { method: r.method.clone(), attack: r.attack.clone(), layout: self.layout.clone(), value });
        }
        Ok(Report {
            title: self.title.clone(),
            metadata: self.metadata.iter().map(|[k, v]| (k.clone(), v.clone())).collect(),
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let text = toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ReportSpec, HarnessError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}
