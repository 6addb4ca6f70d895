//! Report files. Every number is written with `f64`'s shortest round-trip
//! form and nothing depends on wall-clock time, so identical inputs give
//! identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::comparison::{AblationSection, ComparisonReport, ControllerSummary, PairStat, SessionRow};
use super::{cdf, HarnessError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub controllers: Vec<String>,
    pub traces: Vec<String>,
    pub lambda: f64,
    pub mu: f64,
    pub summaries: Vec<ControllerSummary>,
    pub pairs: Vec<PairStat>,
    pub ablation: Option<AblationSection>,
    pub sessions: Vec<SessionRow>,
}

impl Summary {
    pub fn new(report: &ComparisonReport, lambda: f64, mu: f64) -> Self {
        Self {
            controllers: report.controllers.clone(),
            traces: report.traces.clone(),
            lambda,
            mu,
            summaries: report.summaries.clone(),
            pairs: report.pairs.clone(),
            ablation: report.ablation.clone(),
            sessions: report.rows(),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(&path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    written.push(PathBuf::from(name));
    Ok(())
}

/// File-system safe form of an id.
fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn qoe_cdf_table(report: &ComparisonReport) -> String {
    let mut out = String::from("controller\tqoe\tfraction\n");
    for c in &report.controllers {
        let v: Vec<f64> = report.sessions_of(c).iter().map(|s| s.qoe.average).collect();
        for (x, f) in cdf(&v) {
            let _ = writeln!(out, "{c}\t{x}\t{f}");
        }
    }
    out
}

pub fn submetric_table(report: &ComparisonReport) -> String {
    let mut out = String::from("controller\tqoe\tutility\trebuffer_penalty\tsmoothness_penalty\tstall_s\n");
    for s in &report.summaries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.controller, s.mean_qoe, s.utility, s.rebuffer_penalty, s.smoothness_penalty, s.mean_stall_s
        );
    }
    out
}

pub fn mape_table(report: &ComparisonReport) -> String {
    let mut out = String::from("controller\tmape_pct\tpredictions\n");
    for s in report.summaries.iter().filter(|s| s.mape.is_some()) {
        let _ = writeln!(out, "{}\t{}\t{}", s.controller, opt(s.mape), s.predictions);
    }
    out
}

pub fn timeseries_table(report: &ComparisonReport) -> String {
    let mut out =
        String::from("controller\ttrace\tchunk\tstart_s\tbitrate\tthroughput\testimate\tbuffer_s\trebuffer_s\n");
    for s in &report.sessions {
        for r in &s.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.controller,
                s.trace_id,
                r.index,
                r.start,
                r.bitrate,
                r.throughput,
                opt(r.estimate),
                r.buffer_after,
                r.rebuffer
            );
        }
    }
    out
}

pub fn ablation_table(section: &AblationSection) -> String {
    let mut out = String::from("variant\tdelta_qoe\tdelta_rebuffer_penalty\tdelta_smoothness_penalty\n");
    for d in &section.deltas {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            d.variant, d.qoe, d.rebuffer_penalty, d.smoothness_penalty
        );
    }
    out
}

/// Plain-text overview for people.
pub fn text_report(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} controllers x {} traces\n",
        report.controllers.len(),
        report.traces.len()
    );
    let _ = writeln!(
        out,
        "{:<18} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "controller", "qoe", "utility", "rebuf", "smooth", "mape%"
    );
    for s in &report.summaries {
        let _ = writeln!(
            out,
            "{:<18} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            s.controller,
            s.mean_qoe,
            s.utility,
            s.rebuffer_penalty,
            s.smoothness_penalty,
            s.mape.map_or_else(|| "-".to_string(), |m| format!("{m:.2}"))
        );
    }
    let _ = writeln!(out, "\nmean QoE improvement of row over column, % (sessions won)");
    for a in &report.controllers {
        let _ = write!(out, "{a:<18}");
        for b in &report.controllers {
            match report.pair(a, b) {
                Some(p) => {
                    let pct = p.improvement_pct.map_or_else(|| "-".to_string(), |v| format!("{v:+.2}"));
                    let _ = write!(out, " {:>16}", format!("{pct} ({:.0}%)", 100.0 * p.won_fraction));
                }
                None => {
                    let _ = write!(out, " {:>16}", "");
                }
            }
        }
        out.push('\n');
    }
    if let Some(ab) = &report.ablation {
        let _ = writeln!(out, "\nablation deltas vs {}", ab.base);
        for d in &ab.deltas {
            let _ = writeln!(
                out,
                "{:<18} qoe {:+.4}  rebuffer {:+.4}  smoothness {:+.4}",
                d.variant, d.qoe, d.rebuffer_penalty, d.smoothness_penalty
            );
        }
    }
    out
}

/// Writes figure tables, `summary.json`, `report.txt` and one session log
/// per (controller, trace) under `sessions/`. Returns the relative paths
/// written, in order.
pub fn write_report(report: &ComparisonReport, dir: &Path, lambda: f64, mu: f64) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    write(dir, "fig_qoe_cdf.tsv", &qoe_cdf_table(report), &mut written)?;
    write(dir, "fig_submetrics.tsv", &submetric_table(report), &mut written)?;
    write(dir, "fig_mape.tsv", &mape_table(report), &mut written)?;
    write(dir, "fig_timeseries.tsv", &timeseries_table(report), &mut written)?;
    if let Some(ab) = &report.ablation {
        write(dir, "fig_ablation.tsv", &ablation_table(ab), &mut written)?;
    }
    let mut json = serde_json::to_string_pretty(&Summary::new(report, lambda, mu)).expect("summary serialises");
    json.push('\n');
    write(dir, "summary.json", &json, &mut written)?;
    write(dir, "report.txt", &text_report(report), &mut written)?;
    for s in &report.sessions {
        let name = format!("sessions/{}/{}.log", slug(&s.controller), slug(&s.trace_id));
        write(dir, &name, &s.to_log(lambda, mu), &mut written)?;
    }
    Ok(written)
}
