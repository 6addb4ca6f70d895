//! Line-oriented session log.
//!
//! ```text
//! KAIROS-LOG/1
//! # trace=<id>
//! # controller=<name>
//! # lambda=<f64>
//! # mu=<f64>
//! # fields=index level bitrate size start end duration throughput rebuffer buffer_before buffer_after sleep point estimate quantiles
//! <one tab-separated record per chunk>
//! ```
//!
//! Numbers use the shortest decimal that parses back to the same `f64`.
//! `point` and `estimate` are `-` when absent; `quantiles` is a
//! comma-separated list or `-`.

use std::fmt::Write as _;

use super::{ChunkRecord, SessionResult};
use crate::harness::{qoe_breakdown, QoeBreakdown};

pub const LOG_MAGIC: &str = "KAIROS-LOG/1";

const FIELDS: &str = "index level bitrate size start end duration throughput rebuffer buffer_before buffer_after sleep point estimate quantiles";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl SessionResult {
    pub fn to_log(&self, lambda: f64, mu: f64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{LOG_MAGIC}");
        let _ = writeln!(out, "# trace={}", self.trace_id);
        let _ = writeln!(out, "# controller={}", self.controller);
        let _ = writeln!(out, "# lambda={lambda}");
        let _ = writeln!(out, "# mu={mu}");
        let _ = writeln!(out, "# fields={FIELDS}");
        for r in &self.records {
            let q = if r.quantiles.is_empty() {
                "-".to_string()
            } else {
                r.quantiles.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.index,
                r.level,
                r.bitrate,
                r.size,
                r.start,
                r.end,
                r.duration,
                r.throughput,
                r.rebuffer,
                r.buffer_before,
                r.buffer_after,
                r.sleep,
                opt(r.point),
                opt(r.estimate),
                q
            );
        }
        out
    }
}

/// Parsed log with the QoE recomputed from its records.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub trace_id: String,
    pub controller: String,
    pub lambda: f64,
    pub mu: f64,
    pub records: Vec<ChunkRecord>,
}

impl SessionLog {
    pub fn qoe(&self) -> QoeBreakdown {
        qoe_breakdown(&self.records, self.lambda, self.mu)
    }
}

pub fn parse_session_log(text: &str) -> Result<SessionLog, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == LOG_MAGIC => {}
        _ => return Err(format!("missing {LOG_MAGIC} header")),
    }
    let (mut trace, mut controller, mut lambda, mut mu) = (None, None, None, None);
    let mut records = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix("# ") {
            let (k, v) = meta
                .split_once('=')
                .ok_or_else(|| format!("line {n}: malformed header"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| format!("line {n}: {e}"));
            match k {
                "trace" => trace = Some(v.to_string()),
                "controller" => controller = Some(v.to_string()),
                "lambda" => lambda = Some(num(v)?),
                "mu" => mu = Some(num(v)?),
                "fields" if v != FIELDS => return Err(format!("line {n}: unexpected field list")),
                _ => {}
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 15 {
            return Err(format!("line {n}: expected 15 fields, found {}", cols.len()));
        }
        let f = |j: usize| cols[j].parse::<f64>().map_err(|e| format!("line {n} field {j}: {e}"));
        let u = |j: usize| cols[j].parse::<usize>().map_err(|e| format!("line {n} field {j}: {e}"));
        let o = |j: usize| if cols[j] == "-" { Ok(None) } else { f(j).map(Some) };
        let quantiles = if cols[14] == "-" {
            Vec::new()
        } else {
            cols[14]
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|e| format!("line {n} quantiles: {e}")))
                .collect::<Result<_, _>>()?
        };
        records.push(ChunkRecord {
            index: u(0)?,
            level: u(1)?,
            bitrate: f(2)?,
            size: f(3)?,
            start: f(4)?,
            end: f(5)?,
            duration: f(6)?,
            throughput: f(7)?,
            rebuffer: f(8)?,
            buffer_before: f(9)?,
            buffer_after: f(10)?,
            sleep: f(11)?,
            point: o(12)?,
            estimate: o(13)?,
            quantiles,
        });
    }
    Ok(SessionLog {
        trace_id: trace.ok_or("missing trace header")?,
        controller: controller.ok_or("missing controller header")?,
        lambda: lambda.ok_or("missing lambda header")?,
        mu: mu.ok_or("missing mu header")?,
        records,
    })
}
