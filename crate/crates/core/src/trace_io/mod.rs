//! Bandwidth traces and video manifests.
//!
//! The canonical trace format is line oriented:
//!
//! ```text
//! # id=norway_bus_13
//! # span=320
//! 0 1.25
//! 1.5 2.0
//! ```
//!
//! Each data line is `time_s bandwidth_mbps`. Lines starting with `#` are
//! comments; the `id=` and `span=` keys are recognised in comments. Times are
//! shifted on ingest so that the first sample sits at `t = 0`. The bandwidth
//! recorded at a sample holds until the next sample, and the whole timeline
//! repeats with period `span` once a session outlives it.

mod manifest;
mod synth;

pub use manifest::VideoManifest;
pub use synth::{generate_trace, SyntheticTraceSpec};

use std::fmt::Write as _;
use std::path::Path;

/// Upper bound accepted for a bandwidth sample, in Mbps.
pub const MAX_BANDWIDTH_MBPS: f64 = 1e4;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: time {time} does not increase past {previous}")]
    NonIncreasingTime { line: usize, time: f64, previous: f64 },
    #[error("line {line}: bandwidth {bandwidth} Mbps is outside (0, 1e4)")]
    BadBandwidth { line: usize, bandwidth: f64 },
    #[error("trace has no samples")]
    Empty,
    #[error("span {span} must exceed the last sample time {last}")]
    BadSpan { span: f64, last: f64 },
    #[error("invalid synthetic trace spec: {0}")]
    InvalidSpec(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Seconds since the start of the trace.
    pub time: f64,
    /// Mbps in effect from `time` until the next sample.
    pub bandwidth: f64,
}

/// Piecewise-constant bandwidth timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    id: String,
    samples: Vec<Sample>,
    span: f64,
}

impl NetworkTrace {
    /// Builds a trace from `(time, bandwidth)` pairs, normalising times so the
    /// first sample is at zero. `span` of `None` picks the default period
    /// (last time plus the median sample gap).
    pub fn new(
        id: impl Into<String>,
        pairs: &[(f64, f64)],
        span: Option<f64>,
    ) -> Result<Self, TraceError> {
        let first = pairs.first().ok_or(TraceError::Empty)?.0;
        let mut samples = Vec::with_capacity(pairs.len());
        for (i, &(time, bandwidth)) in pairs.iter().enumerate() {
            let line = i + 1;
            if !time.is_finite() || time < 0.0 {
                return Err(TraceError::Malformed {
                    line,
                    reason: format!("time {time} must be finite and nonnegative"),
                });
            }
            if !(bandwidth.is_finite() && bandwidth > 0.0 && bandwidth < MAX_BANDWIDTH_MBPS) {
                return Err(TraceError::BadBandwidth { line, bandwidth });
            }
            let time = time - first;
            if let Some(prev) = samples.last().map(|s: &Sample| s.time) {
                if time <= prev {
                    return Err(TraceError::NonIncreasingTime {
                        line,
                        time: time + first,
                        previous: prev + first,
                    });
                }
            }
            samples.push(Sample { time, bandwidth });
        }
        let last = samples[samples.len() - 1].time;
        let span = match span {
            Some(s) => s,
            None => last + median_gap(&samples),
        };
        if !(span.is_finite() && span > last) {
            return Err(TraceError::BadSpan { span, last });
        }
        Ok(Self {
            id: id.into(),
            samples,
            span,
        })
    }

    /// A single-rate trace.
    pub fn constant(id: impl Into<String>, bandwidth: f64) -> Result<Self, TraceError> {
        Self::new(id, &[(0.0, bandwidth)], Some(1.0))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Wrap-around period in seconds.
    pub fn span(&self) -> f64 {
        self.span
    }

    /// Returns a copy with every bandwidth multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, TraceError> {
        let pairs: Vec<(f64, f64)> = self
            .samples
            .iter()
            .map(|s| (s.time, s.bandwidth * factor))
            .collect();
        Self::new(self.id.clone(), &pairs, Some(self.span))
    }

    /// Index of the segment in effect at `t` (already reduced into `[0, span)`).
    pub(crate) fn segment_index(&self, t: f64) -> usize {
        // Largest i with samples[i].time <= t; samples[0].time == 0.
        self.samples.partition_point(|s| s.time <= t).saturating_sub(1)
    }

    /// End of segment `idx` within one period.
    pub(crate) fn segment_end(&self, idx: usize) -> f64 {
        self.samples.get(idx + 1).map_or(self.span, |s| s.time)
    }

    /// Reduces an absolute time into `[0, span)`, returning the reduced time
    /// and the period offset that was removed.
    pub(crate) fn wrap(&self, t: f64) -> (f64, f64) {
        if t < self.span {
            return (t, 0.0);
        }
        let periods = (t / self.span).floor();
        let mut offset = periods * self.span;
        let mut local = t - offset;
        // Guard against rounding pushing `local` to exactly `span`.
        if local >= self.span {
            offset += self.span;
            local -= self.span;
        }
        if local < 0.0 {
            offset -= self.span;
            local += self.span;
        }
        (local, offset)
    }

    /// Bandwidth in effect at absolute time `t >= 0`, wrapping cyclically.
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        let (local, _) = self.wrap(t.max(0.0));
        self.samples[self.segment_index(local)].bandwidth
    }

    /// Time-averaged bandwidth over one period.
    pub fn mean_bandwidth(&self) -> f64 {
        let total: f64 = (0..self.samples.len())
            .map(|i| self.samples[i].bandwidth * (self.segment_end(i) - self.samples[i].time))
            .sum();
        total / self.span
    }

    /// Renders the canonical text form; `parse_trace` reads it back exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# id={}", self.id);
        let _ = writeln!(out, "# span={}", self.span);
        for s in &self.samples {
            let _ = writeln!(out, "{} {}", s.time, s.bandwidth);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut trace = parse_trace(&text)?;
        if trace.id.is_empty() {
            trace.id = stem;
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_text()).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn median_gap(samples: &[Sample]) -> f64 {
    if samples.len() < 2 {
        return 1.0;
    }
    let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].time - w[0].time).collect();
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    }
}

/// Parses the canonical `time_s bandwidth_mbps` format.
pub fn parse_trace(text: &str) -> Result<NetworkTrace, TraceError> {
    let mut id = String::new();
    let mut span = None;
    let mut pairs = Vec::new();
    let mut lines_of = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("id=") {
                id = v.trim().to_string();
            } else if let Some(v) = comment.strip_prefix("span=") {
                span = Some(v.trim().parse::<f64>().map_err(|e| TraceError::Malformed {
                    line: line_no,
                    reason: format!("bad span: {e}"),
                })?);
            }
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(t), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(TraceError::Malformed {
                line: line_no,
                reason: "expected `time_s bandwidth_mbps`".into(),
            });
        };
        let parse = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|e| TraceError::Malformed {
                line: line_no,
                reason: format!("bad {what} `{s}`: {e}"),
            })
        };
        pairs.push((parse(t, "time")?, parse(b, "bandwidth")?));
        lines_of.push(line_no);
    }
    // Re-map errors from pair index to the source line number.
    NetworkTrace::new(id, &pairs, span).map_err(|e| match e {
        TraceError::Malformed { line, reason } => TraceError::Malformed {
            line: lines_of[line - 1],
            reason,
        },
        TraceError::NonIncreasingTime {
            line,
            time,
            previous,
        } => TraceError::NonIncreasingTime {
            line: lines_of[line - 1],
            time,
            previous,
        },
        TraceError::BadBandwidth { line, bandwidth } => TraceError::BadBandwidth {
            line: lines_of[line - 1],
            bandwidth,
        },
        other => other,
    })
}

/// Converts a mahimahi packet-delivery trace (one millisecond timestamp per
/// 1500-byte delivery opportunity) into the canonical form by counting bytes
/// in fixed `bin_s` windows. Empty bins are floored at 0.01 Mbps.
pub fn parse_mahimahi(id: &str, text: &str, bin_s: f64) -> Result<NetworkTrace, TraceError> {
    const PACKET_BITS: f64 = 1500.0 * 8.0;
    if !(bin_s > 0.0) {
        return Err(TraceError::InvalidSpec(format!("bin width {bin_s} must be positive")));
    }
    let mut stamps = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ms: f64 = line.parse().map_err(|e| TraceError::Malformed {
            line: n + 1,
            reason: format!("bad timestamp `{line}`: {e}"),
        })?;
        stamps.push(ms / 1000.0);
    }
    let last = stamps.iter().copied().fold(f64::NAN, f64::max);
    if stamps.is_empty() || !last.is_finite() {
        return Err(TraceError::Empty);
    }
    let bins = ((last / bin_s).floor() as usize) + 1;
    let mut counts = vec![0usize; bins];
    for s in stamps {
        counts[((s / bin_s).floor() as usize).min(bins - 1)] += 1;
    }
    let pairs: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as f64 * bin_s, (c as f64 * PACKET_BITS / bin_s / 1e6).max(0.01)))
        .collect();
    NetworkTrace::new(id, &pairs, Some(bins as f64 * bin_s))
}

/// Loads every `*.txt`/`*.log` trace in `dir`, sorted by file name.
pub fn load_trace_dir(dir: &Path) -> Result<Vec<NetworkTrace>, TraceError> {
    let io_err = |source| TraceError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("txt") | Some("log") | Some("trace")
                )
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| NetworkTrace::load(p)).collect()
}
