use std::fmt::Write as _;
use std::path::Path;

use super::TraceError;

/// Bitrate ladder and chunking of the streamed video.
///
/// Text form (keys in any order, `#` comments ignored, `sizes:` table last
/// and optional):
///
/// ```text
/// ladder = 0.3 0.75 1.2 1.85 2.85 4.3
/// chunk_duration = 4
/// num_chunks = 48
/// sizes:
/// 1.2 3 4.8 7.4 11.4 17.2
/// ...one row of megabits per chunk...
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifest {
    ladder: Vec<f64>,
    chunk_duration: f64,
    num_chunks: usize,
    chunk_sizes: Option<Vec<Vec<f64>>>,
}

impl Default for VideoManifest {
    /// Six-rung ladder, 48 chunks of 4 s.
    fn default() -> Self {
        Self {
            ladder: vec![0.3, 0.75, 1.2, 1.85, 2.85, 4.3],
            chunk_duration: 4.0,
            num_chunks: 48,
            chunk_sizes: None,
        }
    }
}

impl VideoManifest {
    pub fn new(
        ladder: Vec<f64>,
        chunk_duration: f64,
        num_chunks: usize,
        chunk_sizes: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, TraceError> {
        let bad = |m: String| Err(TraceError::InvalidManifest(m));
        if ladder.len() < 2 {
            return bad(format!("ladder needs at least 2 rungs, got {}", ladder.len()));
        }
        if ladder.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("ladder bitrates must be positive".into());
        }
        if ladder.windows(2).any(|w| w[1] <= w[0]) {
            return bad("ladder must be strictly increasing".into());
        }
        if !(chunk_duration.is_finite() && chunk_duration > 0.0) {
            return bad(format!("chunk_duration {chunk_duration} must be positive"));
        }
        if num_chunks < 2 {
            return bad(format!("num_chunks {num_chunks} must be at least 2"));
        }
        if let Some(table) = &chunk_sizes {
            if table.len() != num_chunks {
                return bad(format!("size table has {} rows, expected {num_chunks}", table.len()));
            }
            for (i, row) in table.iter().enumerate() {
                if row.len() != ladder.len() {
                    return bad(format!("size row {i} has {} entries", row.len()));
                }
                if row.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad(format!("size row {i} has a nonpositive entry"));
                }
            }
        }
        Ok(Self {
            ladder,
            chunk_duration,
            num_chunks,
            chunk_sizes,
        })
    }

    /// Bitrates in Mbps, lowest first.
    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    pub fn levels(&self) -> usize {
        self.ladder.len()
    }

    pub fn bitrate(&self, level: usize) -> f64 {
        self.ladder[level]
    }

    pub fn max_bitrate(&self) -> f64 {
        self.ladder[self.ladder.len() - 1]
    }

    /// Seconds of video per chunk.
    pub fn chunk_duration(&self) -> f64 {
        self.chunk_duration
    }

    pub fn num_chunks(&self) -> usize {
        self.num_chunks
    }

    pub fn chunk_sizes(&self) -> Option<&[Vec<f64>]> {
        self.chunk_sizes.as_deref()
    }

    /// Size of chunk `index` at `level`, in megabits.
    pub fn chunk_size(&self, index: usize, level: usize) -> f64 {
        match &self.chunk_sizes {
            Some(table) => table[index][level],
            None => self.ladder[level] * self.chunk_duration,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "ladder = {}", join(&self.ladder));
        let _ = writeln!(out, "chunk_duration = {}", self.chunk_duration);
        let _ = writeln!(out, "num_chunks = {}", self.num_chunks);
        if let Some(table) = &self.chunk_sizes {
            let _ = writeln!(out, "sizes:");
            for row in table {
                let _ = writeln!(out, "{}", join(row));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let bad = |line: usize, m: String| TraceError::InvalidManifest(format!("line {line}: {m}"));
        let nums = |line: usize, s: &str| -> Result<Vec<f64>, TraceError> {
            s.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|e| bad(line, format!("`{x}`: {e}"))))
                .collect()
        };
        let mut ladder = None;
        let mut duration = None;
        let mut count = None;
        let mut sizes: Option<Vec<Vec<f64>>> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(table) = sizes.as_mut() {
                table.push(nums(line_no, line)?);
                continue;
            }
            if line == "sizes:" {
                sizes = Some(Vec::new());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line_no, "expected `key = value`".into()))?;
            let value = value.trim();
            match key.trim() {
                "ladder" => ladder = Some(nums(line_no, value)?),
                "chunk_duration" => {
                    duration = Some(
                        value
                            .parse::<f64>()
                            .map_err(|e| bad(line_no, format!("chunk_duration: {e}")))?,
                    )
                }
                "num_chunks" => {
                    count = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| bad(line_no, format!("num_chunks: {e}")))?,
                    )
                }
                other => return Err(bad(line_no, format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| TraceError::InvalidManifest(format!("missing `{k}`"));
        Self::new(
            ladder.ok_or_else(|| missing("ladder"))?,
            duration.ok_or_else(|| missing("chunk_duration"))?,
            count.ok_or_else(|| missing("num_chunks"))?,
            sizes,
        )
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}
