//! Trace-driven virtual player.
//!
//! Chunks are fetched one at a time over a piecewise-constant bandwidth
//! trace. Each request costs one round trip before data flows; stalls happen
//! when a download outlasts the buffer, and when a finished chunk would push
//! the buffer past capacity the player idles for the excess.

mod log;

pub use log::{parse_session_log, SessionLog, LOG_MAGIC};

use serde::{Deserialize, Serialize};

use crate::baseline::{hm_predict, BaselineError, ErrorHistory};
use crate::controller::{
    adjust_prediction, bola_decide, mpc_decide, Adjustment, ControllerConfig, ControllerError,
    Estimator, PlayerState, Policy,
};
use crate::harness::{qoe_breakdown, QoeBreakdown};
use crate::predictor::{padded_window, Observation, PredictorError};
use crate::trace_io::{NetworkTrace, VideoManifest};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("chunk {chunk}: {source}")]
    Predictor {
        chunk: usize,
        #[source]
        source: PredictorError,
    },
    #[error("chunk {chunk}: {source}")]
    Baseline {
        chunk: usize,
        #[source]
        source: BaselineError,
    },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("invalid session setup: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Buffer capacity, seconds.
    pub buffer_max: f64,
    /// Per-request round trip, seconds.
    pub rtt: f64,
    /// Trace time at which the session starts, seconds.
    pub start_offset: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            buffer_max: 60.0,
            rtt: 0.08,
            start_offset: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.buffer_max > 0.0 && self.buffer_max.is_finite()) {
            return Err(SimError::Config("buffer_max must be positive".into()));
        }
        if !(self.rtt >= 0.0 && self.rtt.is_finite()) {
            return Err(SimError::Config("rtt must be finite and nonnegative".into()));
        }
        if !(self.start_offset >= 0.0 && self.start_offset.is_finite()) {
            return Err(SimError::Config("start_offset must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// One downloaded chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub index: usize,
    pub level: usize,
    /// Mbps.
    pub bitrate: f64,
    /// Megabits.
    pub size: f64,
    /// Request time, wall seconds.
    pub start: f64,
    /// Last-byte time, wall seconds.
    pub end: f64,
    /// `end - start`, including the round trip.
    pub duration: f64,
    /// Goodput `size / (duration - rtt)`, Mbps.
    pub throughput: f64,
    pub rebuffer: f64,
    pub buffer_before: f64,
    pub buffer_after: f64,
    /// Idle time after the download because the buffer was full.
    pub sleep: f64,
    /// Quantiles the controller saw, Mbps (empty for non-learned policies).
    pub quantiles: Vec<f64>,
    /// Unadjusted point prediction of this chunk's throughput.
    pub point: Option<f64>,
    /// Throughput the planner used.
    pub estimate: Option<f64>,
}

impl ChunkRecord {
    pub fn observation(&self) -> Observation {
        Observation {
            throughput: self.throughput,
            buffer: self.buffer_after,
            rebuffer: self.rebuffer,
            latency: self.duration,
            completed_at: self.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub trace_id: String,
    pub controller: String,
    pub records: Vec<ChunkRecord>,
    pub qoe: QoeBreakdown,
}

impl SessionResult {
    pub fn total_rebuffer(&self) -> f64 {
        self.records.iter().map(|r| r.rebuffer).sum()
    }

    pub fn wall_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.end + r.sleep)
    }
}

/// Seconds from `start` until `size` megabits have been delivered, plus
/// `rtt`. Data starts flowing at `start`; the trace repeats past its span.
pub fn download_time(trace: &NetworkTrace, start: f64, size: f64, rtt: f64) -> f64 {
    if !(size > 0.0) {
        return rtt;
    }
    let (mut local, _) = trace.wrap(start.max(0.0));
    let samples = trace.samples();
    let mut idx = trace.segment_index(local);
    let mut remaining = size;
    let mut elapsed = 0.0;
    loop {
        let bw = samples[idx].bandwidth;
        let seg_left = trace.segment_end(idx) - local;
        let can = bw * seg_left;
        if can >= remaining {
            elapsed += remaining / bw;
            return elapsed + rtt;
        }
        remaining -= can;
        elapsed += seg_left;
        idx += 1;
        if idx == samples.len() {
            idx = 0;
        }
        local = samples[idx].time;
    }
}

/// Downloads chunk `state.next_chunk` at `level` and returns the next state
/// with the emitted record (prediction fields left empty).
pub fn step(
    state: &PlayerState,
    level: usize,
    trace: &NetworkTrace,
    manifest: &VideoManifest,
    sim: &SimConfig,
) -> (PlayerState, ChunkRecord) {
    let index = state.next_chunk;
    let size = manifest.chunk_size(index, level);
    let start = state.wall_time;
    let d = download_time(trace, sim.start_offset + start, size, sim.rtt);
    let rebuffer = (d - state.buffer).max(0.0);
    let raw = (state.buffer - d).max(0.0) + manifest.chunk_duration();
    let (buffer_after, sleep) = if raw > sim.buffer_max {
        (sim.buffer_max, raw - sim.buffer_max)
    } else {
        (raw, 0.0)
    };
    let end = start + d;
    let record = ChunkRecord {
        index,
        level,
        bitrate: manifest.bitrate(level),
        size,
        start,
        end,
        duration: d,
        throughput: size / (d - sim.rtt),
        rebuffer,
        buffer_before: state.buffer,
        buffer_after,
        sleep,
        quantiles: Vec::new(),
        point: None,
        estimate: None,
    };
    let next = PlayerState {
        buffer: buffer_after,
        wall_time: end + sleep,
        prev_level: Some(level),
        next_chunk: index + 1,
    };
    (next, record)
}

struct Decision {
    level: usize,
    quantiles: Vec<f64>,
    point: Option<f64>,
    estimate: Option<f64>,
}

fn decide(
    policy: &Policy,
    state: &PlayerState,
    records: &[ChunkRecord],
    errors: &ErrorHistory,
    manifest: &VideoManifest,
    ctrl: &ControllerConfig,
) -> Result<Decision, SimError> {
    let chunk = state.next_chunk;
    let plain = |level| Decision {
        level,
        quantiles: Vec::new(),
        point: None,
        estimate: None,
    };
    match policy {
        Policy::Bola { .. } => Ok(plain(bola_decide(state, manifest, ctrl))),
        Policy::FixedPlan { levels, .. } => Ok(plain(levels[chunk])),
        Policy::Mpc {
            estimator,
            adjustment,
            ..
        } => {
            if records.is_empty() {
                return Ok(plain(0));
            }
            let (point, quantiles) = match estimator {
                Estimator::HarmonicMean => {
                    let from = records.len().saturating_sub(ctrl.hm_window);
                    let c: Vec<f64> = records[from..].iter().map(|r| r.throughput).collect();
                    let hm = hm_predict(&c).map_err(|source| SimError::Baseline { chunk, source })?;
                    (hm, None)
                }
                Estimator::Learned(model) => {
                    let cfg = model.config();
                    let history: Vec<Observation> = records.iter().map(ChunkRecord::observation).collect();
                    let pred = padded_window(
                        &history,
                        cfg.k,
                        cfg.eta,
                        model.normalization(),
                        manifest.chunk_duration(),
                    )
                    .and_then(|w| model.predict(&w))
                    .map_err(|source| SimError::Predictor { chunk, source })?;
                    let median = pred.median().expect("validated levels contain the median");
                    (median, Some(pred))
                }
            };
            let estimate = match adjustment {
                Adjustment::None => point,
                Adjustment::RobustDiscount => errors.discount(point),
                Adjustment::BufferAware => {
                    let pred = quantiles.as_ref().ok_or_else(|| {
                        SimError::Config("buffer-aware adjustment needs a quantile estimator".into())
                    })?;
                    adjust_prediction(pred, state.buffer, ctrl)?
                }
            };
            Ok(Decision {
                level: mpc_decide(state, estimate, manifest, ctrl),
                quantiles: quantiles.map(|p| p.values).unwrap_or_default(),
                point: Some(point),
                estimate: Some(estimate),
            })
        }
    }
}

/// Plays the whole video over `trace` under `policy`.
pub fn run_session(
    trace: &NetworkTrace,
    manifest: &VideoManifest,
    policy: &Policy,
    ctrl: &ControllerConfig,
    sim: &SimConfig,
) -> Result<SessionResult, SimError> {
    ctrl.validate()?;
    sim.validate()?;
    policy.validate()?;
    if let Policy::FixedPlan { levels, .. } = policy {
        if levels.len() != manifest.num_chunks() || levels.iter().any(|&l| l >= manifest.levels()) {
            return Err(SimError::Config(format!(
                "plan must give one valid rung for each of {} chunks",
                manifest.num_chunks()
            )));
        }
    }
    let mut state = PlayerState::initial();
    let mut records: Vec<ChunkRecord> = Vec::with_capacity(manifest.num_chunks());
    let mut errors = ErrorHistory::new(ctrl.robust_horizon);
    while state.next_chunk < manifest.num_chunks() {
        let d = decide(policy, &state, &records, &errors, manifest, ctrl)?;
        let (next, mut rec) = step(&state, d.level, trace, manifest, sim);
        if let Some(p) = d.point {
            errors.record(p, rec.throughput);
        }
        rec.quantiles = d.quantiles;
        rec.point = d.point;
        rec.estimate = d.estimate;
        records.push(rec);
        state = next;
    }
    let qoe = qoe_breakdown(&records, ctrl.lambda, ctrl.mu);
    Ok(SessionResult {
        trace_id: trace.id().to_string(),
        controller: policy.name().to_string(),
        records,
        qoe,
    })
}
