use super::{ControllerConfig, PlayerState};
use crate::trace_io::VideoManifest;

/// Buffer-based Lyapunov controller constants.
///
/// Utilities are `ln(size_l / size_0)`. With the buffer measured in chunks
/// and capacity `Q = buffer_max / chunk_duration`, `V = (Q - 1) / (u_top +
/// gamma_p)` so the top rung wins exactly when the buffer is near full.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BolaParams {
    pub gamma_p: f64,
    pub v: f64,
}

impl BolaParams {
    pub const DEFAULT_GAMMA_P: f64 = 5.0;

    pub fn new(manifest: &VideoManifest, buffer_max: f64) -> Self {
        let gamma_p = Self::DEFAULT_GAMMA_P;
        let q_max = buffer_max / manifest.chunk_duration();
        let top = (manifest.max_bitrate() / manifest.bitrate(0)).ln();
        Self {
            gamma_p,
            v: (q_max - 1.0) / (top + gamma_p),
        }
    }
}

/// Rung maximising `(V (u_l + gamma_p) - Q) / size_l`, ties to the lower rung.
pub fn bola_decide(state: &PlayerState, manifest: &VideoManifest, cfg: &ControllerConfig) -> usize {
    let p = BolaParams::new(manifest, cfg.buffer_max);
    let chunk = state.next_chunk.min(manifest.num_chunks() - 1);
    let q = state.buffer / manifest.chunk_duration();
    let base = manifest.chunk_size(chunk, 0);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for level in 0..manifest.levels() {
        let size = manifest.chunk_size(chunk, level);
        let utility = (size / base).ln();
        let score = (p.v * (utility + p.gamma_p) - q) / size;
        if score > best_score {
            best_score = score;
            best = level;
        }
    }
    best
}
