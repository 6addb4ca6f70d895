use super::{ControllerConfig, PlayerState};
use crate::trace_io::VideoManifest;

/// Per-chunk score: bitrate minus weighted stall minus weighted change from
/// the previous bitrate (no change term without a previous chunk).
pub fn step_qoe(bitrate: f64, rebuffer: f64, prev_bitrate: Option<f64>, lambda: f64, mu: f64) -> f64 {
    match prev_bitrate {
        Some(p) => bitrate - lambda * rebuffer - mu * (bitrate - p).abs(),
        None => bitrate - lambda * rebuffer,
    }
}

struct Search<'a> {
    manifest: &'a VideoManifest,
    cfg: &'a ControllerConfig,
    estimate: f64,
    first_chunk: usize,
    horizon: usize,
    best_score: f64,
    best_first: usize,
}

impl Search<'_> {
    fn visit(&mut self, depth: usize, buffer: f64, prev: Option<usize>, score: f64, first: usize) {
        if depth == self.horizon {
            if score > self.best_score {
                self.best_score = score;
                self.best_first = first;
            }
            return;
        }
        let d_hat = self.manifest.chunk_duration();
        let chunk = self.first_chunk + depth;
        for level in 0..self.manifest.levels() {
            let download = self.manifest.chunk_size(chunk, level) / self.estimate;
            let rebuffer = (download - buffer).max(0.0);
            let next = (buffer + d_hat - download).clamp(0.0, self.cfg.buffer_max);
            let q = step_qoe(
                self.manifest.bitrate(level),
                rebuffer,
                prev.map(|p| self.manifest.bitrate(p)),
                self.cfg.lambda,
                self.cfg.mu,
            );
            let first = if depth == 0 { level } else { first };
            self.visit(depth + 1, next, Some(level), score + q, first);
        }
    }
}

/// Exhaustive lookahead planner. Holds `estimate` (Mbps) fixed over the
/// horizon, sums per-chunk QoE and returns the first rung of the best plan;
/// among equal totals the lexicographically smallest plan wins.
pub fn mpc_decide(state: &PlayerState, estimate: f64, manifest: &VideoManifest, cfg: &ControllerConfig) -> usize {
    let remaining = manifest.num_chunks().saturating_sub(state.next_chunk);
    let horizon = cfg.lookahead.min(remaining);
    if horizon == 0 || !(estimate > 0.0) {
        return 0;
    }
    let mut s = Search {
        manifest,
        cfg,
        estimate,
        first_chunk: state.next_chunk,
        horizon,
        best_score: f64::NEG_INFINITY,
        best_first: 0,
    };
    s.visit(0, state.buffer, state.prev_level, 0.0, 0);
    s.best_first
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qoe_step_example() {
        let q = step_qoe(1.2, 0.0, Some(0.75), 4.3, 1.0);
        assert!((q - 0.75).abs() < 1e-12);
        assert_eq!(step_qoe(1.2, 2.0, None, 4.3, 1.0), 1.2 - 8.6);
    }

    #[test]
    fn abundant_bandwidth_picks_top() {
        let m = VideoManifest::default();
        let cfg = ControllerConfig::default();
        let st = PlayerState {
            buffer: 60.0,
            wall_time: 0.0,
            prev_level: Some(5),
            next_chunk: 10,
        };
        assert_eq!(mpc_decide(&st, 100.0, &m, &cfg), 5);
        let st = PlayerState { prev_level: Some(0), ..st };
        assert_eq!(mpc_decide(&st, 100.0, &m, &cfg), 5);
    }

    #[test]
    fn scarce_bandwidth_picks_bottom() {
        let m = VideoManifest::default();
        let st = PlayerState {
            buffer: 1.0,
            wall_time: 0.0,
            prev_level: Some(2),
            next_chunk: 3,
        };
        assert_eq!(mpc_decide(&st, 0.2, &m, &ControllerConfig::default()), 0);
    }

    #[test]
    fn horizon_truncates_at_end() {
        let m = VideoManifest::default();
        let st = PlayerState {
            buffer: 4.0,
            wall_time: 0.0,
            prev_level: Some(3),
            next_chunk: 47,
        };
        // One chunk left: at 2 Mbps a 1.85 rung takes 3.7 s < 4 s buffer.
        assert_eq!(mpc_decide(&st, 2.0, &m, &ControllerConfig::default()), 3);
    }
}
