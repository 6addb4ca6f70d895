use serde::{Deserialize, Serialize};

use super::PredictorError;
use crate::trace_io::VideoManifest;

/// Number of per-chunk features: throughput, buffer, rebuffer, latency.
pub const FEATURES: usize = 4;

/// One completed chunk as seen by the predictor, in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Measured goodput, Mbps.
    pub throughput: f64,
    /// Buffer after the download, seconds.
    pub buffer: f64,
    /// Stall incurred by the download, seconds.
    pub rebuffer: f64,
    /// Request-to-last-byte time, seconds.
    pub latency: f64,
    /// Wall-clock completion time, seconds.
    pub completed_at: f64,
}

/// Divisors mapping physical features to model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub throughput: f64,
    pub buffer: f64,
    pub rebuffer: f64,
    pub latency: f64,
}

impl Normalization {
    /// Throughput and latency by the top ladder bitrate, buffer by its cap,
    /// rebuffer by the chunk duration.
    pub fn for_manifest(manifest: &VideoManifest, buffer_max: f64) -> Self {
        Self {
            throughput: manifest.max_bitrate(),
            buffer: buffer_max,
            rebuffer: manifest.chunk_duration(),
            latency: manifest.max_bitrate(),
        }
    }

    pub fn features(&self, obs: &Observation) -> [f64; FEATURES] {
        [
            obs.throughput / self.throughput,
            obs.buffer / self.buffer,
            obs.rebuffer / self.rebuffer,
            obs.latency / self.latency,
        ]
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        let all = [self.throughput, self.buffer, self.rebuffer, self.latency];
        if all.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(PredictorError::Config(format!("normalization divisors must be positive: {self:?}")))
        }
    }
}

/// `k` offsets `n * eta`, `n = 1..=k`, measured backwards from the newest
/// sample.
pub fn reference_points(k: usize, eta: f64) -> Vec<f64> {
    (1..=k).map(|n| n as f64 * eta).collect()
}

/// Predictor input: `k` normalised observations, newest first, with their
/// ages `u` (seconds before the newest completion) and the regular reference
/// offsets `u_hat`. `truth` is the normalised next-chunk throughput when the
/// window is a training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub phi: Vec<[f64; FEATURES]>,
    pub u: Vec<f64>,
    pub u_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
}

impl ObservationWindow {
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    /// Normalised throughput column, newest first.
    pub fn throughputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.phi.iter().map(|f| f[0])
    }

    pub fn validate(&self, k: usize, eta: f64) -> Result<(), PredictorError> {
        let bad = |m: String| Err(PredictorError::Window(m));
        if self.phi.len() != k || self.u.len() != k || self.u_hat.len() != k {
            return bad(format!(
                "expected {k} entries, got phi={} u={} u_hat={}",
                self.phi.len(),
                self.u.len(),
                self.u_hat.len()
            ));
        }
        if self.u.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("sample ages must be finite and nonnegative".into());
        }
        if self.u.windows(2).any(|w| w[1] < w[0]) {
            return bad("sample ages must be nondecreasing".into());
        }
        if self.u_hat != reference_points(k, eta) {
            return bad(format!("reference offsets must be n*{eta} for n=1..{k}"));
        }
        if self.phi.iter().flatten().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("features must be finite and nonnegative".into());
        }
        if let Some(t) = self.truth {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("truth {t} must be positive"));
            }
        }
        Ok(())
    }
}

/// Builds a window from the last `k` observations of `history` (oldest
/// first). Errors when fewer than `k` are available.
pub fn window_from_history(
    history: &[Observation],
    k: usize,
    eta: f64,
    norm: &Normalization,
) -> Result<ObservationWindow, PredictorError> {
    if k == 0 || history.len() < k {
        return Err(PredictorError::Window(format!(
            "need {k} completed chunks, have {}",
            history.len()
        )));
    }
    let recent = &history[history.len() - k..];
    let newest = recent[k - 1].completed_at;
    let mut phi = Vec::with_capacity(k);
    let mut u = Vec::with_capacity(k);
    for obs in recent.iter().rev() {
        phi.push(norm.features(obs));
        u.push(newest - obs.completed_at);
    }
    Ok(ObservationWindow {
        phi,
        u,
        u_hat: reference_points(k, eta),
        truth: None,
    })
}

/// Like [`window_from_history`], but left-pads a short history with copies of
/// the earliest observation, spaced `chunk_duration` apart going back in time.
pub fn padded_window(
    history: &[Observation],
    k: usize,
    eta: f64,
    norm: &Normalization,
    chunk_duration: f64,
) -> Result<ObservationWindow, PredictorError> {
    if history.len() >= k {
        return window_from_history(history, k, eta, norm);
    }
    let earliest = *history
        .first()
        .ok_or_else(|| PredictorError::Window("no completed chunks to pad from".into()))?;
    let missing = k - history.len();
    let mut padded = Vec::with_capacity(k);
    for j in (1..=missing).rev() {
        padded.push(Observation {
            completed_at: earliest.completed_at - j as f64 * chunk_duration,
            ..earliest
        });
    }
    padded.extend_from_slice(history);
    window_from_history(&padded, k, eta, norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(at: f64, c: f64) -> Observation {
        Observation {
            throughput: c,
            buffer: 8.0,
            rebuffer: 0.0,
            latency: 1.0,
            completed_at: at,
        }
    }

    fn unit() -> Normalization {
        Normalization {
            throughput: 1.0,
            buffer: 1.0,
            rebuffer: 1.0,
            latency: 1.0,
        }
    }

    #[test]
    fn reference_offsets() {
        assert_eq!(reference_points(3, 2.0), vec![2.0, 4.0, 6.0]);
        assert_eq!(reference_points(1, 0.5), vec![0.5]);
        let r = reference_points(7, 0.3);
        for w in r.windows(2) {
            assert!((w[1] - w[0] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn ages_are_relative_to_newest() {
        let h = [obs(4.0, 1.0), obs(8.5, 2.0), obs(10.0, 3.0)];
        let w = window_from_history(&h, 3, 4.0, &unit()).unwrap();
        assert_eq!(w.u, vec![0.0, 1.5, 6.0]);
        assert_eq!(w.throughputs().collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);
        w.validate(3, 4.0).unwrap();
    }

    #[test]
    fn regular_completions_line_up_with_references() {
        let h: Vec<_> = (1..=5).map(|i| obs(4.0 * i as f64, 1.0)).collect();
        let w = window_from_history(&h, 5, 4.0, &unit()).unwrap();
        // u = {0, 4, .., 16}; u_hat = {4, .., 20}: same grid shifted by one step.
        for (a, b) in w.u.iter().skip(1).zip(&w.u_hat) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn short_history_errors_or_pads() {
        let h = [obs(3.0, 1.0), obs(5.0, 2.0)];
        assert!(window_from_history(&h, 4, 4.0, &unit()).is_err());
        let w = padded_window(&h, 4, 4.0, &unit(), 4.0).unwrap();
        assert_eq!(w.u, vec![0.0, 2.0, 6.0, 10.0]);
        assert_eq!(w.phi[3], w.phi[1]);
        w.validate(4, 4.0).unwrap();
        assert!(padded_window(&[], 4, 4.0, &unit(), 4.0).is_err());
    }

    #[test]
    fn normalisation_divides_features() {
        let m = VideoManifest::default();
        let n = Normalization::for_manifest(&m, 60.0);
        let f = n.features(&Observation {
            throughput: 4.3,
            buffer: 30.0,
            rebuffer: 2.0,
            latency: 2.15,
            completed_at: 0.0,
        });
        assert_eq!(f, [1.0, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn validation_catches_bad_windows() {
        let h: Vec<_> = (1..=3).map(|i| obs(i as f64, 1.0)).collect();
        let mut w = window_from_history(&h, 3, 1.0, &unit()).unwrap();
        assert!(w.validate(3, 2.0).is_err());
        w.u = vec![0.0, 2.0, 1.0];
        assert!(w.validate(3, 1.0).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let h: Vec<_> = (1..=3).map(|i| obs(i as f64 * 1.37, 0.1 * i as f64)).collect();
        let mut w = window_from_history(&h, 3, 4.0, &unit()).unwrap();
        w.truth = Some(0.123456789012345);
        let text = serde_json::to_string(&w).unwrap();
        assert_eq!(serde_json::from_str::<ObservationWindow>(&text).unwrap(), w);
    }
}
