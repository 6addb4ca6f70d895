use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NetworkTrace, TraceError, MAX_BANDWIDTH_MBPS};

/// Generated bandwidth never drops below this, in Mbps.
pub const BANDWIDTH_FLOOR_MBPS: f64 = 0.05;

/// Markov-modulated bandwidth process.
///
/// The chain dwells in a state for a uniform time in `[dwell_min, dwell_max]`,
/// then jumps to a uniformly chosen different state with probability
/// `transition_prob` (else stays). Samples are taken every `sample_interval`
/// seconds as the state mean plus Gaussian noise, floored at
/// [`BANDWIDTH_FLOOR_MBPS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTraceSpec {
    pub state_count: usize,
    /// Mbps, one per state.
    pub state_means: Vec<f64>,
    pub transition_prob: f64,
    /// Seconds.
    pub dwell_min: f64,
    /// Seconds.
    pub dwell_max: f64,
    /// Mbps.
    pub noise_std: f64,
    /// Seconds; also the wrap-around span of the trace.
    pub duration: f64,
    #[serde(default = "default_interval")]
    pub sample_interval: f64,
    pub seed: u64,
}

fn default_interval() -> f64 {
    1.0
}

impl SyntheticTraceSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidSpec(m));
        if self.state_count == 0 || self.state_count != self.state_means.len() {
            return bad(format!(
                "state_count {} must be positive and match {} means",
                self.state_count,
                self.state_means.len()
            ));
        }
        if self
            .state_means
            .iter()
            .any(|m| !(m.is_finite() && *m > 0.0 && *m < MAX_BANDWIDTH_MBPS))
        {
            return bad("state means must lie in (0, 1e4) Mbps".into());
        }
        if !(0.0..=1.0).contains(&self.transition_prob) {
            return bad(format!("transition_prob {} not in [0, 1]", self.transition_prob));
        }
        if !(self.dwell_min > 0.0 && self.dwell_max >= self.dwell_min && self.dwell_max.is_finite()) {
            return bad("dwell bounds must satisfy 0 < dwell_min <= dwell_max".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and nonnegative".into());
        }
        if !(self.sample_interval > 0.0 && self.duration >= self.sample_interval && self.duration.is_finite()) {
            return bad("need 0 < sample_interval <= duration".into());
        }
        Ok(())
    }

    /// Copy with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Deterministic for a given spec (including seed).
pub fn generate_trace(spec: &SyntheticTraceSpec, id: &str) -> Result<NetworkTrace, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| TraceError::InvalidSpec(e.to_string()))?;
    let n = spec.state_count;
    let mut state = rng.random_range(0..n);
    let dwell = |rng: &mut ChaCha8Rng| {
        if spec.dwell_max > spec.dwell_min {
            rng.random_range(spec.dwell_min..spec.dwell_max)
        } else {
            spec.dwell_min
        }
    };
    let mut next_switch = dwell(&mut rng);
    let steps = (spec.duration / spec.sample_interval).ceil() as usize;
    let mut pairs = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = i as f64 * spec.sample_interval;
        while t >= next_switch {
            if n > 1 && rng.random_bool(spec.transition_prob) {
                let hop = rng.random_range(1..n);
                state = (state + hop) % n;
            }
            next_switch += dwell(&mut rng);
        }
        let jitter = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let bw = (spec.state_means[state] + jitter).clamp(BANDWIDTH_FLOOR_MBPS, MAX_BANDWIDTH_MBPS * 0.5);
        pairs.push((t, bw));
    }
    let span = (steps as f64 * spec.sample_interval).max(spec.duration);
    NetworkTrace::new(id, &pairs, Some(span))
}
