use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{window_from_history, Normalization, ObservationWindow, PredictorError};
use crate::controller::{ControllerConfig, Policy};
use crate::simulator::{run_session, ChunkRecord, SimConfig};
use crate::trace_io::{NetworkTrace, VideoManifest};

pub const DATASET_FORMAT: &str = "KAIROS-DS/1";

/// A training example: the window before chunk `chunk` of a session over
/// `trace_id`, labelled with that chunk's normalised throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub trace_id: String,
    pub chunk: usize,
    pub window: ObservationWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: String,
    pub k: usize,
    pub eta: f64,
    pub norm: Normalization,
    pub train_traces: Vec<String>,
    pub val_traces: Vec<String>,
    pub windows: Vec<LabeledWindow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub k: usize,
    pub eta: f64,
    /// Share of traces held out for validation.
    pub val_fraction: f64,
    /// Seeds the train/validation split.
    pub seed: u64,
    pub ctrl: ControllerConfig,
    pub sim: SimConfig,
}

/// Windows with truth from one logged session, in chunk order.
pub fn session_windows(
    trace_id: &str,
    records: &[ChunkRecord],
    k: usize,
    eta: f64,
    norm: &Normalization,
) -> Result<Vec<LabeledWindow>, PredictorError> {
    let history: Vec<_> = records.iter().map(ChunkRecord::observation).collect();
    let mut out = Vec::new();
    for chunk in k..records.len() {
        let mut window = window_from_history(&history[..chunk], k, eta, norm)?;
        window.truth = Some(records[chunk].throughput / norm.throughput);
        out.push(LabeledWindow {
            trace_id: trace_id.to_string(),
            chunk,
            window,
        });
    }
    Ok(out)
}

/// Logs a harmonic-mean MPC session per trace and slices every full window
/// into an example. The split is by trace.
pub fn build_dataset(
    traces: &[NetworkTrace],
    manifest: &VideoManifest,
    opts: &DatasetOptions,
) -> Result<Dataset, PredictorError> {
    if traces.is_empty() {
        return Err(PredictorError::Dataset("no traces".into()));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(PredictorError::Dataset("val_fraction must lie in [0, 1)".into()));
    }
    let norm = Normalization::for_manifest(manifest, opts.sim.buffer_max);
    let mut ids: Vec<String> = traces.iter().map(|t| t.id().to_string()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(PredictorError::Dataset("trace ids must be unique".into()));
    }

    let policy = Policy::hm_mpc();
    let mut windows = Vec::new();
    for trace in traces {
        let s = run_session(trace, manifest, &policy, &opts.ctrl, &opts.sim)
            .map_err(|e| PredictorError::Dataset(format!("{}: {e}", trace.id())))?;
        windows.extend(session_windows(trace.id(), &s.records, opts.k, opts.eta, &norm)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    ids.shuffle(&mut rng);
    let mut n_val = (opts.val_fraction * ids.len() as f64).round() as usize;
    if opts.val_fraction > 0.0 && ids.len() >= 2 {
        n_val = n_val.clamp(1, ids.len() - 1);
    }
    let val: Vec<String> = ids[..n_val].to_vec();
    let order = |set: &[String]| -> Vec<String> {
        traces
            .iter()
            .map(|t| t.id().to_string())
            .filter(|id| set.contains(id))
            .collect()
    };
    let train_set: Vec<String> = ids[n_val..].to_vec();
    Ok(Dataset {
        format: DATASET_FORMAT.to_string(),
        k: opts.k,
        eta: opts.eta,
        norm,
        train_traces: order(&train_set),
        val_traces: order(&val),
        windows,
    })
}

impl Dataset {
    fn in_set<'a>(&'a self, set: &'a [String]) -> impl Iterator<Item = &'a LabeledWindow> + 'a {
        self.windows.iter().filter(move |w| set.contains(&w.trace_id))
    }

    pub fn train_windows(&self) -> Vec<&LabeledWindow> {
        self.in_set(&self.train_traces).collect()
    }

    /// Validation windows; falls back to the training windows when no trace
    /// was held out.
    pub fn val_windows(&self) -> Vec<&LabeledWindow> {
        if self.val_traces.is_empty() {
            self.train_windows()
        } else {
            self.in_set(&self.val_traces).collect()
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.format != DATASET_FORMAT {
            return Err(PredictorError::Dataset(format!("unknown format {:?}", self.format)));
        }
        self.norm.validate()?;
        if self.train_traces.iter().any(|t| self.val_traces.contains(t)) {
            return Err(PredictorError::Dataset("a trace is in both splits".into()));
        }
        for w in &self.windows {
            w.window.validate(self.k, self.eta)?;
            if w.window.truth.is_none() {
                return Err(PredictorError::Dataset(format!(
                    "window {}#{} has no truth",
                    w.trace_id, w.chunk
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("dataset serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let d: Self = serde_json::from_str(text).map_err(|e| PredictorError::Dataset(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        std::fs::write(path, self.to_json()).map_err(|source| PredictorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        let text = std::fs::read_to_string(path).map_err(|source| PredictorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traces(n: usize) -> Vec<NetworkTrace> {
        (0..n)
            .map(|i| {
                let b = 0.8 + 0.3 * i as f64;
                NetworkTrace::new(format!("t{i:02}"), &[(0.0, b), (9.0, 2.0 * b), (21.0, 0.6 * b)], Some(30.0))
                    .unwrap()
            })
            .collect()
    }

    fn opts() -> DatasetOptions {
        DatasetOptions {
            k: 8,
            eta: 4.0,
            val_fraction: 0.1,
            seed: 3,
            ctrl: ControllerConfig::default(),
            sim: SimConfig::default(),
        }
    }

    #[test]
    fn counts_and_split() {
        let ts = traces(10);
        let m = VideoManifest::default();
        let d = build_dataset(&ts, &m, &opts()).unwrap();
        assert_eq!(d.windows.len(), 10 * (48 - 8));
        assert_eq!(d.val_traces.len(), 1);
        assert_eq!(d.train_traces.len(), 9);
        d.validate().unwrap();
        assert_eq!(d.train_windows().len() + d.val_windows().len(), d.windows.len());
        let again = build_dataset(&ts, &m, &opts()).unwrap();
        assert_eq!(d.to_json(), again.to_json());
        assert_eq!(Dataset::from_json(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn truth_is_next_throughput() {
        let ts = traces(2);
        let m = VideoManifest::default();
        let ctrl = ControllerConfig::default();
        let s = run_session(&ts[0], &m, &Policy::hm_mpc(), &ctrl, &SimConfig::default()).unwrap();
        let d = build_dataset(&ts, &m, &opts()).unwrap();
        let w = d.windows.iter().find(|w| w.trace_id == "t00" && w.chunk == 20).unwrap();
        assert_eq!(w.window.truth.unwrap(), s.records[20].throughput / 4.3);
        assert_eq!(w.window.phi[0][0], s.records[19].throughput / 4.3);
    }

    #[test]
    fn empty_input_errors() {
        assert!(build_dataset(&[], &VideoManifest::default(), &opts()).is_err());
    }
}
