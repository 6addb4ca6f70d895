//! Multi-time-attention quantile throughput predictor.
//!
//! Irregularly timed chunk observations are interpolated onto a regular grid
//! of reference offsets by per-head attention over learned time embeddings,
//! passed through a gated linear unit with a skip connection and layer norm,
//! summarised by an LSTM and mapped to monotone throughput quantiles.
//!
//! The same head and training loop also serve the plain-LSTM baseline, which
//! feeds the raw observation sequence to the LSTM instead.

mod checkpoint;
mod dataset;
mod loss;
mod model;
mod train;
mod window;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use dataset::{build_dataset, session_windows, Dataset, DatasetOptions, LabeledWindow, DATASET_FORMAT};
pub use loss::{latent_roughness, quantile_loss, smoothness_loss, smoothness_ratio, PinballConvention};
pub use model::{Model, PREDICTION_FLOOR_MBPS};
pub use train::{objective, objective_gradients, train, EpochLog, LossOptions, TrainConfig, TrainingLog};
pub use window::{
    padded_window, reference_points, window_from_history, Normalization, Observation,
    ObservationWindow, FEATURES,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid observation window: {0}")]
    Window(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Attention interpolation onto reference offsets, then GLU, layer norm
    /// and LSTM.
    Mtan,
    /// Observation sequence straight into the LSTM.
    PlainLstm,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Mtan => "mtan",
            Architecture::PlainLstm => "plain-lstm",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "mtan" => Some(Architecture::Mtan),
            "plain-lstm" => Some(Architecture::PlainLstm),
            _ => None,
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Observations per window, also the number of reference offsets.
    pub k: usize,
    /// Spacing of reference offsets, seconds.
    pub eta: f64,
    pub heads: usize,
    /// Time-embedding width (one linear + `time_dim - 1` sinusoidal dims).
    pub time_dim: usize,
    /// Latent width of the interpolated representation.
    pub latent_dim: usize,
    /// Columns of the query/key projections; 1 gives column vectors.
    pub attn_rank: usize,
    /// LSTM hidden size, also the MLP head width.
    pub hidden: usize,
    /// Quantile levels, strictly increasing, containing 0.1 and 0.5.
    pub levels: Vec<f64>,
    /// Smoothness threshold for the median.
    pub theta: f64,
    /// Express outputs as multiples of the window's mean throughput.
    pub relative_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Mtan,
            k: 8,
            eta: 4.0,
            heads: 4,
            time_dim: 16,
            latent_dim: 32,
            attn_rank: 1,
            hidden: 32,
            levels: vec![0.1, 0.5, 0.9],
            theta: 1.2,
            relative_output: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if self.heads == 0 || self.latent_dim == 0 || self.hidden == 0 || self.attn_rank == 0 {
            return bad("heads, latent_dim, hidden and attn_rank must be positive");
        }
        if self.time_dim < 2 {
            return bad("time_dim must be at least 2");
        }
        if self.levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return bad("quantile levels must lie in (0, 1)");
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return bad("quantile levels must be strictly increasing");
        }
        if self.level_index(0.1).is_none() || self.level_index(0.5).is_none() {
            return bad("quantile levels must include 0.1 and 0.5");
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return bad("theta must be positive");
        }
        Ok(())
    }

    pub fn level_index(&self, q: f64) -> Option<usize> {
        level_index(&self.levels, q)
    }

    pub fn median_index(&self) -> usize {
        self.level_index(0.5).expect("validated levels contain 0.5")
    }
}

pub(crate) fn level_index(levels: &[f64], q: f64) -> Option<usize> {
    levels.iter().position(|l| (l - q).abs() < 1e-12)
}

/// Next-chunk throughput quantiles in Mbps, nondecreasing in level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction {
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
}

impl QuantilePrediction {
    pub fn at(&self, q: f64) -> Option<f64> {
        level_index(&self.levels, q).map(|i| self.values[i])
    }

    pub fn median(&self) -> Option<f64> {
        self.at(0.5)
    }
}
