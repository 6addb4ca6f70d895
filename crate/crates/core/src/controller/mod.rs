//! Bitrate decision policies.
//!
//! Every lookahead controller here is the same exhaustive MPC planner fed a
//! different throughput estimate: a harmonic mean or learned quantiles,
//! optionally discounted by recent error or adjusted by buffer-scaled
//! uncertainty. BOLA and the clairvoyant planner sit alongside.

mod adjust;
mod bola;
mod mpc;
mod offline;

pub use adjust::{adjust_prediction, uncertainty_weight};
pub use bola::{bola_decide, BolaParams};
pub use mpc::{mpc_decide, step_qoe};
pub use offline::{offline_optimal, OfflinePlan};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::predictor::Model;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("prediction lacks quantile level {0}")]
    MissingLevel(f64),
    #[error("invalid controller configuration: {0}")]
    Config(String),
}

/// Player-side state seen by a controller before requesting a chunk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerState {
    /// Seconds of buffered video.
    pub buffer: f64,
    /// Wall-clock seconds since the session started.
    pub wall_time: f64,
    /// Ladder index of the previous chunk, if any.
    pub prev_level: Option<usize>,
    /// Index of the chunk about to be requested.
    pub next_chunk: usize,
}

impl PlayerState {
    pub fn initial() -> Self {
        Self {
            buffer: 0.0,
            wall_time: 0.0,
            prev_level: None,
            next_chunk: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Planning horizon in chunks.
    pub lookahead: usize,
    /// Rebuffer weight, per second.
    pub lambda: f64,
    /// Smoothness weight, per Mbps of change.
    pub mu: f64,
    /// Base uncertainty weight.
    pub alpha: f64,
    /// Buffer-scaled uncertainty weight, seconds.
    pub beta: f64,
    /// Buffer floor in the uncertainty weight, seconds.
    pub buffer_floor: f64,
    /// Upper clamp on the uncertainty weight.
    pub gamma_cap: f64,
    /// Buffer capacity, seconds.
    pub buffer_max: f64,
    /// Throughputs averaged by the harmonic-mean estimator.
    pub hm_window: usize,
    /// Past errors considered by the robust discount.
    pub robust_horizon: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            lookahead: 5,
            lambda: 4.3,
            mu: 1.0,
            alpha: 0.2,
            beta: 2.0,
            buffer_floor: 0.1,
            gamma_cap: 1.0,
            buffer_max: 60.0,
            hm_window: 5,
            robust_horizon: 5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::Config(m.to_string()));
        if self.lookahead == 0 {
            return bad("lookahead must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.mu >= 0.0 && self.lambda.is_finite() && self.mu.is_finite()) {
            return bad("lambda and mu must be finite and nonnegative");
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return bad("alpha and beta must be finite");
        }
        if !(self.buffer_floor > 0.0 && self.buffer_floor.is_finite()) {
            return bad("buffer_floor must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma_cap) {
            return bad("gamma_cap must lie in [0, 1]");
        }
        if !(self.buffer_max > 0.0 && self.buffer_max.is_finite()) {
            return bad("buffer_max must be positive");
        }
        if self.hm_window == 0 || self.robust_horizon == 0 {
            return bad("hm_window and robust_horizon must be at least 1");
        }
        Ok(())
    }
}

/// Source of the next-chunk throughput estimate.
#[derive(Debug, Clone)]
pub enum Estimator {
    HarmonicMean,
    Learned(Arc<Model>),
}

/// Transformation applied to the estimate before planning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjustment {
    /// Plan on the point estimate.
    None,
    /// Divide by one plus the largest recent relative error.
    RobustDiscount,
    /// Move from the median toward the lower quantile by a buffer-dependent
    /// weight.
    BufferAware,
}

#[derive(Debug, Clone)]
pub enum Policy {
    Mpc {
        name: String,
        estimator: Estimator,
        adjustment: Adjustment,
    },
    Bola {
        name: String,
    },
    /// Replays fixed ladder indices, one per chunk.
    FixedPlan {
        name: String,
        levels: Vec<usize>,
    },
}

impl Policy {
    pub fn name(&self) -> &str {
        match self {
            Policy::Mpc { name, .. } | Policy::Bola { name } | Policy::FixedPlan { name, .. } => name,
        }
    }

    pub fn hm_mpc() -> Self {
        Policy::Mpc {
            name: "hm-mpc".into(),
            estimator: Estimator::HarmonicMean,
            adjustment: Adjustment::None,
        }
    }

    pub fn robust_mpc() -> Self {
        Policy::Mpc {
            name: "robust-hm-mpc".into(),
            estimator: Estimator::HarmonicMean,
            adjustment: Adjustment::RobustDiscount,
        }
    }

    pub fn bola() -> Self {
        Policy::Bola { name: "bola".into() }
    }

    /// Learned quantiles with buffer-aware adjustment.
    pub fn kairos(name: impl Into<String>, model: Arc<Model>) -> Self {
        Policy::Mpc {
            name: name.into(),
            estimator: Estimator::Learned(model),
            adjustment: Adjustment::BufferAware,
        }
    }

    /// Learned median with the robust discount in place of the adjustment.
    pub fn kairos_robust(name: impl Into<String>, model: Arc<Model>) -> Self {
        Policy::Mpc {
            name: name.into(),
            estimator: Estimator::Learned(model),
            adjustment: Adjustment::RobustDiscount,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if let Policy::Mpc {
            estimator: Estimator::HarmonicMean,
            adjustment: Adjustment::BufferAware,
            ..
        } = self
        {
            return Err(ControllerError::Config(
                "buffer-aware adjustment needs a quantile estimator".into(),
            ));
        }
        Ok(())
    }
}
