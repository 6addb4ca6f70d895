use serde::{Deserialize, Serialize};

use crate::controller::step_qoe;
use crate::simulator::ChunkRecord;

/// Session score over chunks 2..N (the first chunk is excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeBreakdown {
    /// Mean bitrate, Mbps.
    pub utility: f64,
    /// `lambda * mean rebuffer`.
    pub rebuffer_penalty: f64,
    /// `mu * mean |bitrate change|`.
    pub smoothness_penalty: f64,
    /// Mean per-chunk QoE.
    pub average: f64,
    /// Sum of per-chunk QoE.
    pub total: f64,
    /// Number of scored chunks.
    pub scored: usize,
}

/// Recomputes the breakdown from records. Fewer than two records score zero.
pub fn qoe_breakdown(records: &[ChunkRecord], lambda: f64, mu: f64) -> QoeBreakdown {
    let scored = records.len().saturating_sub(1);
    if scored == 0 {
        return QoeBreakdown {
            utility: 0.0,
            rebuffer_penalty: 0.0,
            smoothness_penalty: 0.0,
            average: 0.0,
            total: 0.0,
            scored: 0,
        };
    }
    let (mut util, mut stall, mut change, mut total) = (0.0, 0.0, 0.0, 0.0);
    for w in records.windows(2) {
        let (prev, r) = (&w[0], &w[1]);
        util += r.bitrate;
        stall += r.rebuffer;
        change += (r.bitrate - prev.bitrate).abs();
        total += step_qoe(r.bitrate, r.rebuffer, Some(prev.bitrate), lambda, mu);
    }
    let n = scored as f64;
    QoeBreakdown {
        utility: util / n,
        rebuffer_penalty: lambda * stall / n,
        smoothness_penalty: mu * change / n,
        average: total / n,
        total,
        scored,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions, {1} actuals")]
    Length(usize, usize),
    #[error("no values")]
    Empty,
    #[error("actual value {value} at index {index} must be positive")]
    NonPositiveActual { index: usize, value: f64 },
}

/// `100 * mean(|pred - actual| / actual)`.
pub fn mape(predicted: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    if predicted.len() != actual.len() {
        return Err(MetricError::Length(predicted.len(), actual.len()));
    }
    if actual.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    for (index, (&p, &a)) in predicted.iter().zip(actual).enumerate() {
        if !(a > 0.0) {
            return Err(MetricError::NonPositiveActual { index, value: a });
        }
        sum += (p - a).abs() / a;
    }
    Ok(100.0 * sum / actual.len() as f64)
}

/// Empirical CDF: sorted values paired with `i / n`.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

/// `(a - b) / |b| * 100`; `None` when `b` is zero.
pub fn improvement_pct(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (a - b) / b.abs() * 100.0)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
