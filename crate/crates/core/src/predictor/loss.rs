use super::PredictorError;
use crate::autodiff::{Tape, Tensor, Var};

/// Weight of the prediction-ratio term inside the smoothness loss.
pub(crate) const RATIO_WEIGHT: f64 = 0.1;

/// Weighting of the two sides of the pinball loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PinballConvention {
    /// Under-prediction costs `q`, over-prediction `1 - q`; the level-`q`
    /// output estimates the `q`-quantile.
    #[default]
    Standard,
    /// Over-prediction costs `q`, under-prediction `1 - q`; the minimiser is
    /// the `(1 - q)`-quantile.
    Swapped,
}

impl PinballConvention {
    /// Weights `(over, under)` for level `q`.
    fn weights(self, q: f64) -> (f64, f64) {
        match self {
            PinballConvention::Standard => (1.0 - q, q),
            PinballConvention::Swapped => (q, 1.0 - q),
        }
    }
}

/// Pinball loss summed over levels, averaged over samples. `preds[i][j]` is
/// the prediction of sample `i` at `levels[j]`.
pub fn quantile_loss(
    preds: &[Vec<f64>],
    truths: &[f64],
    levels: &[f64],
    convention: PinballConvention,
) -> Result<f64, PredictorError> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(PredictorError::Config(format!(
            "need a nonempty batch with one truth per prediction ({} vs {})",
            preds.len(),
            truths.len()
        )));
    }
    let mut total = 0.0;
    for (row, &c) in preds.iter().zip(truths) {
        if row.len() != levels.len() {
            return Err(PredictorError::Config(format!(
                "prediction has {} levels, expected {}",
                row.len(),
                levels.len()
            )));
        }
        for (&p, &q) in row.iter().zip(levels) {
            let (w_over, w_under) = convention.weights(q);
            total += w_over * (p - c).max(0.0) + w_under * (c - p).max(0.0);
        }
    }
    Ok(total / preds.len() as f64)
}

/// Median over `(theta / k) * sum(history)`; zero when the history sums to
/// zero.
pub fn smoothness_ratio(median: f64, history: &[f64], theta: f64) -> f64 {
    let sum: f64 = history.iter().sum();
    if sum == 0.0 || history.is_empty() {
        return 0.0;
    }
    median / (theta / history.len() as f64 * sum)
}

/// Mean squared second difference of the latent rows, averaged over the
/// latent width and the `k - 2` interior rows. Rows are ordered by reference
/// offset. `literal` flips the sign of the oldest term.
pub fn latent_roughness(latent: &Tensor, literal: bool) -> f64 {
    let (k, j) = (latent.rows(), latent.cols());
    if k < 3 || j == 0 {
        return 0.0;
    }
    let sign = if literal { -1.0 } else { 1.0 };
    let mut total = 0.0;
    for n in 2..k {
        for d in 0..j {
            let diff = latent.get(n, d) - 2.0 * latent.get(n - 1, d) + sign * latent.get(n - 2, d);
            total += diff * diff;
        }
    }
    total / (j * (k - 2)) as f64
}

/// `0.1 * ratio_penalty + roughness`, where the ratio penalty is the ratio
/// itself when it exceeds 1 and zero otherwise.
pub fn smoothness_loss(median: f64, history: &[f64], theta: f64, latent: Option<&Tensor>, literal: bool) -> f64 {
    let rho = smoothness_ratio(median, history, theta);
    let lsp = if rho > 1.0 { rho } else { 0.0 };
    RATIO_WEIGHT * lsp + latent.map_or(0.0, |e| latent_roughness(e, literal))
}

/// Graph version of the per-sample pinball loss. `pred` is `1 x M`.
pub(crate) fn quantile_term(
    tape: &mut Tape,
    pred: Var,
    truth: f64,
    levels: &[f64],
    convention: PinballConvention,
) -> Result<Var, PredictorError> {
    let c = tape.constant(Tensor::scalar(truth));
    let over = tape.sub(pred, c)?;
    let over = tape.max_with_zero(over)?;
    let under = tape.sub(c, pred)?;
    let under = tape.max_with_zero(under)?;
    let (w_over, w_under): (Vec<f64>, Vec<f64>) = levels.iter().map(|&q| convention.weights(q)).unzip();
    let w_over = tape.constant(Tensor::row(&w_over));
    let w_under = tape.constant(Tensor::row(&w_under));
    let a = tape.mul(over, w_over)?;
    let b = tape.mul(under, w_under)?;
    let s = tape.add(a, b)?;
    Ok(tape.sum(s)?)
}

/// Graph version of the smoothness loss; `None` when both terms vanish.
pub(crate) fn smoothness_term(
    tape: &mut Tape,
    median: Var,
    history: &[f64],
    theta: f64,
    latent: Option<Var>,
    literal: bool,
) -> Result<Option<Var>, PredictorError> {
    let mut parts = Vec::new();
    let rho = smoothness_ratio(tape.scalar(median), history, theta);
    if rho > 1.0 {
        let sum: f64 = history.iter().sum();
        let denom = theta / history.len() as f64 * sum;
        parts.push(tape.scale(median, RATIO_WEIGHT / denom)?);
    }
    if let Some(e) = latent {
        let [k, j] = tape.value(e).shape();
        if k >= 3 {
            let newer = tape.slice(e, 0, 2, k - 2)?;
            let mid = tape.slice(e, 0, 1, k - 2)?;
            let older = tape.slice(e, 0, 0, k - 2)?;
            let mid2 = tape.scale(mid, 2.0)?;
            let d = tape.sub(newer, mid2)?;
            let d = if literal { tape.sub(d, older)? } else { tape.add(d, older)? };
            let sq = tape.square(d)?;
            let s = tape.sum(sq)?;
            parts.push(tape.scale(s, 1.0 / (j * (k - 2)) as f64)?);
        }
    }
    Ok(match parts.as_slice() {
        [] => None,
        [one] => Some(*one),
        [a, b] => Some(tape.add(*a, *b)?),
        _ => unreachable!(),
    })
}
