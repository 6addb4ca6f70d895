use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{quantile_term, smoothness_term, PinballConvention};
use super::{Checkpoint, Dataset, Model, ModelConfig, ObservationWindow, PredictorError};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Var};
use crate::harness::mape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Include the smoothness loss.
    pub smoothness: bool,
    /// Use `e_n - 2 e_{n-1} - e_{n-2}` instead of the second difference.
    pub literal_second_difference: bool,
    pub pinball: PinballConvention,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            clip_norm: 5.0,
            smoothness: true,
            literal_second_difference: false,
            pinball: PinballConvention::Standard,
        }
    }
}

/// Loss terms to include in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossOptions {
    pub smoothness: bool,
    pub literal_second_difference: bool,
    pub pinball: PinballConvention,
}

impl From<&TrainConfig> for LossOptions {
    fn from(c: &TrainConfig) -> Self {
        Self {
            smoothness: c.smoothness,
            literal_second_difference: c.literal_second_difference,
            pinball: c.pinball,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Median-quantile MAPE on the validation windows, percent.
    pub val_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (lowest validation loss); 0 means
    /// the initialisation.
    pub best_epoch: usize,
}

/// Records the batch-mean objective on `tape` and returns its handle.
fn batch_objective(
    model: &Model,
    tape: &mut Tape,
    bound: &super::model::Bound,
    windows: &[&ObservationWindow],
    opts: LossOptions,
) -> Result<Var, PredictorError> {
    let cfg = model.config();
    let mid = cfg.median_index();
    let mut terms = Vec::with_capacity(windows.len());
    for w in windows {
        let truth = w
            .truth
            .ok_or_else(|| PredictorError::Window("training window without truth".into()))?;
        let f = model.forward(tape, bound, w)?;
        let mut t = quantile_term(tape, f.quantiles, truth, &cfg.levels, opts.pinball)?;
        if opts.smoothness {
            let median = tape.slice(f.quantiles, 1, mid, 1)?;
            let hist: Vec<f64> = w.throughputs().collect();
            let latent = f.latent;
            if let Some(s) = smoothness_term(
                tape,
                median,
                &hist,
                cfg.theta,
                latent,
                opts.literal_second_difference,
            )? {
                t = tape.add(t, s)?;
            }
        }
        terms.push(t);
    }
    let all = tape.concat(&terms, 0)?;
    let sum = tape.sum(all)?;
    Ok(tape.scale(sum, 1.0 / windows.len() as f64)?)
}

/// Batch-mean loss: pinball loss plus, when enabled, the smoothness loss.
pub fn objective(model: &Model, windows: &[&ObservationWindow], opts: LossOptions) -> Result<f64, PredictorError> {
    if windows.is_empty() {
        return Err(PredictorError::Dataset("empty batch".into()));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let loss = batch_objective(model, &mut tape, &bound, windows, opts)?;
    Ok(tape.scalar(loss))
}

/// Objective value and its gradient, stored in the parameters' gradient
/// slots (previous gradients are cleared).
pub fn objective_gradients(
    model: &mut Model,
    windows: &[&ObservationWindow],
    opts: LossOptions,
) -> Result<f64, PredictorError> {
    if windows.is_empty() {
        return Err(PredictorError::Dataset("empty batch".into()));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let loss = batch_objective(model, &mut tape, &bound, windows, opts)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    let params = model.params_mut();
    params.zero_grad();
    grads.accumulate_into(params)?;
    Ok(value)
}

fn evaluate(model: &Model, windows: &[&ObservationWindow], opts: LossOptions) -> Result<(f64, f64), PredictorError> {
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(windows.len());
    let mut actual = Vec::with_capacity(windows.len());
    let scale = model.normalization().throughput;
    for chunk in windows.chunks(256) {
        loss += objective(model, chunk, opts)? * chunk.len() as f64;
    }
    for w in windows {
        preds.push(model.predict(w)?.median().expect("median level"));
        actual.push(w.truth.expect("checked by objective") * scale);
    }
    let m = mape(&preds, &actual).map_err(|e| PredictorError::Dataset(e.to_string()))?;
    Ok((loss / windows.len() as f64, m))
}

/// Trains a fresh model on the dataset's training split with Adam, keeping
/// the parameters of the epoch with the lowest validation loss.
pub fn train(dataset: &Dataset, model_cfg: ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint, PredictorError> {
    if model_cfg.k != dataset.k || model_cfg.eta != dataset.eta {
        return Err(PredictorError::Config(format!(
            "model expects k={} eta={}, dataset has k={} eta={}",
            model_cfg.k, model_cfg.eta, dataset.k, dataset.eta
        )));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(cfg.clip_norm > 0.0) {
        return Err(PredictorError::Config("batch_size, lr and clip_norm must be positive".into()));
    }
    let train_set: Vec<&ObservationWindow> = dataset.train_windows().into_iter().map(|w| &w.window).collect();
    let val_set: Vec<&ObservationWindow> = dataset.val_windows().into_iter().map(|w| &w.window).collect();
    if train_set.is_empty() {
        return Err(PredictorError::Dataset("no training windows".into()));
    }
    let opts = LossOptions::from(cfg);
    let mut model = Model::new(model_cfg, dataset.norm, cfg.seed)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let (mut best_val, _) = evaluate(&model, &val_set, opts)?;
    let mut best_params = model.params().clone();
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let windows: Vec<&ObservationWindow> = batch.iter().map(|&i| train_set[i]).collect();
            let loss = objective_gradients(&mut model, &windows, opts).map_err(|e| PredictorError::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            if !loss.is_finite() {
                return Err(PredictorError::Diverged {
                    epoch,
                    detail: format!("batch loss {loss}"),
                });
            }
            total += loss * windows.len() as f64;
            model.params_mut().clip_grad_norm(cfg.clip_norm);
            adam_step(model.params_mut(), &mut adam, &adam_cfg).map_err(|e| PredictorError::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
        }
        let (val_loss, val_mape) = evaluate(&model, &val_set, opts).map_err(|e| PredictorError::Diverged {
            epoch,
            detail: e.to_string(),
        })?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
            val_mape,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params().clone();
            log.best_epoch = epoch;
        }
    }
    *model.params_mut() = best_params;
    model.params_mut().zero_grad();
    Ok(Checkpoint { model, log })
}
