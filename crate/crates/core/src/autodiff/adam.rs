use super::{AutodiffError, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients held in `params`.
pub fn adam_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if state.m.len() != params.len() {
        return Err(AutodiffError::Shape(format!(
            "optimizer tracks {} parameters, set has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (idx, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let grad = params.grad(id).data().to_vec();
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        if m.len() != grad.len() {
            return Err(AutodiffError::Shape(format!("moment buffer for parameter {idx}")));
        }
        let value = params.value_mut(id).data_mut();
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let update = cfg.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
            if !update.is_finite() {
                return Err(AutodiffError::NonFinite("adam update".into()));
            }
            value[j] -= update;
        }
    }
    Ok(())
}
