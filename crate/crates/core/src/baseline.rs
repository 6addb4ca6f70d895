//! Reference throughput predictors: harmonic mean and its error-discounted
//! variant. The plain-LSTM reference lives with the learned predictor and
//! shares its head and training loop.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("no throughput samples")]
    Empty,
    #[error("throughput sample {index} is {value}, must be positive")]
    NonPositive { index: usize, value: f64 },
}

/// `n / sum(1 / c)`.
pub fn hm_predict(throughputs: &[f64]) -> Result<f64, BaselineError> {
    if throughputs.is_empty() {
        return Err(BaselineError::Empty);
    }
    let mut inv = 0.0;
    for (index, &value) in throughputs.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(BaselineError::NonPositive { index, value });
        }
        inv += 1.0 / value;
    }
    Ok(throughputs.len() as f64 / inv)
}

/// Harmonic mean divided by one plus the largest relative error in
/// `errors` (divisor 1 when empty).
pub fn robust_hm_predict(throughputs: &[f64], errors: &[f64]) -> Result<f64, BaselineError> {
    let hm = hm_predict(throughputs)?;
    Ok(hm / (1.0 + max_error(errors)))
}

fn max_error(errors: &[f64]) -> f64 {
    errors.iter().copied().fold(0.0, f64::max)
}

/// Rolling record of `|predicted - actual| / actual` for the last `horizon`
/// chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHistory {
    horizon: usize,
    errors: VecDeque<f64>,
}

impl ErrorHistory {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            errors: VecDeque::with_capacity(horizon),
        }
    }

    pub fn record(&mut self, predicted: f64, actual: f64) {
        if self.horizon == 0 || !(actual > 0.0) {
            return;
        }
        if self.errors.len() == self.horizon {
            self.errors.pop_front();
        }
        self.errors.push_back((predicted - actual).abs() / actual);
    }

    pub fn errors(&self) -> Vec<f64> {
        self.errors.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// `estimate / (1 + max error)`.
    pub fn discount(&self, estimate: f64) -> f64 {
        estimate / (1.0 + self.errors.iter().copied().fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(hm_predict(&[2.0, 2.0, 2.0]).unwrap(), 2.0);
        assert_eq!(hm_predict(&[1.0, 3.0]).unwrap(), 1.5);
        assert_eq!(robust_hm_predict(&[1.0, 3.0], &[]).unwrap(), 1.5);
        assert_eq!(robust_hm_predict(&[2.0], &[0.2, 1.0, 0.4]).unwrap(), 1.0);
        assert_eq!(hm_predict(&[]), Err(BaselineError::Empty));
        assert_eq!(
            hm_predict(&[1.0, 0.0]),
            Err(BaselineError::NonPositive { index: 1, value: 0.0 })
        );
    }

    #[test]
    fn history_keeps_horizon() {
        let mut h = ErrorHistory::new(2);
        h.record(3.0, 1.0);
        h.record(1.0, 1.0);
        h.record(1.5, 1.0);
        assert_eq!(h.errors(), vec![0.0, 0.5]);
        assert_eq!(h.discount(3.0), 2.0);
    }

    proptest! {
        #[test]
        fn hm_properties(
            c in prop::collection::vec(0.01f64..50.0, 1..10),
            errs in prop::collection::vec(0.0f64..3.0, 0..5),
            scale in 0.01f64..100.0,
        ) {
            let hm = hm_predict(&c).unwrap();
            let am = c.iter().sum::<f64>() / c.len() as f64;
            prop_assert!(hm <= am * (1.0 + 1e-12));
            let scaled: Vec<f64> = c.iter().map(|x| x * scale).collect();
            prop_assert!((hm_predict(&scaled).unwrap() - scale * hm).abs() <= 1e-9 * scale * hm);
            prop_assert!(robust_hm_predict(&c, &errs).unwrap() <= hm);
        }
    }
}
