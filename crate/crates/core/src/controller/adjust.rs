use super::{ControllerConfig, ControllerError};
use crate::predictor::{QuantilePrediction, PREDICTION_FLOOR_MBPS};

/// `clamp(alpha + beta / max(buffer, floor), 0, gamma_cap)`.
pub fn uncertainty_weight(buffer: f64, cfg: &ControllerConfig) -> f64 {
    let g = cfg.alpha + cfg.beta / buffer.max(cfg.buffer_floor);
    g.clamp(0.0, cfg.gamma_cap)
}

/// Median pulled toward the 0.1 quantile by the uncertainty weight at the
/// current buffer level, floored at [`PREDICTION_FLOOR_MBPS`].
pub fn adjust_prediction(
    pred: &QuantilePrediction,
    buffer: f64,
    cfg: &ControllerConfig,
) -> Result<f64, ControllerError> {
    let median = pred.at(0.5).ok_or(ControllerError::MissingLevel(0.5))?;
    let low = pred.at(0.1).ok_or(ControllerError::MissingLevel(0.1))?;
    let gamma = uncertainty_weight(buffer, cfg);
    Ok((median - gamma * (median - low)).max(PREDICTION_FLOOR_MBPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(low: f64, med: f64) -> QuantilePrediction {
        QuantilePrediction {
            levels: vec![0.1, 0.5, 0.9],
            values: vec![low, med, med * 1.5],
        }
    }

    #[test]
    fn half_weight_example() {
        let cfg = ControllerConfig {
            alpha: 0.5,
            beta: 0.0,
            ..Default::default()
        };
        assert_eq!(adjust_prediction(&pred(1.0, 2.0), 10.0, &cfg).unwrap(), 1.5);
    }

    #[test]
    fn zero_weight_keeps_median() {
        let cfg = ControllerConfig {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        };
        assert_eq!(adjust_prediction(&pred(0.7, 2.3), 3.0, &cfg).unwrap(), 2.3);
    }

    #[test]
    fn large_buffer_approaches_alpha() {
        let cfg = ControllerConfig::default();
        let got = adjust_prediction(&pred(1.0, 2.0), 1e12, &cfg).unwrap();
        assert!((got - (2.0 - 0.2)).abs() < 1e-9);
        // Empty buffer saturates at the cap.
        assert_eq!(uncertainty_weight(0.0, &cfg), 1.0);
    }

    #[test]
    fn missing_levels() {
        let p = QuantilePrediction {
            levels: vec![0.5, 0.9],
            values: vec![1.0, 2.0],
        };
        assert_eq!(
            adjust_prediction(&p, 1.0, &ControllerConfig::default()),
            Err(ControllerError::MissingLevel(0.1))
        );
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(
            low in 0.01f64..5.0,
            gap in 0.0f64..5.0,
            b1 in 0.0f64..60.0,
            b2 in 0.0f64..60.0,
            alpha in 0.0f64..1.0,
            beta in 0.0f64..10.0,
        ) {
            let cfg = ControllerConfig { alpha, beta, ..Default::default() };
            let p = pred(low, low + gap);
            let (lo_b, hi_b) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let a = adjust_prediction(&p, lo_b, &cfg).unwrap();
            let b = adjust_prediction(&p, hi_b, &cfg).unwrap();
            prop_assert!(a <= b);
            prop_assert!(b <= low + gap);
            prop_assert!(a >= low.max(PREDICTION_FLOOR_MBPS) - 1e-12);
        }
    }
}
