//! Trace-driven adaptive-bitrate streaming lab.
//!
//! The crate bundles a multi-time-attention quantile throughput predictor
//! (trained with a smoothness-regularised pinball loss), a buffer-aware
//! uncertainty adjustment feeding a model-predictive bitrate controller, the
//! usual baselines (harmonic mean, RobustMPC, BOLA, plain LSTM, clairvoyant
//! dynamic programming) and a virtual player that replays bandwidth traces.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baseline;
pub mod config;
pub mod controller;
pub mod harness;
pub mod predictor;
pub mod simulator;
pub mod trace_io;
