use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Architecture, ModelConfig, Normalization, ObservationWindow, PredictorError,
    QuantilePrediction, FEATURES,
};
use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};

/// Predictions are clamped to at least this many Mbps at inference.
pub const PREDICTION_FLOOR_MBPS: f64 = 0.01;

const LN_EPS: f64 = 1e-5;
const INIT_SPREAD: f64 = 0.2;

#[derive(Debug, Clone)]
struct HeadIds {
    time_w: ParamId,
    time_b: ParamId,
    attn_w: ParamId,
    attn_v: ParamId,
}

#[derive(Debug, Clone)]
struct MtanIds {
    heads: Vec<HeadIds>,
    interp: ParamId,
    glu_w: ParamId,
    glu_b: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    mtan: Option<MtanIds>,
    lstm_wx: ParamId,
    lstm_wh: ParamId,
    lstm_b: ParamId,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

/// Tape handles for every parameter, indexed like the [`ParamSet`].
pub(crate) struct Bound(Vec<Var>);

impl Bound {
    fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }
}

/// Graph outputs for one window.
pub(crate) struct Forward {
    /// `1 x M` normalised quantiles before the inference floor.
    pub quantiles: Var,
    /// Interpolated `k x J` representation (attention model only).
    pub latent: Option<Var>,
    /// Per-head `k x k` attention weights, rows indexed by reference point.
    pub attention: Vec<Var>,
}

/// Trainable quantile throughput predictor.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    norm: Normalization,
    params: ParamSet,
    layout: Layout,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, bound)
}

fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

impl Model {
    /// Fresh model with seeded initialisation.
    pub fn new(config: ModelConfig, norm: Normalization, seed: u64) -> Result<Self, PredictorError> {
        config.validate()?;
        norm.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let (dk, j, hid, m) = (config.time_dim, config.latent_dim, config.hidden, config.levels.len());

        let mtan = match config.arch {
            Architecture::PlainLstm => None,
            Architecture::Mtan => {
                let mut heads = Vec::with_capacity(config.heads);
                for h in 0..config.heads {
                    // Frequencies span a few cycles over the window.
                    let freq = 1.0 / config.eta;
                    let time_w = ps.add(format!("time_w.{h}"), uniform(&mut rng, 1, dk, freq));
                    let mut b = uniform(&mut rng, 1, dk, std::f64::consts::PI);
                    b.data_mut()[0] *= 0.1 / std::f64::consts::PI;
                    let time_b = ps.add(format!("time_b.{h}"), b);
                    let attn_w = ps.add(format!("attn_w.{h}"), xavier(&mut rng, dk, config.attn_rank));
                    let attn_v = ps.add(format!("attn_v.{h}"), xavier(&mut rng, dk, config.attn_rank));
                    heads.push(HeadIds {
                        time_w,
                        time_b,
                        attn_w,
                        attn_v,
                    });
                }
                let interp = ps.add("interp", xavier(&mut rng, config.heads * FEATURES, j));
                let glu_w = ps.add("glu_w", xavier(&mut rng, j, j));
                let glu_b = ps.add("glu_b", Tensor::zeros(1, j));
                let ln_gain = ps.add("ln_gain", Tensor::filled(1, j, 1.0));
                let ln_bias = ps.add("ln_bias", Tensor::zeros(1, j));
                Some(MtanIds {
                    heads,
                    interp,
                    glu_w,
                    glu_b,
                    ln_gain,
                    ln_bias,
                })
            }
        };
        let input = if mtan.is_some() { j } else { FEATURES };
        let lstm_wx = ps.add("lstm_wx", xavier(&mut rng, input, 4 * hid));
        let lstm_wh = ps.add("lstm_wh", xavier(&mut rng, hid, 4 * hid));
        let mut b = Tensor::zeros(1, 4 * hid);
        b.data_mut()[hid..2 * hid].fill(1.0);
        let lstm_b = ps.add("lstm_b", b);
        let head_w1 = ps.add("head_w1", xavier(&mut rng, hid, hid));
        let head_b1 = ps.add("head_b1", Tensor::zeros(1, hid));
        let mut w2 = xavier(&mut rng, hid, m);
        w2.data_mut().iter_mut().for_each(|x| *x *= 0.1);
        let head_w2 = ps.add("head_w2", w2);
        let median = config.median_index();
        let b2 = Tensor::from_fn(1, m, |_, c| {
            if c == median {
                if config.relative_output {
                    1.0
                } else {
                    0.5
                }
            } else {
                inverse_softplus(INIT_SPREAD)
            }
        });
        let head_b2 = ps.add("head_b2", b2);

        Ok(Self {
            config,
            norm,
            params: ps,
            layout: Layout {
                mtan,
                lstm_wx,
                lstm_wh,
                lstm_b,
                head_w1,
                head_b1,
                head_w2,
                head_b2,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn arch(&self) -> Architecture {
        self.config.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records every parameter on `tape`, as gradient leaves when
    /// `trainable`, else as constants.
    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(
            self.params
                .ids()
                .map(|id| {
                    if trainable {
                        tape.param(&self.params, id)
                    } else {
                        tape.constant(self.params.value(id).clone())
                    }
                })
                .collect(),
        )
    }

    fn embed(&self, tape: &mut Tape, p: &Bound, head: &HeadIds, times: &[f64]) -> Result<Var, PredictorError> {
        let t = tape.constant(Tensor::column(times));
        let tw = p.get(head.time_w);
        let lin = tape.matmul(t, tw)?;
        let lin = tape.add(lin, p.get(head.time_b))?;
        let dk = self.config.time_dim;
        let first = tape.slice(lin, 1, 0, 1)?;
        let rest = tape.slice(lin, 1, 1, dk - 1)?;
        let rest = tape.sin(rest)?;
        Ok(tape.concat(&[first, rest], 1)?)
    }

    /// Builds the prediction graph for one window.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        window: &ObservationWindow,
    ) -> Result<Forward, PredictorError> {
        let cfg = &self.config;
        window.validate(cfg.k, cfg.eta)?;
        let k = cfg.k;
        let phi = tape.constant(Tensor::from_fn(k, FEATURES, |r, c| window.phi[r][c]));

        let (sequence, latent, attention) = match &self.layout.mtan {
            None => (phi, None, Vec::new()),
            Some(ids) => {
                let inv_sqrt = 1.0 / (cfg.time_dim as f64).sqrt();
                let mut interpolated = Vec::with_capacity(ids.heads.len());
                let mut attention = Vec::with_capacity(ids.heads.len());
                for head in &ids.heads {
                    let q = self.embed(tape, p, head, &window.u_hat)?;
                    let key = self.embed(tape, p, head, &window.u)?;
                    let q = tape.matmul(q, p.get(head.attn_w))?;
                    let key = tape.matmul(key, p.get(head.attn_v))?;
                    let key_t = tape.transpose(key)?;
                    let scores = tape.matmul(q, key_t)?;
                    let scores = tape.scale(scores, inv_sqrt)?;
                    let kappa = tape.softmax(scores, 1)?;
                    interpolated.push(tape.matmul(kappa, phi)?);
                    attention.push(kappa);
                }
                let s = tape.concat(&interpolated, 1)?;
                let e = tape.matmul(s, p.get(ids.interp))?;

                let g = tape.matmul(e, p.get(ids.glu_w))?;
                let g = tape.add(g, p.get(ids.glu_b))?;
                let g = tape.sigmoid(g)?;
                let gated = tape.mul(e, g)?;
                let z = tape.add(gated, e)?;
                let mu = tape.mean_axis(z, 1)?;
                let centred = tape.sub(z, mu)?;
                let sq = tape.square(centred)?;
                let var = tape.mean_axis(sq, 1)?;
                let var = tape.add_scalar(var, LN_EPS)?;
                let sd = tape.sqrt(var)?;
                let normed = tape.div(centred, sd)?;
                let normed = tape.mul(normed, p.get(ids.ln_gain))?;
                let normed = tape.add(normed, p.get(ids.ln_bias))?;
                (normed, Some(e), attention)
            }
        };

        let h_last = self.lstm(tape, p, sequence)?;
        let l = &self.layout;
        let a = tape.matmul(h_last, p.get(l.head_w1))?;
        let a = tape.add(a, p.get(l.head_b1))?;
        let a = tape.max_with_zero(a)?;
        let z = tape.matmul(a, p.get(l.head_w2))?;
        let z = tape.add(z, p.get(l.head_b2))?;
        let mut quantiles = self.monotone(tape, z)?;
        if cfg.relative_output {
            let k_f = k as f64;
            let mean = window.throughputs().sum::<f64>() / k_f;
            let scale = tape.constant(Tensor::scalar(mean.max(1e-6)));
            quantiles = tape.mul(quantiles, scale)?;
        }
        Ok(Forward {
            quantiles,
            latent,
            attention,
        })
    }

    /// Runs the rows of `seq` oldest first (last row first) and returns the
    /// final hidden state.
    fn lstm(&self, tape: &mut Tape, p: &Bound, seq: Var) -> Result<Var, PredictorError> {
        let hid = self.config.hidden;
        let l = &self.layout;
        let k = tape.value(seq).rows();
        let xw = tape.matmul(seq, p.get(l.lstm_wx))?;
        let xw = tape.add(xw, p.get(l.lstm_b))?;
        let mut h = tape.constant(Tensor::zeros(1, hid));
        let mut c = tape.constant(Tensor::zeros(1, hid));
        for row in (0..k).rev() {
            let x = tape.slice(xw, 0, row, 1)?;
            let hw = tape.matmul(h, p.get(l.lstm_wh))?;
            let gates = tape.add(x, hw)?;
            let i = tape.slice(gates, 1, 0, hid)?;
            let f = tape.slice(gates, 1, hid, hid)?;
            let g = tape.slice(gates, 1, 2 * hid, hid)?;
            let o = tape.slice(gates, 1, 3 * hid, hid)?;
            let i = tape.sigmoid(i)?;
            let f = tape.sigmoid(f)?;
            let g = tape.tanh(g)?;
            let o = tape.sigmoid(o)?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let tc = tape.tanh(c)?;
            h = tape.mul(o, tc)?;
        }
        Ok(h)
    }

    /// Median taken as is; other levels step away from it by softplus gaps.
    fn monotone(&self, tape: &mut Tape, z: Var) -> Result<Var, PredictorError> {
        let m = self.config.levels.len();
        let mid = self.config.median_index();
        let mut out: Vec<Option<Var>> = vec![None; m];
        out[mid] = Some(tape.slice(z, 1, mid, 1)?);
        for j in mid + 1..m {
            let raw = tape.slice(z, 1, j, 1)?;
            let gap = tape.softplus(raw)?;
            out[j] = Some(tape.add(out[j - 1].expect("filled"), gap)?);
        }
        for j in (0..mid).rev() {
            let raw = tape.slice(z, 1, j, 1)?;
            let gap = tape.softplus(raw)?;
            out[j] = Some(tape.sub(out[j + 1].expect("filled"), gap)?);
        }
        let parts: Vec<Var> = out.into_iter().map(|v| v.expect("filled")).collect();
        Ok(tape.concat(&parts, 1)?)
    }

    fn check_finite(values: &[f64], what: &str) -> Result<(), PredictorError> {
        if values.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(PredictorError::Autodiff(crate::autodiff::AutodiffError::NonFinite(
                what.to_string(),
            )))
        }
    }

    /// Raw normalised quantiles, no floor applied.
    pub fn predict_normalized(&self, window: &ObservationWindow) -> Result<Vec<f64>, PredictorError> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let f = self.forward(&mut tape, &p, window)?;
        let out = tape.value(f.quantiles).data().to_vec();
        Self::check_finite(&out, "prediction")?;
        Ok(out)
    }

    /// Next-chunk throughput quantiles in Mbps.
    pub fn predict(&self, window: &ObservationWindow) -> Result<QuantilePrediction, PredictorError> {
        let raw = self.predict_normalized(window)?;
        let values = raw
            .iter()
            .map(|x| (x * self.norm.throughput).max(PREDICTION_FLOOR_MBPS))
            .collect();
        Ok(QuantilePrediction {
            levels: self.config.levels.clone(),
            values,
        })
    }

    fn mtan_only(&self) -> Result<(), PredictorError> {
        match self.layout.mtan {
            Some(_) => Ok(()),
            None => Err(PredictorError::Config("plain LSTM has no attention encoder".into())),
        }
    }

    /// Interpolated `k x J` latent matrix for a window.
    pub fn encode(&self, window: &ObservationWindow) -> Result<Tensor, PredictorError> {
        self.mtan_only()?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let f = self.forward(&mut tape, &p, window)?;
        let e = tape.value(f.latent.expect("attention model")).clone();
        Self::check_finite(e.data(), "encoder")?;
        Ok(e)
    }

    /// Per-head `k x k` attention weights; row `n` holds the weights of
    /// reference point `n` over the observations.
    pub fn attention_weights(&self, window: &ObservationWindow) -> Result<Vec<Tensor>, PredictorError> {
        self.mtan_only()?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let f = self.forward(&mut tape, &p, window)?;
        Ok(f.attention.iter().map(|v| tape.value(*v).clone()).collect())
    }

    /// Time embedding of head `head` at `t` seconds.
    pub fn time_embed(&self, t: f64, head: usize) -> Result<Vec<f64>, PredictorError> {
        self.mtan_only()?;
        let ids = &self.layout.mtan.as_ref().expect("checked").heads;
        let h = ids
            .get(head)
            .ok_or_else(|| PredictorError::Config(format!("no head {head}")))?;
        let w = self.params.value(h.time_w).data();
        let b = self.params.value(h.time_b).data();
        Ok((0..self.config.time_dim)
            .map(|d| {
                let lin = t * w[d] + b[d];
                if d == 0 {
                    lin
                } else {
                    lin.sin()
                }
            })
            .collect())
    }

    /// Replaces parameter values by name; every parameter must be supplied
    /// exactly once with its expected shape.
    pub(crate) fn load_params(&mut self, values: Vec<(String, Tensor)>) -> Result<(), PredictorError> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in values {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| PredictorError::Checkpoint(format!("unknown parameter {name}")))?;
            if seen[id.index()] {
                return Err(PredictorError::Checkpoint(format!("duplicate parameter {name}")));
            }
            let slot = self.params.value_mut(id);
            if slot.shape() != t.shape() {
                return Err(PredictorError::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(PredictorError::Checkpoint(format!("parameter {name} is not finite")));
            }
            *slot = t;
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = &self.params.iter().nth(i).expect("index in range").name;
            return Err(PredictorError::Checkpoint(format!("missing parameter {name}")));
        }
        Ok(())
    }
}
