//! Plain-text model checkpoint.
//!
//! ```text
//! KAIROS-TP/1
//! kind mtan
//! k 8
//! eta 4
//! heads 4
//! time_dim 16
//! latent_dim 32
//! attn_rank 1
//! hidden 32
//! theta 1.2
//! relative_output true
//! levels 0.1 0.5 0.9
//! norm <throughput> <buffer> <rebuffer> <latency>
//! params <count>
//! param <name> <rows> <cols>
//! <row-major values, space separated>
//! ...
//! epoch <n> <train_loss> <val_loss> <val_mape>
//! best_epoch <n>
//! end
//! ```
//!
//! Numbers are written as the shortest decimal that parses back to the
//! same `f64`, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Architecture, EpochLog, Model, ModelConfig, Normalization, PredictorError, TrainingLog};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &str = "KAIROS-TP/1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub log: TrainingLog,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn field<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, String), PredictorError> {
    let (n, line) = lines
        .next()
        .ok_or_else(|| PredictorError::Checkpoint(format!("truncated before {key}")))?;
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| PredictorError::Checkpoint(format!("line {}: expected `{key}`", n + 1)))?;
    Ok((n, rest.to_string()))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = self.model.config();
        let n = self.model.normalization();
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "kind {}", c.arch.tag());
        let _ = writeln!(out, "k {}", c.k);
        let _ = writeln!(out, "eta {}", c.eta);
        let _ = writeln!(out, "heads {}", c.heads);
        let _ = writeln!(out, "time_dim {}", c.time_dim);
        let _ = writeln!(out, "latent_dim {}", c.latent_dim);
        let _ = writeln!(out, "attn_rank {}", c.attn_rank);
        let _ = writeln!(out, "hidden {}", c.hidden);
        let _ = writeln!(out, "theta {}", c.theta);
        let _ = writeln!(out, "relative_output {}", c.relative_output);
        let _ = writeln!(out, "levels {}", join(&c.levels));
        let _ = writeln!(out, "norm {}", join(&[n.throughput, n.buffer, n.rebuffer, n.latency]));
        let params = self.model.params();
        let _ = writeln!(out, "params {}", params.len());
        for p in params.iter() {
            let _ = writeln!(out, "param {} {} {}", p.name, p.value.rows(), p.value.cols());
            let _ = writeln!(out, "{}", join(p.value.data()));
        }
        for e in &self.log.epochs {
            let _ = writeln!(out, "epoch {} {} {} {}", e.epoch, e.train_loss, e.val_loss, e.val_mape);
        }
        let _ = writeln!(out, "best_epoch {}", self.log.best_epoch);
        let _ = writeln!(out, "end");
        out
    }

    pub fn parse(text: &str) -> Result<Self, PredictorError> {
        let mut lines = text.lines().enumerate();
        let err = |n: usize, m: String| PredictorError::Checkpoint(format!("line {}: {m}", n + 1));
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => return Err(PredictorError::Checkpoint(format!("missing {CHECKPOINT_MAGIC} header"))),
        }
        fn num<T: std::str::FromStr>(n: usize, s: &str) -> Result<T, PredictorError>
        where
            T::Err: std::fmt::Display,
        {
            s.trim()
                .parse()
                .map_err(|e| PredictorError::Checkpoint(format!("line {}: {e}", n + 1)))
        }
        fn nums(n: usize, s: &str) -> Result<Vec<f64>, PredictorError> {
            s.split_whitespace().map(|x| num(n, x)).collect()
        }

        let (n, kind) = field(&mut lines, "kind")?;
        let arch = Architecture::from_tag(kind.trim()).ok_or_else(|| err(n, format!("unknown kind {kind}")))?;
        let (n, v) = field(&mut lines, "k")?;
        let k = num(n, &v)?;
        let (n, v) = field(&mut lines, "eta")?;
        let eta = num(n, &v)?;
        let (n, v) = field(&mut lines, "heads")?;
        let heads = num(n, &v)?;
        let (n, v) = field(&mut lines, "time_dim")?;
        let time_dim = num(n, &v)?;
        let (n, v) = field(&mut lines, "latent_dim")?;
        let latent_dim = num(n, &v)?;
        let (n, v) = field(&mut lines, "attn_rank")?;
        let attn_rank = num(n, &v)?;
        let (n, v) = field(&mut lines, "hidden")?;
        let hidden = num(n, &v)?;
        let (n, v) = field(&mut lines, "theta")?;
        let theta = num(n, &v)?;
        let (n, v) = field(&mut lines, "relative_output")?;
        let relative_output = num(n, &v)?;
        let (n, v) = field(&mut lines, "levels")?;
        let levels = nums(n, &v)?;
        let (n, v) = field(&mut lines, "norm")?;
        let nv = nums(n, &v)?;
        if nv.len() != 4 {
            return Err(err(n, "norm needs 4 values".into()));
        }
        let config = ModelConfig {
            arch,
            k,
            eta,
            heads,
            time_dim,
            latent_dim,
            attn_rank,
            hidden,
            levels,
            theta,
            relative_output,
        };
        let norm = Normalization {
            throughput: nv[0],
            buffer: nv[1],
            rebuffer: nv[2],
            latency: nv[3],
        };
        let mut model = Model::new(config, norm, 0)?;

        let (n, v) = field(&mut lines, "params")?;
        let count: usize = num(n, &v)?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, head) = field(&mut lines, "param")?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(err(n, "expected `param <name> <rows> <cols>`".into()));
            }
            let (rows, cols): (usize, usize) = (num(n, parts[1])?, num(n, parts[2])?);
            let (n, data) = lines
                .next()
                .ok_or_else(|| PredictorError::Checkpoint(format!("missing values for {}", parts[0])))?;
            let data = nums(n, data)?;
            let t = Tensor::new(rows, cols, data).map_err(|e| err(n, e.to_string()))?;
            values.push((parts[0].to_string(), t));
        }
        model.load_params(values)?;

        let mut log = TrainingLog::default();
        let mut ended = false;
        for (n, line) in lines.by_ref() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("epoch") => {
                    let v: Vec<&str> = it.collect();
                    if v.len() != 4 {
                        return Err(err(n, "epoch line needs 4 values".into()));
                    }
                    log.epochs.push(EpochLog {
                        epoch: num(n, v[0])?,
                        train_loss: num(n, v[1])?,
                        val_loss: num(n, v[2])?,
                        val_mape: num(n, v[3])?,
                    });
                }
                Some("best_epoch") => log.best_epoch = num(n, it.next().unwrap_or(""))?,
                Some("end") => {
                    ended = true;
                    break;
                }
                None => {}
                Some(other) => return Err(err(n, format!("unexpected `{other}`"))),
            }
        }
        if !ended {
            return Err(PredictorError::Checkpoint("missing `end`".into()));
        }
        Ok(Self { model, log })
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        std::fs::write(path, self.to_text()).map_err(|source| PredictorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        let text = std::fs::read_to_string(path).map_err(|source| PredictorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}
