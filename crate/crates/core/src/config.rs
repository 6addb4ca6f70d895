//! Run configuration shared by every command: a TOML file, then `--set
//! key=value` overrides on top.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::harness::{ComparisonConfig, Variant};
use crate::predictor::{Architecture, DatasetOptions, ModelConfig, TrainConfig};
use crate::simulator::SimConfig;
use crate::trace_io::VideoManifest;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {detail}")]
    BadValue { key: String, detail: String },
    #[error("expected key=value, got `{0}`")]
    Syntax(String),
    #[error("config file: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub offline_resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    /// Manifest file; empty means the built-in six-rung, 48-chunk video.
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSection,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    pub compare: CompareSection,
    pub paths: PathSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: train.seed,
            model: ModelConfig::default(),
            train,
            dataset: DatasetSection { val_fraction: 0.1 },
            controller: ControllerConfig::default(),
            sim: SimConfig::default(),
            compare: CompareSection {
                offline_resolution: 0.1,
            },
            paths: PathSection {
                manifest: String::new(),
            },
        }
    }
}

/// `(key, unit, meaning)` for every leaf of [`RunConfig`].
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "-", "dataset split seed; --seed also replaces the gen-traces spec seed"),
    ("model.arch", "mtan|plain-lstm", "predictor encoder"),
    ("model.k", "chunks", "observations per window and reference points"),
    ("model.eta", "s", "reference point spacing"),
    ("model.heads", "-", "attention heads"),
    ("model.time_dim", "-", "time embedding width"),
    ("model.latent_dim", "-", "interpolated latent width"),
    ("model.attn_rank", "-", "query/key projection columns"),
    ("model.hidden", "-", "LSTM and head width"),
    ("model.levels", "quantile", "predicted quantile levels"),
    ("model.theta", "-", "median smoothness threshold"),
    ("model.relative_output", "bool", "scale outputs by window mean throughput"),
    ("train.seed", "-", "initialisation and shuffling seed"),
    ("train.epochs", "-", "passes over the training windows"),
    ("train.batch_size", "windows", "minibatch size"),
    ("train.lr", "-", "Adam step size"),
    ("train.clip_norm", "-", "global gradient norm clip"),
    ("train.smoothness", "bool", "add the smoothness loss"),
    ("train.literal_second_difference", "bool", "e_n - 2e_(n-1) - e_(n-2) roughness"),
    ("train.pinball", "standard|swapped", "pinball loss side weighting"),
    ("dataset.val_fraction", "fraction", "traces held out for validation"),
    ("controller.lookahead", "chunks", "MPC horizon"),
    ("controller.lambda", "per s", "rebuffer weight"),
    ("controller.mu", "per Mbps", "bitrate change weight"),
    ("controller.alpha", "-", "base uncertainty weight"),
    ("controller.beta", "s", "buffer-scaled uncertainty weight"),
    ("controller.buffer_floor", "s", "buffer floor in the uncertainty weight"),
    ("controller.gamma_cap", "-", "uncertainty weight cap"),
    ("controller.buffer_max", "s", "buffer capacity used in planning"),
    ("controller.hm_window", "chunks", "harmonic mean window"),
    ("controller.robust_horizon", "chunks", "errors behind the robust discount"),
    ("sim.buffer_max", "s", "player buffer capacity"),
    ("sim.rtt", "s", "per-chunk request round trip"),
    ("sim.start_offset", "s", "trace time at session start"),
    ("compare.offline_resolution", "s", "offline planner buffer bucket"),
    ("paths.manifest", "path", "video manifest, empty for the built-in one"),
];

fn lookup<'a>(table: &'a mut toml::Table, key: &str) -> Option<&'a mut toml::Value> {
    let mut parts = key.split('.');
    let first = parts.next()?;
    let mut at = table.get_mut(first)?;
    for p in parts {
        at = at.as_table_mut()?.get_mut(p)?;
    }
    (!at.is_table()).then_some(at)
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("single key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        // Missing keys fall back to defaults, unknown ones are rejected.
        let user: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut base = Self::default().to_table();
        fn merge(base: &mut toml::Table, user: toml::Table, prefix: &str) -> Result<(), ConfigError> {
            for (k, v) in user {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match (base.get_mut(&k), v) {
                    (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &key)?,
                    (Some(slot), v) if !slot.is_table() => *slot = v,
                    _ => return Err(ConfigError::UnknownKey(key)),
                }
            }
            Ok(())
        }
        merge(&mut base, user, "")?;
        Self::from_table(base)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serialises to a table")
    }

    fn from_table(t: toml::Table) -> Result<Self, ConfigError> {
        let cfg: Self = toml::Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Sets a dotted key. Integers are accepted where floats are expected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let mut t = self.to_table();
        let slot = lookup(&mut t, key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let mut v = parse_value(raw);
        if let (toml::Value::Float(_), toml::Value::Integer(i)) = (&*slot, &v) {
            v = toml::Value::Float(*i as f64);
        }
        if std::mem::discriminant(slot) != std::mem::discriminant(&v) {
            return Err(ConfigError::BadValue {
                key: key.to_string(),
                detail: format!("expected {}, got `{raw}`", slot.type_str()),
            });
        }
        *slot = v;
        *self = Self::from_table(t).map_err(|e| ConfigError::BadValue {
            key: key.to_string(),
            detail: e.to_string(),
        })?;
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax(assignment.to_string()))?;
        self.set(k.trim(), v.trim())
    }

    /// Current value of a dotted key, rendered as TOML.
    pub fn get(&self, key: &str) -> Option<String> {
        let mut t = self.to_table();
        lookup(&mut t, key).map(|v| v.to_string())
    }

    /// Dotted leaf keys in serialisation order.
    pub fn leaf_keys(&self) -> Vec<String> {
        fn walk(t: &toml::Table, prefix: &str, out: &mut Vec<String>) {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match v {
                    toml::Value::Table(inner) => walk(inner, &key, out),
                    _ => out.push(key),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.to_table(), "", &mut out);
        out
    }

    /// Keys whose values differ.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        self.leaf_keys()
            .into_iter()
            .filter(|k| self.get(k) != other.get(k))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.model.validate().map_err(|e| inv(e.to_string()))?;
        self.controller.validate().map_err(|e| inv(e.to_string()))?;
        self.sim.validate().map_err(|e| inv(e.to_string()))?;
        if self.controller.buffer_max != self.sim.buffer_max {
            return Err(inv("controller.buffer_max must equal sim.buffer_max".into()));
        }
        if !(0.0..1.0).contains(&self.dataset.val_fraction) {
            return Err(inv("dataset.val_fraction must lie in [0, 1)".into()));
        }
        if !(self.compare.offline_resolution >= 0.0 && self.compare.offline_resolution.is_finite()) {
            return Err(inv("compare.offline_resolution must be finite and nonnegative".into()));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return Err(inv("train.epochs, train.batch_size and train.lr must be positive".into()));
        }
        Ok(())
    }

    /// Configuration that trains the checkpoint behind `variant`. The
    /// no-adjustment variant reuses the full model.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        match variant {
            Variant::Full | Variant::NoAdjustment => {}
            Variant::NoInterpolation => c.model.arch = Architecture::PlainLstm,
            Variant::NoSmoothness => c.train.smoothness = false,
        }
        c
    }

    pub fn manifest(&self) -> Result<VideoManifest, ConfigError> {
        if self.paths.manifest.is_empty() {
            return Ok(VideoManifest::default());
        }
        VideoManifest::load(Path::new(&self.paths.manifest)).map_err(|e| ConfigError::BadValue {
            key: "paths.manifest".into(),
            detail: e.to_string(),
        })
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            k: self.model.k,
            eta: self.model.eta,
            val_fraction: self.dataset.val_fraction,
            seed: self.seed,
            ctrl: self.controller.clone(),
            sim: self.sim.clone(),
        }
    }

    pub fn comparison(&self, workers: usize) -> ComparisonConfig {
        ComparisonConfig {
            ctrl: self.controller.clone(),
            sim: self.sim.clone(),
            offline_resolution: self.compare.offline_resolution,
            workers,
        }
    }

    /// `--help` table: key, default, unit, meaning.
    pub fn help_table() -> String {
        let d = Self::default();
        let mut rows = vec![("KEY".to_string(), "DEFAULT".to_string(), "UNIT", "MEANING")];
        for (k, unit, doc) in KEYS {
            rows.push((k.to_string(), d.get(k).unwrap_or_default(), unit, doc));
        }
        let wk = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let wd = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let wu = rows.iter().map(|r| r.2.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v, u, m)| format!("  {k:<wk$}  {v:<wd$}  {u:<wu$}  {m}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_table_covers_every_leaf() {
        let leaves = RunConfig::default().leaf_keys();
        let documented: Vec<String> = KEYS.iter().map(|k| k.0.to_string()).collect();
        let mut a = leaves.clone();
        let mut b = documented.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let help = RunConfig::help_table();
        assert!(help.contains("controller.lambda") && help.contains("4.3"));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&d.to_toml()).unwrap(), d);
        let c = RunConfig::from_toml("seed = 3\n[controller]\nalpha = 0.5\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.controller.alpha, 0.5);
        assert_eq!(c.controller.beta, d.controller.beta);
        assert!(matches!(
            RunConfig::from_toml("[controller]\nalpah = 1.0\n"),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply("controller.beta=3").unwrap();
        assert_eq!(c.controller.beta, 3.0);
        c.apply("model.arch=plain-lstm").unwrap();
        assert_eq!(c.model.arch, Architecture::PlainLstm);
        c.apply("model.levels=[0.05, 0.5, 0.95]").unwrap();
        assert_eq!(c.model.levels, vec![0.05, 0.5, 0.95]);
        c.apply("train.pinball=swapped").unwrap();
        assert!(c.apply("model.arch=cnn").is_err());
        assert!(c.apply("train.epochs=1.5").is_err());
        assert!(c.apply("nope.key=1").is_err());
        assert!(c.apply("model=1").is_err());
        assert!(c.apply("missing-equals").is_err());
    }

    #[test]
    fn variants_change_one_key() {
        let base = RunConfig::default();
        assert!(base.diff(&base.for_variant(Variant::NoAdjustment)).is_empty());
        assert_eq!(base.diff(&base.for_variant(Variant::NoSmoothness)), ["train.smoothness"]);
        assert_eq!(base.diff(&base.for_variant(Variant::NoInterpolation)), ["model.arch"]);
    }

    #[test]
    fn validation() {
        RunConfig::default().validate().unwrap();
        let mut c = RunConfig::default();
        c.sim.buffer_max = 30.0;
        assert!(c.validate().is_err());
    }
}
