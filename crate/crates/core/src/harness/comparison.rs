use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mape, mean, HarnessError, QoeBreakdown};
use crate::baseline::hm_predict;
use crate::controller::{offline_optimal, ControllerConfig, Policy};
use crate::predictor::{Architecture, LabeledWindow, Model};
use crate::simulator::{run_session, SessionResult, SimConfig};
use crate::trace_io::{NetworkTrace, VideoManifest};

pub const OFFLINE_OPTIMAL: &str = "offline-optimal";

/// A row of the comparison matrix.
#[derive(Debug, Clone)]
pub enum Contender {
    Online(Policy),
    /// Clairvoyant plan, replayed through the simulator.
    OfflineOptimal,
}

impl Contender {
    pub fn name(&self) -> &str {
        match self {
            Contender::Online(p) => p.name(),
            Contender::OfflineOptimal => OFFLINE_OPTIMAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub ctrl: ControllerConfig,
    pub sim: SimConfig,
    /// Buffer bucket of the offline planner, seconds.
    pub offline_resolution: f64,
    /// Worker threads; 0 picks the available parallelism.
    pub workers: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            ctrl: ControllerConfig::default(),
            sim: SimConfig::default(),
            offline_resolution: 0.1,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: String,
    pub sessions: usize,
    pub mean_qoe: f64,
    pub utility: f64,
    pub rebuffer_penalty: f64,
    pub smoothness_penalty: f64,
    /// Mean stall per session including startup, seconds.
    pub mean_stall_s: f64,
    /// Median (or point) prediction against the measured throughput of the
    /// same chunk; absent for controllers that do not predict.
    pub mape: Option<f64>,
    pub predictions: usize,
}

/// `a` compared against `b` over paired sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub a: String,
    pub b: String,
    pub improvement_pct: Option<f64>,
    /// Share of traces where `a` scores strictly higher.
    pub won_fraction: f64,
    pub tied_fraction: f64,
}

/// Variant minus base, for mean QoE and its penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub variant: String,
    pub qoe: f64,
    pub rebuffer_penalty: f64,
    pub smoothness_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSection {
    pub base: String,
    pub deltas: Vec<AblationDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub controller: String,
    pub trace: String,
    pub qoe: QoeBreakdown,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub controllers: Vec<String>,
    pub traces: Vec<String>,
    /// Controller-major: session `(c, t)` sits at `c * traces.len() + t`.
    pub sessions: Vec<SessionResult>,
    pub summaries: Vec<ControllerSummary>,
    pub pairs: Vec<PairStat>,
    pub ablation: Option<AblationSection>,
}

impl ComparisonReport {
    pub fn session(&self, controller: &str, trace: usize) -> Option<&SessionResult> {
        let c = self.controllers.iter().position(|n| n == controller)?;
        self.sessions.get(c * self.traces.len() + trace)
    }

    pub fn sessions_of(&self, controller: &str) -> &[SessionResult] {
        match self.controllers.iter().position(|n| n == controller) {
            Some(c) => &self.sessions[c * self.traces.len()..(c + 1) * self.traces.len()],
            None => &[],
        }
    }

    pub fn summary(&self, controller: &str) -> Option<&ControllerSummary> {
        self.summaries.iter().find(|s| s.controller == controller)
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<&PairStat> {
        self.pairs.iter().find(|p| p.a == a && p.b == b)
    }

    pub fn rows(&self) -> Vec<SessionRow> {
        self.sessions
            .iter()
            .map(|s| SessionRow {
                controller: s.controller.clone(),
                trace: s.trace_id.clone(),
                qoe: s.qoe,
            })
            .collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

fn play(
    contender: &Contender,
    trace: &NetworkTrace,
    manifest: &VideoManifest,
    cfg: &ComparisonConfig,
) -> Result<SessionResult, HarnessError> {
    let wrap = |source| HarnessError::Session {
        controller: contender.name().to_string(),
        trace: trace.id().to_string(),
        source,
    };
    match contender {
        Contender::Online(policy) => run_session(trace, manifest, policy, &cfg.ctrl, &cfg.sim).map_err(wrap),
        Contender::OfflineOptimal => {
            let plan = offline_optimal(trace, manifest, &cfg.ctrl, &cfg.sim, cfg.offline_resolution);
            let policy = Policy::FixedPlan {
                name: OFFLINE_OPTIMAL.into(),
                levels: plan.levels,
            };
            run_session(trace, manifest, &policy, &cfg.ctrl, &cfg.sim).map_err(wrap)
        }
    }
}

fn summarize(controller: &str, sessions: &[SessionResult]) -> ControllerSummary {
    let of = |f: fn(&QoeBreakdown) -> f64| mean(&sessions.iter().map(|s| f(&s.qoe)).collect::<Vec<_>>());
    let (mut pred, mut actual) = (Vec::new(), Vec::new());
    for r in sessions.iter().flat_map(|s| &s.records) {
        if let Some(p) = r.point {
            pred.push(p);
            actual.push(r.throughput);
        }
    }
    ControllerSummary {
        controller: controller.to_string(),
        sessions: sessions.len(),
        mean_qoe: of(|q| q.average),
        utility: of(|q| q.utility),
        rebuffer_penalty: of(|q| q.rebuffer_penalty),
        smoothness_penalty: of(|q| q.smoothness_penalty),
        mean_stall_s: mean(&sessions.iter().map(SessionResult::total_rebuffer).collect::<Vec<_>>()),
        mape: mape(&pred, &actual).ok(),
        predictions: pred.len(),
    }
}

fn pair_stats(report: &ComparisonReport) -> Vec<PairStat> {
    let mut out = Vec::new();
    for a in &report.controllers {
        for b in &report.controllers {
            if a == b {
                continue;
            }
            let (sa, sb) = (report.sessions_of(a), report.sessions_of(b));
            let n = sa.len().max(1) as f64;
            let won = sa.iter().zip(sb).filter(|(x, y)| x.qoe.average > y.qoe.average).count();
            let tied = sa.iter().zip(sb).filter(|(x, y)| x.qoe.average == y.qoe.average).count();
            let (ma, mb) = (report.summary(a), report.summary(b));
            out.push(PairStat {
                a: a.clone(),
                b: b.clone(),
                improvement_pct: ma.zip(mb).and_then(|(x, y)| super::improvement_pct(x.mean_qoe, y.mean_qoe)),
                won_fraction: won as f64 / n,
                tied_fraction: tied as f64 / n,
            });
        }
    }
    out
}

/// Plays every (contender, trace) session. Sessions run in parallel but are
/// collected in a fixed order, so the report does not depend on `workers`.
pub fn run_comparison(
    traces: &[NetworkTrace],
    manifest: &VideoManifest,
    contenders: &[Contender],
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::Empty("no traces".into()));
    }
    if contenders.is_empty() {
        return Err(HarnessError::Empty("no controllers".into()));
    }
    let mut names: Vec<&str> = contenders.iter().map(Contender::name).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(HarnessError::Config("controller names must be unique".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..contenders.len())
        .flat_map(|c| (0..traces.len()).map(move |t| (c, t)))
        .collect();
    let sessions = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(c, t)| play(&contenders[c], &traces[t], manifest, cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut report = ComparisonReport {
        controllers: contenders.iter().map(|c| c.name().to_string()).collect(),
        traces: traces.iter().map(|t| t.id().to_string()).collect(),
        sessions,
        summaries: Vec::new(),
        pairs: Vec::new(),
        ablation: None,
    };
    report.summaries = report
        .controllers
        .iter()
        .map(|c| summarize(c, report.sessions_of(c)))
        .collect();
    report.pairs = pair_stats(&report);
    Ok(report)
}

/// Ablation variants of the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Learned median with the robust discount instead of the buffer-aware
    /// adjustment.
    NoAdjustment,
    /// Plain LSTM encoder.
    NoInterpolation,
    /// Trained without the smoothness loss.
    NoSmoothness,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoAdjustment,
        Variant::NoInterpolation,
        Variant::NoSmoothness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "kairos",
            Variant::NoAdjustment => "kairos-na",
            Variant::NoInterpolation => "kairos-ni",
            Variant::NoSmoothness => "kairos-ns",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Checkpoints needed by the ablation suite. `full` also serves the
/// no-adjustment variant.
#[derive(Debug, Clone)]
pub struct AblationModels {
    pub full: Arc<Model>,
    pub plain: Arc<Model>,
    pub no_smoothness: Arc<Model>,
}

impl AblationModels {
    pub fn validate(&self) -> Result<(), HarnessError> {
        for (what, m, arch) in [
            ("full", &self.full, Architecture::Mtan),
            ("plain", &self.plain, Architecture::PlainLstm),
            ("no-smoothness", &self.no_smoothness, Architecture::Mtan),
        ] {
            if m.arch() != arch {
                return Err(HarnessError::Config(format!(
                    "{what} checkpoint is {}, expected {}",
                    m.arch().tag(),
                    arch.tag()
                )));
            }
        }
        Ok(())
    }

    pub fn policy(&self, v: Variant) -> Policy {
        match v {
            Variant::Full => Policy::kairos(v.name(), self.full.clone()),
            Variant::NoAdjustment => Policy::kairos_robust(v.name(), self.full.clone()),
            Variant::NoInterpolation => Policy::kairos(v.name(), self.plain.clone()),
            Variant::NoSmoothness => Policy::kairos(v.name(), self.no_smoothness.clone()),
        }
    }
}

/// Plays the four variants and reports each one's deltas against the full
/// system.
pub fn run_ablations(
    traces: &[NetworkTrace],
    manifest: &VideoManifest,
    models: &AblationModels,
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport, HarnessError> {
    models.validate()?;
    let contenders: Vec<Contender> = Variant::ALL
        .into_iter()
        .map(|v| Contender::Online(models.policy(v)))
        .collect();
    let mut report = run_comparison(traces, manifest, &contenders, cfg)?;
    let base = report.summary(Variant::Full.name()).expect("full variant present").clone();
    let deltas = Variant::ALL[1..]
        .iter()
        .map(|v| {
            let s = report.summary(v.name()).expect("variant present");
            AblationDelta {
                variant: v.name().to_string(),
                qoe: s.mean_qoe - base.mean_qoe,
                rebuffer_penalty: s.rebuffer_penalty - base.rebuffer_penalty,
                smoothness_penalty: s.smoothness_penalty - base.smoothness_penalty,
            }
        })
        .collect();
    report.ablation = Some(AblationSection {
        base: base.controller,
        deltas,
    });
    Ok(report)
}

/// Offline accuracy of a predictor on labelled windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorEval {
    pub predictor: String,
    pub windows: usize,
    /// Median prediction, percent.
    pub mape: f64,
    /// Mean absolute change of the median between consecutive windows of the
    /// same trace, Mbps.
    pub median_jitter: f64,
}

fn jitter(windows: &[&LabeledWindow], medians: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 1..windows.len() {
        if windows[i].trace_id == windows[i - 1].trace_id && windows[i].chunk == windows[i - 1].chunk + 1 {
            total += (medians[i] - medians[i - 1]).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Median accuracy and jitter of a trained model. `throughput_scale` turns
/// window truths back into Mbps.
pub fn evaluate_model(
    name: &str,
    model: &Model,
    windows: &[&LabeledWindow],
    throughput_scale: f64,
) -> Result<PredictorEval, HarnessError> {
    let mut medians = Vec::with_capacity(windows.len());
    let mut actual = Vec::with_capacity(windows.len());
    for w in windows {
        let p = model.predict(&w.window).map_err(|e| HarnessError::Config(e.to_string()))?;
        medians.push(p.median().expect("model levels contain the median"));
        actual.push(window_truth(w)? * throughput_scale);
    }
    Ok(PredictorEval {
        predictor: name.to_string(),
        windows: windows.len(),
        mape: mape(&medians, &actual)?,
        median_jitter: jitter(windows, &medians),
    })
}

fn window_truth(w: &LabeledWindow) -> Result<f64, HarnessError> {
    w.window
        .truth
        .ok_or_else(|| HarnessError::Config(format!("window {}#{} has no truth", w.trace_id, w.chunk)))
}

/// Harmonic mean of the last `hm_window` throughputs of each window.
pub fn evaluate_harmonic_mean(
    windows: &[&LabeledWindow],
    hm_window: usize,
    throughput_scale: f64,
) -> Result<PredictorEval, HarnessError> {
    let mut preds = Vec::with_capacity(windows.len());
    let mut actual = Vec::with_capacity(windows.len());
    for w in windows {
        let recent: Vec<f64> = w.window.throughputs().take(hm_window).map(|c| c * throughput_scale).collect();
        preds.push(hm_predict(&recent).map_err(|e| HarnessError::Config(e.to_string()))?);
        actual.push(window_truth(w)? * throughput_scale);
    }
    Ok(PredictorEval {
        predictor: "harmonic-mean".into(),
        windows: windows.len(),
        mape: mape(&preds, &actual)?,
        median_jitter: jitter(windows, &preds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ModelConfig, Normalization};

    fn traces() -> Vec<NetworkTrace> {
        vec![
            NetworkTrace::new("a", &[(0.0, 1.0), (20.0, 3.0), (50.0, 0.6)], Some(90.0)).unwrap(),
            NetworkTrace::new("b", &[(0.0, 2.5), (30.0, 0.9)], Some(60.0)).unwrap(),
            NetworkTrace::constant("c", 5.0).unwrap(),
        ]
    }

    fn all() -> Vec<Contender> {
        vec![
            Contender::Online(Policy::hm_mpc()),
            Contender::Online(Policy::robust_mpc()),
            Contender::Online(Policy::bola()),
            Contender::OfflineOptimal,
        ]
    }

    #[test]
    fn single_row_matches_session() {
        let t = &traces()[..1];
        let m = VideoManifest::default();
        let cfg = ComparisonConfig::default();
        let r = run_comparison(t, &m, &[Contender::Online(Policy::bola())], &cfg).unwrap();
        assert_eq!(r.sessions.len(), 1);
        let direct = run_session(&t[0], &m, &Policy::bola(), &cfg.ctrl, &cfg.sim).unwrap();
        assert_eq!(r.sessions[0].qoe, direct.qoe);
        assert_eq!(r.summaries[0].mean_qoe, direct.qoe.average);
        assert!(r.pairs.is_empty());
    }

    #[test]
    fn offline_dominates_and_workers_do_not_matter() {
        let t = traces();
        let m = VideoManifest::default();
        let one = run_comparison(&t, &m, &all(), &ComparisonConfig { workers: 1, ..Default::default() }).unwrap();
        let four = run_comparison(&t, &m, &all(), &ComparisonConfig { workers: 4, ..Default::default() }).unwrap();
        assert_eq!(one.rows(), four.rows());
        assert_eq!(one.summaries, four.summaries);
        for i in 0..t.len() {
            let best = one.session(OFFLINE_OPTIMAL, i).unwrap().qoe.total;
            for c in ["hm-mpc", "robust-hm-mpc", "bola"] {
                assert!(best >= one.session(c, i).unwrap().qoe.total - 0.5);
            }
        }
        let ab = one.pair("bola", "hm-mpc").unwrap().improvement_pct.unwrap();
        let ba = one.pair("hm-mpc", "bola").unwrap().improvement_pct.unwrap();
        assert!(ab * ba <= 0.0);
        assert!(one.summary("bola").unwrap().mape.is_none());
        assert!(one.summary("hm-mpc").unwrap().mape.is_some());
    }

    #[test]
    fn rejects_bad_input() {
        let m = VideoManifest::default();
        let cfg = ComparisonConfig::default();
        assert!(matches!(run_comparison(&[], &m, &all(), &cfg), Err(HarnessError::Empty(_))));
        let dup = [Contender::Online(Policy::bola()), Contender::Online(Policy::bola())];
        assert!(run_comparison(&traces(), &m, &dup, &cfg).is_err());
    }

    #[test]
    fn ablation_emits_four_variants() {
        let m = VideoManifest::default();
        let norm = Normalization::for_manifest(&m, 60.0);
        let small = |arch| ModelConfig {
            arch,
            heads: 1,
            time_dim: 4,
            latent_dim: 4,
            hidden: 4,
            ..ModelConfig::default()
        };
        let mtan = Arc::new(Model::new(small(Architecture::Mtan), norm, 1).unwrap());
        let plain = Arc::new(Model::new(small(Architecture::PlainLstm), norm, 2).unwrap());
        let models = AblationModels {
            full: mtan.clone(),
            plain: plain.clone(),
            no_smoothness: mtan.clone(),
        };
        let r = run_ablations(&traces()[..1], &m, &models, &ComparisonConfig::default()).unwrap();
        assert_eq!(r.controllers, ["kairos", "kairos-na", "kairos-ni", "kairos-ns"]);
        let ab = r.ablation.unwrap();
        assert_eq!(ab.deltas.len(), 3);
        // Same checkpoint for full and -ns: identical sessions.
        assert_eq!(ab.deltas[2].qoe, 0.0);
        let swapped = AblationModels {
            plain: mtan,
            ..models
        };
        assert!(swapped.validate().is_err());
    }
}
