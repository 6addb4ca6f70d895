use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use kairos::config::{ConfigError, RunConfig};
use kairos::harness::{
    run_ablations, run_comparison, text_report, write_report, AblationModels, ComparisonReport, Contender,
    HarnessError, Variant, OFFLINE_OPTIMAL,
};
use kairos::predictor::{build_dataset, train, Architecture, Checkpoint, Dataset, Model, PredictorError};
use kairos::simulator::SimError;
use kairos::trace_io::{generate_trace, load_trace_dir, NetworkTrace, SyntheticTraceSpec, TraceError};
use kairos::controller::Policy;

const RUN_FORMAT: &str = "KAIROS-RUN/1";

#[derive(Parser)]
#[command(name = "kairos", version, about = "Trace-driven ABR lab with quantile throughput prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; keys not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Shorthand for `--set seed=S --set train.seed=S`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for compare/ablate (default: available parallelism).
    /// Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override a config key, e.g. `--set controller.beta=3`. Applied after
    /// `--config` and `--seed`, left to right.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic traces from a generator spec (TOML).
    GenTraces {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        count: usize,
        /// File and id prefix.
        #[arg(long, default_value = "trace")]
        prefix: String,
        #[command(flatten)]
        common: Common,
    },
    /// Log harmonic-mean MPC sessions and slice them into training windows.
    MakeDataset {
        #[arg(long)]
        traces: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a predictor checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Ablation variant whose checkpoint to train: kairos, kairos-ni or kairos-ns.
        #[arg(long, default_value = "kairos")]
        variant: String,
        #[command(flatten)]
        common: Common,
    },
    /// Play one session.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        /// kairos, kairos-na, robust-hm-mpc, hm-mpc, bola or offline-optimal.
        #[arg(long)]
        controller: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare controllers over a trace directory.
    Compare {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "kairos,robust-hm-mpc,hm-mpc,bola,offline-optimal"
        )]
        controllers: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full system and its three ablations.
    Ablate {
        #[arg(long)]
        traces: PathBuf,
        /// Full model (mtan, trained with the smoothness loss).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Plain LSTM model.
        #[arg(long)]
        ni_checkpoint: PathBuf,
        /// mtan model trained without the smoothness loss.
        #[arg(long)]
        ns_checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Parse(_) | ConfigError::Io { .. } => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Diverged { .. } | PredictorError::Autodiff(_) => CliError::Numeric(e.to_string()),
            PredictorError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match &e {
            HarnessError::Session {
                source:
                    SimError::Predictor {
                        source: PredictorError::Diverged { .. } | PredictorError::Autodiff(_),
                        ..
                    },
                ..
            } => {
                CliError::Numeric(e.to_string())
            }
            HarnessError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    format: &'static str,
    version: &'static str,
    command: &'a str,
    inputs: Vec<String>,
    config: &'a RunConfig,
    artifacts: Vec<Artifact>,
}

struct Run {
    command: &'static str,
    cfg: RunConfig,
    workers: usize,
    out: PathBuf,
    inputs: Vec<String>,
    written: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str, common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
            cfg.train.seed = s;
        }
        for a in &common.sets {
            cfg.apply(a)?;
        }
        cfg.validate()?;
        let workers = match common.workers {
            Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        println!("# resolved config\n{}", cfg.to_toml());
        std::fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
        let mut inputs = Vec::new();
        if let Some(p) = &common.config {
            inputs.push(p.display().to_string());
        }
        Ok(Self {
            command,
            cfg,
            workers,
            out: common.out.clone(),
            inputs,
            written: Vec::new(),
        })
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.written.push(PathBuf::from(name));
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        let mut artifacts = Vec::new();
        for rel in &self.written {
            let path = self.out.join(rel);
            let bytes = std::fs::metadata(&path).map_err(|e| io_err(&path, e))?.len();
            artifacts.push(Artifact {
                path: rel.display().to_string(),
                bytes,
            });
        }
        let m = RunManifest {
            format: RUN_FORMAT,
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            inputs: self.inputs.clone(),
            config: &self.cfg,
            artifacts,
        };
        let mut json = serde_json::to_string_pretty(&m).expect("manifest serialises");
        json.push('\n');
        let path = self.out.join("run_manifest.json");
        std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
        println!("wrote {} artifacts under {}", self.written.len(), self.out.display());
        Ok(())
    }
}

fn load_model(path: &Path, want: Architecture) -> Result<Arc<Model>, CliError> {
    let ck = Checkpoint::load(path)?;
    if ck.model.arch() != want {
        return Err(CliError::Usage(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            ck.model.arch().tag(),
            want.tag()
        )));
    }
    Ok(Arc::new(ck.model))
}

fn contender(name: &str, model: Option<&Arc<Model>>) -> Result<Contender, CliError> {
    let need = || {
        model
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("controller {name} needs --checkpoint")))
    };
    Ok(match name {
        "kairos" => Contender::Online(Policy::kairos(name, need()?)),
        "kairos-na" => Contender::Online(Policy::kairos_robust(name, need()?)),
        "robust-hm-mpc" => Contender::Online(Policy::robust_mpc()),
        "hm-mpc" => Contender::Online(Policy::hm_mpc()),
        "bola" => Contender::Online(Policy::bola()),
        OFFLINE_OPTIMAL => Contender::OfflineOptimal,
        other => return Err(CliError::Usage(format!("unknown controller {other}"))),
    })
}

fn traces_from(dir: &Path) -> Result<Vec<NetworkTrace>, CliError> {
    let traces = load_trace_dir(dir)?;
    if traces.is_empty() {
        return Err(CliError::Data(format!("no traces in {}", dir.display())));
    }
    Ok(traces)
}

fn emit_report(run: &mut Run, report: &ComparisonReport) -> Result<(), CliError> {
    let (lambda, mu) = (run.cfg.controller.lambda, run.cfg.controller.mu);
    let written = write_report(report, &run.out, lambda, mu)?;
    run.written.extend(written);
    print!("{}", text_report(report));
    Ok(())
}

fn gen_traces(common: &Common, spec_path: &Path, count: usize, prefix: &str) -> Result<(), CliError> {
    let mut run = Run::new("gen-traces", common)?;
    run.input(spec_path);
    let text = std::fs::read_to_string(spec_path).map_err(|e| io_err(spec_path, e))?;
    let mut spec: SyntheticTraceSpec =
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", spec_path.display())))?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    spec.validate()?;
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let width = count.saturating_sub(1).to_string().len().max(3);
    for i in 0..count {
        let id = format!("{prefix}-{i:0width$}");
        let t = generate_trace(&spec.with_seed(spec.seed.wrapping_add(i as u64)), &id)?;
        run.write(&format!("{id}.trace"), &t.to_text())?;
    }
    run.finish()
}

fn make_dataset(common: &Common, dir: &Path) -> Result<(), CliError> {
    let mut run = Run::new("make-dataset", common)?;
    run.input(dir);
    let traces = traces_from(dir)?;
    let manifest = run.cfg.manifest()?;
    let ds = build_dataset(&traces, &manifest, &run.cfg.dataset_options())?;
    println!(
        "{} windows from {} traces ({} train, {} validation)",
        ds.windows.len(),
        traces.len(),
        ds.train_traces.len(),
        ds.val_traces.len()
    );
    run.write("dataset.json", &ds.to_json())?;
    run.finish()
}

fn train_cmd(common: &Common, path: &Path, variant: &str) -> Result<(), CliError> {
    let mut run = Run::new("train", common)?;
    run.input(path);
    let v = match Variant::from_name(variant) {
        Some(v @ (Variant::Full | Variant::NoInterpolation | Variant::NoSmoothness)) => v,
        _ => {
            return Err(CliError::Usage(format!(
                "--variant must be kairos, kairos-ni or kairos-ns, got {variant}"
            )))
        }
    };
    run.cfg = run.cfg.for_variant(v);
    let ds = Dataset::load(path)?;
    let ck = train(&ds, run.cfg.model.clone(), &run.cfg.train)?;
    let mut log = String::from("epoch\ttrain_loss\tval_loss\tval_mape_pct\n");
    for e in &ck.log.epochs {
        log.push_str(&format!("{}\t{}\t{}\t{}\n", e.epoch, e.train_loss, e.val_loss, e.val_mape));
        println!(
            "epoch {:>3}  train {:.5}  val {:.5}  val MAPE {:.2}%",
            e.epoch, e.train_loss, e.val_loss, e.val_mape
        );
    }
    println!("kept epoch {}", ck.log.best_epoch);
    run.write("model.ckpt", &ck.to_text())?;
    run.write("training_log.tsv", &log)?;
    run.finish()
}

fn simulate(common: &Common, trace: &Path, name: &str, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let mut run = Run::new("simulate", common)?;
    run.input(trace);
    let model = match checkpoint {
        Some(p) => {
            run.input(p);
            Some(load_model(p, Architecture::Mtan)?)
        }
        None => None,
    };
    let c = contender(name, model.as_ref())?;
    let t = NetworkTrace::load(trace)?;
    let manifest = run.cfg.manifest()?;
    let report = run_comparison(&[t], &manifest, &[c], &run.cfg.comparison(1))?;
    let s = &report.sessions[0];
    run.write("session.log", &s.to_log(run.cfg.controller.lambda, run.cfg.controller.mu))?;
    let mut json = serde_json::to_string_pretty(&report.summaries[0]).expect("summary serialises");
    json.push('\n');
    run.write("summary.json", &json)?;
    println!(
        "{} on {}: QoE {:.4} (utility {:.4}, rebuffer {:.4}, smoothness {:.4}), stall {:.3} s",
        s.controller,
        s.trace_id,
        s.qoe.average,
        s.qoe.utility,
        s.qoe.rebuffer_penalty,
        s.qoe.smoothness_penalty,
        s.total_rebuffer()
    );
    run.finish()
}

fn compare(common: &Common, dir: &Path, checkpoint: Option<&Path>, names: &[String]) -> Result<(), CliError> {
    let mut run = Run::new("compare", common)?;
    run.input(dir);
    let model = match checkpoint {
        Some(p) => {
            run.input(p);
            Some(load_model(p, Architecture::Mtan)?)
        }
        None => None,
    };
    let contenders = names
        .iter()
        .map(|n| contender(n.trim(), model.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let traces = traces_from(dir)?;
    let manifest = run.cfg.manifest()?;
    let report = run_comparison(&traces, &manifest, &contenders, &run.cfg.comparison(run.workers))?;
    emit_report(&mut run, &report)?;
    run.finish()
}

fn ablate(common: &Common, dir: &Path, full: &Path, ni: &Path, ns: &Path) -> Result<(), CliError> {
    let mut run = Run::new("ablate", common)?;
    for p in [dir, full, ni, ns] {
        run.input(p);
    }
    let models = AblationModels {
        full: load_model(full, Architecture::Mtan)?,
        plain: load_model(ni, Architecture::PlainLstm)?,
        no_smoothness: load_model(ns, Architecture::Mtan)?,
    };
    let traces = traces_from(dir)?;
    let manifest = run.cfg.manifest()?;
    let report = run_ablations(&traces, &manifest, &models, &run.cfg.comparison(run.workers))?;
    emit_report(&mut run, &report)?;
    run.finish()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::GenTraces {
            spec,
            count,
            prefix,
            common,
        } => gen_traces(common, spec, *count, prefix),
        Cmd::MakeDataset { traces, common } => make_dataset(common, traces),
        Cmd::Train {
            dataset,
            variant,
            common,
        } => train_cmd(common, dataset, variant),
        Cmd::Simulate {
            trace,
            controller,
            checkpoint,
            common,
        } => simulate(common, trace, controller, checkpoint.as_deref()),
        Cmd::Compare {
            traces,
            checkpoint,
            controllers,
            common,
        } => compare(common, traces, checkpoint.as_deref(), controllers),
        Cmd::Ablate {
            traces,
            checkpoint,
            ni_checkpoint,
            ns_checkpoint,
            common,
        } => ablate(common, traces, checkpoint, ni_checkpoint, ns_checkpoint),
    }
}

fn main() -> ExitCode {
    let keys = format!(
        "Config keys (set in --config TOML or with --set; precedence: defaults < --config < --seed < --set):\n{}",
        RunConfig::help_table()
    );
    let mut cmd = Cli::command().after_help(keys.clone());
    for sub in cmd.get_subcommands_mut() {
        *sub = sub.clone().after_help(keys.clone());
    }
    let matches = cmd.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kairos: {e}");
            ExitCode::from(e.code())
        }
    }
}
