use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;
use std::sync::Arc;

use kairos::controller::{adjust_prediction, mpc_decide, ControllerConfig, PlayerState, Policy};
use kairos::predictor::{padded_window, Checkpoint, Model, ModelConfig, Normalization, Observation, TrainingLog};
use kairos::simulator::{run_session, SimConfig};
use kairos::trace_io::{NetworkTrace, VideoManifest};
use kairos_ffi::*;

fn last_error() -> String {
    let p = kairos_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn samples() -> (Vec<f64>, Vec<f64>) {
    let times: Vec<f64> = (0..120).map(f64::from).collect();
    let mbps = times.iter().map(|t| 1.5 + 1.2 * (t / 7.0).sin()).collect();
    (times, mbps)
}

unsafe fn trace() -> *mut KairosTrace {
    let (times, mbps) = samples();
    let id = CString::new("wave").unwrap();
    let mut t = ptr::null_mut();
    let s = unsafe { kairos_trace_from_samples(id.as_ptr(), times.as_ptr(), mbps.as_ptr(), times.len(), &mut t) };
    assert_eq!(s, KairosStatus::Ok);
    t
}

fn core_trace() -> NetworkTrace {
    let (times, mbps) = samples();
    let pairs: Vec<_> = times.into_iter().zip(mbps).collect();
    NetworkTrace::new("wave", &pairs, None).unwrap()
}

fn tiny_model() -> Model {
    let cfg = ModelConfig {
        heads: 2,
        hidden: 6,
        latent_dim: 5,
        time_dim: 4,
        ..ModelConfig::default()
    };
    let norm = Normalization {
        throughput: 2.0,
        buffer: 20.0,
        rebuffer: 1.0,
        latency: 2.0,
    };
    Model::new(cfg, norm, 3).unwrap()
}

#[test]
fn version_and_errors() {
    let v = unsafe { CStr::from_ptr(kairos_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));

    kairos_clear_error();
    assert!(kairos_last_error().is_null());
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { kairos_trace_load(ptr::null(), &mut t) }, KairosStatus::NullPointer);
    assert!(t.is_null());
    assert!(last_error().contains("path"));

    let missing = CString::new("/nonexistent/x.trace").unwrap();
    assert_eq!(unsafe { kairos_trace_load(missing.as_ptr(), &mut t) }, KairosStatus::Data);

    let name = CString::new("nope").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { kairos_policy_new(name.as_ptr(), ptr::null(), &mut p) }, KairosStatus::InvalidArgument);
    assert!(last_error().contains("nope"));
    let name = CString::new("kairos").unwrap();
    assert_eq!(unsafe { kairos_policy_new(name.as_ptr(), ptr::null(), &mut p) }, KairosStatus::NullPointer);

    let mut params = std::mem::MaybeUninit::<KairosParams>::uninit();
    assert_eq!(unsafe { kairos_params_default(params.as_mut_ptr()) }, KairosStatus::Ok);
    let mut params = unsafe { params.assume_init() };
    params.gamma_cap = 1.5;
    let mut out = 0.0;
    assert_eq!(unsafe { kairos_adjust_prediction(1.0, 2.0, 5.0, &params, &mut out) }, KairosStatus::InvalidArgument);
    assert_eq!(
        unsafe { kairos_adjust_prediction(f64::NAN, 2.0, 5.0, ptr::null(), &mut out) },
        KairosStatus::Numeric
    );

    // Freeing NULL is harmless.
    unsafe {
        kairos_trace_free(ptr::null_mut());
        kairos_manifest_free(ptr::null_mut());
        kairos_model_free(ptr::null_mut());
        kairos_policy_free(ptr::null_mut());
        kairos_session_free(ptr::null_mut());
    }
}

#[test]
fn decisions_match_the_library() {
    let cfg = ControllerConfig::default();
    let m = VideoManifest::default();
    let mut manifest = ptr::null_mut();
    assert_eq!(unsafe { kairos_manifest_default(&mut manifest) }, KairosStatus::Ok);
    assert_eq!(unsafe { kairos_manifest_levels(manifest) }, m.levels());
    assert_eq!(unsafe { kairos_manifest_num_chunks(manifest) }, m.num_chunks());
    for (i, buffer) in [0.0, 3.5, 12.0, 40.0].into_iter().enumerate() {
        for estimate in [0.3, 1.1, 2.7, 6.0] {
            let mut got = 99;
            let s = unsafe { kairos_mpc_decide(manifest, ptr::null(), buffer, i as i64 - 1, i * 3, estimate, &mut got) };
            assert_eq!(s, KairosStatus::Ok);
            let state = PlayerState {
                buffer,
                wall_time: 0.0,
                prev_level: (i > 0).then(|| i - 1),
                next_chunk: i * 3,
            };
            assert_eq!(got, mpc_decide(&state, estimate, &m, &cfg));

            let mut adj = 0.0;
            assert_eq!(
                unsafe { kairos_adjust_prediction(estimate * 0.6, estimate, buffer, ptr::null(), &mut adj) },
                KairosStatus::Ok
            );
            let pred = kairos::predictor::QuantilePrediction {
                levels: vec![0.1, 0.5],
                values: vec![estimate * 0.6, estimate],
            };
            assert_eq!(adj, adjust_prediction(&pred, buffer, &cfg).unwrap());
        }
    }
    let mut got = 0;
    let past = m.num_chunks();
    assert_eq!(
        unsafe { kairos_mpc_decide(manifest, ptr::null(), 1.0, -1, past, 1.0, &mut got) },
        KairosStatus::InvalidArgument
    );
    unsafe { kairos_manifest_free(manifest) };
}

#[test]
fn sessions_match_the_library() {
    unsafe {
        let t = trace();
        assert_eq!(kairos_trace_sample_count(t), 120);
        let mut manifest = ptr::null_mut();
        assert_eq!(kairos_manifest_default(&mut manifest), KairosStatus::Ok);
        let reference = core_trace();
        let m = VideoManifest::default();
        for name in ["hm-mpc", "robust-hm-mpc", "bola"] {
            let c = CString::new(name).unwrap();
            let mut policy = ptr::null_mut();
            assert_eq!(kairos_policy_new(c.as_ptr(), ptr::null(), &mut policy), KairosStatus::Ok);
            let mut session = ptr::null_mut();
            assert_eq!(
                kairos_simulate(t, manifest, policy, ptr::null(), &mut session),
                KairosStatus::Ok
            );
            let core_policy = match name {
                "hm-mpc" => Policy::hm_mpc(),
                "robust-hm-mpc" => Policy::robust_mpc(),
                _ => Policy::bola(),
            };
            let want = run_session(&reference, &m, &core_policy, &ControllerConfig::default(), &SimConfig::default())
                .unwrap();
            assert_eq!(kairos_session_chunk_count(session), want.records.len());
            let mut q = std::mem::MaybeUninit::<KairosQoe>::uninit();
            assert_eq!(kairos_session_qoe(session, q.as_mut_ptr()), KairosStatus::Ok);
            let q = q.assume_init();
            assert_eq!(q.total, want.qoe.total);
            assert_eq!(q.average, want.qoe.average);
            let mut wall = 0.0;
            assert_eq!(kairos_session_wall_time(session, &mut wall), KairosStatus::Ok);
            assert_eq!(wall, want.wall_time());
            for (i, r) in want.records.iter().enumerate() {
                let mut c = std::mem::MaybeUninit::<KairosChunk>::uninit();
                assert_eq!(kairos_session_chunk(session, i, c.as_mut_ptr()), KairosStatus::Ok);
                let c = c.assume_init();
                assert_eq!((c.level, c.start, c.rebuffer, c.sleep), (r.level, r.start, r.rebuffer, r.sleep));
                assert_eq!(c.estimate.is_nan(), r.estimate.is_none());
            }
            let mut c = std::mem::MaybeUninit::<KairosChunk>::uninit();
            assert_eq!(
                kairos_session_chunk(session, want.records.len(), c.as_mut_ptr()),
                KairosStatus::InvalidArgument
            );

            let mut best = ptr::null_mut();
            assert_eq!(kairos_offline_optimal(t, manifest, ptr::null(), 0.1, &mut best), KairosStatus::Ok);
            let mut bq = std::mem::MaybeUninit::<KairosQoe>::uninit();
            assert_eq!(kairos_session_qoe(best, bq.as_mut_ptr()), KairosStatus::Ok);
            assert!(bq.assume_init().total >= q.total - 0.5);
            kairos_session_free(best);
            kairos_session_free(session);
            kairos_policy_free(policy);
        }
        kairos_manifest_free(manifest);
        kairos_trace_free(t);
    }
}

#[test]
fn model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model();
    let path = dir.path().join("m.ckpt");
    Checkpoint {
        model: model.clone(),
        log: TrainingLog::default(),
    }
    .save(&path)
    .unwrap();
    let history: Vec<KairosObservation> = (0..7)
        .map(|i| KairosObservation {
            throughput: 1.0 + 0.3 * i as f64,
            buffer: 2.0 * i as f64,
            rebuffer: if i == 0 { 0.8 } else { 0.0 },
            latency: 1.2,
            completed_at: 4.0 * (i + 1) as f64,
        })
        .collect();
    unsafe {
        let c = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle = ptr::null_mut();
        assert_eq!(kairos_model_load(c.as_ptr(), &mut handle), KairosStatus::Ok);
        let n = kairos_model_quantile_count(handle);
        assert_eq!(n, 3);
        let mut out = vec![0.0; n];
        assert_eq!(
            kairos_model_predict(handle, history.as_ptr(), history.len(), 4.0, out.as_mut_ptr(), n),
            KairosStatus::Ok
        );
        let obs: Vec<Observation> = history
            .iter()
            .map(|o| Observation {
                throughput: o.throughput,
                buffer: o.buffer,
                rebuffer: o.rebuffer,
                latency: o.latency,
                completed_at: o.completed_at,
            })
            .collect();
        let cfg = model.config();
        let w = padded_window(&obs, cfg.k, cfg.eta, model.normalization(), 4.0).unwrap();
        assert_eq!(out, model.predict(&w).unwrap().values);
        assert_eq!(
            kairos_model_predict(handle, history.as_ptr(), history.len(), 4.0, out.as_mut_ptr(), 2),
            KairosStatus::InvalidArgument
        );

        let name = CString::new("kairos").unwrap();
        let mut policy = ptr::null_mut();
        assert_eq!(kairos_policy_new(name.as_ptr(), handle, &mut policy), KairosStatus::Ok);
        // The policy shares the model, so the handle can go first.
        kairos_model_free(handle);
        let t = trace();
        let mut manifest = ptr::null_mut();
        assert_eq!(kairos_manifest_default(&mut manifest), KairosStatus::Ok);
        let mut session = ptr::null_mut();
        assert_eq!(kairos_simulate(t, manifest, policy, ptr::null(), &mut session), KairosStatus::Ok);
        let want = run_session(
            &core_trace(),
            &VideoManifest::default(),
            &Policy::kairos("kairos", Arc::new(model)),
            &ControllerConfig::default(),
            &SimConfig::default(),
        )
        .unwrap();
        let mut q = std::mem::MaybeUninit::<KairosQoe>::uninit();
        assert_eq!(kairos_session_qoe(session, q.as_mut_ptr()), KairosStatus::Ok);
        assert_eq!(q.assume_init().total, want.qoe.total);
        kairos_session_free(session);
        kairos_manifest_free(manifest);
        kairos_trace_free(t);
        kairos_policy_free(policy);

        std::fs::write(&path, "not a checkpoint").unwrap();
        let mut bad = ptr::null_mut();
        assert_eq!(kairos_model_load(c.as_ptr(), &mut bad), KairosStatus::Data);
        assert!(bad.is_null());
    }
}

fn target_dir() -> PathBuf {
    // .../target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_header() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libkairos_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or no static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "kairos.h"

int main(void) {
    double t[4] = {0, 1, 2, 3}, bw[4] = {2, 2.5, 1.5, 2};
    KairosTrace *trace = NULL;
    KairosManifest *m = NULL;
    KairosPolicy *p = NULL;
    KairosSession *s = NULL;
    KairosQoe q;
    if (kairos_trace_from_samples("c", t, bw, 4, &trace) != KAIROS_STATUS_OK) return 1;
    if (kairos_manifest_default(&m) != KAIROS_STATUS_OK) return 2;
    if (kairos_policy_new("bola", NULL, &p) != KAIROS_STATUS_OK) return 3;
    if (kairos_simulate(trace, m, p, NULL, &s) != KAIROS_STATUS_OK) return 4;
    if (kairos_session_qoe(s, &q) != KAIROS_STATUS_OK) return 5;
    if (kairos_policy_new("x", NULL, &p) != KAIROS_STATUS_INVALID_ARGUMENT) return 6;
    if (strstr(kairos_last_error(), "x") == NULL) return 7;
    printf("%zu %.6f\n", kairos_session_chunk_count(s), q.total);
    kairos_session_free(s);
    kairos_policy_free(p);
    kairos_manifest_free(m);
    kairos_trace_free(trace);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let cc = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8_lossy(&run.stdout);
    let chunks: usize = text.split_whitespace().next().unwrap().parse().unwrap();
    assert_eq!(chunks, VideoManifest::default().num_chunks());
}
