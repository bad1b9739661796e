use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::OnceLock;

use sentinel_core::models::{compute_class_weights, LinearModel};
use sentinel_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = sentinel_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    sentinel_string_free(p);
    s
}

struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        let synth = ["sentinel", "synth", "--out", data.to_str().unwrap(), "--reports", "300", "--target-reports", "0"];
        assert_eq!(sentinel_core::cli::main_with_args(synth), 0);
        let config = data.join("experiment.json");
        let train = ["sentinel", "train", "--config", config.to_str().unwrap(), "--out", run.to_str().unwrap()];
        assert_eq!(sentinel_core::cli::main_with_args(train), 0);
        Trained { _dir: dir, data, run }
    })
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(sentinel_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let mut out = ptr::null_mut();
    let st = unsafe { sentinel_preprocess_minimal(ptr::null(), &mut out) };
    assert_eq!(st, SentinelStatus::NullPointer);
    assert!(last_error().contains("text"));
    let text = c("hi");
    let st = unsafe { sentinel_preprocess_minimal(text.as_ptr(), ptr::null_mut()) };
    assert_eq!(st, SentinelStatus::NullPointer);
    unsafe {
        assert_eq!(sentinel_model_dim(ptr::null()), 0);
        assert_eq!(sentinel_model_n_classes(ptr::null()), 0);
        assert!(sentinel_model_label(ptr::null(), 0).is_null());
        sentinel_model_free(ptr::null_mut());
        sentinel_pipeline_free(ptr::null_mut());
        sentinel_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_rejected() {
    let bad = CString::new(vec![0xffu8, 0xfe]).unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { sentinel_preprocess_classical(bad.as_ptr(), &mut out) };
    assert_eq!(st, SentinelStatus::InvalidUtf8);
    assert!(out.is_null());
}

#[test]
fn preprocessing_round_trips_json() {
    let text = c("Long queues at the polling station http://x.co @iebc");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sentinel_preprocess_classical(text.as_ptr(), &mut out) }, SentinelStatus::Ok);
    let tokens: Vec<String> = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert!(tokens.iter().any(|t| t.starts_with("queue")));
    assert!(!tokens.iter().any(|t| t.contains("http")));

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sentinel_preprocess_minimal(text.as_ptr(), &mut out) }, SentinelStatus::Ok);
    assert_eq!(
        unsafe { take(out) },
        sentinel_core::textprep::preprocess_minimal("Long queues at the polling station http://x.co @iebc")
    );
}

#[test]
fn class_weights_match_core() {
    let labels = ["a", "a", "a", "b"];
    let json = c(&serde_json::to_string(&labels).unwrap());
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sentinel_class_weights(json.as_ptr(), &mut out) }, SentinelStatus::Ok);
    let got: std::collections::BTreeMap<String, f64> = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(got, compute_class_weights(&labels).unwrap());

    let bad = c("not json");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sentinel_class_weights(bad.as_ptr(), &mut out) }, SentinelStatus::Data);
}

#[test]
fn temporal_wrappers() {
    let (mut s, mut co) = (0.0, 0.0);
    assert_eq!(unsafe { sentinel_hour_encoding(6, &mut s, &mut co) }, SentinelStatus::Ok);
    assert!((s - 1.0).abs() < 1e-12 && co.abs() < 1e-12);

    let ts = c("2017-08-07T21:30:00Z");
    let date = c("2017-08-08");
    let mut days = 0u32;
    let st = unsafe { sentinel_temporal_features(ts.as_ptr(), date.as_ptr(), 180, &mut days, &mut s, &mut co) };
    assert_eq!(st, SentinelStatus::Ok);
    assert_eq!(days, 0);
    let (es, ec) = sentinel_core::features::hour_encoding(0);
    assert!((s - es).abs() < 1e-12 && (co - ec).abs() < 1e-12);

    let bad = c("yesterday");
    let st = unsafe { sentinel_temporal_features(bad.as_ptr(), date.as_ptr(), 0, &mut days, &mut s, &mut co) };
    assert_eq!(st, SentinelStatus::Data);
}

#[test]
fn missing_model_file_fails() {
    let path = c("/nonexistent/model.json");
    let mut m = ptr::null_mut();
    let st = unsafe { sentinel_model_load(path.as_ptr(), &mut m) };
    assert_ne!(st, SentinelStatus::Ok);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn model_handle_matches_core_predictions() {
    let t = trained();
    let gate = t.run.join("bundle/gate.json");
    let core = LinearModel::load(&gate).unwrap();
    let path = c(gate.to_str().unwrap());
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sentinel_model_load(path.as_ptr(), &mut m) }, SentinelStatus::Ok);
    unsafe {
        assert_eq!(sentinel_model_dim(m), core.dim());
        assert_eq!(sentinel_model_n_classes(m), 2);
        for (i, l) in core.labels.iter().enumerate() {
            assert_eq!(CStr::from_ptr(sentinel_model_label(m, i)).to_str().unwrap(), l);
        }
        assert!(sentinel_model_label(m, 2).is_null());

        let row: Vec<f64> = (0..core.dim()).map(|i| ((i % 7) as f64 - 3.0) * 0.01).collect();
        let (want_label, want_scores) = core.predict_dense(&row).unwrap();
        let mut label = usize::MAX;
        let mut scores = [0.0f64; 2];
        let st = sentinel_model_predict(m, row.as_ptr(), row.len(), &mut label, scores.as_mut_ptr(), 2);
        assert_eq!(st, SentinelStatus::Ok);
        assert_eq!(label, want_label);
        assert_eq!(scores.to_vec(), want_scores);

        let st = sentinel_model_predict(m, row.as_ptr(), row.len(), &mut label, scores.as_mut_ptr(), 1);
        assert_eq!(st, SentinelStatus::BufferTooSmall);
        let st = sentinel_model_predict(m, row.as_ptr(), 3, &mut label, scores.as_mut_ptr(), 2);
        assert_eq!(st, SentinelStatus::Model);
        sentinel_model_free(m);
    }
}

fn load_pipeline(t: &Trained) -> *mut SentinelPipeline {
    let bundle = c(t.run.join("bundle").to_str().unwrap());
    let fixtures = c(t.data.join("fixtures.jsonl").to_str().unwrap());
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { sentinel_pipeline_load(bundle.as_ptr(), fixtures.as_ptr(), &mut p) },
        SentinelStatus::Ok,
        "{}",
        last_error()
    );
    p
}

fn first_lines(path: &Path, n: usize) -> String {
    std::fs::read_to_string(path).unwrap().lines().take(n).collect::<Vec<_>>().join("\n")
}

#[test]
fn pipeline_classifies_jsonl() {
    let t = trained();
    let p = load_pipeline(t);
    let deployment = c(&std::fs::read_to_string(t.data.join("deployment.json")).unwrap());
    assert_eq!(unsafe { sentinel_pipeline_add_deployment(p, deployment.as_ptr()) }, SentinelStatus::Ok);

    let jsonl = first_lines(&t.data.join("corpus.jsonl"), 25);
    let input = c(&jsonl);
    let mut out = ptr::null_mut();
    let st = unsafe { sentinel_pipeline_classify(p, input.as_ptr(), &mut out) };
    assert_eq!(st, SentinelStatus::Ok, "{}", last_error());
    let decisions: Vec<serde_json::Value> = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(decisions.len(), 25);
    for (d, line) in decisions.iter().zip(jsonl.lines()) {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(d["id"], r["id"]);
        assert!(d["decision"] == "informative" || d["decision"] == "non_informative", "{d}");
    }

    let garbage = c("{not a report}");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sentinel_pipeline_classify(p, garbage.as_ptr(), &mut out) }, SentinelStatus::Data);
    unsafe { sentinel_pipeline_free(p) };
}

#[test]
fn pipeline_without_fixtures_reports_provider_error() {
    let t = trained();
    let bundle = c(t.run.join("bundle").to_str().unwrap());
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sentinel_pipeline_load(bundle.as_ptr(), ptr::null(), &mut p) }, SentinelStatus::Ok);
    let deployment = c(&std::fs::read_to_string(t.data.join("deployment.json")).unwrap());
    assert_eq!(unsafe { sentinel_pipeline_add_deployment(p, deployment.as_ptr()) }, SentinelStatus::Ok);
    let input = c(&first_lines(&t.data.join("corpus.jsonl"), 3));
    let mut out = ptr::null_mut();
    let st = unsafe { sentinel_pipeline_classify(p, input.as_ptr(), &mut out) };
    assert_ne!(st, SentinelStatus::Ok);
    assert!(out.is_null());
    unsafe { sentinel_pipeline_free(p) };
}

#[test]
fn missing_bundle_fails() {
    let bundle = c("/nonexistent/bundle");
    let mut p = ptr::null_mut();
    let st = unsafe { sentinel_pipeline_load(bundle.as_ptr(), ptr::null(), &mut p) };
    assert_ne!(st, SentinelStatus::Ok);
    assert!(p.is_null());
}

#[test]
fn errors_are_thread_local() {
    let mut out = ptr::null_mut();
    unsafe { sentinel_preprocess_minimal(ptr::null(), &mut out) };
    let here = last_error();
    std::thread::spawn(|| assert!(sentinel_last_error().is_null())).join().unwrap();
    assert_eq!(last_error(), here);
}
