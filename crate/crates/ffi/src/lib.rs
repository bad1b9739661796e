//! C ABI for `sentinel-core`.
//!
//! Every fallible function returns a [`SentinelStatus`]; on failure a message
//! is available from [`sentinel_last_error`] on the same thread. Strings
//! returned through out-parameters are owned by the caller and released with
//! [`sentinel_string_free`]. Handles are opaque and released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sentinel_core::corpus::{parse_reports, Deployment, LabelledCorpus, ReportFormat};
use sentinel_core::embedprov::{FileProvider, Provider};
use sentinel_core::eval::Prepared;
use sentinel_core::features::{hour_encoding, temporal_features};
use sentinel_core::models::{compute_class_weights, LinearModel};
use sentinel_core::pipeline::TwoStepPipeline;
use sentinel_core::textprep::{preprocess_classical, preprocess_minimal, TextAssets};
use sentinel_core::{Error, ErrorCategory};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentinelStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Provider = 5,
    Model = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

impl From<&Error> for SentinelStatus {
    fn from(e: &Error) -> Self {
        match e.category() {
            ErrorCategory::Config => SentinelStatus::Config,
            ErrorCategory::Data => SentinelStatus::Data,
            ErrorCategory::Provider => SentinelStatus::Provider,
            ErrorCategory::Model => SentinelStatus::Model,
        }
    }
}

/// A loaded linear model.
pub struct SentinelModel {
    model: LinearModel,
    labels: Vec<CString>,
}

/// A loaded two-step pipeline with its embedding provider and deployments.
pub struct SentinelPipeline {
    pipeline: TwoStepPipeline,
    provider: Option<FileProvider>,
    deployments: Vec<Deployment>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SentinelStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SentinelStatus::from(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(SentinelStatus::Data, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SentinelStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SentinelStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SentinelStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SentinelStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(SentinelStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn check_out<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(SentinelStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(SentinelStatus::Data, "output contains a NUL byte".into()))
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sentinel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sentinel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sentinel_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Classical preprocessing; `out` receives a JSON array of tokens.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_preprocess_classical(text: *const c_char, out: *mut *mut c_char) -> SentinelStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        check_out(out, "out")?;
        let tokens = preprocess_classical(text, &TextAssets::default());
        *out = to_c(serde_json::to_string(&tokens)?)?;
        Ok(())
    })
}

/// Minimal preprocessing (mentions, URLs and emoji normalized).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_preprocess_minimal(text: *const c_char, out: *mut *mut c_char) -> SentinelStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        check_out(out, "out")?;
        *out = to_c(preprocess_minimal(text))?;
        Ok(())
    })
}

/// Balanced class weights for a JSON array of labels; `out` receives a JSON
/// object mapping label to weight.
///
/// # Safety
/// `labels_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_class_weights(labels_json: *const c_char, out: *mut *mut c_char) -> SentinelStatus {
    guard(|| {
        let raw = str_arg(labels_json, "labels_json")?;
        check_out(out, "out")?;
        let labels: Vec<String> = serde_json::from_str(raw)?;
        let w = compute_class_weights(&labels)?;
        *out = to_c(serde_json::to_string(&w)?)?;
        Ok(())
    })
}

/// Cyclic hour-of-day encoding.
///
/// # Safety
/// `sin_out` and `cos_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_hour_encoding(hour: u32, sin_out: *mut f64, cos_out: *mut f64) -> SentinelStatus {
    guard(|| {
        check_out(sin_out, "sin_out")?;
        check_out(cos_out, "cos_out")?;
        let (s, c) = hour_encoding(hour);
        *sin_out = s;
        *cos_out = c;
        Ok(())
    })
}

/// Days to election and hour encoding for an RFC 3339 timestamp and a
/// `YYYY-MM-DD` election date.
///
/// # Safety
/// String arguments must be NUL-terminated; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_temporal_features(
    timestamp: *const c_char,
    election_date: *const c_char,
    utc_offset_minutes: i32,
    days_out: *mut u32,
    sin_out: *mut f64,
    cos_out: *mut f64,
) -> SentinelStatus {
    guard(|| {
        let ts = str_arg(timestamp, "timestamp")?;
        let date = str_arg(election_date, "election_date")?;
        check_out(days_out, "days_out")?;
        check_out(sin_out, "sin_out")?;
        check_out(cos_out, "cos_out")?;
        let ts = sentinel_core::corpus::parse_timestamp(ts).map_err(|e| Failure(SentinelStatus::Data, e))?;
        let date = chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .map_err(|e| Failure(SentinelStatus::Data, format!("election date: {e}")))?;
        let t = temporal_features(ts, date, utc_offset_minutes);
        *days_out = t.days_to_election;
        *sin_out = t.hour_sin;
        *cos_out = t.hour_cos;
        Ok(())
    })
}

/// Loads a model JSON file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_model_load(path: *const c_char, out: *mut *mut SentinelModel) -> SentinelStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        check_out(out, "out")?;
        let model = LinearModel::load(Path::new(path))?;
        let labels = model
            .labels
            .iter()
            .map(|l| CString::new(l.as_str()).map_err(|_| Failure(SentinelStatus::Model, "label contains NUL".into())))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(SentinelModel { model, labels }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sentinel_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sentinel_model_free(model: *mut SentinelModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sentinel_model_dim(model: *const SentinelModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sentinel_model_n_classes(model: *const SentinelModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_classes())
}

/// Label name for a class index, owned by the handle; null if out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sentinel_model_label(model: *const SentinelModel, index: usize) -> *const c_char {
    model.as_ref().and_then(|m| m.labels.get(index)).map_or(ptr::null(), |l| l.as_ptr())
}

/// Scores one dense row. `scores_out` must hold `n_classes` values.
///
/// # Safety
/// `row` must point to `len` readable doubles and `scores_out` to
/// `scores_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sentinel_model_predict(
    model: *const SentinelModel,
    row: *const f64,
    len: usize,
    label_out: *mut usize,
    scores_out: *mut f64,
    scores_len: usize,
) -> SentinelStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure(SentinelStatus::NullPointer, "`model` is null".into()))?;
        if row.is_null() {
            return Err(Failure(SentinelStatus::NullPointer, "`row` is null".into()));
        }
        check_out(label_out, "label_out")?;
        check_out(scores_out, "scores_out")?;
        if scores_len < m.model.n_classes() {
            return Err(Failure(
                SentinelStatus::BufferTooSmall,
                format!("need {} score slots, got {scores_len}", m.model.n_classes()),
            ));
        }
        let (label, scores) = m.model.predict_dense(std::slice::from_raw_parts(row, len))?;
        *label_out = label;
        std::slice::from_raw_parts_mut(scores_out, scores.len()).copy_from_slice(&scores);
        Ok(())
    })
}

/// Loads a pipeline bundle. `fixtures` may be null for pipelines that do not
/// use embeddings. The built-in Kenyan and Nigerian deployments are known;
/// others can be added with [`sentinel_pipeline_add_deployment`].
///
/// # Safety
/// `bundle_dir` must be NUL-terminated, `fixtures` null or NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_pipeline_load(
    bundle_dir: *const c_char,
    fixtures: *const c_char,
    out: *mut *mut SentinelPipeline,
) -> SentinelStatus {
    guard(|| {
        let dir = str_arg(bundle_dir, "bundle_dir")?;
        check_out(out, "out")?;
        let provider = if fixtures.is_null() {
            None
        } else {
            Some(FileProvider::load(Path::new(str_arg(fixtures, "fixtures")?))?)
        };
        let pipeline = TwoStepPipeline::load(Path::new(dir))?;
        *out = Box::into_raw(Box::new(SentinelPipeline {
            pipeline,
            provider,
            deployments: vec![Deployment::kenya_2017(), Deployment::kenya_2022(), Deployment::nigeria_2023()],
        }));
        Ok(())
    })
}

/// # Safety
/// `pipeline` must come from [`sentinel_pipeline_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sentinel_pipeline_free(pipeline: *mut SentinelPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Registers a deployment (its JSON mapping file contents), replacing any
/// with the same name.
///
/// # Safety
/// `pipeline` must be a live handle; `deployment_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sentinel_pipeline_add_deployment(
    pipeline: *mut SentinelPipeline,
    deployment_json: *const c_char,
) -> SentinelStatus {
    guard(|| {
        let p = pipeline.as_mut().ok_or_else(|| Failure(SentinelStatus::NullPointer, "`pipeline` is null".into()))?;
        let d = Deployment::from_json(str_arg(deployment_json, "deployment_json")?)?;
        p.deployments.retain(|x| x.name != d.name);
        p.deployments.push(d);
        Ok(())
    })
}

/// Classifies JSONL reports. Context is drawn from the same batch. `out`
/// receives a JSON array of decisions, each with the report `id`.
///
/// # Safety
/// `pipeline` must be a live handle; `reports_jsonl` NUL-terminated; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sentinel_pipeline_classify(
    pipeline: *const SentinelPipeline,
    reports_jsonl: *const c_char,
    out: *mut *mut c_char,
) -> SentinelStatus {
    guard(|| {
        let p = pipeline.as_ref().ok_or_else(|| Failure(SentinelStatus::NullPointer, "`pipeline` is null".into()))?;
        let raw = str_arg(reports_jsonl, "reports_jsonl")?;
        check_out(out, "out")?;
        let reports = parse_reports(raw.as_bytes(), ReportFormat::Jsonl).into_strict()?;
        let data = Prepared::new(LabelledCorpus { reports: reports.clone(), labels: Vec::new() }, &p.deployments);
        let refs: Vec<_> = reports.iter().collect();
        let provider = p.provider.as_ref().map(|f| f as &dyn Provider);
        let decisions = p.pipeline.classify_batch(&refs, &data.snapshot(provider))?;
        let ids: HashMap<usize, &str> = reports.iter().enumerate().map(|(i, r)| (i, r.id.as_str())).collect();
        let mut rows = Vec::with_capacity(decisions.len());
        for (i, d) in decisions.iter().enumerate() {
            let mut v = serde_json::to_value(d)?;
            v["id"] = serde_json::Value::String(ids[&i].to_string());
            rows.push(v);
        }
        *out = to_c(serde_json::to_string(&rows)?)?;
        Ok(())
    })
}
