//! C interface to the dfpe library.
//!
//! A session owns the loaded inputs and the most recent evaluation. Every
//! function returns a `DfpeStatus`; on failure `dfpe_last_error` describes
//! what went wrong on the calling thread. Strings returned through `char**`
//! out-parameters are owned by the caller and released with
//! `dfpe_string_free`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dfpe::config::{ConfigFile, FilterOrder, FingerprintStrategy, RunConfig};
use dfpe::pipeline::{run, Inputs, RunOutput};
use dfpe::sweep::{preset_with, Preset};
use dfpe::vote::{predict_all, DisciplineAggregation, Method};

pub const DFPE_STRATEGY_ANSWER_PATTERN: i32 = 0;
pub const DFPE_STRATEGY_EXTERNAL_EMBEDDING: i32 = 1;

pub const DFPE_ORDER_FILTER_THEN_CLUSTER: i32 = 0;
pub const DFPE_ORDER_CLUSTER_THEN_FILTER: i32 = 1;

pub const DFPE_AGGREGATION_POOLED: i32 = 0;
pub const DFPE_AGGREGATION_SUBJECT_MEAN: i32 = 1;

pub const DFPE_METHOD_BSM: i32 = 0;
pub const DFPE_METHOD_BSMOV: i32 = 1;
pub const DFPE_METHOD_MVOTING: i32 = 2;
pub const DFPE_METHOD_DFPE: i32 = 3;

/// Result of every call. Zero is success; failures are negative.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfpeStatus {
    Ok = 0,
    NullArgument = -1,
    InvalidUtf8 = -2,
    /// Bad input file, record or parameter.
    InvalidInput = -3,
    /// Failure while running.
    Runtime = -4,
    /// The session has not been evaluated yet.
    NotEvaluated = -5,
    /// Unknown subject or question.
    NotFound = -6,
    Panic = -7,
}

/// Run parameters. Enumerated fields take the `DFPE_STRATEGY_*` and
/// `DFPE_ORDER_*` constants.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfpeConfig {
    pub quantile_q: f64,
    pub gamma: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub fingerprint_strategy: i32,
    pub filter_order: i32,
    pub seed: u64,
}

/// Opaque session handle.
pub struct DfpeSession {
    inputs: Inputs,
    result: Option<Evaluated>,
}

struct Evaluated {
    output: RunOutput,
    answers: BTreeMap<String, BTreeMap<String, Option<String>>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DfpeStatus, String);

impl From<dfpe::Error> for Failure {
    fn from(e: dfpe::Error) -> Self {
        let status = if e.is_input_error() {
            DfpeStatus::InvalidInput
        } else {
            DfpeStatus::Runtime
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DfpeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DfpeStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DfpeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DfpeStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DfpeStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn optional_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(|s| Some(PathBuf::from(s)))
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(DfpeStatus::InvalidInput, message.into())
}

fn to_c(config: &RunConfig) -> DfpeConfig {
    DfpeConfig {
        quantile_q: config.quantile_q,
        gamma: config.gamma,
        dbscan_eps: config.dbscan_eps,
        dbscan_min_pts: config.dbscan_min_pts,
        fingerprint_strategy: match config.fingerprint_strategy {
            FingerprintStrategy::AnswerPattern => DFPE_STRATEGY_ANSWER_PATTERN,
            FingerprintStrategy::ExternalEmbedding => DFPE_STRATEGY_EXTERNAL_EMBEDDING,
        },
        filter_order: match config.filter_order {
            FilterOrder::FilterThenCluster => DFPE_ORDER_FILTER_THEN_CLUSTER,
            FilterOrder::ClusterThenFilter => DFPE_ORDER_CLUSTER_THEN_FILTER,
        },
        seed: config.seed,
    }
}

fn from_c(c: &DfpeConfig) -> Result<RunConfig, Failure> {
    let config = RunConfig {
        quantile_q: c.quantile_q,
        gamma: c.gamma,
        dbscan_eps: c.dbscan_eps,
        dbscan_min_pts: c.dbscan_min_pts,
        fingerprint_strategy: match c.fingerprint_strategy {
            DFPE_STRATEGY_ANSWER_PATTERN => FingerprintStrategy::AnswerPattern,
            DFPE_STRATEGY_EXTERNAL_EMBEDDING => FingerprintStrategy::ExternalEmbedding,
            other => return Err(invalid(format!("unknown fingerprint strategy {other}"))),
        },
        filter_order: match c.filter_order {
            DFPE_ORDER_FILTER_THEN_CLUSTER => FilterOrder::FilterThenCluster,
            DFPE_ORDER_CLUSTER_THEN_FILTER => FilterOrder::ClusterThenFilter,
            other => return Err(invalid(format!("unknown filter order {other}"))),
        },
        seed: c.seed,
    };
    config.validate()?;
    Ok(config)
}

fn method(code: i32) -> Result<Method, Failure> {
    match code {
        DFPE_METHOD_BSM => Ok(Method::Bsm),
        DFPE_METHOD_BSMOV => Ok(Method::Bsmov),
        DFPE_METHOD_MVOTING => Ok(Method::MVoting),
        DFPE_METHOD_DFPE => Ok(Method::Dfpe),
        other => Err(invalid(format!("unknown method {other}"))),
    }
}

fn give_string(s: &str, out: &mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(DfpeStatus::Runtime, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn evaluated(session: &DfpeSession) -> Result<&Evaluated, Failure> {
    session
        .result
        .as_ref()
        .ok_or_else(|| Failure(DfpeStatus::NotEvaluated, "call dfpe_session_evaluate first".into()))
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dfpe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dfpe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default run parameters to `out`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `DfpeConfig`.
#[no_mangle]
pub unsafe extern "C" fn dfpe_config_default(out: *mut DfpeConfig) -> DfpeStatus {
    guard(|| {
        *out_ref(out, "out")? = to_c(&RunConfig::default());
        Ok(())
    })
}

/// Writes a named preset (`optimal`, `balanced` or `efficient`) to `out`.
/// `config_path` is an optional TOML run config; its values are the base
/// the preset overrides, and its `[efficient]` table defines `efficient`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `config_path` NULL or one;
/// `out` NULL or writable for one `DfpeConfig`.
#[no_mangle]
pub unsafe extern "C" fn dfpe_config_preset(
    name: *const c_char,
    config_path: *const c_char,
    out: *mut DfpeConfig,
) -> DfpeStatus {
    guard(|| {
        let name: Preset = text(name, "name")?.parse()?;
        let out = out_ref(out, "out")?;
        let file = optional_path(config_path, "config_path")?
            .map(|p| ConfigFile::load(&p))
            .transpose()?;
        let base = file.as_ref().map(ConfigFile::run_config).unwrap_or_default();
        *out = to_c(&preset_with(name, base, file.as_ref())?);
        Ok(())
    })
}

/// Loads input files into a new session. `disciplines` and `embeddings`
/// may be NULL.
///
/// # Safety
/// Path arguments must be NULL or NUL-terminated strings; `out` must be
/// NULL or writable for one pointer. The handle is released with
/// `dfpe_session_free`.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_open(
    dataset: *const c_char,
    predictions: *const c_char,
    disciplines: *const c_char,
    embeddings: *const c_char,
    out: *mut *mut DfpeSession,
) -> DfpeStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let dataset = PathBuf::from(text(dataset, "dataset")?);
        let predictions = PathBuf::from(text(predictions, "predictions")?);
        let disciplines = optional_path(disciplines, "disciplines")?;
        let embeddings = optional_path(embeddings, "embeddings")?;
        let inputs = Inputs::load(&dataset, &predictions, disciplines.as_deref(), embeddings.as_deref())?;
        *out = Box::into_raw(Box::new(DfpeSession { inputs, result: None }));
        Ok(())
    })
}

/// Releases a session. NULL is ignored.
///
/// # Safety
/// `session` must be NULL or a handle from `dfpe_session_open` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_free(session: *mut DfpeSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Number of models in the pool and number of subjects.
///
/// # Safety
/// `session` must be a live handle; the out pointers NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_counts(
    session: *const DfpeSession,
    models: *mut usize,
    subjects: *mut usize,
) -> DfpeStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        *out_ref(models, "models")? = s.inputs.predictions.pool().len();
        *out_ref(subjects, "subjects")? = s.inputs.dataset.subject_ids().count();
        Ok(())
    })
}

/// Builds the ensembles and evaluates every method on the test split.
/// `aggregation` is one of the `DFPE_AGGREGATION_*` constants.
///
/// # Safety
/// `session` must be a live handle and `config` NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_evaluate(
    session: *mut DfpeSession,
    config: *const DfpeConfig,
    aggregation: i32,
) -> DfpeStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let config = from_c(config.as_ref().ok_or_else(|| null("config"))?)?;
        let aggregation = match aggregation {
            DFPE_AGGREGATION_POOLED => DisciplineAggregation::Pooled,
            DFPE_AGGREGATION_SUBJECT_MEAN => DisciplineAggregation::SubjectMean,
            other => return Err(invalid(format!("unknown aggregation {other}"))),
        };
        s.result = None;
        let output = run(&s.inputs, &config, aggregation)?;
        let answers = predict_all(&output.ensembles, &s.inputs.predictions, &s.inputs.dataset)?;
        s.result = Some(Evaluated { output, answers });
        Ok(())
    })
}

/// Overall and discipline-mean test accuracy of one method
/// (`DFPE_METHOD_*`) from the last evaluation.
///
/// # Safety
/// `session` must be a live handle; the out pointers NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_accuracy(
    session: *const DfpeSession,
    method_code: i32,
    overall: *mut f64,
    discipline_mean: *mut f64,
) -> DfpeStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let m = method(method_code)?;
        let overall = out_ref(overall, "overall")?;
        let discipline_mean = out_ref(discipline_mean, "discipline_mean")?;
        let r = evaluated(s)?.output.report.method(m);
        *overall = r.overall_accuracy;
        *discipline_mean = r.discipline_accuracy_mean;
        Ok(())
    })
}

/// Mean ensemble size over subjects from the last evaluation.
///
/// # Safety
/// `session` must be a live handle; `out` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_mean_members(session: *const DfpeSession, out: *mut f64) -> DfpeStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let out = out_ref(out, "out")?;
        *out = evaluated(s)?.output.report.participation.mean;
        Ok(())
    })
}

/// Ensemble answer for one test question. `*out` is set to NULL when no
/// member answered it.
///
/// # Safety
/// `session` must be a live handle; `subject` and `question` NUL-terminated
/// strings; `out` NULL or writable for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_answer(
    session: *const DfpeSession,
    subject: *const c_char,
    question: *const c_char,
    out: *mut *mut c_char,
) -> DfpeStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let subject = text(subject, "subject")?;
        let question = text(question, "question")?;
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let answer = evaluated(s)?
            .answers
            .get(subject)
            .and_then(|row| row.get(question))
            .ok_or_else(|| Failure(DfpeStatus::NotFound, format!("no test question {subject}/{question}")))?;
        if let Some(a) = answer {
            give_string(a, out)?;
        }
        Ok(())
    })
}

/// The full evaluation report as JSON.
///
/// # Safety
/// `session` must be a live handle; `out` NULL or writable for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_report_json(session: *const DfpeSession, out: *mut *mut c_char) -> DfpeStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let json = serde_json::to_string(&evaluated(s)?.output.report).map_err(dfpe::Error::from)?;
        give_string(&json, out)
    })
}

/// The per-subject ensembles as JSON.
///
/// # Safety
/// As for `dfpe_session_report_json`.
#[no_mangle]
pub unsafe extern "C" fn dfpe_session_ensembles_json(session: *const DfpeSession, out: *mut *mut c_char) -> DfpeStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let json = serde_json::to_string(&evaluated(s)?.output.ensembles).map_err(dfpe::Error::from)?;
        give_string(&json, out)
    })
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a pointer from one of the `char**` outputs above
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dfpe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
