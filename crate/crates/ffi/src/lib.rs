//! C ABI over `ukg-core`.
//!
//! An engine is an opaque handle owning one knowledge graph and its fusion
//! configuration. Structured inputs and outputs travel as UTF-8 JSON.
//! Every call returns a [`UkgStatus`]; on failure [`ukg_last_error`] holds a
//! message for the calling thread. Strings handed out through `out`
//! parameters belong to the caller and are released with
//! [`ukg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde::Serialize;
use ukg_core::model::{Certainty, HypothesisId, Source, SourceId, VerdictId};
use ukg_core::pipeline::{self, FusionConfig, HypothesisSpec, Statement};
use ukg_core::store::{self, SchemaFile};
use ukg_core::{Error, KnowledgeGraph};

/// Result of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UkgStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8, or malformed JSON argument.
    Usage = 1,
    /// Input rejected by validation.
    Data = 2,
    /// Fixpoint iteration guard tripped.
    Guard = 3,
    NotFound = 4,
    Conflict = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Opaque engine handle.
pub struct UkgEngine {
    graph: KnowledgeGraph,
    config: FusionConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(UkgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NonTermination { .. } => UkgStatus::Guard,
            Error::UnknownId(_) | Error::UnknownSource(_) | Error::UnknownPredicate(_) => UkgStatus::NotFound,
            Error::Duplicate { .. } | Error::AlreadyApplied(_) | Error::Locked(_) => UkgStatus::Conflict,
            Error::Io(_) => UkgStatus::Io,
            _ => UkgStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure(UkgStatus::Usage, message.into())
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> UkgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UkgStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            UkgStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(usage(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| usage(format!("{what} is not valid UTF-8")))
}

unsafe fn json_arg<T: serde::de::DeserializeOwned>(p: *const c_char, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text(p, what)?).map_err(|e| usage(format!("{what}: {e}")))
}

unsafe fn engine<'a>(p: *mut UkgEngine) -> Result<&'a mut UkgEngine, Failure> {
    p.as_mut().ok_or_else(|| usage("engine is null"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Outcome {
    if out.is_null() {
        return Ok(());
    }
    let c = CString::new(s).map_err(|_| usage("output contains a nul byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn write_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Outcome {
    let s = serde_json::to_string(value).map_err(|e| Failure::from(Error::from(e)))?;
    write_string(out, s)
}

unsafe fn config_arg(p: *const c_char) -> Result<FusionConfig, Failure> {
    let config: FusionConfig = if p.is_null() {
        FusionConfig::default()
    } else {
        json_arg(p, "config")?
    };
    config.validate()?;
    Ok(config)
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn ukg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates an empty engine. `config_json` may be null for defaults.
///
/// # Safety
/// `config_json` is null or a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_engine_new(config_json: *const c_char, out: *mut *mut UkgEngine) -> UkgStatus {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        let config = config_arg(config_json)?;
        *out = Box::into_raw(Box::new(UkgEngine {
            graph: KnowledgeGraph::new(),
            config,
        }));
        Ok(())
    })
}

/// Creates an engine from an archive written by [`ukg_engine_save`].
///
/// # Safety
/// `path` is a nul-terminated string, `config_json` is null or one, and
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_engine_open(path: *const c_char, config_json: *const c_char, out: *mut *mut UkgEngine) -> UkgStatus {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        let path = text(path, "path")?;
        let config = config_arg(config_json)?;
        let graph = store::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(UkgEngine { graph, config }));
        Ok(())
    })
}

/// Writes the engine's graph to `path` atomically.
///
/// # Safety
/// `engine` comes from this library; `path` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ukg_engine_save(engine: *mut UkgEngine, path: *const c_char) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        store::save(&e.graph, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ukg_engine_free(engine: *mut UkgEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Releases a string returned through an `out` parameter. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ukg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Adds taxonomies, predicates, entities, and sources from a schema
/// document. All or nothing.
///
/// # Safety
/// `engine` comes from this library; `schema_json` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ukg_load_schema(engine: *mut UkgEngine, schema_json: *const c_char) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let schema: SchemaFile = json_arg(schema_json, "schema")?;
        let mut g = e.graph.clone();
        schema.apply(&mut g)?;
        e.graph = g;
        Ok(())
    })
}

/// Registers a source.
///
/// # Safety
/// `engine` comes from this library; `id` and `name` are nul-terminated
/// strings (`name` may be null to reuse `id`).
#[no_mangle]
pub unsafe extern "C" fn ukg_add_source(
    engine: *mut UkgEngine,
    id: *const c_char,
    name: *const c_char,
    reliability: f64,
) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let id = text(id, "id")?;
        let name = if name.is_null() { id } else { text(name, "name")? };
        e.graph.add_source(Source {
            id: SourceId::new(id),
            name: name.to_owned(),
            category: String::new(),
            reliability: Certainty::new(reliability)?,
        })?;
        Ok(())
    })
}

/// Captures a JSON array of `{"s","p","o","credibility"}` statements for
/// `source`. Writes the capture report to `out_json` when it is not null.
///
/// # Safety
/// `engine` comes from this library; string arguments are nul-terminated;
/// `out_json` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_capture(
    engine: *mut UkgEngine,
    source: *const c_char,
    statements_json: *const c_char,
    out_json: *mut *mut c_char,
) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let source = SourceId::new(text(source, "source")?);
        let statements: Vec<Statement> = json_arg(statements_json, "statements")?;
        let report = pipeline::capture(&mut e.graph, &source, &statements, &e.config)?;
        write_json(out_json, &report)
    })
}

/// Runs entity resolution and forward chaining to a fixpoint.
///
/// # Safety
/// `engine` comes from this library; `out_json` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_associate(engine: *mut UkgEngine, out_json: *mut *mut c_char) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let mut g = e.graph.clone();
        let report = pipeline::associate(&mut g, &e.config)?;
        e.graph = g;
        write_json(out_json, &report)
    })
}

/// Promotes and demotes facts against the configured threshold.
///
/// # Safety
/// `engine` comes from this library; `out_json` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_establish(engine: *mut UkgEngine, out_json: *mut *mut c_char) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let report = pipeline::establish(&mut e.graph, &e.config)?;
        write_json(out_json, &report)
    })
}

/// Registers a hypothesis (`{"id","threshold","patterns":[{"s","p","o"}]}`)
/// and tests it. Writes the verdict to `out_json`.
///
/// # Safety
/// `engine` comes from this library; `hypothesis_json` is a nul-terminated
/// string; `out_json` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_test_hypothesis(
    engine: *mut UkgEngine,
    hypothesis_json: *const c_char,
    out_json: *mut *mut c_char,
) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let spec: HypothesisSpec = json_arg(hypothesis_json, "hypothesis")?;
        let mut g = e.graph.clone();
        let id: HypothesisId = match spec.id.clone().map(HypothesisId::new) {
            Some(id) if g.hypothesis(&id).is_ok() => id,
            _ => {
                let h = spec.into_hypothesis(&g, e.config.theta)?;
                g.add_hypothesis(h)?
            }
        };
        let verdict = pipeline::test_hypothesis(&mut g, &id, &e.config)?;
        e.graph = g;
        write_json(out_json, &verdict)
    })
}

/// Feeds a verdict back into source reliabilities and re-fuses.
///
/// # Safety
/// `engine` comes from this library; `verdict_id` is a nul-terminated
/// string; `out_json` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_propagate(
    engine: *mut UkgEngine,
    verdict_id: *const c_char,
    out_json: *mut *mut c_char,
) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let id = VerdictId::new(text(verdict_id, "verdict id")?);
        let mut g = e.graph.clone();
        let report = pipeline::propagate_feedback(&mut g, &id, &e.config)?;
        e.graph = g;
        write_json(out_json, &report)
    })
}

/// Writes the archive text to `out`.
///
/// # Safety
/// `engine` comes from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_export(engine: *mut UkgEngine, out: *mut *mut c_char) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        write_string(out, store::to_string(&e.graph)?)
    })
}

/// Reads a source's current reliability.
///
/// # Safety
/// `engine` comes from this library; `source` is a nul-terminated string;
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ukg_source_reliability(engine: *mut UkgEngine, source: *const c_char, out: *mut f64) -> UkgStatus {
    guard(|| {
        let e = self::engine(engine)?;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        let s = e.graph.source(&SourceId::new(text(source, "source")?))?;
        *out = s.reliability.value();
        Ok(())
    })
}
