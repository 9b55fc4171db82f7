//! C ABI for the estimation and detection toolkit.
//!
//! Everything crosses the boundary as opaque handles or JSON strings, with
//! integer status codes and a thread-local error message. The workflow
//! mirrors the CLI: build a config, simulate (or load a simulation), then
//! estimate and detect.
//!
//! Ownership rules:
//! * `nt_config` and `nt_simulation` handles are freed with their `_free`
//!   functions, exactly once.
//! * Strings returned through `char**` out-parameters are freed with
//!   [`nt_string_free`], never with `free()`.
//! * Input strings are NUL-terminated UTF-8 owned by the caller.
//!
//! Error reporting: any call returning [`NtStatus`] other than `Ok` leaves a
//! message retrievable with [`nt_last_error_message`] until the next failing
//! call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nettomo::config::{RunConfig, SimulationArtifact};
use nettomo::detect::{calibrate_threshold, detect, null_statistics};
use nettomo::estimators::{run_estimator, EstimatorTag};
use nettomo::net::{apply_operator, build_operator};
use nettomo::sim::{gen_ground_truth, sample_traffic};
use nettomo::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// An input string was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Configuration error (bad values, unknown keys, unknown names).
    Config = 3,
    /// Contract violation (mismatched dimensions, missing inputs).
    Contract = 4,
    /// A computation failed (infeasible observations, solver breakdown).
    Compute = 5,
    Io = 6,
    Json = 7,
    /// A panic was caught at the boundary; state may be stale.
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> NtStatus {
    match err {
        Error::Config(_) => NtStatus::Config,
        Error::Contract(_) => NtStatus::Contract,
        Error::Io(_) => NtStatus::Io,
        Error::Json(_) | Error::Csv(_) => NtStatus::Json,
        Error::InfeasibleObservation(_)
        | Error::EnumerationBudget { .. }
        | Error::Estimation(_)
        | Error::Calibration(_) => NtStatus::Compute,
    }
}

fn fail(err: Error) -> NtStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn guard(f: impl FnOnce() -> NtStatus) -> NtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic inside the library");
            NtStatus::Panic
        }
    }
}

/// Opaque run configuration.
pub struct NtConfig {
    inner: RunConfig,
}

/// Opaque simulation artifact (topology, baseline, scheme, observations,
/// and optionally ground truth plus raw traffic).
pub struct NtSimulation {
    inner: SimulationArtifact,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, NtStatus> {
    if ptr.is_null() {
        set_error("NULL string argument");
        return Err(NtStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        NtStatus::InvalidUtf8
    })
}

fn emit_string(out: *mut *mut c_char, value: String) -> NtStatus {
    let sanitized = value.replace('\0', " ");
    match CString::new(sanitized) {
        Ok(cs) => {
            unsafe { *out = cs.into_raw() };
            NtStatus::Ok
        }
        Err(_) => {
            set_error("output string contained an interior NUL");
            NtStatus::Json
        }
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn nt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failing call on this thread; valid until the next
/// failing call. Do not free.
#[no_mangle]
pub extern "C" fn nt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library.
#[no_mangle]
pub extern "C" fn nt_string_free(s: *mut c_char) {
    if !s.is_null() {
        unsafe {
            drop(CString::from_raw(s));
        }
    }
}

/// Creates the default (desk-scale) configuration.
#[no_mangle]
pub extern "C" fn nt_config_default(out: *mut *mut NtConfig) -> NtStatus {
    guard(|| {
        if out.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let config = Box::new(NtConfig {
            inner: RunConfig::default(),
        });
        unsafe { *out = Box::into_raw(config) };
        NtStatus::Ok
    })
}

/// Parses a configuration document (strict: unknown keys rejected).
///
/// # Safety
/// `json` must be a valid NUL-terminated string or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_config_from_json(
    json: *const c_char,
    out: *mut *mut NtConfig,
) -> NtStatus {
    guard(|| {
        if out.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let text = match cstr_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let inner: RunConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(&format!("config: {e}"));
                return NtStatus::Config;
            }
        };
        if let Err(e) = inner.validate() {
            return fail(e);
        }
        *out = Box::into_raw(Box::new(NtConfig { inner }));
        NtStatus::Ok
    })
}

/// Overrides the root seed.
///
/// # Safety
/// `config` must be a live handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_config_set_seed(config: *mut NtConfig, seed: u64) -> NtStatus {
    guard(|| {
        let Some(config) = config.as_mut() else {
            set_error("NULL config");
            return NtStatus::NullArgument;
        };
        config.inner.apply_seed(seed);
        NtStatus::Ok
    })
}

/// Switches to the reference scale (10 nodes, T = 150, 200 trials).
///
/// # Safety
/// `config` must be a live handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_config_paper_scale(config: *mut NtConfig) -> NtStatus {
    guard(|| {
        let Some(config) = config.as_mut() else {
            set_error("NULL config");
            return NtStatus::NullArgument;
        };
        config.inner.apply_paper_scale();
        NtStatus::Ok
    })
}

/// # Safety
/// `config` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn nt_config_free(config: *mut NtConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Draws a network, traffic, and observations for one trial index.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_simulate(
    config: *const NtConfig,
    trial: u64,
    out: *mut *mut NtSimulation,
) -> NtStatus {
    guard(|| {
        if out.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let Some(config) = config.as_ref() else {
            set_error("NULL config");
            return NtStatus::NullArgument;
        };
        let result = (|| -> nettomo::Result<SimulationArtifact> {
            let sim = &config.inner.sim;
            let gt = gen_ground_truth(sim, trial)?;
            let traffic = sample_traffic(sim, &gt, trial)?;
            let scheme = config.inner.scheme.build(&gt.topology)?;
            let op = build_operator(&gt.topology, &scheme)?;
            let observations = apply_operator(&op, &traffic)?;
            Ok(SimulationArtifact {
                config: sim.clone(),
                trial,
                topology: gt.topology.clone(),
                baseline: gt.baseline.clone(),
                scheme,
                observations,
                ground_truth: Some(gt),
                traffic: Some(traffic),
            })
        })();
        match result {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(NtSimulation { inner }));
                NtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads a simulation artifact from its JSON form.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_simulation_from_json(
    json: *const c_char,
    out: *mut *mut NtSimulation,
) -> NtStatus {
    guard(|| {
        if out.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let text = match cstr_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str::<SimulationArtifact>(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(NtSimulation { inner }));
                NtStatus::Ok
            }
            Err(e) => {
                set_error(&format!("simulation: {e}"));
                NtStatus::Json
            }
        }
    })
}

/// Serializes a simulation artifact to JSON.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_simulation_to_json(
    sim: *const NtSimulation,
    out_json: *mut *mut c_char,
) -> NtStatus {
    guard(|| {
        if out_json.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let Some(sim) = sim.as_ref() else {
            set_error("NULL simulation");
            return NtStatus::NullArgument;
        };
        match serde_json::to_string_pretty(&sim.inner) {
            Ok(json) => emit_string(out_json, json),
            Err(e) => {
                set_error(&format!("serialize: {e}"));
                NtStatus::Json
            }
        }
    })
}

/// # Safety
/// `sim` must be a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn nt_simulation_free(sim: *mut NtSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

fn estimate_inner(
    config: &RunConfig,
    artifact: &SimulationArtifact,
    estimator: &str,
) -> nettomo::Result<String> {
    let tag: EstimatorTag = estimator.parse()?;
    let op = build_operator(&artifact.topology, &artifact.scheme)?;
    let mut settings = config.settings_for(tag);
    settings.seed = nettomo::rng::derive_seed(config.sim.seed, &[artifact.trial]);
    let report = run_estimator(
        tag,
        &artifact.observations,
        &op,
        Some(&artifact.baseline),
        artifact.traffic.as_ref(),
        &settings,
    )?;
    Ok(serde_json::to_string_pretty(&report)?)
}

/// Runs one estimator on a simulation; returns the estimate report as JSON.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_estimate(
    config: *const NtConfig,
    sim: *const NtSimulation,
    estimator: *const c_char,
    out_report_json: *mut *mut c_char,
) -> NtStatus {
    guard(|| {
        if out_report_json.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let (Some(config), Some(sim)) = (config.as_ref(), sim.as_ref()) else {
            set_error("NULL config or simulation");
            return NtStatus::NullArgument;
        };
        let estimator = match cstr_arg(estimator) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match estimate_inner(&config.inner, &sim.inner, estimator) {
            Ok(json) => emit_string(out_report_json, json),
            Err(e) => fail(e),
        }
    })
}

fn detect_inner(
    config: &RunConfig,
    artifact: &SimulationArtifact,
    estimator: &str,
) -> nettomo::Result<String> {
    let tag: EstimatorTag = estimator.parse()?;
    let op = build_operator(&artifact.topology, &artifact.scheme)?;
    let mut settings = config.settings_for(tag);
    settings.seed = nettomo::rng::derive_seed(config.sim.seed, &[artifact.trial]);
    let report = run_estimator(
        tag,
        &artifact.observations,
        &op,
        Some(&artifact.baseline),
        artifact.traffic.as_ref(),
        &settings,
    )?;
    let null_gt = nettomo::sim::GroundTruth {
        topology: artifact.topology.clone(),
        baseline: artifact.baseline.clone(),
        truth: artifact.baseline.clone(),
        labels: vec![nettomo::sim::DiversionLabel::None; artifact.topology.n_pairs()],
    };
    let nulls = null_statistics(
        &null_gt,
        &artifact.scheme,
        artifact.observations.ticks(),
        tag,
        &settings,
        &config.detect,
        nettomo::rng::derive_seed(config.sim.seed, &[0xD37EC7]),
    )?;
    let threshold = calibrate_threshold(&nulls, config.detect.target_fpr)?;
    let result = detect(
        artifact.topology.pairs(),
        &report.lambda_hat,
        &artifact.baseline,
        threshold,
        config.detect.edge_tol,
    )?;
    Ok(serde_json::to_string_pretty(&result)?)
}

/// Estimates, calibrates a null threshold, and tests against the baseline;
/// returns the detection result as JSON.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_detect(
    config: *const NtConfig,
    sim: *const NtSimulation,
    estimator: *const c_char,
    out_json: *mut *mut c_char,
) -> NtStatus {
    guard(|| {
        if out_json.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let (Some(config), Some(sim)) = (config.as_ref(), sim.as_ref()) else {
            set_error("NULL config or simulation");
            return NtStatus::NullArgument;
        };
        let estimator = match cstr_arg(estimator) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match detect_inner(&config.inner, &sim.inner, estimator) {
            Ok(json) => emit_string(out_json, json),
            Err(e) => fail(e),
        }
    })
}

/// Runs a study from the config, writing tables under `out_dir`; returns the
/// one-line summary.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn nt_run_study(
    config: *const NtConfig,
    out_dir: *const c_char,
    out_summary: *mut *mut c_char,
) -> NtStatus {
    guard(|| {
        if out_summary.is_null() {
            set_error("NULL out pointer");
            return NtStatus::NullArgument;
        }
        let Some(config) = config.as_ref() else {
            set_error("NULL config");
            return NtStatus::NullArgument;
        };
        let dir = match cstr_arg(out_dir) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match nettomo::experiments::run_study(&config.inner, Path::new(dir)) {
            Ok(output) => emit_string(out_summary, output.summary_line),
            Err(e) => fail(e),
        }
    })
}
