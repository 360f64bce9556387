//! C interface to the simulator.
//!
//! Configs and reports are opaque heap handles owned by the caller and
//! released with their `*_free` function. Every function returns a
//! [`MimsStatus`]; on failure [`mims_last_error`] describes the problem.
//! Strings handed out by the library are freed with [`mims_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mims_core::codec;
use mims_core::compress::{AddrCompressor, CompressConfig};
use mims_core::config::Compression;
use mims_core::stats::{emit_report, ReportFormat};
use mims_core::{experiments, Error, Mode, RunReport, SimConfig};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MimsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Trace = 4,
    Codec = 5,
    Simulation = 6,
    Io = 7,
    Panic = 8,
}

/// Simulator modes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MimsMode {
    Ddr = 0,
    Bob = 1,
    Mi1 = 2,
    MiMul = 3,
}

impl From<MimsMode> for Mode {
    fn from(m: MimsMode) -> Self {
        match m {
            MimsMode::Ddr => Mode::Ddr,
            MimsMode::Bob => Mode::Bob,
            MimsMode::Mi1 => Mode::Mi1,
            MimsMode::MiMul => Mode::MiMul,
        }
    }
}

/// Opaque simulation configuration.
pub struct MimsConfig(SimConfig);

/// Opaque run report.
pub struct MimsReport(RunReport);

/// Headline numbers of a report.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct MimsSummary {
    pub cycles: u64,
    pub runtime_ps: u64,
    pub instructions: u64,
    pub mem_requests: u64,
    pub useful_bytes: u64,
    pub speedup: f64,
    pub bw_utilization: f64,
    pub read_latency_ns: f64,
    pub write_latency_ns: f64,
    pub energy_j: f64,
    pub edp: f64,
    pub normalized_edp: f64,
    pub requests_per_packet: f64,
    /// Address compression ratio, or 0 when compression was off.
    pub compression_ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MimsStatus {
    match e {
        Error::Config(_) | Error::InvalidProfile(_) => MimsStatus::Config,
        Error::TraceParse { .. } | Error::BadAddress { .. } => MimsStatus::Trace,
        Error::Encode(_) | Error::Decode(_) | Error::Crc { .. } | Error::Routing { .. } | Error::Compress(_) => {
            MimsStatus::Codec
        }
        Error::Invariant(_) => MimsStatus::Simulation,
        Error::Io(_) => MimsStatus::Io,
    }
}

struct Fail(MimsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MimsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MimsStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            MimsStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(MimsStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(MimsStatus::InvalidUtf8, "string is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    *out = CString::new(s).map_err(|_| Fail(MimsStatus::Codec, "output contains NUL".into()))?.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer is valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn mims_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mims_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mims_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a config with default values.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn mims_config_new(out: *mut *mut MimsConfig) -> MimsStatus {
    guard(|| put(out, MimsConfig(SimConfig::default())))
}

/// Parses a config from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_config_from_toml(toml: *const c_char, out: *mut *mut MimsConfig) -> MimsStatus {
    guard(|| {
        let text = str_arg(toml)?;
        put(out, MimsConfig(SimConfig::from_toml(text)?))
    })
}

/// Renders the config as TOML.
///
/// # Safety
/// `cfg` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_config_to_toml(cfg: *const MimsConfig, out: *mut *mut c_char) -> MimsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(null)?;
        put_string(out, cfg.0.to_toml())
    })
}

/// Applies one `key=value` override, e.g. `timing.trcd=12`.
///
/// # Safety
/// `cfg` must be a live handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mims_config_set(cfg: *mut MimsConfig, assignment: *const c_char) -> MimsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(null)?;
        let a = str_arg(assignment)?;
        cfg.0.set(a)?;
        Ok(())
    })
}

/// Sets the memory-system mode.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mims_config_set_mode(cfg: *mut MimsConfig, mode: MimsMode) -> MimsStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(null)?.0.mode = mode.into();
        Ok(())
    })
}

/// Checks the config for illegal combinations.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mims_config_validate(cfg: *const MimsConfig) -> MimsStatus {
    guard(|| {
        cfg.as_ref().ok_or_else(null)?.0.validate()?;
        Ok(())
    })
}

/// Frees a config. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mims_config_free(cfg: *mut MimsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one simulation.
///
/// # Safety
/// `cfg` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_run(cfg: *const MimsConfig, out: *mut *mut MimsReport) -> MimsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        put(out, MimsReport(experiments::run(&cfg.0)?))
    })
}

/// Runs `cfg` in each of `n` modes and writes the reports, normalized to
/// DDR, as JSON lines.
///
/// # Safety
/// `cfg` must be a live handle; `modes` must point to `n` values; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_compare_json(
    cfg: *const MimsConfig,
    modes: *const MimsMode,
    n: usize,
    out: *mut *mut c_char,
) -> MimsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(null)?;
        if modes.is_null() || out.is_null() {
            return Err(null());
        }
        let list: Vec<Mode> = std::slice::from_raw_parts(modes, n).iter().map(|&m| m.into()).collect();
        let reports = experiments::compare_modes(&cfg.0, &list)?;
        put_string(out, emit_report(&reports, ReportFormat::JsonLines))
    })
}

/// Copies the headline numbers of a report.
///
/// # Safety
/// `report` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_report_summary(report: *const MimsReport, out: *mut MimsSummary) -> MimsStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(null)?.0;
        let out = out.as_mut().ok_or_else(null)?;
        *out = MimsSummary {
            cycles: r.cycles,
            runtime_ps: r.runtime_ps,
            instructions: r.instructions,
            mem_requests: r.mem_requests,
            useful_bytes: r.useful_bytes,
            speedup: r.speedup,
            bw_utilization: r.bw_utilization,
            read_latency_ns: r.read_latency.total_ns,
            write_latency_ns: r.write_latency.total_ns,
            energy_j: r.power.total_j,
            edp: r.power.edp,
            normalized_edp: r.normalized_edp,
            requests_per_packet: r.requests_per_packet(),
            compression_ratio: r.compression_ratio.unwrap_or(0.0),
        };
        Ok(())
    })
}

/// Serializes the full report as JSON.
///
/// # Safety
/// `report` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_report_json(report: *const MimsReport, out: *mut *mut c_char) -> MimsStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(null)?.0;
        let s = serde_json::to_string(r).map_err(|e| Fail(MimsStatus::Codec, e.to_string()))?;
        put_string(out, s)
    })
}

/// Frees a report. Null is ignored.
///
/// # Safety
/// `report` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mims_report_free(report: *mut MimsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Pretty-prints one wire packet. `compression` names the receiver's
/// scheme (`none`, `single`, `multi_inline`, `multi_offline`) or is null.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `compression` is null or a
/// NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mims_packet_dump(
    bytes: *const u8,
    len: usize,
    compression: *const c_char,
    out: *mut *mut c_char,
) -> MimsStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null());
        }
        let data = std::slice::from_raw_parts(bytes, len);
        let scheme = if compression.is_null() {
            None
        } else {
            str_arg(compression)?.parse::<Compression>().map_err(|e| Fail(MimsStatus::Config, e.to_string()))?.scheme()
        };
        let mut comp = scheme.map(|s| AddrCompressor::new(CompressConfig::coarse(s)));
        put_string(out, codec::dump(data, comp.as_mut())?)
    })
}
