//! C ABI over the `domd` engine.
//!
//! Objects live behind opaque handles created by `*_new`/`*_create`-style
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`DomdStatus`]; on failure [`domd_last_error`] describes it.
//! Panics never cross the boundary: they surface as `DOMD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use domd::harness::commands::write_run_artifacts;
use domd::harness::{execute, Experiment, RunOutput};
use domd::network::{Network, Topology};
use domd::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    /// A failure inside a protocol round.
    Step = 5,
    Io = 6,
    Panic = 7,
    BufferTooSmall = 8,
}

/// Regret bound terms and the constants behind them.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DomdBound {
    pub e_track: f64,
    pub e_net: f64,
    pub e_stoch: f64,
    pub total: f64,
    pub measured: f64,
    pub l: f64,
    pub rsq: f64,
    pub k: f64,
    pub delta: f64,
    /// Nonzero when the configuration satisfies the bound's hypotheses.
    pub within_hypotheses: i32,
}

/// Consensus network (graph plus weights).
pub struct DomdNetwork {
    inner: Network,
}

/// A finished run.
pub struct DomdRun {
    experiment: Experiment,
    output: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(DomdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Parse { .. } => DomdStatus::Config,
            Error::Dimension { .. } => DomdStatus::Dimension,
            Error::Step { .. } => DomdStatus::Step,
            Error::Io { .. } => DomdStatus::Io,
            _ => DomdStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DomdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DomdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DomdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DomdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(DomdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn copy_into(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Failure(
            DomdStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn domd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn domd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Metropolis-weighted rows × cols grid.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn domd_network_grid(rows: usize, cols: usize, out: *mut *mut DomdNetwork) -> DomdStatus {
    guard(|| {
        let inner = Network::metropolis(&Topology::Grid { rows, cols })?;
        unsafe { write_out(out, DomdNetwork { inner }) }
    })
}

/// Metropolis-weighted graph on `n` nodes from `edge_count` pairs stored
/// flat in `edges` (2 × edge_count entries, 0-based).
///
/// # Safety
/// `edges` must point to 2 × `edge_count` readable values (or be null when
/// `edge_count` is 0); `out` must be valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn domd_network_from_edges(n: usize, edges: *const usize, edge_count: usize, out: *mut *mut DomdNetwork) -> DomdStatus {
    guard(|| {
        let flat: &[usize] = if edge_count == 0 {
            &[]
        } else if edges.is_null() {
            return Err(null("edges"));
        } else {
            unsafe { std::slice::from_raw_parts(edges, 2 * edge_count) }
        };
        let pairs = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let inner = Network::metropolis(&Topology::EdgeList { n, edges: pairs })?;
        unsafe { write_out(out, DomdNetwork { inner }) }
    })
}

/// Number of agents; 0 for a null handle.
///
/// # Safety
/// `network` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn domd_network_size(network: *const DomdNetwork) -> usize {
    unsafe { network.as_ref() }.map_or(0, |n| n.inner.n())
}

/// Second-largest eigenvalue magnitude of the weight matrix.
///
/// # Safety
/// `network` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn domd_network_sigma2(network: *const DomdNetwork, out: *mut f64) -> DomdStatus {
    guard(|| {
        let net = unsafe { borrow(network, "network") }?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("output pointer"))?;
        *out = net.inner.sigma2();
        Ok(())
    })
}

/// Weight W_ij.
///
/// # Safety
/// `network` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn domd_network_weight(network: *const DomdNetwork, i: usize, j: usize, out: *mut f64) -> DomdStatus {
    guard(|| {
        let net = unsafe { borrow(network, "network") }?;
        let n = net.inner.n();
        if i >= n || j >= n {
            return Err(Failure(DomdStatus::InvalidArgument, format!("index ({i}, {j}) outside {n} × {n}")));
        }
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("output pointer"))?;
        *out = net.inner.weights().get(i, j);
        Ok(())
    })
}

/// Releases a network; null is ignored.
///
/// # Safety
/// `network` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn domd_network_free(network: *mut DomdNetwork) {
    if !network.is_null() {
        drop(unsafe { Box::from_raw(network) });
    }
}

/// Runs an experiment. `preset` and `config_toml` may each be null but not
/// both; `overrides` is null or newline-separated `key=value` lines.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` valid for one handle.
#[no_mangle]
pub unsafe extern "C" fn domd_run_create(
    preset: *const c_char,
    config_toml: *const c_char,
    overrides: *const c_char,
    out: *mut *mut DomdRun,
) -> DomdStatus {
    guard(|| {
        let preset = if preset.is_null() { None } else { Some(unsafe { c_str(preset, "preset") }?) };
        let overrides: Vec<String> = if overrides.is_null() {
            Vec::new()
        } else {
            unsafe { c_str(overrides, "overrides") }?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        };
        let experiment = if config_toml.is_null() {
            Experiment::load(preset, None, &overrides)?
        } else {
            Experiment::from_document(preset, unsafe { c_str(config_toml, "config") }?, &overrides)?
        };
        let output = execute(&experiment)?;
        unsafe { write_out(out, DomdRun { experiment, output }) }
    })
}

/// Rounds T; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn domd_run_rounds(run: *const DomdRun) -> usize {
    unsafe { run.as_ref() }.map_or(0, |r| r.output.record.rounds())
}

/// Number of agents; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn domd_run_agents(run: *const DomdRun) -> usize {
    unsafe { run.as_ref() }.map_or(0, |r| r.output.record.n)
}

/// State dimension; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn domd_run_dim(run: *const DomdRun) -> usize {
    unsafe { run.as_ref() }.map_or(0, |r| r.output.record.dim)
}

/// Cumulative dynamic regret Reg_T and Reg_T / T.
///
/// # Safety
/// `run` must be a live handle; `total` and `normalized` writable.
#[no_mangle]
pub unsafe extern "C" fn domd_run_regret(run: *const DomdRun, total: *mut f64, normalized: *mut f64) -> DomdStatus {
    guard(|| {
        let r = unsafe { borrow(run, "run") }?;
        let total = unsafe { total.as_mut() }.ok_or_else(|| null("total"))?;
        let normalized = unsafe { normalized.as_mut() }.ok_or_else(|| null("normalized"))?;
        *total = r.output.regret.total();
        *normalized = r.output.regret.normalized();
        Ok(())
    })
}

/// Copies Reg_t for t = 1..=T into `buf` (at least T entries).
///
/// # Safety
/// `run` must be a live handle; `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn domd_run_regret_series(run: *const DomdRun, buf: *mut f64, len: usize) -> DomdStatus {
    guard(|| {
        let r = unsafe { borrow(run, "run") }?;
        unsafe { copy_into(&r.output.regret.cumulative, buf, len) }
    })
}

/// The regret bound evaluated for this run.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn domd_run_bound(run: *const DomdRun, out: *mut DomdBound) -> DomdStatus {
    guard(|| {
        let r = unsafe { borrow(run, "run") }?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("output pointer"))?;
        let b = &r.output.bound;
        *out = DomdBound {
            e_track: b.e_track,
            e_net: b.e_net,
            e_stoch: b.e_stoch,
            total: b.total(),
            measured: b.measured.unwrap_or(f64::NAN),
            l: b.constants.l,
            rsq: b.constants.rsq,
            k: b.constants.k,
            delta: b.delta,
            within_hypotheses: i32::from(b.constants.hypotheses.all()),
        };
        Ok(())
    })
}

/// Agent `agent`'s estimate x_{i,t} at round t (1-based) into `buf` (dim entries).
///
/// # Safety
/// `run` must be a live handle; `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn domd_run_estimate(run: *const DomdRun, t: usize, agent: usize, buf: *mut f64, len: usize) -> DomdStatus {
    guard(|| {
        let r = unsafe { borrow(run, "run") }?;
        let record = &r.output.record;
        let agents = record
            .agents
            .as_ref()
            .ok_or_else(|| Failure(DomdStatus::InvalidArgument, "run kept summary statistics only".into()))?;
        if t == 0 || t > agents.len() || agent >= record.n {
            return Err(Failure(
                DomdStatus::InvalidArgument,
                format!("(t, agent) = ({t}, {agent}) outside 1..={} × 0..{}", agents.len(), record.n),
            ));
        }
        unsafe { copy_into(agents[t - 1][agent].x.as_slice(), buf, len) }
    })
}

/// Target state x*_t for t in 1..=T+1 into `buf` (dim entries).
///
/// # Safety
/// `run` must be a live handle; `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn domd_run_target(run: *const DomdRun, t: usize, buf: *mut f64, len: usize) -> DomdStatus {
    guard(|| {
        let r = unsafe { borrow(run, "run") }?;
        let traj = &r.output.record.trajectory;
        if t == 0 || t > traj.rounds() + 1 {
            return Err(Failure(DomdStatus::InvalidArgument, format!("t = {t} outside 1..={}", traj.rounds() + 1)));
        }
        unsafe { copy_into(traj.state(t).as_slice(), buf, len) }
    })
}

/// Writes regret.csv, trajectory.csv, estimates.csv and manifest.txt into `dir`.
///
/// # Safety
/// `run` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn domd_run_write_artifacts(run: *const DomdRun, dir: *const c_char) -> DomdStatus {
    guard(|| {
        let r = unsafe { borrow(run, "run") }?;
        let dir = unsafe { c_str(dir, "dir") }?;
        write_run_artifacts(Path::new(dir), &r.experiment, &r.output)?;
        Ok(())
    })
}

/// Releases a run; null is ignored.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn domd_run_free(run: *mut DomdRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}
