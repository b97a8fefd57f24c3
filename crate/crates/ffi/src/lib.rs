//! C ABI over the fnmdp engine.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`FnmdpStatus`]; on failure the message is available from
//! [`fnmdp_last_error`] on the same thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fnmdp::cli::{EnvConfig, ExperimentConfig};
use fnmdp::driver::{run_method, Method};
use fnmdp::env::Env;
use fnmdp::fnvae::{CfFilter, FnVae};
use fnmdp::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FnmdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Checkpoint = 6,
    Panic = 7,
}

/// Simulator handle.
pub struct FnmdpEnv {
    env: Env,
}

/// Trained FN-VAE handle.
pub struct FnmdpModel {
    model: FnVae,
}

/// Online change-factor filter; owns a copy of the model it was made from.
pub struct FnmdpFilter {
    model: FnVae,
    filter: CfFilter,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FnmdpStatus {
    match e {
        Error::Contract(_) | Error::EpisodeOverrun { .. } | Error::UnderPowered { .. } => FnmdpStatus::InvalidArgument,
        Error::Numerical(_) => FnmdpStatus::Numerical,
        Error::Config(_) | Error::Json(_) => FnmdpStatus::Config,
        Error::Checkpoint(_) => FnmdpStatus::Checkpoint,
        Error::Io(_) => FnmdpStatus::Io,
    }
}

struct Fail(FnmdpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FnmdpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(FnmdpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FnmdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FnmdpStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            FnmdpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn copy_into(dst: &mut [f64], src: &[f64], what: &str) -> Result<(), Fail> {
    if dst.len() != src.len() {
        return Err(invalid(format!("{what} buffer holds {}, need {}", dst.len(), src.len())));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fnmdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fnmdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a simulator from an `env` config section, e.g.
/// `{"kind": "tracking", "horizon": 50}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_env_new(json: *const c_char, seed: u64, out: *mut *mut FnmdpEnv) -> FnmdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let cfg: EnvConfig = serde_json::from_str(text).map_err(Error::from)?;
        let env = Env::new(cfg.build()?, seed)?;
        *out = Box::into_raw(Box::new(FnmdpEnv { env }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`fnmdp_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_env_free(env: *mut FnmdpEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Writes the state, action, θˢ and θʳ widths; any pointer may be null.
///
/// # Safety
/// `env` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_env_dims(
    env: *mut FnmdpEnv,
    d: *mut usize,
    m: *mut usize,
    p: *mut usize,
    q: *mut usize,
) -> FnmdpStatus {
    guard(|| {
        let dims = handle(env, "env")?.env.spec().dims();
        for (ptr, v) in [(d, dims.d), (m, dims.m), (p, dims.p), (q, dims.q)] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

/// Starts an episode and writes the initial state into `s_out[0..d]`.
///
/// # Safety
/// `env` must be a live handle and `s_out` hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_env_reset(env: *mut FnmdpEnv, s_out: *mut f64, d: usize) -> FnmdpStatus {
    guard(|| {
        let h = handle(env, "env")?;
        let out = slice_out(s_out, d, "s_out")?;
        let s = h.env.reset();
        copy_into(out, &s, "state")
    })
}

/// Applies action `a[0..m]`, writing the next state, reward and whether the
/// episode ended.
///
/// # Safety
/// `env` must be a live handle; `a` holds `m` doubles, `s_out` holds `d`,
/// and `reward`/`done` are valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_env_step(
    env: *mut FnmdpEnv,
    a: *const f64,
    m: usize,
    s_out: *mut f64,
    d: usize,
    reward: *mut f64,
    done: *mut bool,
) -> FnmdpStatus {
    guard(|| {
        let h = handle(env, "env")?;
        let a = slice_arg(a, m, "a")?;
        let out = slice_out(s_out, d, "s_out")?;
        if reward.is_null() || done.is_null() {
            return Err(null("reward or done"));
        }
        let o = h.env.step(a)?;
        copy_into(out, &o.next_s, "state")?;
        *reward = o.reward;
        *done = o.done;
        Ok(())
    })
}

/// Loads an FN-VAE checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_model_load(path: *const c_char, out: *mut *mut FnmdpModel) -> FnmdpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let f = std::fs::File::open(path).map_err(Error::from)?;
        let model = FnVae::load(std::io::BufReader::new(f))?;
        *out = Box::into_raw(Box::new(FnmdpModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`fnmdp_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_model_free(model: *mut FnmdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Serializes the graph read from the model's masks at `threshold` as JSON
/// into `buf`. `needed` receives the byte count including the terminating
/// NUL; a buffer that is null or too small yields `InvalidArgument` with
/// `needed` still set.
///
/// # Safety
/// `model` must be a live handle, `buf` valid for `len` bytes when non-null,
/// and `needed` valid.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_model_graph_json(
    model: *mut FnmdpModel,
    threshold: f64,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FnmdpStatus {
    guard(|| {
        let h = handle(model, "model")?;
        if needed.is_null() {
            return Err(null("needed"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid(format!("threshold {threshold} outside (0, 1)")));
        }
        let text = h.model.extract_masks(threshold).to_json();
        *needed = text.len() + 1;
        if buf.is_null() || len < text.len() + 1 {
            return Err(invalid(format!("buffer of {len} bytes, need {}", text.len() + 1)));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Creates a change-factor filter from a copy of `model`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_filter_new(model: *mut FnmdpModel, out: *mut *mut FnmdpFilter) -> FnmdpStatus {
    guard(|| {
        let h = handle(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = h.model.clone();
        let filter = CfFilter::new(&model);
        *out = Box::into_raw(Box::new(FnmdpFilter { model, filter }));
        Ok(())
    })
}

/// # Safety
/// `filter` must come from [`fnmdp_filter_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_filter_free(filter: *mut FnmdpFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Clears the filter's recurrent state.
///
/// # Safety
/// `filter` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_filter_reset(filter: *mut FnmdpFilter) -> FnmdpStatus {
    guard(|| {
        handle(filter, "filter")?.filter.reset();
        Ok(())
    })
}

/// Feeds one step `(s, a, r)` and writes the posterior means of θˢ
/// (`p` entries) and θʳ (`q` entries).
///
/// # Safety
/// `filter` must be a live handle and every array valid for its length.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fnmdp_filter_observe(
    filter: *mut FnmdpFilter,
    s: *const f64,
    d: usize,
    a: *const f64,
    m: usize,
    r: f64,
    theta_s_out: *mut f64,
    p: usize,
    theta_r_out: *mut f64,
    q: usize,
) -> FnmdpStatus {
    guard(|| {
        let h = handle(filter, "filter")?;
        let s = slice_arg(s, d, "s")?;
        let a = slice_arg(a, m, "a")?;
        let ts = slice_out(theta_s_out, p, "theta_s_out")?;
        let tr = slice_out(theta_r_out, q, "theta_r_out")?;
        let (hs, hr) = h.filter.observe(&h.model, s, a, r)?;
        copy_into(ts, hs.mean.data(), "theta_s")?;
        copy_into(tr, hr.mean.data(), "theta_r")
    })
}

/// Method codes accepted by [`fnmdp_run`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FnmdpMethod {
    Fansrl = 0,
    Oracle = 1,
    Sac = 2,
}

/// Runs one method (an [`FnmdpMethod`] code) on an experiment config document and writes the mean
/// return over the configured final episodes.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `final_return` valid.
#[no_mangle]
pub unsafe extern "C" fn fnmdp_run(
    config_json: *const c_char,
    method: u32,
    seed: u64,
    final_return: *mut f64,
) -> FnmdpStatus {
    guard(|| {
        if final_return.is_null() {
            return Err(null("final_return"));
        }
        let cfg = ExperimentConfig::parse(str_arg(config_json, "config_json")?, "config")?;
        cfg.validate()?;
        let method = match method {
            m if m == FnmdpMethod::Fansrl as u32 => Method::Fansrl,
            m if m == FnmdpMethod::Oracle as u32 => Method::Oracle,
            m if m == FnmdpMethod::Sac as u32 => Method::Sac,
            other => return Err(invalid(format!("unknown method code {other}"))),
        };
        let run = run_method(method, &cfg.env.build()?, &cfg.run_config(), seed)?;
        *final_return = run.final_mean(cfg.run.final_episodes);
        Ok(())
    })
}
