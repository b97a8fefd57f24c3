use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use fnmdp::fnvae::{ArchConfig, FnVae};
use fnmdp_ffi::*;

fn last_error() -> String {
    let p = fnmdp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tracking(seed: u64) -> *mut FnmdpEnv {
    let json = CString::new(r#"{"kind": "tracking", "horizon": 5}"#).unwrap();
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { fnmdp_env_new(json.as_ptr(), seed, &mut env) }, FnmdpStatus::Ok);
    env
}

#[test]
fn env_round_trip_matches_native_simulator() {
    let env = tracking(3);
    let (mut d, mut m, mut p, mut q) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(fnmdp_env_dims(env, &mut d, &mut m, &mut p, &mut q), FnmdpStatus::Ok);
        assert_eq!((d, m, p, q), (2, 1, 1, 1));
        let mut s = [0.0; 2];
        assert_eq!(fnmdp_env_reset(env, s.as_mut_ptr(), 2), FnmdpStatus::Ok);

        let spec = fnmdp::env::make_tracking_env(&fnmdp::env::TrackingConfig { horizon: 5, ..Default::default() }).unwrap();
        let mut native = fnmdp::env::Env::new(spec, 3).unwrap();
        assert_eq!(native.reset(), s.to_vec());

        let (mut r, mut done) = (0.0, false);
        for k in 0..5 {
            let a = [0.1 * k as f64];
            assert_eq!(fnmdp_env_step(env, a.as_ptr(), 1, s.as_mut_ptr(), 2, &mut r, &mut done), FnmdpStatus::Ok);
            let o = native.step(&a).unwrap();
            assert_eq!((s.to_vec(), r, done), (o.next_s, o.reward, o.done));
        }
        assert!(done);
        fnmdp_env_free(env);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    let env = tracking(0);
    unsafe {
        let mut s = [0.0; 3];
        assert_eq!(fnmdp_env_reset(env, s.as_mut_ptr(), 3), FnmdpStatus::InvalidArgument);
        assert!(last_error().contains("buffer"));
        assert_eq!(fnmdp_env_reset(env, ptr::null_mut(), 2), FnmdpStatus::NullPointer);
        assert_eq!(fnmdp_env_reset(ptr::null_mut(), s.as_mut_ptr(), 2), FnmdpStatus::NullPointer);
        fnmdp_env_free(env);
        fnmdp_env_free(ptr::null_mut());

        let bad = CString::new(r#"{"kind": "tracking", "hz": 1}"#).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(fnmdp_env_new(bad.as_ptr(), 0, &mut out), FnmdpStatus::Config);
        assert!(out.is_null());
        assert!(last_error().contains("hz"));

        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(fnmdp_model_load(missing.as_ptr(), &mut model), FnmdpStatus::Io);

        let cfg = CString::new(r#"{"schema": 1}"#).unwrap();
        let mut ret = 0.0;
        assert_eq!(fnmdp_run(cfg.as_ptr(), 9, 0, &mut ret), FnmdpStatus::InvalidArgument);
    }
    let v = unsafe { CStr::from_ptr(fnmdp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_filter_and_graph_export() {
    let arch = ArchConfig { latent_s: 1, latent_r: 2, embed: 4, lstm_hidden: 4, decoder_hidden: 4, prior_hidden: 3, ..Default::default() };
    let native = FnVae::new(2, 1, &arch, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    native.save(std::fs::File::create(&path).unwrap()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(fnmdp_model_load(cpath.as_ptr(), &mut model), FnmdpStatus::Ok);

        let mut needed = 0;
        assert_eq!(fnmdp_model_graph_json(model, 0.5, ptr::null_mut(), 0, &mut needed), FnmdpStatus::InvalidArgument);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(fnmdp_model_graph_json(model, 0.5, buf.as_mut_ptr(), needed, &mut needed), FnmdpStatus::Ok);
        let text = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(fnmdp::graph::FnMdpGraph::from_json(text).unwrap(), native.extract_masks(0.5));

        let mut filter = ptr::null_mut();
        assert_eq!(fnmdp_filter_new(model, &mut filter), FnmdpStatus::Ok);
        fnmdp_model_free(model);
        let mut reference = fnmdp::fnvae::CfFilter::new(&native);
        let (mut ts, mut tr) = ([0.0; 1], [0.0; 2]);
        for k in 0..3 {
            let (s, a, r) = ([0.1 * k as f64, -0.2], [0.3], 0.5 - k as f64);
            let st = fnmdp_filter_observe(filter, s.as_ptr(), 2, a.as_ptr(), 1, r, ts.as_mut_ptr(), 1, tr.as_mut_ptr(), 2);
            assert_eq!(st, FnmdpStatus::Ok);
            let (hs, hr) = reference.observe(&native, &s, &a, r).unwrap();
            assert_eq!(ts.to_vec(), hs.mean.data().to_vec());
            assert_eq!(tr.to_vec(), hr.mean.data().to_vec());
        }
        let (s, a) = ([0.0; 2], [0.0]);
        let st = fnmdp_filter_observe(filter, s.as_ptr(), 2, a.as_ptr(), 1, 0.0, ts.as_mut_ptr(), 1, tr.as_mut_ptr(), 1);
        assert_eq!(st, FnmdpStatus::InvalidArgument);
        assert_eq!(fnmdp_filter_reset(filter), FnmdpStatus::Ok);
        fnmdp_filter_free(filter);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fnmdp.h")).unwrap();
    for name in [
        "fnmdp_last_error",
        "fnmdp_version",
        "fnmdp_env_new",
        "fnmdp_env_free",
        "fnmdp_env_dims",
        "fnmdp_env_reset",
        "fnmdp_env_step",
        "fnmdp_model_load",
        "fnmdp_model_free",
        "fnmdp_model_graph_json",
        "fnmdp_filter_new",
        "fnmdp_filter_free",
        "fnmdp_filter_reset",
        "fnmdp_filter_observe",
        "fnmdp_run",
        "FNMDP_STATUS_NUMERICAL",
        "FNMDP_METHOD_ORACLE",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles and runs a small C client against the static library.
#[test]
fn c_client_links_and_runs() {
    let target = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).parent().unwrap().to_path_buf();
    let lib = ["debug", "release"].iter().map(|p| target.join(p).join("libfnmdp_ffi.a")).find(|p| p.exists());
    let Some(lib) = lib else {
        eprintln!("static library not built; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "fnmdp.h"
int main(void) {
    FnmdpEnv *env = NULL;
    if (fnmdp_env_new("{\"kind\": \"tracking\", \"horizon\": 3}", 1, &env) != FNMDP_STATUS_OK) return 1;
    double s[2], a[1] = {0.5}, r = 0.0;
    bool done = false;
    if (fnmdp_env_reset(env, s, 2) != FNMDP_STATUS_OK) return 2;
    int steps = 0;
    while (!done) {
        if (fnmdp_env_step(env, a, 1, s, 2, &r, &done) != FNMDP_STATUS_OK) return 3;
        steps++;
    }
    if (fnmdp_env_reset(env, s, 5) != FNMDP_STATUS_INVALID_ARGUMENT) return 4;
    printf("%d %s\n", steps, fnmdp_last_error() != NULL ? "err" : "none");
    fnmdp_env_free(env);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("client");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "client exited with {:?}", out.status);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "3 err");
}
