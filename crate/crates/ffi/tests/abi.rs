use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use hilbert_ustat_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { hus_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0, "no error recorded");
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn handles_roundtrip() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(hus_model_two_state(0.25, 0.25, &mut m), HusStatus::Ok);
        let mut beta = 0.0;
        assert_eq!(hus_model_beta(m, 1, &mut beta), HusStatus::Ok);
        assert!((beta - 0.25).abs() < 1e-12);

        let kernel_json = CString::new(r#"{"name":"custom_table","table":[[[1.0],[-1.0]],[[-1.0],[1.0]]]}"#).unwrap();
        let mut k = ptr::null_mut();
        assert_eq!(hus_kernel_from_json(kernel_json.as_ptr(), &mut k), HusStatus::Ok);
        assert_eq!(hus_kernel_dim(k), 1);

        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(hus_ustat_simulate(m, k, 60, 5, &mut a), HusStatus::Ok);
        assert_eq!(hus_ustat_simulate(m, k, 60, 5, &mut b), HusStatus::Ok);
        assert_eq!(hus_path_len(a), 60);
        let (mut ua, mut ub) = (0.0, 0.0);
        for j in 0..=60 {
            assert_eq!(hus_path_value(a, j, &mut ua, 1), HusStatus::Ok);
            assert_eq!(hus_path_value(b, j, &mut ub, 1), HusStatus::Ok);
            assert_eq!(ua.to_bits(), ub.to_bits());
        }
        assert_eq!(hus_path_value(a, 61, &mut ua, 1), HusStatus::OutOfRange);
        assert!(last_error().contains("61"));

        hus_path_free(a);
        hus_path_free(b);
        hus_kernel_free(k);
        hus_model_free(m);
        hus_model_free(ptr::null_mut());
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(hus_model_two_state(1.5, 0.25, &mut m), HusStatus::InvalidArgument);
        assert!(m.is_null());
        assert_eq!(hus_model_two_state(0.25, 0.25, ptr::null_mut()), HusStatus::NullPointer);
        let bad = CString::new("{not json").unwrap();
        assert_eq!(hus_model_from_json(bad.as_ptr(), &mut m), HusStatus::Config);
        assert!(!last_error().is_empty());
        let mut plan = HusRatePlan::default();
        let t = CString::new("T7").unwrap();
        assert_ne!(hus_rate_plan(t.as_ptr(), 1.5, 1.0, 0.1, &mut plan), HusStatus::Ok);
        let t = CString::new("T2").unwrap();
        assert_eq!(hus_rate_plan(t.as_ptr(), 1.5, 1.0, 0.1, &mut plan), HusStatus::Ok);
        assert_eq!(hus_last_error(ptr::null_mut(), 0), 0);
        assert!(plan.b.is_nan());
    }
}

#[test]
fn bound_and_hypothesis() {
    let inputs = HusBoundInputs {
        r: 2.0,
        q: 2,
        n: 20,
        x: 10.0,
        level: f64::INFINITY,
        m_le: 1.0,
        m_gt: 0.0,
        sup_lag_mean: 1.0,
        beta_q: 0.05,
        c_r: 4.0,
    };
    let mut rep = HusBoundReport::default();
    unsafe {
        assert_eq!(hus_deviation_bound(&inputs, &mut rep), HusStatus::Ok);
        let sum = rep.moment + rep.truncation + rep.lag_mean + rep.mixing;
        assert!((rep.total - sum).abs() < 1e-12);
        assert_eq!(rep.truncation, 0.0);
        let bad = HusBoundInputs { q: 10, ..inputs };
        assert_eq!(hus_deviation_bound(&bad, &mut rep), HusStatus::InvalidArgument);

        let mut m = ptr::null_mut();
        assert_eq!(hus_model_two_state(0.25, 0.25, &mut m), HusStatus::Ok);
        let mut h = HusHypothesis::default();
        let t = CString::new("FCLT").unwrap();
        assert_eq!(
            hus_hypothesis_check(m, t.as_ptr(), 1.5, 1.0, 0.1, &mut h),
            HusStatus::Ok
        );
        assert_eq!(h.pass, 1);
        hus_model_free(m);
    }
}

#[test]
fn experiment_report_as_json() {
    let manifest = CString::new(
        r#"
n_values = [40]
replications = 8
seed = 2
reference_paths = 50
[model]
kind = "two_state"
a = 0.25
b = 0.25
[kernel]
name = "custom_table"
table = [[[1.0], [0.5]], [[0.5], [-1.0]]]
"#,
    )
    .unwrap();
    let exp = CString::new("fclt").unwrap();
    unsafe {
        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(
            hus_run_experiment(manifest.as_ptr(), exp.as_ptr(), ptr::null(), &mut a),
            HusStatus::Ok
        );
        assert_eq!(
            hus_run_experiment(manifest.as_ptr(), exp.as_ptr(), ptr::null(), &mut b),
            HusStatus::Ok
        );
        let ja = CStr::from_ptr(a).to_str().unwrap().to_owned();
        assert_eq!(ja, CStr::from_ptr(b).to_str().unwrap());
        let v: serde_json::Value = serde_json::from_str(&ja).unwrap();
        assert_eq!(v["experiment"], "fclt");
        hus_string_free(a);
        hus_string_free(b);

        let mut c = ptr::null_mut();
        let unknown = CString::new("bogus").unwrap();
        assert_eq!(
            hus_run_experiment(manifest.as_ptr(), unknown.as_ptr(), ptr::null(), &mut c),
            HusStatus::InvalidArgument
        );
        let broken = CString::new("n_values = ").unwrap();
        assert_eq!(
            hus_run_experiment(broken.as_ptr(), exp.as_ptr(), ptr::null(), &mut c),
            HusStatus::Config
        );
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/hilbert_ustat.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "hus_model_two_state",
        "hus_last_error",
        "HUS_STATUS_OUT_OF_RANGE",
        "typedef struct HusModel HusModel",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    // cargo test only builds the rlib; the static archive comes from a build with the same profile
    let built = Command::new(env!("CARGO"))
        .args(["build", "--profile", "test", "--lib", "-p", "hilbert-ustat-ffi"])
        .status()
        .expect("run cargo");
    assert!(built.success());
    let lib = target_dir().join("libhilbert_ustat_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(root.join("tests/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
