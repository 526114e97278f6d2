use std::ffi::CString;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pexprk::problems::oracle_semilinear;
use pexprk::steppers::{integrate_fixed, StepConfig, Stepper};
use pexprk::tableaux::{check_order_conditions, tableau};
use pexprk_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { pexprk_last_error_message(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(511));
    String::from_utf8(buf).unwrap()
}

#[test]
fn phi_scalar_through_abi() {
    let mut v = 0.0;
    assert_eq!(unsafe { pexprk_phi_scalar(2, 0.0, &mut v) }, PexprkStatus::Ok);
    assert_eq!(v, 0.5);
    assert_eq!(
        unsafe { pexprk_phi_scalar(1, 0.0, ptr::null_mut()) },
        PexprkStatus::NullPointer
    );
    assert_eq!(
        unsafe { pexprk_phi_scalar(1, f64::NAN, &mut v) },
        PexprkStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
}

#[test]
fn error_message_truncates() {
    let mut v = 0.0;
    unsafe { pexprk_phi_scalar(42, 0.0, &mut v) };
    let mut small = [0i8; 4];
    let full = unsafe { pexprk_last_error_message(small.as_mut_ptr(), small.len()) };
    assert!(full > 3);
    assert_eq!(small[3], 0);
}

#[test]
fn integrate_matches_library() {
    let mut prob = ptr::null_mut();
    assert_eq!(
        unsafe { pexprk_oracle_new(10, 3, 0, &mut prob) },
        PexprkStatus::Ok
    );
    let n = unsafe { pexprk_problem_dim(prob) };
    assert_eq!(n, 10);
    let mut u0 = vec![0.0; n];
    assert_eq!(
        unsafe { pexprk_problem_initial_state(prob, u0.as_mut_ptr(), n) },
        PexprkStatus::Ok
    );
    let mut st = ptr::null_mut();
    assert_eq!(
        unsafe { pexprk_stepper_new(3, PEXPRK_FORM_TRAN, &mut st) },
        PexprkStatus::Ok
    );
    let mut out = vec![0.0; n];
    let mut stats = PexprkStats::default();
    let status = unsafe {
        pexprk_integrate(st, prob, u0.as_ptr(), n, 0.0, 1.0, 8, 1e-12, 100, out.as_mut_ptr(), &mut stats)
    };
    assert_eq!(status, PexprkStatus::Ok);
    assert_eq!(stats.steps, 8);

    let o = oracle_semilinear(10, 3);
    let direct = integrate_fixed(
        &Stepper::transformed(&tableau(3).unwrap()).unwrap(),
        &o.problem(),
        &o.u0,
        0.0,
        1.0,
        8,
        &StepConfig::with_tol(1e-12).unwrap(),
    )
    .unwrap();
    assert_eq!(out, direct.state);
    assert_eq!(stats.matvecs, direct.matvecs);

    let mut rhs = vec![0.0; n];
    assert_eq!(
        unsafe { pexprk_problem_rhs(prob, u0.as_ptr(), rhs.as_mut_ptr(), n) },
        PexprkStatus::Ok
    );
    assert_eq!(rhs, o.rhs(&o.u0));

    let bad = unsafe {
        pexprk_integrate(st, prob, u0.as_ptr(), n, 0.0, 1.0, 0, 1e-12, 100, out.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(bad, PexprkStatus::InvalidArgument);
    unsafe {
        pexprk_stepper_free(st);
        pexprk_problem_free(prob);
    }
}

#[test]
fn invalid_codes_rejected() {
    let mut prob = ptr::null_mut();
    assert_eq!(
        unsafe { pexprk_gray_scott_new(8, 17, PEXPRK_JACOBIAN_FULL, &mut prob) },
        PexprkStatus::InvalidArgument
    );
    assert!(prob.is_null());
    assert_eq!(
        unsafe { pexprk_gray_scott_new(7, PEXPRK_PARTITION_SPACE, PEXPRK_JACOBIAN_FULL, &mut prob) },
        PexprkStatus::InvalidArgument
    );
    assert!(last_error().contains("even"));
    let mut st = ptr::null_mut();
    assert_eq!(
        unsafe { pexprk_stepper_new(5, PEXPRK_FORM_TRAN, &mut st) },
        PexprkStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { pexprk_stepper_new(2, 9, &mut st) },
        PexprkStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { pexprk_problem_initial_state(ptr::null(), ptr::null_mut(), 0) },
        PexprkStatus::NullPointer
    );
    assert_eq!(unsafe { pexprk_problem_dim(ptr::null()) }, 0);
}

#[test]
fn residual_stepper_needs_two_partitions() {
    let mut prob = ptr::null_mut();
    let mut st = ptr::null_mut();
    unsafe {
        assert_eq!(pexprk_oracle_new(4, 0, 0, &mut prob), PexprkStatus::Ok);
        assert_eq!(pexprk_stepper_residual2_new(&mut st), PexprkStatus::Ok);
        let u = [0.1; 4];
        let mut out = [0.0; 4];
        let s = pexprk_integrate(st, prob, u.as_ptr(), 4, 0.0, 1.0, 2, 1e-10, 50, out.as_mut_ptr(), ptr::null_mut());
        assert_eq!(s, PexprkStatus::Numerical);
        assert!(last_error().contains("partitions"));
        pexprk_stepper_free(st);
        pexprk_problem_free(prob);
    }
}

#[test]
fn check_order_values() {
    let mut res = [0.0; PEXPRK_NUM_CONDITIONS];
    assert_eq!(
        unsafe { pexprk_check_order(3, 6, 1, res.as_mut_ptr()) },
        PexprkStatus::Ok
    );
    let direct = check_order_conditions(&tableau(3).unwrap(), 4, 6, 1).unwrap();
    for (a, r) in res.iter().zip(&direct) {
        assert_eq!(*a, r.residual);
    }
}

#[test]
fn run_study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.csv");
    let cfg = CString::new(
        r#"{"problem": "oracle", "grid": 5, "tspan": "0:1", "steps-pow2": "2:4", "order": 2, "timing": false}"#,
    )
    .unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { pexprk_run_study(cfg.as_ptr(), cpath.as_ptr()) },
        PexprkStatus::Ok
    );
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("h,error_l2,observed_order,matvecs,krylov_dims,wall_ms"));

    let bad = CString::new(r#"{"order": 9}"#).unwrap();
    assert_eq!(
        unsafe { pexprk_run_study(bad.as_ptr(), cpath.as_ptr()) },
        PexprkStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { pexprk_run_study(ptr::null(), cpath.as_ptr()) },
        PexprkStatus::NullPointer
    );
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { std::ffi::CStr::from_ptr(pexprk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(Path::parent)
        .unwrap()
        .to_path_buf()
}

#[test]
fn header_is_generated_and_c_program_links() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/pexprk.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["pexprk_integrate", "PEXPRK_STATUS_NULL_POINTER", "typedef struct PexprkProblem"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }

    let lib = target_dir().join("libpexprk_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C link test: static library or C compiler unavailable");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C smoke test failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
