use std::ffi::CStr;
use std::ptr;

use netuq_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe {
        netuq_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn benchmark_round_trip() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { netuq_benchmark_new(11, 2, &mut h) }, NetuqStatus::Ok);
    assert_eq!(unsafe { netuq_benchmark_n_components(h) }, 4);

    let mut opts = netuq_default_solve_options();
    opts.anderson_memory = 5;
    opts.tol = 1e-8;
    let mut summary = NetuqSolveSummary::default();
    assert_eq!(unsafe { netuq_benchmark_solve(h, &opts, &mut summary) }, NetuqStatus::Ok);
    assert!(summary.final_residual <= 1e-8);
    assert!(summary.iterations > 0);

    let n = unsafe { netuq_benchmark_qoi_len(h) };
    assert_eq!(n, 20);
    let mut q = vec![0.0; n];
    assert_eq!(unsafe { netuq_benchmark_qoi(h, q.as_mut_ptr(), n) }, NetuqStatus::Ok);
    assert!(q.iter().all(|v| v.is_finite()) && q[0] != 0.0);

    let mut small = [0.0; 3];
    assert_eq!(unsafe { netuq_benchmark_qoi(h, small.as_mut_ptr(), 3) }, NetuqStatus::BufferTooSmall);
    assert!(last_error().contains("needed"));

    // Jacobi reaches the same fixed point.
    opts.method = NetuqMethod::Jacobi;
    assert_eq!(unsafe { netuq_benchmark_solve(h, &opts, ptr::null_mut()) }, NetuqStatus::Ok);
    let mut qj = vec![0.0; n];
    unsafe { netuq_benchmark_qoi(h, qj.as_mut_ptr(), n) };
    let diff = q.iter().zip(&qj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");

    unsafe { netuq_benchmark_free(h) };
}

#[test]
fn error_codes() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { netuq_benchmark_new(10, 2, &mut h) }, NetuqStatus::InvalidConfig);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { netuq_benchmark_new(11, 2, ptr::null_mut()) }, NetuqStatus::NullPointer);

    assert_eq!(unsafe { netuq_benchmark_new(11, 1, &mut h) }, NetuqStatus::Ok);
    let mut opts = netuq_default_solve_options();
    opts.omega = 2.5;
    assert_eq!(unsafe { netuq_benchmark_solve(h, &opts, ptr::null_mut()) }, NetuqStatus::InvalidConfig);
    assert_eq!(unsafe { netuq_benchmark_solve(h, ptr::null(), ptr::null_mut()) }, NetuqStatus::NullPointer);
    unsafe { netuq_benchmark_free(h) };
    unsafe { netuq_benchmark_free(ptr::null_mut()) };
}

#[test]
fn pce_helpers() {
    assert_eq!(netuq_pce_n_terms(2, 3), 10);
    let xi = [0.5, -1.0];
    let mut out = [0.0; 10];
    assert_eq!(unsafe { netuq_pce_eval_basis(2, 3, xi.as_ptr(), out.as_mut_ptr(), 10) }, NetuqStatus::Ok);
    // He_2(0.5) = -0.75, He_1(0.5) He_1(-1) = -0.5
    assert_eq!(out[0], 1.0);
    assert!((out[3] + 0.75).abs() < 1e-15);
    assert!((out[4] + 0.5).abs() < 1e-15);

    let (mut x, mut w) = ([0.0; 3], [0.0; 3]);
    assert_eq!(unsafe { netuq_gauss_hermite(3, x.as_mut_ptr(), w.as_mut_ptr()) }, NetuqStatus::Ok);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    assert!((x[0].abs() - 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(unsafe { netuq_gauss_hermite(0, x.as_mut_ptr(), w.as_mut_ptr()) }, NetuqStatus::InvalidArgument);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/netuq.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ return NETUQ_STATUS_OK; }}\n")).unwrap();
    let status = match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => return, // no C compiler available
    };
    assert!(status.success());
}
