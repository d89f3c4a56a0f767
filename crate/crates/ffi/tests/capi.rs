use std::ffi::{c_char, CStr};
use std::ptr;

use rmtq_ffi::*;

fn last_error() -> String {
    let need = unsafe { rmtq_last_error_message(ptr::null_mut(), 0) };
    if need == 0 {
        return String::new();
    }
    let mut buf = vec![0 as c_char; need];
    let wrote = unsafe { rmtq_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(wrote, need);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn gap_reference_lifecycle() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { rmtq_gap_reference_new(2, 0.0, 0, &mut h) }, RmtqStatus::Ok);
    assert!(!h.is_null());
    let (mut p, mut f) = (0.0, 0.0);
    assert_eq!(unsafe { rmtq_gap_reference_density(h, 1.0, &mut p) }, RmtqStatus::Ok);
    assert_eq!(unsafe { rmtq_gap_reference_cdf(h, 10.0, &mut f) }, RmtqStatus::Ok);
    assert!(p > 0.8 && p < 1.0);
    assert_eq!(f, 1.0);
    unsafe { rmtq_gap_reference_free(h) };
    unsafe { rmtq_gap_reference_free(ptr::null_mut()) };
}

#[test]
fn invalid_beta_sets_message() {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { rmtq_gap_reference_new(3, 0.0, 0, &mut h) },
        RmtqStatus::InvalidInput
    );
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { rmtq_gap_reference_new(2, 0.0, 0, ptr::null_mut()) },
        RmtqStatus::NullPointer
    );
    let mut small = [0 as c_char; 2];
    let need = unsafe { rmtq_last_error_message(small.as_mut_ptr(), small.len()) };
    assert!(need > 2);
    assert_eq!(small[0], 0);
}

#[test]
fn mde_matches_semicircle() {
    let d = [0.0f64; 3];
    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(
        unsafe { rmtq_mde_solve(d.as_ptr(), 3, 0.0, 1.0, &mut re, &mut im) },
        RmtqStatus::Ok
    );
    assert!(re.abs() < 1e-12);
    assert!((im - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
    let (mut rho, mut cdf) = (0.0, 0.0);
    assert_eq!(
        unsafe { rmtq_mde_density(d.as_ptr(), 3, 0.0, &mut rho, &mut cdf) },
        RmtqStatus::Ok
    );
    assert!((rho - 1.0 / std::f64::consts::PI).abs() < 1e-10);
    assert!((cdf - 0.5).abs() < 1e-10);
    assert_eq!(
        unsafe { rmtq_mde_solve(d.as_ptr(), 3, 0.0, 0.0, &mut re, &mut im) },
        RmtqStatus::InvalidInput
    );
}

#[test]
fn eigenvalues_are_seeded_and_sorted() {
    let mut a = vec![0.0; 50];
    let mut b = vec![0.0; 50];
    assert_eq!(
        unsafe { rmtq_sample_wigner_eigenvalues(50, 2, 7, a.as_mut_ptr(), 50) },
        RmtqStatus::Ok
    );
    assert_eq!(
        unsafe { rmtq_sample_wigner_eigenvalues(50, 2, 7, b.as_mut_ptr(), 50) },
        RmtqStatus::Ok
    );
    assert_eq!(a, b);
    assert!(a.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(
        unsafe { rmtq_sample_wigner_eigenvalues(50, 2, 7, a.as_mut_ptr(), 10) },
        RmtqStatus::BufferTooSmall
    );
}

#[test]
fn ks_of_reference_quantiles_is_small() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { rmtq_gap_reference_new(1, 0.0, 0, &mut h) }, RmtqStatus::Ok);
    // Invert the CDF on a grid by bisection through the C interface.
    let n = 400;
    let samples: Vec<f64> = (0..n)
        .map(|k| {
            let target = (k as f64 + 0.5) / n as f64;
            let (mut lo, mut hi) = (0.0, 5.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let mut f = 0.0;
                unsafe { rmtq_gap_reference_cdf(h, mid, &mut f) };
                if f < target {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    unsafe { rmtq_gap_reference_free(h) };
    let mut ks = 1.0;
    assert_eq!(
        unsafe { rmtq_ks_distance(samples.as_ptr(), n, 1, &mut ks) },
        RmtqStatus::Ok
    );
    assert!((ks - 0.5 / n as f64).abs() < 1e-6, "{ks}");
    assert_eq!(
        unsafe { rmtq_ks_distance(ptr::null(), 3, 1, &mut ks) },
        RmtqStatus::NullPointer
    );
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(rmtq_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rmtq.h")).unwrap();
    for name in [
        "rmtq_last_error_message",
        "rmtq_version",
        "rmtq_gap_reference_new",
        "rmtq_gap_reference_density",
        "rmtq_gap_reference_cdf",
        "rmtq_gap_reference_free",
        "rmtq_mde_solve",
        "rmtq_mde_density",
        "rmtq_sample_wigner_eigenvalues",
        "rmtq_ks_distance",
        "RMTQ_STATUS_OK",
        "typedef struct RmtqGapReference RmtqGapReference",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"rmtq.h\"\nint main(void) {\n  RmtqGapReference *h = 0;\n  RmtqStatus s = rmtq_gap_reference_new(2, 0.0, 0, &h);\n  rmtq_gap_reference_free(h);\n  return s == RMTQ_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler on PATH, skipping");
            return;
        }
    };
    assert!(status.success());
}
