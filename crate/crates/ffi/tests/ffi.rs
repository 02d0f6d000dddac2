use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use medresp_ffi::*;

fn last_error() -> String {
    let p = mr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn matrix(rows: usize, cols: usize, values: &[f64]) -> *mut MrMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mr_matrix_new(rows, cols, values.as_ptr(), &mut m) }, MrStatus::Ok);
    m
}

#[test]
fn matrix_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.msmx").to_str().unwrap()).unwrap();
    let m = matrix(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
    unsafe {
        assert_eq!(mr_matrix_write(m, path.as_ptr()), MrStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mr_matrix_read(path.as_ptr(), &mut back), MrStatus::Ok);
        assert_eq!((mr_matrix_rows(back), mr_matrix_cols(back)), (2, 3));
        let mut buf = [0.0; 6];
        assert_eq!(mr_matrix_copy(back, buf.as_mut_ptr(), 6), MrStatus::Ok);
        assert_eq!(buf, [1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        assert_eq!(mr_matrix_copy(back, buf.as_mut_ptr(), 5), MrStatus::InvalidArgument);
        mr_matrix_free(back);
        mr_matrix_free(m);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(mr_matrix_new(2, 2, ptr::null(), &mut out), MrStatus::NullPointer);
        assert!(last_error().contains("data"));
        let nan = [f64::NAN];
        assert_eq!(mr_matrix_new(1, 1, nan.as_ptr(), &mut out), MrStatus::Numerical);
        let missing = CString::new("/no/such/file.msmx").unwrap();
        assert_eq!(mr_matrix_read(missing.as_ptr(), &mut out), MrStatus::Io);
        assert!(last_error().contains("/no/such/file.msmx"));
        let bad = CString::new(r#"{"sead": 1}"#).unwrap();
        assert_eq!(mr_config_validate(bad.as_ptr()), MrStatus::Config);
        assert!(last_error().contains("sead"));
        assert_eq!(mr_config_validate(ptr::null()), MrStatus::Ok);
        assert!(mr_last_error().is_null());
        assert_eq!(mr_matrix_rows(ptr::null()), 0);
        mr_matrix_free(ptr::null_mut());
    }
}

#[test]
fn kernels_fnc_metrics_and_svm() {
    unsafe {
        let a = matrix(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = matrix(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let (mut ba, mut bb) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(mr_basis_new(a, &mut ba), MrStatus::Ok);
        assert_eq!(mr_basis_new(b, &mut bb), MrStatus::Ok);
        let mut v = 0.0;
        assert_eq!(mr_pabs_kernel(ba, ba, 1.0, &mut v), MrStatus::Ok);
        assert!((v - 2f64.tanh()).abs() < 1e-12);
        assert_eq!(mr_pabs_similarity(ba, bb, &mut v), MrStatus::Ok);
        assert!(v.abs() < 1e-12);
        assert_eq!(mr_pabs_kernel(ba, bb, 0.0, &mut v), MrStatus::InvalidArgument);

        let tc = matrix(5, 2, &[1.0, 2.0, 2.0, 1.0, 3.0, 4.0, 4.0, 3.0, 5.0, 6.0]);
        let mut f = ptr::null_mut();
        assert_eq!(mr_fnc_compute(tc, 0, &mut f), MrStatus::Ok);
        let mut fv = [0.0; 4];
        assert_eq!(mr_matrix_copy(f, fv.as_mut_ptr(), 4), MrStatus::Ok);
        assert_eq!((fv[0], fv[3]), (1.0, 1.0));
        assert_eq!(fv[1], fv[2]);

        let (y, s) = ([1u8, 0, 1], [0.9, 0.8, 0.7]);
        assert_eq!(mr_average_precision(y.as_ptr(), s.as_ptr(), 3, &mut v), MrStatus::Ok);
        assert!((v - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(mr_average_precision(y.as_ptr(), s.as_ptr(), 0, &mut v), MrStatus::InvalidArgument);

        // Two well-separated points per class on a linear kernel.
        let x = [-2.0, -1.0, 1.0, 2.0];
        let k: Vec<f64> = (0..16).map(|i| x[i / 4] * x[i % 4]).collect();
        let km = matrix(4, 4, &k);
        let labels = [-1.0, -1.0, 1.0, 1.0];
        let mut model = ptr::null_mut();
        assert_eq!(mr_svm_train(km, labels.as_ptr(), 4, 1.0, 1, 0, &mut model), MrStatus::Ok);
        let mut dv = [0.0; 4];
        assert_eq!(mr_svm_decision(model, km, dv.as_mut_ptr(), 4), MrStatus::Ok);
        for (d, l) in dv.iter().zip(labels) {
            assert!(d * l > 0.0, "{dv:?}");
        }
        assert_eq!(mr_svm_dual_objective(model, km, &mut v), MrStatus::Ok);
        assert!(v > 0.0);
        assert!(mr_svm_bias(model).is_finite());
        let one = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(mr_svm_train(km, one.as_ptr(), 4, 1.0, 1, 0, &mut model as *mut _), MrStatus::InvalidArgument);

        mr_svm_free(model);
        for m in [a, b, tc, f, km] {
            mr_matrix_free(m);
        }
        mr_basis_free(ba);
        mr_basis_free(bb);
    }
}

#[test]
fn pipeline_runs_through_c_entry_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let cfg = CString::new(
        r#"{"synth": {"grid": [10, 10, 6], "n_components": 6, "n_domains": 2, "timepoints": 60,
                      "class_scale": 0.15, "min_class_count": 5, "informative_components": 2},
            "features": ["sm"], "eval": {"outer_folds": 3, "repeats": 1, "permutation_rounds": 0}}"#,
    )
    .unwrap();
    assert_eq!(unsafe { mr_pipeline_run(cfg.as_ptr(), out.as_ptr()) }, MrStatus::Ok, "{}", last_error_or_none());
    assert!(dir.path().join("eval/summary.csv").exists());
}

fn last_error_or_none() -> String {
    let p = mr_last_error();
    if p.is_null() {
        String::new()
    } else {
        last_error()
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/medresp.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for sym in [
        "mr_last_error", "mr_version", "mr_matrix_new", "mr_matrix_read", "mr_matrix_write", "mr_matrix_rows",
        "mr_matrix_cols", "mr_matrix_copy", "mr_matrix_free", "mr_basis_new", "mr_basis_free", "mr_pabs_similarity",
        "mr_pabs_kernel", "mr_fnc_compute", "mr_average_precision", "mr_svm_train", "mr_svm_decision",
        "mr_svm_dual_objective", "mr_svm_bias", "mr_svm_free", "mr_config_validate", "mr_pipeline_run",
    ] {
        assert!(text.contains(&format!("{sym}(")), "{sym} missing from header");
    }
    assert!(text.contains("typedef struct MrMatrix MrMatrix;"));
    assert!(text.contains("MR_STATUS_CONFIG = 3"));
}

/// Compiles a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; skipping");
        return;
    }
    // Integration test binaries live in target/<profile>/deps.
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = deps.parent().unwrap().join("libmedresp_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}
