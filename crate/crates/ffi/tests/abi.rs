use std::ffi::{c_char, CStr, CString};
use std::ptr;

use kac_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { kac_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn grid(nx: usize, nv: usize) -> *mut KacGrid {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { kac_grid_new(nx, nv, std::f64::consts::PI, 10.0, &mut g) }, KAC_OK);
    g
}

fn smooth(g: *const KacGrid, nx: usize, nv: usize) -> *mut KacField {
    let (lx, lv) = (std::f64::consts::PI, 10.0);
    let mut data = Vec::with_capacity(nx * nv);
    for i in 0..nx {
        let x = -lx + i as f64 * 2.0 * lx / nx as f64;
        for j in 0..nv {
            let v = -lv + j as f64 * 2.0 * lv / nv as f64;
            data.push((1.0 + 0.5 * x.cos()) * (-v * v / 2.0).exp());
        }
    }
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { kac_field_new(g, data.as_ptr(), data.len(), &mut f) }, KAC_OK);
    f
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(kac_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn invalid_grid_and_nulls_report_codes() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { kac_grid_new(3, 8, 1.0, 1.0, &mut g) }, KAC_ERR_INVALID);
    assert!(g.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { kac_grid_new(8, 8, 1.0, 10.0, ptr::null_mut()) }, KAC_ERR_NULL);
    assert!(last_error().contains("null"));
    let mut n = 0usize;
    assert_eq!(unsafe { kac_grid_len(ptr::null(), &mut n) }, KAC_ERR_NULL);
    unsafe {
        kac_grid_free(ptr::null_mut());
        kac_field_free(ptr::null_mut());
        kac_solver_free(ptr::null_mut());
        kac_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn field_round_trip_and_buffer_checks() {
    let g = grid(8, 16);
    let f = smooth(g, 8, 16);
    let mut n = 0usize;
    assert_eq!(unsafe { kac_field_len(f, &mut n) }, KAC_OK);
    assert_eq!(n, 128);
    let mut small = vec![0.0; 10];
    assert_eq!(unsafe { kac_field_copy_data(f, small.as_mut_ptr(), small.len()) }, KAC_ERR_BUFFER);
    let mut out = vec![0.0; n];
    assert_eq!(unsafe { kac_field_copy_data(f, out.as_mut_ptr(), n) }, KAC_OK);
    let mut f2 = ptr::null_mut();
    assert_eq!(unsafe { kac_field_new(g, out.as_ptr(), n - 1, &mut f2) }, KAC_ERR_INVALID);

    let tmp = tempfile::tempdir().unwrap();
    let path = CString::new(tmp.path().join("f.kacfield").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { kac_field_save(f, path.as_ptr(), 0.75) }, KAC_OK);
    let mut t = 0.0;
    assert_eq!(unsafe { kac_field_load(path.as_ptr(), &mut f2, &mut t) }, KAC_OK);
    assert_eq!(t, 0.75);
    let mut back = vec![0.0; n];
    assert_eq!(unsafe { kac_field_copy_data(f2, back.as_mut_ptr(), n) }, KAC_OK);
    assert_eq!(back, out);
    let missing = CString::new(tmp.path().join("nope").to_str().unwrap()).unwrap();
    let mut f3 = ptr::null_mut();
    assert_eq!(unsafe { kac_field_load(missing.as_ptr(), &mut f3, ptr::null_mut()) }, KAC_ERR_IO);
    unsafe {
        kac_field_free(f2);
        kac_field_free(f);
        kac_grid_free(g);
    }
}

#[test]
fn kolmogorov_matches_core_and_decays() {
    let g = grid(16, 64);
    let f = smooth(g, 16, 64);
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { kac_kolmogorov(f, 0.5, 1.0, &mut k) }, KAC_OK);
    let (mut n0, mut n1) = (0.0, 0.0);
    assert_eq!(unsafe { kac_norm_hr(f, 1.0, &mut n0) }, KAC_OK);
    assert_eq!(unsafe { kac_norm_hr(k, 1.0, &mut n1) }, KAC_OK);
    assert!(n1 < n0, "{n1} >= {n0}");

    let mut data = vec![0.0; 16 * 64];
    unsafe { kac_field_copy_data(f, data.as_mut_ptr(), data.len()) };
    let spec = kac_core::grid::GridSpec::new(16, 64, std::f64::consts::PI, 10.0).unwrap();
    let core = kac_core::solver::solve_kolmogorov_exact(&kac_core::grid::PhaseField::new(spec, data).unwrap(), 0.5, 1.0).unwrap();
    let mut got = vec![0.0; 16 * 64];
    unsafe { kac_field_copy_data(k, got.as_mut_ptr(), got.len()) };
    assert_eq!(got, core.data);

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { kac_kolmogorov(f, 0.5, -1.0, &mut bad) }, KAC_ERR_INVALID);
    unsafe {
        kac_field_free(k);
        kac_field_free(f);
        kac_grid_free(g);
    }
}

#[test]
fn solver_runs_and_reports_errors() {
    let g = grid(16, 32);
    let f = smooth(g, 16, 32);
    let mut p = unsafe { std::mem::zeroed::<KacSolverParams>() };
    assert_eq!(unsafe { kac_solver_params_default(&mut p) }, KAC_OK);
    p.t_end = 0.2;
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { kac_solver_new(g, &p, &mut s) }, KAC_OK);
    let mut tr = ptr::null_mut();
    assert_eq!(unsafe { kac_solver_run(s, f, &mut tr) }, KAC_OK, "{}", last_error());
    let mut n = 0usize;
    assert_eq!(unsafe { kac_trajectory_len(tr, &mut n) }, KAC_OK);
    assert_eq!(n, 5);
    let mut t = 0.0;
    assert_eq!(unsafe { kac_trajectory_time(tr, n - 1, &mut t) }, KAC_OK);
    assert!((t - 0.2).abs() < 1e-12);
    assert_eq!(unsafe { kac_trajectory_time(tr, n, &mut t) }, KAC_ERR_INVALID);
    let mut last = ptr::null_mut();
    assert_eq!(unsafe { kac_trajectory_field(tr, n - 1, &mut last) }, KAC_OK);
    let mut norm = 0.0;
    assert_eq!(unsafe { kac_norm_hr(last, 0.0, &mut norm) }, KAC_OK);
    assert!(norm > 0.0 && norm.is_finite());

    let mut q = p;
    q.scheme = 7;
    let mut s2 = ptr::null_mut();
    assert_eq!(unsafe { kac_solver_new(g, &q, &mut s2) }, KAC_ERR_INVALID);
    q = p;
    q.picard_max_iter = 1;
    assert_eq!(unsafe { kac_solver_new(g, &q, &mut s2) }, KAC_OK);
    let mut tr2 = ptr::null_mut();
    assert_eq!(unsafe { kac_solver_run(s2, f, &mut tr2) }, KAC_ERR_NOT_CONVERGED);
    assert!(tr2.is_null());
    unsafe {
        kac_solver_free(s2);
        kac_field_free(last);
        kac_trajectory_free(tr);
        kac_solver_free(s);
        kac_field_free(f);
        kac_grid_free(g);
    }
}
