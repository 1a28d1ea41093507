//! C ABI over `kac-core`.
//!
//! Objects are opaque handles created by `kac_*_new` style calls and released
//! with the matching `kac_*_free`. Every call returns an `int` status; on a
//! nonzero status the message is available through `kac_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use kac_core::collision::CrossSection;
use kac_core::error::KacError;
use kac_core::grid::{load_snapshot, save_snapshot, GridSpec, PhaseField};
use kac_core::multiplier::MultiplierParams;
use kac_core::norms::norm_hr_l2;
use kac_core::solver::{solve_kolmogorov_exact, Scheme, Solver, SolverConfig, Trajectory};

pub const KAC_OK: c_int = 0;
pub const KAC_ERR_NULL: c_int = -1;
pub const KAC_ERR_INVALID: c_int = -2;
pub const KAC_ERR_NUMERICAL: c_int = -3;
pub const KAC_ERR_NOT_CONVERGED: c_int = -4;
pub const KAC_ERR_IO: c_int = -5;
pub const KAC_ERR_BUFFER: c_int = -6;
pub const KAC_ERR_PANIC: c_int = -7;

pub const KAC_SCHEME_PICARD: c_int = 0;
pub const KAC_SCHEME_DIRECT: c_int = 1;

/// Grid geometry.
pub struct KacGrid(GridSpec);

/// Real field on the phase-space grid, row-major with `v` fastest.
pub struct KacField(PhaseField);

pub struct KacSolver(Solver);

/// Solution stored at each step time.
pub struct KacTrajectory(Trajectory);

/// Parameters of a nonlinear run. Fill with `kac_solver_params_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KacSolverParams {
    /// Angular singularity order, in (0, 1).
    pub s: f64,
    /// Cross-section prefactor.
    pub cross_section_c0: f64,
    /// Multiplier growth constant.
    pub c0: f64,
    /// Multiplier regularisation, in (0, 1).
    pub delta: f64,
    /// Sobolev index in `x`.
    pub r: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Size of the initial perturbation.
    pub eps0: f64,
    /// `KAC_SCHEME_PICARD` or `KAC_SCHEME_DIRECT`.
    pub scheme: c_int,
    pub picard_tol: f64,
    pub picard_max_iter: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

enum Failure {
    Null(&'static str),
    Buffer(String),
    Kac(KacError),
}

impl From<KacError> for Failure {
    fn from(e: KacError) -> Self {
        Failure::Kac(e)
    }
}

fn code_of(e: &KacError) -> c_int {
    match e {
        KacError::InvalidGrid(_)
        | KacError::GridMismatch(_)
        | KacError::InvalidParameter(_)
        | KacError::NegativeTime(_)
        | KacError::Config(_) => KAC_ERR_INVALID,
        KacError::NonFinite { .. }
        | KacError::Unstable { .. }
        | KacError::NanAtStep { .. }
        | KacError::QuadratureNotConverged { .. }
        | KacError::InsufficientData(_) => KAC_ERR_NUMERICAL,
        KacError::PicardNotConverged { .. } => KAC_ERR_NOT_CONVERGED,
        KacError::Format(_) | KacError::Io(_) | KacError::Json(_) => KAC_ERR_IO,
    }
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, records any failure and maps it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            KAC_OK
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            KAC_ERR_NULL
        }
        Ok(Err(Failure::Buffer(msg))) => {
            set_error(msg);
            KAC_ERR_BUFFER
        }
        Ok(Err(Failure::Kac(e))) => {
            set_error(e.to_string());
            code_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            KAC_ERR_PANIC
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| KacError::InvalidParameter("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn kac_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Grid with `nx * nv` points on `[-lx, lx) x [-lv, lv)`. Sizes must be
/// powers of two of at least 8 and `lv` at least 8.
///
/// # Safety
/// `out` must be null or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn kac_grid_new(nx: usize, nv: usize, lx: f64, lv: f64, out: *mut *mut KacGrid) -> c_int {
    guard(|| put(out, KacGrid(GridSpec::new(nx, nv, lx, lv)?)))
}

/// # Safety
/// `grid` must be null or a handle from `kac_grid_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kac_grid_free(grid: *mut KacGrid) {
    free(grid)
}

/// Number of grid points `nx * nv`.
///
/// # Safety
/// `grid` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn kac_grid_len(grid: *const KacGrid, out: *mut usize) -> c_int {
    guard(|| {
        let g = deref(grid, "grid")?;
        *out.as_mut().ok_or(Failure::Null("out"))? = g.0.len();
        Ok(())
    })
}

/// Field copied from `len` values at `data`, with `len == nx * nv`.
///
/// # Safety
/// `grid` must be a live handle, `data` must point to `len` readable
/// doubles and `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn kac_field_new(grid: *const KacGrid, data: *const f64, len: usize, out: *mut *mut KacField) -> c_int {
    guard(|| {
        let g = deref(grid, "grid")?;
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        put(out, KacField(PhaseField::new(g.0, values)?))
    })
}

/// Zero field on `grid`.
///
/// # Safety
/// `grid` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn kac_field_zeros(grid: *const KacGrid, out: *mut *mut KacField) -> c_int {
    guard(|| {
        let g = deref(grid, "grid")?;
        put(out, KacField(PhaseField::zeros(g.0)))
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kac_field_free(field: *mut KacField) {
    free(field)
}

/// Number of values held by `field`.
///
/// # Safety
/// `field` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn kac_field_len(field: *const KacField, out: *mut usize) -> c_int {
    guard(|| {
        let f = deref(field, "field")?;
        *out.as_mut().ok_or(Failure::Null("out"))? = f.0.data.len();
        Ok(())
    })
}

/// Copies the field values into `out`, which must hold at least the field length.
///
/// # Safety
/// `field` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn kac_field_copy_data(field: *const KacField, out: *mut f64, len: usize) -> c_int {
    guard(|| {
        let f = deref(field, "field")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let n = f.0.data.len();
        if len < n {
            return Err(Failure::Buffer(format!("buffer holds {len} values, field has {n}")));
        }
        std::ptr::copy_nonoverlapping(f.0.data.as_ptr(), out, n);
        Ok(())
    })
}

/// Writes `field` at time `t` to a snapshot file.
///
/// # Safety
/// `field` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kac_field_save(field: *const KacField, path: *const c_char, t: f64) -> c_int {
    guard(|| {
        let f = deref(field, "field")?;
        Ok(save_snapshot(path_arg(path)?, &f.0, t)?)
    })
}

/// Reads a snapshot file. `out_t` may be null.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` valid for a pointer write
/// and `out_t` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn kac_field_load(path: *const c_char, out: *mut *mut KacField, out_t: *mut f64) -> c_int {
    guard(|| {
        let (field, t) = load_snapshot(path_arg(path)?)?;
        put(out, KacField(field))?;
        if let Some(slot) = out_t.as_mut() {
            *slot = t;
        }
        Ok(())
    })
}

/// Exact solution at time `t` of the linear free-transport plus fractional
/// velocity diffusion model of order `s`, started from `field`.
///
/// # Safety
/// `field` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn kac_kolmogorov(field: *const KacField, s: f64, t: f64, out: *mut *mut KacField) -> c_int {
    guard(|| {
        let f = deref(field, "field")?;
        put(out, KacField(solve_kolmogorov_exact(&f.0, s, t)?))
    })
}

/// `H^r_x(L^2_v)` norm of `field`.
///
/// # Safety
/// `field` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn kac_norm_hr(field: *const KacField, r: f64, out: *mut f64) -> c_int {
    guard(|| {
        let f = deref(field, "field")?;
        let slot = out.as_mut().ok_or(Failure::Null("out"))?;
        *slot = norm_hr_l2(&f.0, r)?;
        Ok(())
    })
}

/// Default run parameters.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn kac_solver_params_default(out: *mut KacSolverParams) -> c_int {
    guard(|| {
        let slot = out.as_mut().ok_or(Failure::Null("out"))?;
        let cfg = SolverConfig::new(CrossSection::new(0.25, 1.0)?, MultiplierParams::new(0.25, 0.5, 0.1, 1.0)?);
        *slot = KacSolverParams {
            s: cfg.params.s,
            cross_section_c0: cfg.cs.c0,
            c0: cfg.params.c0,
            delta: cfg.params.delta,
            r: cfg.params.r,
            dt: cfg.dt,
            t_end: cfg.t_end,
            eps0: cfg.eps0,
            scheme: KAC_SCHEME_PICARD,
            picard_tol: cfg.picard_tol,
            picard_max_iter: cfg.picard_max_iter as u32,
        };
        Ok(())
    })
}

fn solver_config(p: &KacSolverParams) -> Result<SolverConfig, KacError> {
    let scheme = match p.scheme {
        KAC_SCHEME_PICARD => Scheme::Picard,
        KAC_SCHEME_DIRECT => Scheme::Direct,
        other => return Err(KacError::InvalidParameter(format!("unknown scheme {other}"))),
    };
    let mut cfg = SolverConfig::new(CrossSection::new(p.s, p.cross_section_c0)?, MultiplierParams::new(p.s, p.c0, p.delta, p.r)?);
    cfg.dt = p.dt;
    cfg.t_end = p.t_end;
    cfg.eps0 = p.eps0;
    cfg.scheme = scheme;
    cfg.picard_tol = p.picard_tol;
    cfg.picard_max_iter = p.picard_max_iter as usize;
    cfg.validate()?;
    Ok(cfg)
}

/// Solver for the nonlinear perturbation equation on `grid`.
///
/// # Safety
/// `grid` and `params` must be valid and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn kac_solver_new(grid: *const KacGrid, params: *const KacSolverParams, out: *mut *mut KacSolver) -> c_int {
    guard(|| {
        let g = deref(grid, "grid")?;
        let p = deref(params, "params")?;
        put(out, KacSolver(Solver::new(g.0, solver_config(p)?)?))
    })
}

/// # Safety
/// `solver` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kac_solver_free(solver: *mut KacSolver) {
    free(solver)
}

/// Runs from the initial profile `g0`, rescaled to size `eps0`.
///
/// # Safety
/// `solver` and `g0` must be live handles and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn kac_solver_run(solver: *const KacSolver, g0: *const KacField, out: *mut *mut KacTrajectory) -> c_int {
    guard(|| {
        let s = deref(solver, "solver")?;
        let g = deref(g0, "g0")?;
        put(out, KacTrajectory(s.0.run(&g.0)?))
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kac_trajectory_free(traj: *mut KacTrajectory) {
    free(traj)
}

/// Number of stored times, including `t = 0`.
///
/// # Safety
/// `traj` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn kac_trajectory_len(traj: *const KacTrajectory, out: *mut usize) -> c_int {
    guard(|| {
        let tr = deref(traj, "trajectory")?;
        *out.as_mut().ok_or(Failure::Null("out"))? = tr.0.times.len();
        Ok(())
    })
}

fn index_check(tr: &Trajectory, i: usize) -> Result<(), Failure> {
    if i >= tr.times.len() {
        return Err(KacError::InvalidParameter(format!("index {i} out of range for {} times", tr.times.len())).into());
    }
    Ok(())
}

/// Time of entry `i`.
///
/// # Safety
/// `traj` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn kac_trajectory_time(traj: *const KacTrajectory, i: usize, out: *mut f64) -> c_int {
    guard(|| {
        let tr = deref(traj, "trajectory")?;
        index_check(&tr.0, i)?;
        *out.as_mut().ok_or(Failure::Null("out"))? = tr.0.times[i];
        Ok(())
    })
}

/// Copy of the field at entry `i` as a new handle.
///
/// # Safety
/// `traj` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn kac_trajectory_field(traj: *const KacTrajectory, i: usize, out: *mut *mut KacField) -> c_int {
    guard(|| {
        let tr = deref(traj, "trajectory")?;
        index_check(&tr.0, i)?;
        put(out, KacField(tr.0.fields[i].clone()))
    })
}
