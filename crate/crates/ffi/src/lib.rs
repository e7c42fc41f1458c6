//! C ABI over the `fracwos` solvers.
//!
//! Objects cross the boundary as opaque handles created by `fw_*_new` style
//! constructors and released with the matching `*_free`. Every fallible call
//! returns an [`FwStatus`]; on failure a message is kept per thread and can be
//! read with [`fw_last_error_message`]. Panics are caught at the boundary and
//! reported as [`FwStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use fracwos::assumptions::{self, AssumptionConfig};
use fracwos::eigen::{self, TolerancePolicy, WosInverse};
use fracwos::mlmc::{self, MlmcConfig};
use fracwos::sampling::point_estimate;
use fracwos::{cli, Domain, Error, FieldVector, MeshHierarchy, Point, Problem};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInput = 3,
    Numerical = 4,
    Budget = 5,
    Io = 6,
    Panic = 99,
}

impl From<&Error> for FwStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::BudgetExceeded { .. } => Self::Budget,
            Error::Io(_) => Self::Io,
            Error::MaxStepsExceeded { .. }
            | Error::ZeroReferenceNorm
            | Error::NoSpectralGap
            | Error::ComplexRitzValue { .. }
            | Error::InsufficientSamples { .. }
            | Error::DegenerateDistance(_) => Self::Numerical,
            Error::InvalidArgument(_) | Error::AlphaOutOfRange(_) | Error::LevelMismatch { .. } => {
                Self::InvalidArgument
            }
            _ => Self::InvalidInput,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FwStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FwStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed for `{what}`"));
            FwStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            let status = FwStatus::from(&e);
            set_last_error(e.to_string());
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            FwStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("`{what}` is not UTF-8"))))
}

fn into_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

pub struct FwProblem(Problem);

pub struct FwHierarchy(Arc<MeshHierarchy>);

pub struct FwSolution {
    field: FieldVector,
    total_cost: u64,
    statistical_error: f64,
}

/// Built-in problem `example1`, `example2` or `example3` at stability index
/// `alpha`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `problem` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fw_problem_example(
    name: *const c_char,
    alpha: f64,
    problem: *mut *mut FwProblem,
) -> FwStatus {
    guard(|| {
        let name = text(name, "name")?;
        let slot = out(problem, "problem")?;
        let p = fracwos::problems::by_name(name, alpha)
            .unwrap_or_else(|| Err(Error::InvalidArgument(format!("unknown problem `{name}`"))))?;
        *slot = into_handle(FwProblem(p));
        Ok(())
    })
}

/// Problem with source `f` and exterior data `g` given as expressions in `x`
/// and `y`, on a domain such as `ball(0, 0, 1)` or `box(0, 0, 1, 1)`.
///
/// # Safety
/// String arguments must be NUL-terminated; `problem` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fw_problem_custom(
    alpha: f64,
    domain: *const c_char,
    f: *const c_char,
    g: *const c_char,
    problem: *mut *mut FwProblem,
) -> FwStatus {
    guard(|| {
        let domain: Domain = text(domain, "domain")?.parse()?;
        let f = cli::expression_field(text(f, "f")?)?;
        let g = cli::expression_field(text(g, "g")?)?;
        let slot = out(problem, "problem")?;
        *slot = into_handle(FwProblem(Problem::new("custom", alpha, domain, f, g, None)?));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from a `fw_problem_*` constructor or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fw_problem_free(problem: *mut FwProblem) {
    free_handle(problem)
}

/// Nested meshes on the bounding region of `domain`, levels 1 to `finest`.
///
/// # Safety
/// `domain` must be NUL-terminated; `hierarchy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fw_hierarchy_new(
    domain: *const c_char,
    finest: usize,
    hierarchy: *mut *mut FwHierarchy,
) -> FwStatus {
    guard(|| {
        let domain: Domain = text(domain, "domain")?.parse()?;
        let slot = out(hierarchy, "hierarchy")?;
        *slot = into_handle(FwHierarchy(Arc::new(MeshHierarchy::for_domain(&domain, finest)?)));
        Ok(())
    })
}

/// # Safety
/// `hierarchy` must come from [`fw_hierarchy_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fw_hierarchy_free(hierarchy: *mut FwHierarchy) {
    free_handle(hierarchy)
}

/// Vertex count of mesh `level`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fw_hierarchy_vertex_count(
    hierarchy: *const FwHierarchy,
    level: usize,
    count: *mut usize,
) -> FwStatus {
    guard(|| {
        let h = borrow(hierarchy, "hierarchy")?;
        *out(count, "count")? = h.0.level(level)?.vertex_count();
        Ok(())
    })
}

/// Writes vertex coordinates of mesh `level` as `x0, y0, x1, y1, ...` into
/// `xy`, which must hold `2 * len` doubles with `len` the vertex count.
///
/// # Safety
/// `xy` must point to `2 * len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fw_hierarchy_vertices(
    hierarchy: *const FwHierarchy,
    level: usize,
    xy: *mut f64,
    len: usize,
) -> FwStatus {
    guard(|| {
        let h = borrow(hierarchy, "hierarchy")?;
        let mesh = h.0.level(level)?;
        if xy.is_null() {
            return Err(Failure::Null("xy"));
        }
        if len != mesh.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "buffer holds {len} vertices, mesh has {}",
                mesh.vertex_count()
            ))
            .into());
        }
        let buf = std::slice::from_raw_parts_mut(xy, 2 * len);
        for (chunk, p) in buf.chunks_exact_mut(2).zip(mesh.vertices()) {
            chunk[0] = p.x;
            chunk[1] = p.y;
        }
        Ok(())
    })
}

/// Monte Carlo estimate of the solution at `(x, y)` from `samples` walks.
///
/// # Safety
/// Pointers must be valid; `std_error` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fw_point_estimate(
    problem: *const FwProblem,
    x: f64,
    y: f64,
    samples: u64,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> FwStatus {
    guard(|| {
        let p = borrow(problem, "problem")?;
        let mean = out(mean, "mean")?;
        let est = point_estimate(Point::new(x, y), &p.0, samples, seed)?;
        *mean = est.mean;
        if let Some(se) = std_error.as_mut() {
            *se = est.std_error;
        }
        Ok(())
    })
}

/// Multilevel solve to RMS tolerance `eps` with levels `coarsest..=finest`
/// (the finest level may be lowered adaptively).
///
/// # Safety
/// Pointers must be valid; `solution` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fw_solve(
    hierarchy: *const FwHierarchy,
    problem: *const FwProblem,
    eps: f64,
    coarsest: usize,
    finest: usize,
    seed: u64,
    solution: *mut *mut FwSolution,
) -> FwStatus {
    guard(|| {
        let h = borrow(hierarchy, "hierarchy")?;
        let p = borrow(problem, "problem")?;
        let slot = out(solution, "solution")?;
        let result = mlmc::run(&h.0, &p.0, &MlmcConfig::new(eps, coarsest, finest, seed))?;
        *slot = into_handle(FwSolution {
            field: result.solution,
            total_cost: result.total_cost,
            statistical_error: result.statistical_error,
        });
        Ok(())
    })
}

/// # Safety
/// `solution` must come from [`fw_solve`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fw_solution_free(solution: *mut FwSolution) {
    free_handle(solution)
}

/// Mesh level, vertex count, total cost in walk steps and estimated RMS
/// statistical error of a solution. Any output pointer may be NULL.
///
/// # Safety
/// `solution` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fw_solution_info(
    solution: *const FwSolution,
    level: *mut usize,
    len: *mut usize,
    total_cost: *mut u64,
    statistical_error: *mut f64,
) -> FwStatus {
    guard(|| {
        let s = borrow(solution, "solution")?;
        if let Some(l) = level.as_mut() {
            *l = s.field.level;
        }
        if let Some(n) = len.as_mut() {
            *n = s.field.len();
        }
        if let Some(c) = total_cost.as_mut() {
            *c = s.total_cost;
        }
        if let Some(e) = statistical_error.as_mut() {
            *e = s.statistical_error;
        }
        Ok(())
    })
}

/// Copies the nodal values into `values`, which must hold exactly `len`
/// doubles.
///
/// # Safety
/// `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fw_solution_values(
    solution: *const FwSolution,
    values: *mut f64,
    len: usize,
) -> FwStatus {
    guard(|| {
        let s = borrow(solution, "solution")?;
        if values.is_null() {
            return Err(Failure::Null("values"));
        }
        if len != s.field.len() {
            return Err(Error::InvalidArgument(format!(
                "buffer holds {len} values, solution has {}",
                s.field.len()
            ))
            .into());
        }
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(&s.field.values);
        Ok(())
    })
}

/// Smallest eigenvalue of the fractional Laplacian on the hierarchy's
/// domain by inexact Arnoldi with at most `m` steps. `relaxed` selects the
/// gap-based tolerance schedule instead of a fixed one.
///
/// # Safety
/// Pointers must be valid; `total_cost` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fw_smallest_eigenvalue(
    hierarchy: *const FwHierarchy,
    alpha: f64,
    coarsest: usize,
    tol: f64,
    safety: f64,
    m: usize,
    relaxed: bool,
    seed: u64,
    lambda: *mut f64,
    total_cost: *mut u64,
) -> FwStatus {
    guard(|| {
        let h = borrow(hierarchy, "hierarchy")?;
        let lambda = out(lambda, "lambda")?;
        let mut op = WosInverse::new(h.0.clone(), alpha, coarsest, seed)?;
        let policy = if relaxed {
            TolerancePolicy::Relaxed {
                cap: eigen::DEFAULT_RELAX_CAP,
            }
        } else {
            TolerancePolicy::Fixed
        };
        let result = eigen::smallest_eigenvalue(&mut op, tol, safety, m, policy)?;
        *lambda = result.lambda;
        if let Some(c) = total_cost.as_mut() {
            *c = result.total_cost;
        }
        Ok(())
    })
}

unsafe fn report(
    result: assumptions::CheckResult,
    max: *mut f64,
    std_error: *mut f64,
) -> Result<(), Failure> {
    *out(max, "max")? = result.max;
    if let Some(se) = std_error.as_mut() {
        *se = result.std_error;
    }
    Ok(())
}

/// Largest one-step contraction functional over `starts` uniform start
/// pairs in the unit square.
///
/// # Safety
/// `max` must be writable; `std_error` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fw_check_contraction(
    alpha: f64,
    mu: f64,
    samples: u64,
    starts: usize,
    seed: u64,
    max: *mut f64,
    std_error: *mut f64,
) -> FwStatus {
    guard(|| {
        let cfg = AssumptionConfig {
            mu,
            samples,
            starts,
            seed,
            ..AssumptionConfig::new(alpha)
        };
        report(assumptions::check_i2(&cfg)?, max, std_error)
    })
}

/// Largest one-step barrier functional with `Φ = max{A, d^{−t}}` over
/// `starts` uniform start points in the unit square.
///
/// # Safety
/// `max` must be writable; `std_error` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fw_check_barrier(
    alpha: f64,
    t: f64,
    a: f64,
    samples: u64,
    starts: usize,
    seed: u64,
    max: *mut f64,
    std_error: *mut f64,
) -> FwStatus {
    guard(|| {
        let cfg = AssumptionConfig {
            t,
            a,
            samples,
            starts,
            seed,
            ..AssumptionConfig::new(alpha)
        };
        report(assumptions::check_i1(&cfg)?, max, std_error)
    })
}
