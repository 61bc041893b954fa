//! C ABI over the placement and cost engine, discovered by cbindgen.
//!
//! Callers own the opaque handles they receive and must release them with
//! the matching `_free` function. Every fallible call reports an [`FcStatus`].

use fedcache::placement::{self, PlacementError, PlacementProblem, PlacementResult};
use fedcache::model::{CacheMatrix, ContentCatalog, CostParams};
use std::ffi::CStr;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    FcOk = 0,
    FcNullArgument = 1,
    FcInvalidArgument = 2,
    FcParseError = 3,
    FcIoError = 4,
    FcTooLarge = 5,
    FcInternal = 6,
}

/// Placement solver selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcSolver {
    FcSolverGreedy = 0,
    FcSolverOracle = 1,
}

/// Opaque placement instance handle.
pub struct FcInstance {
    problem: PlacementProblem,
}

/// Opaque solved-placement handle.
pub struct FcPlacement {
    result: PlacementResult,
}

fn status_of(err: &PlacementError) -> FcStatus {
    match err {
        PlacementError::InstanceTooLarge { .. } => FcStatus::FcTooLarge,
        PlacementError::Parse { .. } => FcStatus::FcParseError,
        PlacementError::Io(_) => FcStatus::FcIoError,
        PlacementError::Invalid(_) | PlacementError::Model(_) => FcStatus::FcInvalidArgument,
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn fc_status_message(status: FcStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        FcStatus::FcOk => b"ok\0",
        FcStatus::FcNullArgument => b"null argument\0",
        FcStatus::FcInvalidArgument => b"invalid argument\0",
        FcStatus::FcParseError => b"instance parse error\0",
        FcStatus::FcIoError => b"i/o error\0",
        FcStatus::FcTooLarge => b"instance too large for the oracle solver\0",
        FcStatus::FcInternal => b"internal error\0",
    };
    msg.as_ptr() as *const c_char
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Build a placement instance from raw arrays.
///
/// `sizes` holds `file_count` entries, `capacities` holds `sbs_count`, and
/// `lambda` is the row-major `sbs_count * file_count` expected-density table.
///
/// # Safety
/// All three arrays must be valid for the stated lengths and `out` must be a
/// valid pointer; the returned handle must be released with
/// [`fc_instance_free`].
#[no_mangle]
pub unsafe extern "C" fn fc_instance_new(
    sbs_count: u32,
    file_count: u32,
    cache_cost: f64,
    sbs_retrieval: f64,
    mbs_base: f64,
    mbs_link: f64,
    sizes: *const f64,
    capacities: *const f64,
    lambda: *const f64,
    out: *mut *mut FcInstance,
) -> FcStatus {
    if sizes.is_null() || capacities.is_null() || lambda.is_null() || out.is_null() {
        return FcStatus::FcNullArgument;
    }
    let k = sbs_count as usize;
    let m = file_count as usize;
    let sizes = std::slice::from_raw_parts(sizes, m).to_vec();
    let caps = std::slice::from_raw_parts(capacities, k).to_vec();
    let flat = std::slice::from_raw_parts(lambda, k * m);
    let rows: Vec<Vec<f64>> = (0..k).map(|i| flat[i * m..(i + 1) * m].to_vec()).collect();

    let built = catch_unwind(AssertUnwindSafe(|| -> Result<PlacementProblem, PlacementError> {
        let catalog = ContentCatalog::new(sizes)?;
        let params = CostParams::new(cache_cost, sbs_retrieval, mbs_base, mbs_link)?;
        PlacementProblem::new(catalog, params, caps, rows)
    }));
    match built {
        Ok(Ok(problem)) => {
            *out = Box::into_raw(Box::new(FcInstance { problem }));
            FcStatus::FcOk
        }
        Ok(Err(e)) => status_of(&e),
        Err(_) => FcStatus::FcInternal,
    }
}

/// Parse a plain-text instance file (the `placement --instance` format).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer; the
/// returned handle must be released with [`fc_instance_free`].
#[no_mangle]
pub unsafe extern "C" fn fc_instance_from_file(path: *const c_char, out: *mut *mut FcInstance) -> FcStatus {
    if path.is_null() || out.is_null() {
        return FcStatus::FcNullArgument;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        return FcStatus::FcInvalidArgument;
    };
    match catch_unwind(|| placement::read_instance(Path::new(path))) {
        Ok(Ok(problem)) => {
            *out = Box::into_raw(Box::new(FcInstance { problem }));
            FcStatus::FcOk
        }
        Ok(Err(e)) => status_of(&e),
        Err(_) => FcStatus::FcInternal,
    }
}

/// Release an instance handle. Null is accepted.
///
/// # Safety
/// `instance` must have come from `fc_instance_new` or
/// `fc_instance_from_file` and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn fc_instance_free(instance: *mut FcInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// Number of SBS rows of an instance; 0 for null.
///
/// # Safety
/// `instance` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_instance_sbs_count(instance: *const FcInstance) -> u32 {
    instance.as_ref().map_or(0, |i| i.problem.sbs_count() as u32)
}

/// Number of catalog files of an instance; 0 for null.
///
/// # Safety
/// `instance` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_instance_file_count(instance: *const FcInstance) -> u32 {
    instance.as_ref().map_or(0, |i| i.problem.file_count() as u32)
}

/// Solve an instance and hand back a placement handle.
///
/// # Safety
/// `instance` must be a live handle and `out` a valid pointer; the returned
/// handle must be released with [`fc_placement_free`].
#[no_mangle]
pub unsafe extern "C" fn fc_solve(
    instance: *const FcInstance,
    solver: FcSolver,
    out: *mut *mut FcPlacement,
) -> FcStatus {
    let Some(instance) = instance.as_ref() else {
        return FcStatus::FcNullArgument;
    };
    if out.is_null() {
        return FcStatus::FcNullArgument;
    }
    let solved = catch_unwind(AssertUnwindSafe(|| match solver {
        FcSolver::FcSolverGreedy => placement::greedy_place(&instance.problem),
        FcSolver::FcSolverOracle => placement::exhaustive_place(&instance.problem),
    }));
    match solved {
        Ok(Ok(result)) => {
            *out = Box::into_raw(Box::new(FcPlacement { result }));
            FcStatus::FcOk
        }
        Ok(Err(e)) => status_of(&e),
        Err(_) => FcStatus::FcInternal,
    }
}

/// Release a placement handle. Null is accepted.
///
/// # Safety
/// `placement` must have come from `fc_solve` and not have been freed
/// already.
#[no_mangle]
pub unsafe extern "C" fn fc_placement_free(placement: *mut FcPlacement) {
    if !placement.is_null() {
        drop(Box::from_raw(placement));
    }
}

/// Objective value of a solved placement; NaN for null.
///
/// # Safety
/// `placement` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_placement_cost(placement: *const FcPlacement) -> f64 {
    placement.as_ref().map_or(f64::NAN, |p| p.result.cost)
}

/// Accepted greedy iterations of a solved placement; 0 for null.
///
/// # Safety
/// `placement` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_placement_iterations(placement: *const FcPlacement) -> u32 {
    placement.as_ref().map_or(0, |p| p.result.iterations as u32)
}

/// Whether file `file` is cached at SBS `sbs`: 1 yes, 0 no, -1 on a null
/// handle or an out-of-range index.
///
/// # Safety
/// `placement` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fc_placement_cached(placement: *const FcPlacement, sbs: u32, file: u32) -> i32 {
    let Some(p) = placement.as_ref() else {
        return -1;
    };
    let cache = &p.result.cache;
    if sbs as usize >= cache.sbs_count() || file as usize >= cache.file_count() {
        return -1;
    }
    cache.get(sbs as usize, file as usize) as i32
}

/// Evaluate the network cost of an arbitrary binary placement given as a
/// row-major 0/1 array of `sbs_count * file_count` entries.
///
/// # Safety
/// `entries` must hold `sbs_count * file_count` bytes and `out` must be a
/// valid pointer; `instance` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_network_cost(
    instance: *const FcInstance,
    entries: *const u8,
    out: *mut f64,
) -> FcStatus {
    let Some(instance) = instance.as_ref() else {
        return FcStatus::FcNullArgument;
    };
    if entries.is_null() || out.is_null() {
        return FcStatus::FcNullArgument;
    }
    let k = instance.problem.sbs_count();
    let m = instance.problem.file_count();
    let bits = std::slice::from_raw_parts(entries, k * m);
    let built = catch_unwind(AssertUnwindSafe(|| -> Result<f64, PlacementError> {
        let mut cache = CacheMatrix::empty(instance.problem.capacities.clone(), m)?;
        for kk in 0..k {
            for f in 0..m {
                if bits[kk * m + f] != 0 {
                    cache.set(kk, f, &instance.problem.catalog)?;
                }
            }
        }
        Ok(placement::network_cost(&cache, &instance.problem))
    }));
    match built {
        Ok(Ok(cost)) => {
            *out = cost;
            FcStatus::FcOk
        }
        Ok(Err(e)) => status_of(&e),
        Err(_) => FcStatus::FcInternal,
    }
}
