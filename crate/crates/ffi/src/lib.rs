//! C ABI over `hilbert-ustat`.
//!
//! Every fallible call returns a [`HusStatus`]; on failure the message is kept per thread
//! and read back with [`hus_last_error`]. Handles are opaque and released with their
//! matching `*_free` function. Strings returned by the library are freed with
//! [`hus_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path as FsPath;
use std::ptr;

use hilbert_ustat::bounds::{deviation_bound, hypothesis_check, rate_plan, BoundInputs, Theorem};
use hilbert_ustat::experiments::{
    run_bound_check, run_fclt, run_slln, ExperimentConfig, KernelSpec, ModelSpec, SllnMode,
};
use hilbert_ustat::kernels::KernelTable;
use hilbert_ustat::processes::simulate;
use hilbert_ustat::rng::stream;
use hilbert_ustat::ustat::{u_stat_prefixes, UStatPath};
use hilbert_ustat::{Error, Kernel, ProcessModel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    HypothesisFailed = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Stationary process.
pub struct HusModel(ProcessModel);

/// Kernel `h: S x S -> R^d`.
pub struct HusKernel(Kernel);

/// Prefix path `U_0, ..., U_n`.
pub struct HusPath(UStatPath);

/// Exponents that a theorem does not use are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct HusRatePlan {
    pub gamma: f64,
    pub gamma_prime: f64,
    pub a: f64,
    pub b: f64,
    pub normalization: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct HusBoundInputs {
    pub r: f64,
    pub q: usize,
    pub n: usize,
    pub x: f64,
    /// Truncation level; any non-finite value means no truncation.
    pub level: f64,
    pub m_le: f64,
    pub m_gt: f64,
    pub sup_lag_mean: f64,
    pub beta_q: f64,
    pub c_r: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct HusBoundReport {
    pub total: f64,
    pub moment: f64,
    pub truncation: f64,
    pub lag_mean: f64,
    pub mixing: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct HusHypothesis {
    /// 1 when the mixing condition holds.
    pub pass: i32,
    pub margin: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HusStatus {
    match e {
        Error::Config(_) => HusStatus::Config,
        Error::HypothesisFailed(_) => HusStatus::HypothesisFailed,
        Error::Io(_) => HusStatus::Io,
        _ => HusStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (HusStatus, String)>) -> HusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HusStatus::Ok
        }
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            HusStatus::Panic
        }
    }
}

fn lift<T>(r: hilbert_ustat::Result<T>) -> Result<T, (HusStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (HusStatus, String) {
    (HusStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (HusStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (HusStatus::InvalidArgument, "string is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), (HusStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated, NUL-terminated).
/// Returns the buffer size needed for the whole message, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hus_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn hus_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Two-state chain with flip probabilities `a` (0 to 1) and `b` (1 to 0).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_model_two_state(a: f64, b: f64, out: *mut *mut HusModel) -> HusStatus {
    guard(|| {
        let m = lift(ModelSpec::TwoState { a, b }.build())?;
        put(out, HusModel(m))
    })
}

/// Model from its JSON description, e.g. `{"kind":"ar1","rho":0.5,"noise_variance":1}`.
///
/// # Safety
/// `json` must be a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_model_from_json(json: *const c_char, out: *mut *mut HusModel) -> HusStatus {
    guard(|| {
        let spec: ModelSpec = serde_json::from_str(str_arg(json)?).map_err(|e| (HusStatus::Config, e.to_string()))?;
        let m = lift(spec.build())?;
        put(out, HusModel(m))
    })
}

/// # Safety
/// `m` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hus_model_free(m: *mut HusModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// `beta(k)`: exact for finite models, the closed-form bound for AR(1).
///
/// # Safety
/// `m` must be a live handle, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_model_beta(m: *const HusModel, k: usize, out: *mut f64) -> HusStatus {
    guard(|| {
        if m.is_null() || out.is_null() {
            return Err(null());
        }
        let profile = lift((*m).0.mixing_profile(k))?;
        *out = profile.beta_at(k);
        Ok(())
    })
}

/// Kernel on `states` labels from a table laid out as `values[(i * states + j) * dim + c]`.
///
/// # Safety
/// `values` must hold `states * states * dim` doubles, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_kernel_table(
    states: usize,
    dim: usize,
    values: *const f64,
    out: *mut *mut HusKernel,
) -> HusStatus {
    guard(|| {
        if values.is_null() {
            return Err(null());
        }
        let len = states
            .checked_mul(states)
            .and_then(|s| s.checked_mul(dim))
            .ok_or((HusStatus::InvalidArgument, "table size overflows".to_string()))?;
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let table = lift(KernelTable::new(states, dim, v))?;
        put(out, HusKernel(table.into_kernel()))
    })
}

/// Kernel from its JSON description, e.g. `{"name":"spatial_sign","dim":3}`.
///
/// # Safety
/// `json` must be a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_kernel_from_json(json: *const c_char, out: *mut *mut HusKernel) -> HusStatus {
    guard(|| {
        let spec: KernelSpec = serde_json::from_str(str_arg(json)?).map_err(|e| (HusStatus::Config, e.to_string()))?;
        let k = lift(spec.build())?;
        put(out, HusKernel(k))
    })
}

/// Output dimension; 0 for a null handle.
///
/// # Safety
/// `k` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hus_kernel_dim(k: *const HusKernel) -> usize {
    if k.is_null() {
        0
    } else {
        (*k).0.dim()
    }
}

/// # Safety
/// `k` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hus_kernel_free(k: *mut HusKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Simulates `X_1..X_n` from `model` with `seed` and returns the prefix U-statistics.
///
/// # Safety
/// Handles must be live, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_ustat_simulate(
    model: *const HusModel,
    kernel: *const HusKernel,
    n: usize,
    seed: u64,
    out: *mut *mut HusPath,
) -> HusStatus {
    guard(|| {
        if model.is_null() || kernel.is_null() {
            return Err(null());
        }
        let xs = lift(simulate(&(*model).0, n, &mut stream(seed, 0)))?;
        let path = lift(u_stat_prefixes(&(*kernel).0, &xs))?;
        put(out, HusPath(path))
    })
}

/// Sample size `n` of the path; 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hus_path_len(p: *const HusPath) -> usize {
    if p.is_null() {
        0
    } else {
        (*p).0.n()
    }
}

/// Copies `U_k` (0 <= k <= n) into `buf`, which must hold `len >= dim` doubles.
///
/// # Safety
/// `p` must be a live handle, `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hus_path_value(p: *const HusPath, k: usize, buf: *mut f64, len: usize) -> HusStatus {
    guard(|| {
        if p.is_null() || buf.is_null() {
            return Err(null());
        }
        let path = &(*p).0;
        if k > path.n() {
            return Err((HusStatus::OutOfRange, format!("k = {k} exceeds n = {}", path.n())));
        }
        if len < path.dim() {
            return Err((
                HusStatus::OutOfRange,
                format!("buffer holds {len} values, need {}", path.dim()),
            ));
        }
        let v = path.get(k);
        ptr::copy_nonoverlapping(v.coords().as_ptr(), buf, path.dim());
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hus_path_free(p: *mut HusPath) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Exponent schedule of `theorem` ("T2".."T5" or "FCLT").
///
/// # Safety
/// `theorem` must be a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_rate_plan(
    theorem: *const c_char,
    p: f64,
    delta: f64,
    eta: f64,
    out: *mut HusRatePlan,
) -> HusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let t: Theorem = lift(str_arg(theorem)?.parse())?;
        let plan = lift(rate_plan(t, p, delta, eta))?;
        *out = HusRatePlan {
            gamma: plan.gamma.unwrap_or(f64::NAN),
            gamma_prime: plan.gamma_prime.unwrap_or(f64::NAN),
            a: plan.a.unwrap_or(f64::NAN),
            b: plan.b.unwrap_or(f64::NAN),
            normalization: plan.normalization,
        };
        Ok(())
    })
}

/// Four-term deviation bound.
///
/// # Safety
/// `inputs` must be readable, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_deviation_bound(inputs: *const HusBoundInputs, out: *mut HusBoundReport) -> HusStatus {
    guard(|| {
        if inputs.is_null() || out.is_null() {
            return Err(null());
        }
        let i = *inputs;
        let rep = lift(deviation_bound(&BoundInputs {
            r: i.r,
            q: i.q,
            n: i.n,
            x: i.x,
            level: i.level.is_finite().then_some(i.level),
            m_le: i.m_le,
            m_gt: i.m_gt,
            sup_lag_mean: i.sup_lag_mean,
            beta_q: i.beta_q,
            c_r: i.c_r,
        }))?;
        let [moment, truncation, lag_mean, mixing] = rep.terms;
        *out = HusBoundReport {
            total: rep.total,
            moment,
            truncation,
            lag_mean,
            mixing,
        };
        Ok(())
    })
}

/// Checks the mixing condition of `theorem` against the beta tail of `model`.
/// A failed condition is reported through `out->pass`, not the status.
///
/// # Safety
/// `model` must be a live handle, `theorem` a NUL-terminated string, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_hypothesis_check(
    model: *const HusModel,
    theorem: *const c_char,
    p: f64,
    delta: f64,
    eta: f64,
    out: *mut HusHypothesis,
) -> HusStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(null());
        }
        let t: Theorem = lift(str_arg(theorem)?.parse())?;
        let tail = lift((*model).0.tail_model())?;
        let o = lift(hypothesis_check(&tail, t, p, delta, eta))?;
        *out = HusHypothesis {
            pass: o.pass as i32,
            margin: o.margin,
        };
        Ok(())
    })
}

/// Runs `experiment` ("fclt", "slln", "slln-degenerate" or "bound") from a TOML manifest.
/// Returns the JSON report in `*out_json`; when `out_dir` is non-null the CSV and JSON
/// files are written there as well.
///
/// # Safety
/// String arguments must be NUL-terminated (`out_dir` may be null), `out_json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hus_run_experiment(
    manifest_toml: *const c_char,
    experiment: *const c_char,
    out_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> HusStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null());
        }
        let cfg = lift(ExperimentConfig::from_toml_str(str_arg(manifest_toml)?))?;
        let rep = match str_arg(experiment)? {
            "fclt" => lift(run_fclt(&cfg))?,
            "slln" => lift(run_slln(&cfg, SllnMode::Nondegenerate))?,
            "slln-degenerate" => lift(run_slln(&cfg, SllnMode::Degenerate))?,
            "bound" => lift(run_bound_check(&cfg))?,
            other => return Err((HusStatus::InvalidArgument, format!("unknown experiment `{other}`"))),
        };
        if !out_dir.is_null() {
            lift(rep.write(FsPath::new(str_arg(out_dir)?)))?;
        }
        let js = lift(rep.json_string())?;
        *out_json = CString::new(js).map_err(|e| (HusStatus::Io, e.to_string()))?.into_raw();
        Ok(())
    })
}
