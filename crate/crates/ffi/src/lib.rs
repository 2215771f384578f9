//! C interface to the localparts library.
//!
//! Every function returns a [`LocalpartsStatus`]; results go through out
//! pointers. After a failure, [`localparts_last_error`] describes it. Behaviors
//! cross the boundary as opaque [`LocalpartsBehavior`] handles that must be
//! released with [`localparts_behavior_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use libc::{c_char, c_double, size_t};
use localparts::inequality::{local_bound, mixture_deviation, quantum_chain_optimum, ChainSpec, MixtureSpec};
use localparts::quantum::{born_behavior, make_ghz3, make_singlet, Behavior};
use localparts::signaling::{
    local_polytope_member, localparts_feasible, signaling_distance, LocalPartsOutcome, PolytopeMembership,
};
use localparts::spacetime::{
    before_before, equivalent_vbb_with_c, finite_speed_cut, Event, Metric, TimingScenario, LIGHTLIKE_TOLERANCE,
};
use localparts::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalpartsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    TooLarge = 4,
    Unsupported = 5,
    NoPointD = 6,
    Numerical = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalpartsState {
    Singlet = 0,
    Ghz3 = 1,
}

/// Opaque behavior handle.
pub struct LocalpartsBehavior {
    inner: Behavior,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> LocalpartsStatus {
    match e {
        Error::DimensionMismatch(_) | Error::IndexOutOfRange(_) | Error::InvalidSubset(_) => {
            LocalpartsStatus::DimensionMismatch
        }
        Error::TooLarge(_) => LocalpartsStatus::TooLarge,
        Error::Unsupported(_) => LocalpartsStatus::Unsupported,
        Error::NoPointD => LocalpartsStatus::NoPointD,
        Error::Lp(_) => LocalpartsStatus::Numerical,
        _ => LocalpartsStatus::InvalidArgument,
    }
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (LocalpartsStatus, String)>) -> LocalpartsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LocalpartsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LocalpartsStatus::Panic
        }
    }
}

fn lib<T>(r: localparts::Result<T>) -> Result<T, (LocalpartsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (LocalpartsStatus, String) {
    (LocalpartsStatus::NullPointer, "null pointer argument".into())
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn localparts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn localparts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Recession speed c²/v equivalent to an influence at speed `v`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_equivalent_vbb(v: c_double, c: c_double, out: *mut c_double) -> LocalpartsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        *out = lib(equivalent_vbb_with_c(v, c))?;
        Ok(())
    })
}

/// Whether each criterion switches coordination off for a pair at distance
/// `l`, arrival difference `dt`, recession speed `v_bb` and influence speed `v`.
///
/// # Safety
/// Both out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_timing(
    l: c_double,
    dt: c_double,
    v_bb: c_double,
    v: c_double,
    c: c_double,
    finite_speed_off: *mut bool,
    before_before_off: *mut bool,
) -> LocalpartsStatus {
    guard(|| {
        let fs = finite_speed_off.as_mut().ok_or_else(null)?;
        let bb = before_before_off.as_mut().ok_or_else(null)?;
        let s = lib(TimingScenario::with_c(l, dt, v_bb, v, c))?;
        *fs = finite_speed_cut(&s);
        *bb = before_before(&s);
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_chain_local_bound(n: size_t, out: *mut c_double) -> LocalpartsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        *out = lib(ChainSpec::new(n).and_then(|s| local_bound(&s)))?;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_chain_quantum_optimum(n: size_t, out: *mut c_double) -> LocalpartsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        *out = lib(quantum_chain_optimum(n))?.value;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_mixture_deviation(p: c_double, n: size_t, out: *mut c_double) -> LocalpartsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        *out = lib(MixtureSpec::new(p).and_then(|m| mixture_deviation(m, n)))?;
        Ok(())
    })
}

/// Point D for events given as {t, x, y}, with light speed `c`. Returns
/// `NoPointD` when no such point exists.
///
/// # Safety
/// `a`, `b`, `c_ev` must point to 3 readable doubles; `d_out` to 3 writable
/// doubles; `advantage` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_point_d(
    a: *const c_double,
    b: *const c_double,
    c_ev: *const c_double,
    c: c_double,
    d_out: *mut c_double,
    advantage: *mut c_double,
) -> LocalpartsStatus {
    guard(|| {
        if a.is_null() || b.is_null() || c_ev.is_null() || d_out.is_null() {
            return Err(null());
        }
        let adv = advantage.as_mut().ok_or_else(null)?;
        let event = |p: *const c_double| {
            let v = slice::from_raw_parts(p, 3);
            lib(Event::new(v[0], v[1], v[2]))
        };
        let metric = Metric {
            c,
            tolerance: LIGHTLIKE_TOLERANCE,
        };
        if !(c > 0.0 && c.is_finite()) {
            return Err((
                LocalpartsStatus::InvalidArgument,
                format!("light speed {c} must be positive"),
            ));
        }
        let d = metric
            .find_point_d(&event(a)?, &event(b)?, &event(c_ev)?)
            .ok_or((LocalpartsStatus::NoPointD, Error::NoPointD.to_string()))?;
        let out = slice::from_raw_parts_mut(d_out, 3);
        out.copy_from_slice(&[d.event.t, d.event.x, d.event.y]);
        *adv = d.advantage;
        Ok(())
    })
}

/// Born-rule behavior of a built-in state. `angles` holds every party's
/// angles back to back; `counts[i]` is party i's number of settings.
///
/// # Safety
/// `counts` must point to `parties` readable values, `angles` to their sum,
/// and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_behavior_born(
    state: LocalpartsState,
    angles: *const c_double,
    counts: *const size_t,
    parties: size_t,
    out: *mut *mut LocalpartsBehavior,
) -> LocalpartsStatus {
    guard(|| {
        if angles.is_null() || counts.is_null() || out.is_null() {
            return Err(null());
        }
        let counts = slice::from_raw_parts(counts, parties);
        let total: usize = counts.iter().sum();
        let flat = slice::from_raw_parts(angles, total);
        let mut lists = Vec::with_capacity(parties);
        let mut at = 0;
        for &k in counts {
            lists.push(flat[at..at + k].to_vec());
            at += k;
        }
        let s = match state {
            LocalpartsState::Singlet => make_singlet(),
            LocalpartsState::Ghz3 => make_ghz3(),
        };
        let inner = lib(born_behavior(&s, &lists))?;
        *out = Box::into_raw(Box::new(LocalpartsBehavior { inner }));
        Ok(())
    })
}

/// Behavior from its JSON form `{"parties", "settings_per_party", "table"}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_behavior_from_json(
    json: *const c_char,
    out: *mut *mut LocalpartsBehavior,
) -> LocalpartsStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (LocalpartsStatus::InvalidArgument, e.to_string()))?;
        let inner: Behavior =
            serde_json::from_str(text).map_err(|e| (LocalpartsStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(LocalpartsBehavior { inner }));
        Ok(())
    })
}

/// JSON form of a behavior; free the result with
/// [`localparts_string_free`].
///
/// # Safety
/// `b` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_behavior_to_json(
    b: *const LocalpartsBehavior,
    out: *mut *mut c_char,
) -> LocalpartsStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let text = serde_json::to_string(&b.inner).map_err(|e| (LocalpartsStatus::Numerical, e.to_string()))?;
        *out = CString::new(text)
            .map_err(|e| (LocalpartsStatus::Numerical, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `b` must be NULL or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn localparts_behavior_free(b: *mut LocalpartsBehavior) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// # Safety
/// `b` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_behavior_parties(
    b: *const LocalpartsBehavior,
    out: *mut size_t,
) -> LocalpartsStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(null)?;
        *out.as_mut().ok_or_else(null)? = b.inner.parties();
        Ok(())
    })
}

/// Correlator ⟨∏ outcomes⟩ at one setting per party.
///
/// # Safety
/// `settings` must point to one value per party; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_behavior_correlator(
    b: *const LocalpartsBehavior,
    settings: *const size_t,
    out: *mut c_double,
) -> LocalpartsStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(null)?;
        if settings.is_null() {
            return Err(null());
        }
        let xs = slice::from_raw_parts(settings, b.inner.parties());
        *out.as_mut().ok_or_else(null)? = lib(b.inner.correlator(xs))?;
        Ok(())
    })
}

/// Largest total-variation shift of the `receivers` marginal caused by the
/// other parties' settings.
///
/// # Safety
/// `receivers` must point to `count` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_signaling_distance(
    b: *const LocalpartsBehavior,
    receivers: *const size_t,
    count: size_t,
    out: *mut c_double,
) -> LocalpartsStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(null)?;
        if receivers.is_null() {
            return Err(null());
        }
        let rs = slice::from_raw_parts(receivers, count);
        *out.as_mut().ok_or_else(null)? = lib(signaling_distance(&b.inner, rs))?;
        Ok(())
    })
}

/// Local-polytope membership of a bipartite behavior. On rejection `margin`
/// receives the separating inequality's violation, otherwise 0.
///
/// # Safety
/// `b` must be a live handle; out pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_is_local(
    b: *const LocalpartsBehavior,
    is_local: *mut bool,
    margin: *mut c_double,
) -> LocalpartsStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(null)?;
        let is_local = is_local.as_mut().ok_or_else(null)?;
        let margin = margin.as_mut().ok_or_else(null)?;
        match lib(local_polytope_member(&b.inner))? {
            PolytopeMembership::Local { .. } => {
                *is_local = true;
                *margin = 0.0;
            }
            PolytopeMembership::Nonlocal { inequality } => {
                *is_local = false;
                *margin = inequality.margin;
            }
        }
        Ok(())
    })
}

/// Local-parts program for a tripartite behavior with the pair (i, j)
/// uncoordinated. `residual_or_margin` receives the witness residual when
/// feasible and the certificate margin otherwise.
///
/// # Safety
/// `b` must be a live handle; out pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn localparts_localparts_feasible(
    b: *const LocalpartsBehavior,
    i: size_t,
    j: size_t,
    feasible: *mut bool,
    residual_or_margin: *mut c_double,
) -> LocalpartsStatus {
    guard(|| {
        let b = b.as_ref().ok_or_else(null)?;
        let feasible = feasible.as_mut().ok_or_else(null)?;
        let value = residual_or_margin.as_mut().ok_or_else(null)?;
        match lib(localparts_feasible(&b.inner, (i, j)))? {
            LocalPartsOutcome::Feasible { residual, .. } => {
                *feasible = true;
                *value = residual;
            }
            LocalPartsOutcome::Infeasible { certificate } => {
                *feasible = false;
                *value = certificate.margin;
            }
        }
        Ok(())
    })
}
