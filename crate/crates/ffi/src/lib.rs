//! C ABI over the `hflow` core.
//!
//! Objects are opaque handles created by `*_new`-style calls and released
//! with the matching `*_free`. Every fallible call returns an
//! [`HflowStatus`]; on failure [`hflow_last_error`] holds the message for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hflow::background::{make_flat, BackgroundGeometry};
use hflow::error::Error;
use hflow::flow::{self, FlowState, StepPolicy};
use hflow::lattice::{load_snapshot, save_snapshot, Field, Lattice, Layout, StencilOrder};
use hflow::rough_init::{self, KernelKind, MollifierSpec, RoughKind, RoughSpec};
use hflow::tensor_calc::{self, bilipschitz, MetricField};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidLattice = 3,
    SingularMetric = 4,
    BlowUp = 5,
    SpecInfeasible = 6,
    Io = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HflowRoughKind {
    LoglogSpike = 0,
    FourierMultiscale = 1,
    PointSingularDemo = 2,
    SmoothWarp = 3,
}

/// Periodic lattice.
pub struct HflowLattice(Lattice);

/// SPD metric field on a lattice.
pub struct HflowMetric(MetricField);

/// Flow state on the flat background.
pub struct HflowFlow {
    state: FlowState,
    bg: BackgroundGeometry,
    policy: StepPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn status_of(e: &Error) -> HflowStatus {
    match e {
        Error::InvalidLattice(_) | Error::LatticeMismatch | Error::RadiusTooLarge { .. } => HflowStatus::InvalidLattice,
        Error::SingularMetric { .. } => HflowStatus::SingularMetric,
        Error::BlowUp(_) => HflowStatus::BlowUp,
        Error::SpecInfeasible(_) | Error::KernelUnderresolved { .. } | Error::HypothesisViolation { .. } => {
            HflowStatus::SpecInfeasible
        }
        Error::Io(_) | Error::Snapshot(_) | Error::Json(_) => HflowStatus::Io,
        _ => HflowStatus::InvalidArgument,
    }
}

fn fail(status: HflowStatus, msg: impl Into<String>) -> HflowStatus {
    LAST_ERROR.with(|m| *m.borrow_mut() = msg.into());
    status
}

/// Runs `f` with panics caught and errors turned into status codes.
fn guard(f: impl FnOnce() -> Result<(), HflowStatus>) -> HflowStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HflowStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(HflowStatus::Internal, "panic inside hflow"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, HflowStatus>;
}

impl<T> OrStatus<T> for hflow::error::Result<T> {
    fn or_status(self) -> Result<T, HflowStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, HflowStatus> {
    p.as_ref().ok_or_else(|| fail(HflowStatus::NullPointer, "null handle"))
}

unsafe fn get_mut<'a, T>(p: *mut T) -> Result<&'a mut T, HflowStatus> {
    p.as_mut().ok_or_else(|| fail(HflowStatus::NullPointer, "null handle"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), HflowStatus> {
    if out.is_null() {
        return Err(fail(HflowStatus::NullPointer, "null output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_arg(path: *const c_char) -> Result<std::path::PathBuf, HflowStatus> {
    if path.is_null() {
        return Err(fail(HflowStatus::NullPointer, "null path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| fail(HflowStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(s.into())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hflow_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|m| {
        let m = m.borrow();
        if !buf.is_null() && len > 0 {
            let n = m.len().min(len - 1);
            ptr::copy_nonoverlapping(m.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        m.len()
    })
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_lattice_new(
    dim: usize,
    n: usize,
    period: f64,
    out: *mut *mut HflowLattice,
) -> HflowStatus {
    guard(|| put(out, HflowLattice(Lattice::new(dim, n, period).or_status()?)))
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `lat` must be null or a live lattice handle.
#[no_mangle]
pub unsafe extern "C" fn hflow_lattice_node_count(lat: *const HflowLattice) -> usize {
    lat.as_ref().map_or(0, |l| l.0.node_count())
}

/// # Safety
/// `lat` must be null or a handle from [`hflow_lattice_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn hflow_lattice_free(lat: *mut HflowLattice) {
    if !lat.is_null() {
        drop(Box::from_raw(lat));
    }
}

/// # Safety
/// `lat` must be a live lattice handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_identity(lat: *const HflowLattice, out: *mut *mut HflowMetric) -> HflowStatus {
    guard(|| put(out, HflowMetric(MetricField::identity(get(lat)?.0))))
}

/// Generates rough data with the default shape parameters of `kind`.
///
/// # Safety
/// `lat` must be a live lattice handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_rough(
    lat: *const HflowLattice,
    kind: HflowRoughKind,
    lambda0: f64,
    seed: u64,
    out: *mut *mut HflowMetric,
) -> HflowStatus {
    guard(|| {
        let kind = match kind {
            HflowRoughKind::LoglogSpike => RoughKind::LoglogSpike,
            HflowRoughKind::FourierMultiscale => RoughKind::FourierMultiscale,
            HflowRoughKind::PointSingularDemo => RoughKind::PointSingularDemo,
            HflowRoughKind::SmoothWarp => RoughKind::SmoothWarp,
        };
        let spec = RoughSpec { lambda0, seed, ..RoughSpec::new(kind) };
        put(out, HflowMetric(rough_init::generate(get(lat)?.0, &spec).or_status()?))
    })
}

/// Builds a metric from packed symmetric components, node-major, upper
/// triangle row by row (`g11 g12 g13 g22 g23 g33` in 3D).
///
/// # Safety
/// `lat` must be a live lattice handle, `data` must point to `len` doubles
/// and `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_from_components(
    lat: *const HflowLattice,
    data: *const f64,
    len: usize,
    out: *mut *mut HflowMetric,
) -> HflowStatus {
    guard(|| {
        let lat = get(lat)?.0;
        let data = get(data).map(|_| std::slice::from_raw_parts(data, len))?;
        let field = Field::from_vec(lat, Layout::Sym2, data.to_vec()).or_status()?;
        put(out, HflowMetric(MetricField::checked(field).or_status()?))
    })
}

/// Number of doubles [`hflow_metric_components`] writes.
///
/// # Safety
/// `g` must be null or a live metric handle.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_component_count(g: *const HflowMetric) -> usize {
    g.as_ref().map_or(0, |g| g.0.field().data().len())
}

/// # Safety
/// `g` must be a live metric handle and `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_components(g: *const HflowMetric, buf: *mut f64, len: usize) -> HflowStatus {
    guard(|| {
        let data = get(g)?.0.field().data();
        if buf.is_null() {
            return Err(fail(HflowStatus::NullPointer, "null buffer"));
        }
        if len < data.len() {
            return Err(fail(HflowStatus::InvalidArgument, format!("buffer holds {len} of {} doubles", data.len())));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Gaussian (`gaussian != 0`) or box mollification at scale `sigma`.
///
/// # Safety
/// `g` must be a live metric handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_mollify(
    g: *const HflowMetric,
    sigma: f64,
    gaussian: bool,
    out: *mut *mut HflowMetric,
) -> HflowStatus {
    guard(|| {
        let kernel = if gaussian { KernelKind::Gaussian } else { KernelKind::Box };
        put(out, HflowMetric(rough_init::mollify(&get(g)?.0, &MollifierSpec { sigma, kernel }).or_status()?))
    })
}

/// Extreme eigenvalues of `g` relative to the Euclidean metric.
///
/// # Safety
/// `g` must be a live metric handle; `lambda_min` and `lambda_max` must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_bilipschitz(
    g: *const HflowMetric,
    lambda_min: *mut f64,
    lambda_max: *mut f64,
) -> HflowStatus {
    guard(|| {
        let g = &get(g)?.0;
        let rep = bilipschitz(g, &MetricField::identity(*g.lattice())).or_status()?;
        *get_mut(lambda_min)? = rep.lambda_min;
        *get_mut(lambda_max)? = rep.lambda_max;
        Ok(())
    })
}

/// Range of the scalar curvature with fourth-order stencils.
///
/// # Safety
/// `g` must be a live metric handle; `min` and `max` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_scalar_range(g: *const HflowMetric, min: *mut f64, max: *mut f64) -> HflowStatus {
    guard(|| {
        let r = tensor_calc::scalar_curv(&get(g)?.0, StencilOrder::Fourth).or_status()?;
        let (lo, hi) = r.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        *get_mut(min)? = lo;
        *get_mut(max)? = hi;
        Ok(())
    })
}

/// # Safety
/// `g` must be a live metric handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_save(g: *const HflowMetric, path: *const c_char) -> HflowStatus {
    guard(|| save_snapshot(get(g)?.0.field(), &path_arg(path)?).or_status())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_load(path: *const c_char, out: *mut *mut HflowMetric) -> HflowStatus {
    guard(|| {
        let field = load_snapshot(&path_arg(path)?).or_status()?;
        put(out, HflowMetric(MetricField::checked(field).or_status()?))
    })
}

/// # Safety
/// `g` must be null or a metric handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn hflow_metric_free(g: *mut HflowMetric) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Starts a flow at `t = 0` from a copy of `g` on the flat background, with
/// RK4 steps and fourth-order stencils at CFL safety `cfl` in `(0, 1]`.
///
/// # Safety
/// `g` must be a live metric handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_flow_new(g: *const HflowMetric, cfl: f64, out: *mut *mut HflowFlow) -> HflowStatus {
    guard(|| {
        let g = get(g)?.0.clone();
        let policy = StepPolicy { cfl_safety: cfl, ..StepPolicy::default() };
        policy.validate().or_status()?;
        let bg = make_flat(*g.lattice());
        put(out, HflowFlow { state: FlowState::new(g).or_status()?, bg, policy })
    })
}

/// Evolves to `t_end`, landing on it exactly. After a blow-up the flow stays
/// at the last healthy time.
///
/// # Safety
/// `f` must be a live flow handle.
#[no_mangle]
pub unsafe extern "C" fn hflow_flow_evolve(f: *mut HflowFlow, t_end: f64) -> HflowStatus {
    guard(|| {
        let f = get_mut(f)?;
        flow::evolve(&mut f.state, &f.policy, &f.bg, t_end, &[], &mut []).or_status()
    })
}

/// Current time, or NaN for a null handle.
///
/// # Safety
/// `f` must be null or a live flow handle.
#[no_mangle]
pub unsafe extern "C" fn hflow_flow_time(f: *const HflowFlow) -> f64 {
    f.as_ref().map_or(f64::NAN, |f| f.state.t)
}

/// Number of steps taken so far.
///
/// # Safety
/// `f` must be null or a live flow handle.
#[no_mangle]
pub unsafe extern "C" fn hflow_flow_steps(f: *const HflowFlow) -> u64 {
    f.as_ref().map_or(0, |f| f.state.step_count)
}

/// Copies the current metric into a new handle.
///
/// # Safety
/// `f` must be a live flow handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hflow_flow_metric(f: *const HflowFlow, out: *mut *mut HflowMetric) -> HflowStatus {
    guard(|| put(out, HflowMetric(get(f)?.state.g.clone())))
}

/// # Safety
/// `f` must be null or a flow handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn hflow_flow_free(f: *mut HflowFlow) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}
