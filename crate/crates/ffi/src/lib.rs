//! C interface to `netuq`.
//!
//! Every fallible function returns a [`NetuqStatus`]. On failure the message is
//! kept per thread and can be fetched with [`netuq_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use netuq::fem_diffusion::{build_benchmark_network, Mesh, NewtonOptions, StochasticInputs};
use netuq::network::Network;
use netuq::pce::{gauss_hermite_1d, MultiIndexSet};
use netuq::relaxation::{
    dag_from_permutation, find_low_nseq_permutation, solve, Method, SolveStatus, SolverConfig,
};
use netuq::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetuqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    NotConverged = 4,
    Diverged = 5,
    BufferTooSmall = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetuqMethod {
    Jacobi = 0,
    GaussSeidel = 1,
}

/// Solver settings. `anderson_restart` of 0 means never restart.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NetuqSolveOptions {
    pub method: NetuqMethod,
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub anderson_memory: usize,
    pub anderson_restart: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NetuqSolveSummary {
    pub iterations: usize,
    pub final_residual: f64,
    pub n_seq: usize,
}

/// Diffusion benchmark on an s×s decomposition of the unit square.
pub struct NetuqBenchmark {
    network: Network,
    inputs: Vec<f64>,
    n_terms: usize,
    probe_slots: Vec<usize>,
    state: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> NetuqStatus {
    match e {
        Error::InvalidConfig(_) | Error::IndivisibleMesh { .. } => NetuqStatus::InvalidConfig,
        Error::DimensionMismatch { .. } | Error::InvalidNetwork(_) => NetuqStatus::InvalidArgument,
        _ => NetuqStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), NetuqStatus>) -> NetuqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NetuqStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside netuq");
            NetuqStatus::Panic
        }
    }
}

fn lift<T>(r: netuq::Result<T>) -> Result<T, NetuqStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn non_null<T>(p: *const T) -> Result<(), NetuqStatus> {
    if p.is_null() {
        set_error("null pointer argument");
        Err(NetuqStatus::NullPointer)
    } else {
        Ok(())
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn netuq_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn netuq_default_solve_options() -> NetuqSolveOptions {
    let d = SolverConfig::default();
    NetuqSolveOptions {
        method: NetuqMethod::GaussSeidel,
        omega: d.omega,
        tol: d.tol,
        max_iter: d.max_iter,
        anderson_memory: d.anderson_memory,
        anderson_restart: 0,
    }
}

/// Builds the benchmark with `mesh_nodes` nodes per axis split into
/// `subdomains`×`subdomains` blocks.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn netuq_benchmark_new(
    mesh_nodes: usize,
    subdomains: usize,
    out: *mut *mut NetuqBenchmark,
) -> NetuqStatus {
    guard(|| {
        non_null(out)?;
        *out = ptr::null_mut();
        let mesh = lift(Mesh::unit_square(mesh_nodes, mesh_nodes))?;
        let inputs = StochasticInputs::benchmark();
        let (network, meta) = lift(build_benchmark_network(
            &mesh,
            subdomains,
            subdomains,
            &inputs,
            NewtonOptions::default(),
        ))?;
        let u = inputs.network_inputs(network.n_components());
        let state = vec![0.0; network.n_endo()];
        *out = Box::into_raw(Box::new(NetuqBenchmark {
            network,
            inputs: u,
            n_terms: meta.n_terms,
            probe_slots: meta.probe_slots,
            state,
        }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`netuq_benchmark_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn netuq_benchmark_free(h: *mut NetuqBenchmark) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of subdomain components in the network.
///
/// # Safety
/// `h` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn netuq_benchmark_n_components(h: *const NetuqBenchmark) -> usize {
    h.as_ref().map_or(0, |b| b.network.n_components())
}

/// Solves from zero. `summary` may be null. Returns `NotConverged` or
/// `Diverged` when the iteration stops early; the state is kept either way.
///
/// # Safety
/// `h` must be a live handle and `opts` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn netuq_benchmark_solve(
    h: *mut NetuqBenchmark,
    opts: *const NetuqSolveOptions,
    summary: *mut NetuqSolveSummary,
) -> NetuqStatus {
    guard(|| {
        non_null(h)?;
        non_null(opts)?;
        let b = &mut *h;
        let o = *opts;
        let cfg = SolverConfig {
            omega: o.omega,
            tol: o.tol,
            max_iter: o.max_iter,
            anderson_memory: o.anderson_memory,
            anderson_restart: (o.anderson_restart > 0).then_some(o.anderson_restart),
        };
        lift(cfg.validate())?;
        let method = match o.method {
            NetuqMethod::Jacobi => Method::Jacobi,
            NetuqMethod::GaussSeidel => Method::GaussSeidel,
        };
        let perm = lift(find_low_nseq_permutation(&b.network, 20, 0))?.0;
        let sched = lift(dag_from_permutation(&perm, &b.network))?;
        let out = lift(solve(&b.network, &b.inputs, method, &cfg, Some(&sched)))?;
        b.state = out.state.x;
        if !summary.is_null() {
            *summary = NetuqSolveSummary {
                iterations: out.trace.iterations(),
                final_residual: out.trace.final_residual(),
                n_seq: if method == Method::Jacobi { 1 } else { sched.n_seq() },
            };
        }
        match out.trace.status {
            SolveStatus::Converged => Ok(()),
            SolveStatus::MaxIterations => {
                set_error("iteration limit reached");
                Err(NetuqStatus::NotConverged)
            }
            SolveStatus::Diverged => {
                set_error("iteration diverged");
                Err(NetuqStatus::Diverged)
            }
        }
    })
}

/// Length of the QoI vector: PCE coefficients of each probe, probe-major.
///
/// # Safety
/// `h` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn netuq_benchmark_qoi_len(h: *const NetuqBenchmark) -> usize {
    h.as_ref().map_or(0, |b| b.probe_slots.len() * b.n_terms)
}

/// Copies the current QoI into `buf`.
///
/// # Safety
/// `h` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn netuq_benchmark_qoi(h: *const NetuqBenchmark, buf: *mut f64, len: usize) -> NetuqStatus {
    guard(|| {
        non_null(h)?;
        non_null(buf)?;
        let b = &*h;
        let need = b.probe_slots.len() * b.n_terms;
        if len < need {
            set_error(format!("buffer holds {len} values, {need} needed"));
            return Err(NetuqStatus::BufferTooSmall);
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (chunk, &slot) in dst.chunks_exact_mut(b.n_terms).zip(&b.probe_slots) {
            chunk.copy_from_slice(&b.state[slot..slot + b.n_terms]);
        }
        Ok(())
    })
}

/// Number of total-degree Hermite terms in `dim` variables up to `order`.
#[no_mangle]
pub extern "C" fn netuq_pce_n_terms(dim: usize, order: u32) -> usize {
    MultiIndexSet::total_degree(dim, order).len()
}

/// Evaluates every basis polynomial at `xi` (length `dim`) into `out`.
///
/// # Safety
/// `xi` must be valid for `dim` doubles and `out` for `len`.
#[no_mangle]
pub unsafe extern "C" fn netuq_pce_eval_basis(
    dim: usize,
    order: u32,
    xi: *const f64,
    out: *mut f64,
    len: usize,
) -> NetuqStatus {
    guard(|| {
        non_null(xi)?;
        non_null(out)?;
        let basis = MultiIndexSet::total_degree(dim, order);
        if len < basis.len() {
            set_error(format!("buffer holds {len} values, {} needed", basis.len()));
            return Err(NetuqStatus::BufferTooSmall);
        }
        let vals = lift(basis.eval_all(std::slice::from_raw_parts(xi, dim)))?;
        std::slice::from_raw_parts_mut(out, vals.len()).copy_from_slice(&vals);
        Ok(())
    })
}

/// Gauss–Hermite rule with `n` points for the standard normal weight.
///
/// # Safety
/// `nodes` and `weights` must each be valid for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn netuq_gauss_hermite(n: usize, nodes: *mut f64, weights: *mut f64) -> NetuqStatus {
    guard(|| {
        non_null(nodes)?;
        non_null(weights)?;
        if n == 0 {
            set_error("rule needs at least one point");
            return Err(NetuqStatus::InvalidArgument);
        }
        let (x, w) = gauss_hermite_1d(n);
        std::slice::from_raw_parts_mut(nodes, n).copy_from_slice(&x);
        std::slice::from_raw_parts_mut(weights, n).copy_from_slice(&w);
        Ok(())
    })
}
