//! Ricci-DeTurck h-flow: right-hand side assembly, explicit CFL-limited time
//! stepping, the geometric (Ricci + Lie derivative) cross-check, and the
//! DeTurck diffeomorphism tracer.
//!
//! The evolved system is
//!
//! ```text
//! ∂_t g_ij = g^pq ∇̃_p∇̃_q g_ij − g^kl g_ip h^pq R̃_jkql − g^kl g_jp h^pq R̃_ikql
//!          + ½ g^kl g^pq ( ∇̃_i g_pk ∇̃_j g_ql + 2 ∇̃_k g_jp ∇̃_q g_il − 2 ∇̃_k g_jp ∇̃_l g_iq
//!                        − 2 ∇̃_j g_pk ∇̃_l g_iq − 2 ∇̃_i g_pk ∇̃_l g_qj )
//! ```
//!
//! with `R̃_jkql = h_jm R̃^m_qlk`, so that `h^{kl} R̃_jkql = R̃ic_jq`.

use serde::{Deserialize, Serialize};

use crate::background::BackgroundGeometry;
use crate::error::{BlowUp, Error, Result};
use crate::lattice::{gradient, sym_count, sym_index, Field, Lattice, Layout, StencilOrder, MAX_DIM};
use crate::small::{self, Mat};
use crate::tensor_calc::{self, christoffel_from, metric_gradient_at, node_inverse, unpack_gamma, Gamma, MetricField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub integrator: Integrator,
    pub stencil_order: StencilOrder,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            cfl_safety: 0.2,
            dt_max: f64::INFINITY,
            integrator: Integrator::Rk4,
            stencil_order: StencilOrder::Fourth,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::InvalidArgument(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        Ok(())
    }

    /// `cfl · Δx² / (2 · dim · sup λ_max(g^{-1}))`, capped by `dt_max`.
    pub fn select_dt(&self, g: &MetricField) -> f64 {
        let dim = g.dim();
        let lam_min =
            g.lattice().nodes().map(|n| small::sym_eigenvalues(&g.matrix(n), dim)[0]).fold(f64::INFINITY, f64::min);
        let dx = g.lattice().spacing();
        let dt = self.cfl_safety * dx * dx * lam_min / (2.0 * dim as f64);
        if dt.is_finite() && dt > 0.0 {
            dt.min(self.dt_max)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub g: MetricField,
    pub step_count: u64,
    pub last_dt: f64,
    pub healthy: bool,
}

impl FlowState {
    pub fn new(g: MetricField) -> Result<Self> {
        Self::at_time(g, 0.0)
    }

    pub fn at_time(mut g: MetricField, t: f64) -> Result<Self> {
        if !g.spd_checked() {
            g.validate()?;
        }
        Ok(Self { t, g, step_count: 0, last_dt: 0.0, healthy: true })
    }

    pub fn lattice(&self) -> &Lattice {
        self.g.lattice()
    }
}

/// Background data sampled at one node.
struct BgNode {
    gamma: Gamma,
    /// `∂_a Γ̃^k_{pq}` as `[a][k][p][q]`.
    dgamma: [Gamma; 3],
    hinv: Mat,
    /// `R̃_jkql` as `[j][k][q][l]`.
    rlow: [[[[f64; 3]; 3]; 3]; 3],
}

fn background_at(bg: &BackgroundGeometry, node: usize) -> Result<BgNode> {
    let dim = bg.lattice().dim();
    let sc = sym_count(dim);
    let gamma = unpack_gamma(bg.christoffel().at(node), dim);
    let dg = bg.christoffel_gradient().at(node);
    let mut dgamma = [[[[0.0; 3]; 3]; 3]; 3];
    for (a, da) in dgamma.iter_mut().enumerate().take(dim) {
        *da = unpack_gamma(&dg[a * dim * sc..(a + 1) * dim * sc], dim);
    }
    let h = bg.h().matrix(node);
    let hinv = bg.h().inverse_matrix(node)?;
    let rm = bg.riemann().at(node);
    let full = |l: usize, i: usize, j: usize, k: usize| rm[((l * dim + i) * dim + j) * dim + k];
    let mut rlow = [[[[0.0; 3]; 3]; 3]; 3];
    for j in 0..dim {
        for k in 0..dim {
            for q in 0..dim {
                for l in 0..dim {
                    rlow[j][k][q][l] = (0..dim).map(|m| h[j][m] * full(m, q, l, k)).sum();
                }
            }
        }
    }
    Ok(BgNode { gamma, dgamma, hinv, rlow })
}

/// `∂_p∂_q g_ij` at a node as `[p][q][i][j]`.
#[inline]
fn metric_hessian_at(g: &Field, node: usize, order: StencilOrder) -> [[Mat; 3]; 3] {
    let dim = g.lattice().dim();
    let mut hs = [[small::ZERO; 3]; 3];
    for p in 0..dim {
        for q in p..dim {
            for i in 0..dim {
                for j in i..dim {
                    let v = g.d2(node, sym_index(i, j, dim), p, q, order);
                    hs[p][q][i][j] = v;
                    hs[p][q][j][i] = v;
                    hs[q][p][i][j] = v;
                    hs[q][p][j][i] = v;
                }
            }
        }
    }
    hs
}

/// Replaces partial derivatives by `∇̃` derivatives using the background connection.
fn covariantize(gm: &Mat, dg: &[Mat; 3], hs: &[[Mat; 3]; 3], b: &BgNode, dim: usize) -> ([Mat; 3], [[Mat; 3]; 3]) {
    let gt = &b.gamma;
    let dgt = &b.dgamma;
    // T_qij = ∇̃_q g_ij
    let mut t = [small::ZERO; 3];
    for q in 0..dim {
        for i in 0..dim {
            for j in 0..dim {
                let mut v = dg[q][i][j];
                for m in 0..dim {
                    v -= gt[m][q][i] * gm[m][j] + gt[m][q][j] * gm[i][m];
                }
                t[q][i][j] = v;
            }
        }
    }
    let mut h2 = [[small::ZERO; 3]; 3];
    for p in 0..dim {
        for q in 0..dim {
            for i in 0..dim {
                for j in 0..dim {
                    // ∂_p T_qij
                    let mut v = hs[p][q][i][j];
                    for m in 0..dim {
                        v -= dgt[p][m][q][i] * gm[m][j]
                            + gt[m][q][i] * dg[p][m][j]
                            + dgt[p][m][q][j] * gm[i][m]
                            + gt[m][q][j] * dg[p][i][m];
                    }
                    for m in 0..dim {
                        v -= gt[m][p][q] * t[m][i][j] + gt[m][p][i] * t[q][m][j] + gt[m][p][j] * t[q][i][m];
                    }
                    h2[p][q][i][j] = v;
                }
            }
        }
    }
    (t, h2)
}

/// Assembles the right-hand side at one node from `g`, `g^{-1}`, `∇̃g`, `∇̃∇̃g`.
#[inline]
fn assemble_node(
    gm: &Mat,
    ginv: &Mat,
    d: &[Mat; 3],
    hs: &[[Mat; 3]; 3],
    bgn: Option<&BgNode>,
    dim: usize,
    out: &mut [f64],
) {
    for i in 0..dim {
        for j in i..dim {
            let mut v = 0.0;
            for p in 0..dim {
                for q in 0..dim {
                    v += ginv[p][q] * hs[p][q][i][j];
                }
            }
            if let Some(b) = bgn {
                // A_i^q = g_ip h^pq
                let mut a = small::ZERO;
                for r in 0..dim {
                    for q in 0..dim {
                        a[r][q] = (0..dim).map(|p| gm[r][p] * b.hinv[p][q]).sum();
                    }
                }
                for k in 0..dim {
                    for l in 0..dim {
                        let gkl = ginv[k][l];
                        if gkl == 0.0 {
                            continue;
                        }
                        for q in 0..dim {
                            v -= gkl * a[i][q] * b.rlow[j][k][q][l];
                            v -= gkl * a[j][q] * b.rlow[i][k][q][l];
                        }
                    }
                }
            }
            let mut quad = 0.0;
            for k in 0..dim {
                for l in 0..dim {
                    let gkl = ginv[k][l];
                    if gkl == 0.0 {
                        continue;
                    }
                    for p in 0..dim {
                        for q in 0..dim {
                            let w = gkl * ginv[p][q];
                            if w == 0.0 {
                                continue;
                            }
                            let s = d[i][p][k] * d[j][q][l] + 2.0 * d[k][j][p] * d[q][i][l]
                                - 2.0 * d[k][j][p] * d[l][i][q]
                                - 2.0 * d[j][p][k] * d[l][i][q]
                                - 2.0 * d[i][p][k] * d[l][q][j];
                            quad += w * s;
                        }
                    }
                }
            }
            out[sym_index(i, j, dim)] = v + 0.5 * quad;
        }
    }
}

fn rhs_impl(g: &MetricField, bg: &BackgroundGeometry, order: StencilOrder, use_flat: bool) -> Result<Field> {
    let lat = *g.lattice();
    if bg.lattice() != &lat {
        return Err(Error::LatticeMismatch);
    }
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Sym2);
    for node in lat.nodes() {
        let gm = g.matrix(node);
        let ginv = match g.cached_inverse() {
            Some(inv) => small::unpack_sym(inv.at(node), dim),
            None => node_inverse(&gm, dim, node)?,
        };
        let dg = metric_gradient_at(g.field(), node, order);
        let hs = metric_hessian_at(g.field(), node, order);
        if use_flat {
            assemble_node(&gm, &ginv, &dg, &hs, None, dim, out.at_mut(node));
        } else {
            let b = background_at(bg, node)?;
            let (d, h2) = covariantize(&gm, &dg, &hs, &b, dim);
            assemble_node(&gm, &ginv, &d, &h2, Some(&b), dim, out.at_mut(node));
        }
    }
    Ok(out)
}

/// Right-hand side of the h-flow; uses plain partial derivatives when the
/// background is flat.
pub fn hflow_rhs(g: &MetricField, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    rhs_impl(g, bg, order, bg.is_flat())
}

/// Same as [`hflow_rhs`] but always through the covariant path.
pub fn hflow_rhs_general(g: &MetricField, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    rhs_impl(g, bg, order, false)
}

/// `W^k = g^{pq}(Γ^k_{pq} − Γ̃^k_{pq})`.
pub fn deturck_vector(g: &MetricField, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    let lat = *g.lattice();
    if bg.lattice() != &lat {
        return Err(Error::LatticeMismatch);
    }
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Vector);
    for node in lat.nodes() {
        let ginv = g.inverse_matrix(node)?;
        let gamma = christoffel_from(&metric_gradient_at(g.field(), node, order), &ginv, dim);
        let gt = unpack_gamma(bg.christoffel().at(node), dim);
        let w = out.at_mut(node);
        for k in 0..dim {
            let mut v = 0.0;
            for p in 0..dim {
                for q in 0..dim {
                    v += ginv[p][q] * (gamma[k][p][q] - gt[k][p][q]);
                }
            }
            w[k] = v;
        }
    }
    Ok(out)
}

/// `−2 Ric(g) + ∇_i W_j + ∇_j W_i`, with `∇` the Levi-Civita connection of `g`.
pub fn geometric_rhs(g: &MetricField, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    let lat = *g.lattice();
    let dim = lat.dim();
    let gamma = tensor_calc::christoffel(g, order)?;
    let w_up = deturck_vector(g, bg, order)?;
    let mut w_low = Field::zeros(lat, Layout::Vector);
    for node in lat.nodes() {
        let gm = g.matrix(node);
        let wu = w_up.at(node).to_vec();
        let wl = w_low.at_mut(node);
        for j in 0..dim {
            wl[j] = (0..dim).map(|k| gm[j][k] * wu[k]).sum();
        }
    }
    let ric = tensor_calc::ricci_from_gamma(&gamma, order)?;
    let mut out = Field::zeros(lat, Layout::Sym2);
    for node in lat.nodes() {
        let gm = unpack_gamma(gamma.at(node), dim);
        let wl = w_low.at(node);
        let mut nabla = small::ZERO;
        for i in 0..dim {
            for j in 0..dim {
                let mut v = w_low.d1(node, j, i, order);
                for m in 0..dim {
                    v -= gm[m][i][j] * wl[m];
                }
                nabla[i][j] = v;
            }
        }
        let r = ric.at(node).to_vec();
        let o = out.at_mut(node);
        for i in 0..dim {
            for j in i..dim {
                let s = sym_index(i, j, dim);
                o[s] = -2.0 * r[s] + nabla[i][j] + nabla[j][i];
            }
        }
    }
    Ok(out)
}

fn blowup(state: &FlowState, node: usize, reason: impl Into<String>) -> Error {
    Error::BlowUp(BlowUp { t: state.t, step: state.step_count, node, reason: reason.into() })
}

fn stage_rhs(state: &FlowState, g: &Field, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    let m = MetricField::new(g.clone())?;
    hflow_rhs(&m, bg, order).map_err(|e| match e {
        Error::SingularMetric { node, det } => blowup(state, node, format!("singular stage metric (det {det:e})")),
        other => other,
    })
}

/// Advances by at most `limit` in time.
pub fn step_limited(state: &FlowState, policy: &StepPolicy, bg: &BackgroundGeometry, limit: f64) -> Result<FlowState> {
    if !state.healthy {
        return Err(blowup(state, 0, "stepping an unhealthy state"));
    }
    let dt = policy.select_dt(&state.g).min(limit);
    if !(dt > 0.0) {
        return Err(blowup(state, 0, "no admissible time step"));
    }
    let order = policy.stencil_order;
    let g0 = state.g.field();
    let next = match policy.integrator {
        Integrator::Euler => {
            let k1 = stage_rhs(state, g0, bg, order)?;
            g0.axpy(dt, &k1)?
        }
        Integrator::Rk4 => {
            let k1 = stage_rhs(state, g0, bg, order)?;
            let k2 = stage_rhs(state, &g0.axpy(0.5 * dt, &k1)?, bg, order)?;
            let k3 = stage_rhs(state, &g0.axpy(0.5 * dt, &k2)?, bg, order)?;
            let k4 = stage_rhs(state, &g0.axpy(dt, &k3)?, bg, order)?;
            let mut out = g0.clone();
            let w = dt / 6.0;
            for (idx, v) in out.data_mut().iter_mut().enumerate() {
                *v += w * (k1.data()[idx] + 2.0 * k2.data()[idx] + 2.0 * k3.data()[idx] + k4.data()[idx]);
            }
            out
        }
    };
    if let Some(bad) = next.data().iter().position(|v| !v.is_finite()) {
        return Err(blowup(state, bad / next.ncomp(), "non-finite metric component"));
    }
    let mut g = MetricField::new(next)?;
    if let Err(e) = g.validate() {
        let node = match e {
            Error::SingularMetric { node, .. } => node,
            _ => 0,
        };
        return Err(blowup(state, node, "metric left the positive definite cone"));
    }
    Ok(FlowState { t: state.t + dt, g, step_count: state.step_count + 1, last_dt: dt, healthy: true })
}

/// One CFL-limited explicit step.
pub fn step(state: &FlowState, policy: &StepPolicy, bg: &BackgroundGeometry) -> Result<FlowState> {
    step_limited(state, policy, bg, f64::INFINITY)
}

/// Called by [`evolve`] at each requested sample time.
pub trait Observer {
    fn observe(&mut self, state: &FlowState, bg: &BackgroundGeometry) -> Result<()>;
}

impl<F: FnMut(&FlowState, &BackgroundGeometry) -> Result<()>> Observer for F {
    fn observe(&mut self, state: &FlowState, bg: &BackgroundGeometry) -> Result<()> {
        self(state, bg)
    }
}

/// Steps to `t_end`, landing exactly on every sample time in `(t, t_end]`
/// and handing the state to each observer there.
///
/// On blow-up the error is returned and `state` is left at the last healthy
/// time with `healthy = false`; observers keep what they collected.
pub fn evolve(
    state: &mut FlowState,
    policy: &StepPolicy,
    bg: &BackgroundGeometry,
    t_end: f64,
    sample_times: &[f64],
    observers: &mut [&mut dyn Observer],
) -> Result<()> {
    if !(t_end > state.t) {
        return Err(Error::InvalidArgument(format!("t_end {t_end} must exceed current time {}", state.t)));
    }
    let mut targets: Vec<f64> = sample_times.iter().copied().filter(|&s| s > state.t && s <= t_end).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    if targets.last() != Some(&t_end) {
        targets.push(t_end);
    }
    let observed: Vec<bool> = targets.iter().map(|t| sample_times.contains(t)).collect();
    for (target, observe) in targets.into_iter().zip(observed) {
        while state.t < target {
            let remaining = target - state.t;
            match step_limited(state, policy, bg, remaining) {
                Ok(mut next) => {
                    if next.last_dt >= remaining {
                        next.t = target;
                    }
                    *state = next;
                }
                Err(e) => {
                    state.healthy = false;
                    return Err(e);
                }
            }
        }
        if observe {
            for obs in observers.iter_mut() {
                obs.observe(state, bg)?;
            }
        }
    }
    Ok(())
}

/// Collects `(t, W)` at every observation.
#[derive(Debug, Default, Clone)]
pub struct DeTurckRecorder {
    pub order: Option<StencilOrder>,
    pub snapshots: Vec<(f64, Field)>,
}

impl Observer for DeTurckRecorder {
    fn observe(&mut self, state: &FlowState, bg: &BackgroundGeometry) -> Result<()> {
        let w = deturck_vector(&state.g, bg, self.order.unwrap_or(StencilOrder::Fourth))?;
        self.snapshots.push((state.t, w));
        Ok(())
    }
}

/// Sign of the velocity used when tracing trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// `∂_t Ψ = W(Ψ, t)`.
    DeTurck,
    /// `∂_t φ = −W(φ, t)`; then `φ_t^* g(t)` solves the Ricci flow.
    RicciPullback,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffeoTrace {
    pub seeds: Vec<[f64; MAX_DIM]>,
    pub times: Vec<f64>,
    /// `positions[time][seed]`, reduced into `[0, L)`.
    pub positions: Vec<Vec<[f64; MAX_DIM]>>,
    /// Jacobians `∂Ψ^a/∂x^b` of the trajectory map, same indexing.
    pub jacobians: Vec<Vec<Mat>>,
}

/// Periodic multilinear interpolation of all components at `x`.
pub fn interpolate(field: &Field, x: &[f64; MAX_DIM], out: &mut [f64]) {
    let lat = field.lattice();
    let dim = lat.dim();
    let n = lat.n_per_axis() as isize;
    let mut base = [0isize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for a in 0..dim {
        let s = x[a] / lat.spacing();
        let f = s.floor();
        base[a] = f as isize;
        frac[a] = s - f;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut coords = [0usize; MAX_DIM];
        for a in 0..dim {
            let bit = (corner >> a) & 1;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            coords[a] = (base[a] + bit as isize).rem_euclid(n) as usize;
        }
        if w == 0.0 {
            continue;
        }
        let vals = field.at(lat.index(&coords[..dim]));
        for (o, v) in out.iter_mut().zip(vals) {
            *o += w * v;
        }
    }
}

/// Periodic tensor-product cubic Lagrange interpolation, fourth-order accurate.
pub fn interpolate_cubic(field: &Field, x: &[f64; MAX_DIM], out: &mut [f64]) {
    let lat = field.lattice();
    let dim = lat.dim();
    let n = lat.n_per_axis() as isize;
    let mut base = [0isize; MAX_DIM];
    let mut w = [[0.0; 4]; MAX_DIM];
    for a in 0..dim {
        let s = x[a] / lat.spacing();
        let b = s.floor();
        let f = s - b;
        base[a] = b as isize;
        w[a] = [
            -f * (f - 1.0) * (f - 2.0) / 6.0,
            (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
            -(f + 1.0) * f * (f - 2.0) / 2.0,
            (f + 1.0) * f * (f - 1.0) / 6.0,
        ];
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let corners = 4usize.pow(dim as u32);
    for c in 0..corners {
        let mut wt = 1.0;
        let mut coords = [0usize; MAX_DIM];
        let mut rest = c;
        for a in 0..dim {
            let k = rest % 4;
            rest /= 4;
            wt *= w[a][k];
            coords[a] = (base[a] + k as isize - 1).rem_euclid(n) as usize;
        }
        let vals = field.at(lat.index(&coords[..dim]));
        for (o, v) in out.iter_mut().zip(vals) {
            *o += wt * v;
        }
    }
}

/// Traces seed points through the recorded DeTurck fields with RK4,
/// interpolating linearly in time between snapshots.
pub fn integrate_diffeo(
    snapshots: &[(f64, Field)],
    seeds: &[[f64; MAX_DIM]],
    gauge: Gauge,
    substeps: usize,
) -> Result<DiffeoTrace> {
    let first = snapshots.first().ok_or_else(|| Error::InvalidArgument("no DeTurck snapshots".into()))?;
    let lat = *first.1.lattice();
    let dim = lat.dim();
    for (t, w) in snapshots {
        if w.layout() != Layout::Vector || w.lattice() != &lat {
            return Err(Error::LayoutMismatch(format!("snapshot at t={t} is not a vector field on the lattice")));
        }
    }
    if snapshots.windows(2).any(|p| !(p[1].0 > p[0].0)) {
        return Err(Error::InvalidArgument("snapshot times must increase".into()));
    }
    let sign = match gauge {
        Gauge::DeTurck => 1.0,
        Gauge::RicciPullback => -1.0,
    };
    let grads: Vec<Field> = snapshots.iter().map(|(_, w)| gradient(w, StencilOrder::Fourth)).collect::<Result<_>>()?;
    let reduce = |x: &mut [f64; MAX_DIM]| {
        for v in x.iter_mut().take(dim) {
            *v = v.rem_euclid(lat.period());
        }
    };

    let mut pos: Vec<[f64; MAX_DIM]> = seeds.to_vec();
    pos.iter_mut().for_each(reduce);
    let mut jac: Vec<Mat> = vec![small::identity(dim); seeds.len()];
    let mut trace = DiffeoTrace {
        seeds: pos.clone(),
        times: vec![first.0],
        positions: vec![pos.clone()],
        jacobians: vec![jac.clone()],
    };
    let substeps = substeps.max(1);

    // velocity and velocity gradient at (x, s) with s ∈ [0, 1] across one interval
    let eval = |k: usize, s: f64, x: &[f64; MAX_DIM]| -> ([f64; MAX_DIM], Mat) {
        let mut v0 = [0.0; MAX_DIM];
        let mut v1 = [0.0; MAX_DIM];
        interpolate(&snapshots[k].1, x, &mut v0[..dim]);
        interpolate(&snapshots[k + 1].1, x, &mut v1[..dim]);
        let mut g0 = vec![0.0; dim * dim];
        let mut g1 = vec![0.0; dim * dim];
        interpolate(&grads[k], x, &mut g0);
        interpolate(&grads[k + 1], x, &mut g1);
        let mut v = [0.0; MAX_DIM];
        let mut dv = small::ZERO;
        for c in 0..dim {
            v[c] = sign * ((1.0 - s) * v0[c] + s * v1[c]);
            for a in 0..dim {
                // gradient layout is [a][c] = ∂_a W^c
                dv[c][a] = sign * ((1.0 - s) * g0[a * dim + c] + s * g1[a * dim + c]);
            }
        }
        (v, dv)
    };

    for k in 0..snapshots.len() - 1 {
        let dt = (snapshots[k + 1].0 - snapshots[k].0) / substeps as f64;
        for sub in 0..substeps {
            let s0 = sub as f64 / substeps as f64;
            let ds = 1.0 / substeps as f64;
            for (x, j) in pos.iter_mut().zip(jac.iter_mut()) {
                let rhs = |xs: &[f64; MAX_DIM], js: &Mat, s: f64| -> ([f64; MAX_DIM], Mat) {
                    let (v, dv) = eval(k, s, xs);
                    (v, small::mul(&dv, js, dim))
                };
                let add = |x: &[f64; MAX_DIM], j: &Mat, kx: &[f64; MAX_DIM], kj: &Mat, h: f64| {
                    let mut xn = *x;
                    let mut jn = *j;
                    for a in 0..dim {
                        xn[a] += h * kx[a];
                        for b in 0..dim {
                            jn[a][b] += h * kj[a][b];
                        }
                    }
                    (xn, jn)
                };
                let (k1x, k1j) = rhs(x, j, s0);
                let (x2, j2) = add(x, j, &k1x, &k1j, 0.5 * dt);
                let (k2x, k2j) = rhs(&x2, &j2, s0 + 0.5 * ds);
                let (x3, j3) = add(x, j, &k2x, &k2j, 0.5 * dt);
                let (k3x, k3j) = rhs(&x3, &j3, s0 + 0.5 * ds);
                let (x4, j4) = add(x, j, &k3x, &k3j, dt);
                let (k4x, k4j) = rhs(&x4, &j4, s0 + ds);
                for a in 0..dim {
                    x[a] += dt / 6.0 * (k1x[a] + 2.0 * k2x[a] + 2.0 * k3x[a] + k4x[a]);
                    for b in 0..dim {
                        j[a][b] += dt / 6.0 * (k1j[a][b] + 2.0 * k2j[a][b] + 2.0 * k3j[a][b] + k4j[a][b]);
                    }
                }
                reduce(x);
            }
        }
        trace.times.push(snapshots[k + 1].0);
        trace.positions.push(pos.clone());
        trace.jacobians.push(jac.clone());
    }
    Ok(trace)
}

/// Views the state at scale `λ`: same components, lengths times `λ`, time times `λ²`.
pub fn parabolic_rescale(state: &FlowState, lambda: f64) -> Result<FlowState> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {lambda}")));
    }
    let lat = state.lattice().scaled(lambda)?;
    let g = MetricField::checked(state.g.field().with_lattice(lat)?)?;
    Ok(FlowState {
        t: state.t * lambda * lambda,
        g,
        step_count: state.step_count,
        last_dt: state.last_dt * lambda * lambda,
        healthy: state.healthy,
    })
}

/// The background seen on a rescaled lattice.
pub fn rescale_background(bg: &BackgroundGeometry, lambda: f64, order: StencilOrder) -> Result<BackgroundGeometry> {
    let lat = bg.lattice().scaled(lambda)?;
    let h = MetricField::checked(bg.h().field().with_lattice(lat)?)?;
    BackgroundGeometry::from_metric(h, order, crate::background::HypothesisPolicy::Warn)
}
