//! Rough initial metrics, mollification, and the scale finder.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::background::BackgroundGeometry;
use crate::error::{Error, Result};
use crate::estimators;
use crate::lattice::{Field, Lattice, Layout, StencilOrder, MAX_DIM};
use crate::small::{self, Mat};
use crate::tensor_calc::{self, MetricField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoughKind {
    /// `δ + ψ(r) sin(β ln ln(L/r)) E` around a point.
    LoglogSpike,
    /// Seeded random superposition over a dyadic ladder of frequencies.
    FourierMultiscale,
    /// Conformal `e^{2φ}δ` with `φ = −a ψ(r) (r/r0)^α`, positive scalar
    /// curvature in the punctured core.
    PointSingularDemo,
    /// Smooth analytic control case, see [`WarpMode`].
    SmoothWarp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpMode {
    /// `dx0² + e^{2u(x0)} dx1² + …`, curved.
    WarpedProduct,
    /// `e^{2u(x0)} dx0² + …`, flat.
    Profile,
    /// Pullback of `δ` by a periodic diffeomorphism, flat and non-diagonal.
    Pullback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughSpec {
    pub kind: RoughKind,
    pub lambda0: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Centre as fractions of the period.
    pub center: [f64; MAX_DIM],
    /// Kind-specific amplitude; `None` picks a safe default.
    pub amplitude: Option<f64>,
    pub beta: f64,
    /// Cutoff radius as a fraction of the period.
    pub r0: f64,
    pub alpha: f64,
    pub levels: u32,
    pub frequency: u32,
    pub warp: WarpMode,
}

impl RoughSpec {
    pub fn new(kind: RoughKind) -> Self {
        Self {
            kind,
            lambda0: 2.0,
            epsilon: 0.1,
            seed: 0,
            center: [0.5; MAX_DIM],
            amplitude: None,
            beta: 4.0,
            r0: 0.25,
            alpha: 0.5,
            levels: 4,
            frequency: 1,
            warp: WarpMode::WarpedProduct,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 1.0) {
            return Err(Error::SpecInfeasible(format!("lambda0 must exceed 1, got {}", self.lambda0)));
        }
        if !(self.r0 > 0.0 && self.r0 <= 0.25) {
            return Err(Error::SpecInfeasible(format!("r0 must lie in (0, 1/4], got {}", self.r0)));
        }
        Ok(())
    }

    /// Largest traceless perturbation that keeps `g` within `[1/Λ0, Λ0]`.
    fn perturbation_limit(&self) -> f64 {
        1.0 - 1.0 / self.lambda0
    }
}

/// Smooth step: 1 for `r ≤ r0/2`, 0 for `r ≥ r0`.
pub fn cutoff(r: f64, r0: f64) -> f64 {
    if r <= 0.5 * r0 {
        return 1.0;
    }
    if r >= r0 {
        return 0.0;
    }
    let x = (r0 - r) / (0.5 * r0);
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

fn center_position(lat: &Lattice, spec: &RoughSpec) -> [f64; MAX_DIM] {
    let mut c = [0.0; MAX_DIM];
    for (a, v) in c.iter_mut().enumerate().take(lat.dim()) {
        *v = spec.center[a] * lat.period();
    }
    c
}

fn loglog_spike(lat: Lattice, spec: &RoughSpec) -> Result<Field> {
    let limit = spec.perturbation_limit();
    let amp = spec.amplitude.unwrap_or(0.9 * limit);
    if !(amp.abs() < limit) {
        return Err(Error::SpecInfeasible(format!(
            "loglog amplitude {amp} breaks the bi-Lipschitz bound {}",
            spec.lambda0
        )));
    }
    let big_l = lat.period();
    let r0 = spec.r0 * big_l;
    let c = center_position(&lat, spec);
    let dim = lat.dim();
    Ok(Field::from_fn(lat, Layout::Sym2, |x, out| {
        let r = lat.torus_distance(x, &c);
        let mut m = small::identity(dim);
        if r > 0.0 {
            let w = amp * cutoff(r, r0) * (spec.beta * (big_l / r).ln().ln()).sin();
            m[0][0] += w;
            m[1][1] -= w;
        }
        small::pack_sym(&m, dim, out);
    }))
}

fn random_sym(rng: &mut ChaCha8Rng, dim: usize) -> Mat {
    let mut m = small::ZERO;
    for i in 0..dim {
        for j in i..dim {
            let v = rng.gen_range(-1.0..1.0);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    let e = small::sym_eigenvalues(&m, dim);
    let norm = e[0].abs().max(e[dim - 1].abs()).max(f64::MIN_POSITIVE);
    m.iter_mut().flatten().for_each(|v| *v /= norm);
    m
}

fn fourier_multiscale(lat: Lattice, spec: &RoughSpec) -> Result<Field> {
    let dim = lat.dim();
    let n = lat.n_per_axis();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut modes = Vec::new();
    for m in 1..=spec.levels {
        let kmax = 1usize << m;
        if kmax > n / 4 {
            break;
        }
        let mut k = [0i64; MAX_DIM];
        for kv in k.iter_mut().take(dim) {
            *kv = rng.gen_range(-(kmax as i64)..=kmax as i64);
        }
        let lead = rng.gen_range(0..dim);
        k[lead] = if rng.gen_bool(0.5) { kmax as i64 } else { -(kmax as i64) };
        let a = random_sym(&mut rng, dim);
        let phase = rng.gen_range(0.0..2.0 * PI);
        modes.push((k, a, phase, 1.0 / m as f64));
    }
    if modes.is_empty() {
        return Err(Error::SpecInfeasible(format!("lattice with n = {n} resolves no dyadic level")));
    }
    let two_pi_l = 2.0 * PI / lat.period();
    let mut pert = Field::from_fn(lat, Layout::Sym2, |x, out| {
        let mut p = small::ZERO;
        for (k, a, phase, w) in &modes {
            let arg: f64 = (0..dim).map(|i| k[i] as f64 * x[i]).sum::<f64>() * two_pi_l + phase;
            let c = w * arg.cos();
            for i in 0..dim {
                for j in 0..dim {
                    p[i][j] += c * a[i][j];
                }
            }
        }
        small::pack_sym(&p, dim, out);
    });
    let rho = lat
        .nodes()
        .map(|nd| {
            let e = small::sym_eigenvalues(&small::unpack_sym(pert.at(nd), dim), dim);
            e[0].abs().max(e[dim - 1].abs())
        })
        .fold(0.0, f64::max);
    let target = spec.amplitude.unwrap_or(0.9 * spec.perturbation_limit());
    if !(target.abs() < spec.perturbation_limit()) {
        return Err(Error::SpecInfeasible(format!("fourier amplitude {target} exceeds the bi-Lipschitz bound")));
    }
    let scale = if rho > 0.0 { target / rho } else { 0.0 };
    let id = MetricField::identity(lat);
    for v in pert.data_mut() {
        *v *= scale;
    }
    id.field().axpy(1.0, &pert)
}

fn point_singular(lat: Lattice, spec: &RoughSpec) -> Result<Field> {
    let amp = spec.amplitude.unwrap_or(0.4 * spec.lambda0.ln());
    if !(amp > 0.0 && 2.0 * amp <= spec.lambda0.ln() && amp < 1.0) {
        return Err(Error::SpecInfeasible(format!("point-singular amplitude {amp} must lie in (0, min(1, ln(Λ0)/2)]")));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::SpecInfeasible(format!("alpha must lie in (0, 1), got {}", spec.alpha)));
    }
    let r0 = spec.r0 * lat.period();
    let c = center_position(&lat, spec);
    let dim = lat.dim();
    Ok(Field::from_fn(lat, Layout::Sym2, |x, out| {
        let r = lat.torus_distance(x, &c);
        let phi = -amp * cutoff(r, r0) * (r / r0).powf(spec.alpha);
        let m = small::identity(dim);
        let mut p = m;
        p.iter_mut().flatten().for_each(|v| *v *= (2.0 * phi).exp());
        small::pack_sym(&p, dim, out);
    }))
}

fn smooth_warp(lat: Lattice, spec: &RoughSpec) -> Result<Field> {
    let amp = spec.amplitude.unwrap_or(0.1);
    let dim = lat.dim();
    let k = 2.0 * PI * spec.frequency as f64 / lat.period();
    match spec.warp {
        WarpMode::WarpedProduct | WarpMode::Profile => {
            if 2.0 * amp.abs() > spec.lambda0.ln() {
                return Err(Error::SpecInfeasible(format!("warp amplitude {amp} exceeds the bi-Lipschitz bound")));
            }
            let slot = if spec.warp == WarpMode::Profile { 0 } else { 1 };
            Ok(Field::from_fn(lat, Layout::Sym2, |x, out| {
                let mut m = small::identity(dim);
                m[slot][slot] = (2.0 * amp * (k * x[0]).sin()).exp();
                small::pack_sym(&m, dim, out);
            }))
        }
        WarpMode::Pullback => {
            let f = Field::from_fn(lat, Layout::Sym2, |x, out| {
                let mut j = small::identity(dim);
                for i in 0..dim {
                    let src = (i + 1) % dim;
                    j[i][src] += amp * (k * x[src]).cos();
                }
                let g = small::mul(&small::transpose(&j), &j, dim);
                small::pack_sym(&g, dim, out);
            });
            Ok(f)
        }
    }
}

/// Builds the rough metric described by `spec`, checked against `Λ0`.
pub fn generate(lattice: Lattice, spec: &RoughSpec) -> Result<MetricField> {
    spec.validate()?;
    let f = match spec.kind {
        RoughKind::LoglogSpike => loglog_spike(lattice, spec)?,
        RoughKind::FourierMultiscale => fourier_multiscale(lattice, spec)?,
        RoughKind::PointSingularDemo => point_singular(lattice, spec)?,
        RoughKind::SmoothWarp => smooth_warp(lattice, spec)?,
    };
    let g = MetricField::checked(f)?;
    let rep = tensor_calc::bilipschitz(&g, &MetricField::identity(lattice))?;
    let tol = 1e-12;
    if rep.lambda_min < 1.0 / spec.lambda0 - tol || rep.lambda_max > spec.lambda0 + tol {
        return Err(Error::SpecInfeasible(format!(
            "generated metric has eigenvalues in [{}, {}], outside the bound {}",
            rep.lambda_min, rep.lambda_max, spec.lambda0
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    /// Uniform kernel with fractional end weights, variance `σ²`.
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub sigma: f64,
    pub kernel: KernelKind,
}

/// Normalized symmetric 1D weights as `(offset, weight)` pairs.
pub fn kernel_weights(lat: &Lattice, spec: &MollifierSpec) -> Result<Vec<(isize, f64)>> {
    let dx = lat.spacing();
    if !(spec.sigma >= 0.5 * dx) {
        return Err(Error::KernelUnderresolved { sigma: spec.sigma, spacing: dx });
    }
    let n = lat.n_per_axis() as isize;
    let half = n / 2;
    let mut w: Vec<(isize, f64)> = match spec.kernel {
        KernelKind::Gaussian => {
            let period = lat.period();
            let images = (6.0 * spec.sigma / period).ceil() as i64 + 1;
            (-half + 1 - n % 2..=half)
                .map(|k| {
                    let v: f64 = (-images..=images)
                        .map(|m| {
                            let d = k.unsigned_abs() as f64 * dx + m as f64 * period;
                            (-d * d / (2.0 * spec.sigma * spec.sigma)).exp()
                        })
                        .sum();
                    (k, v)
                })
                .collect()
        }
        KernelKind::Box => {
            // unit weights on |o| <= k plus weight c at ±(k+1), with the variance equal to s²
            let s2 = (spec.sigma / dx).powi(2);
            let k = ((((1.0 + 12.0 * s2).sqrt() - 1.0) / 2.0).floor() as isize).max(0);
            let kf = k as f64;
            let c =
                (s2 * (2.0 * kf + 1.0) - kf * (kf + 1.0) * (2.0 * kf + 1.0) / 3.0) / (2.0 * ((kf + 1.0).powi(2) - s2));
            if 2 * k + 3 > n {
                return Err(Error::InvalidArgument(format!("box half-width {} wraps the torus", k + 1)));
            }
            (-k - 1..=k + 1).map(|o| (o, if o.abs() == k + 1 { c } else { 1.0 })).collect()
        }
    };
    let peak = w.iter().map(|p| p.1).fold(0.0, f64::max);
    w.retain(|p| p.1 > 1e-18 * peak);
    let total: f64 = crate::lattice::pairwise_sum(&w.iter().map(|p| p.1).collect::<Vec<_>>());
    for p in &mut w {
        p.1 /= total;
    }
    Ok(w)
}

/// Separable periodic convolution of every component.
pub fn mollify_field(f: &Field, spec: &MollifierSpec) -> Result<Field> {
    let lat = *f.lattice();
    let w = kernel_weights(&lat, spec)?;
    let nc = f.ncomp();
    let mut cur = f.clone();
    for axis in 0..lat.dim() {
        let mut next = Field::zeros(lat, f.layout());
        for node in lat.nodes() {
            let dst = next.at_mut(node);
            for &(o, wt) in &w {
                let src = cur.at(lat.shifted(node, axis, o));
                for c in 0..nc {
                    dst[c] += wt * src[c];
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Periodic mollification of a metric; SPD is preserved since the kernel is positive.
pub fn mollify(g: &MetricField, spec: &MollifierSpec) -> Result<MetricField> {
    MetricField::checked(mollify_field(g.field(), spec)?)
}

/// Largest radius of the ladder at which concentration stays below `epsilon`.
pub fn find_scale(
    g: &MetricField,
    bg: &BackgroundGeometry,
    epsilon: f64,
    radii: &[f64],
    stride: usize,
    order: StencilOrder,
) -> Result<Option<f64>> {
    let norm = estimators::gradient_norm(g.field(), bg, order)?;
    let mut sorted: Vec<f64> = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = None;
    for r in sorted {
        let c = estimators::concentration_of_norm(&norm, r, stride, g.dim() as f64)?;
        if c < epsilon {
            best = Some(r);
        }
    }
    Ok(best)
}

/// Geometric ladder `r_max · 2^{-k}` down to the grid spacing.
pub fn radius_ladder(lat: &Lattice, r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_max.min(0.5 * lat.period());
    while r >= lat.spacing() {
        out.push(r);
        r *= 0.5;
    }
    out.reverse();
    out
}
